#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace torq {

// Minimal JSON emitter with insertion-ordered keys and fixed 17-significant-
// digit floats, so identical inputs always serialize to identical bytes.
// (Library serializers pick shortest-round-trip float forms; the report
// contract pins the textual format instead.)
class JsonWriter {
 public:
  std::string str() const { return out_; }

  void begin_object() { open('{'); }
  void end_object() { close('}'); }
  void begin_array() { open('['); }
  void end_array() { close(']'); }

  void key(const std::string& name) {
    separate();
    write_string(name);
    out_ += ": ";
    pending_key_ = true;
  }

  void value(double v) {
    separate();
    if (!std::isfinite(v)) {
      out_ += "null";
      return;
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out_ += buf;
  }

  void value(long long v) {
    separate();
    out_ += std::to_string(v);
  }

  void value(int v) { value(static_cast<long long>(v)); }

  void value(bool v) {
    separate();
    out_ += v ? "true" : "false";
  }

  void value(const std::string& v) {
    separate();
    write_string(v);
  }

  void value(const char* v) { value(std::string(v)); }

  void null() {
    separate();
    out_ += "null";
  }

  template <class T>
  void kv(const std::string& name, const T& v) {
    key(name);
    value(v);
  }

  void kv_null(const std::string& name) {
    key(name);
    null();
  }

  template <class Range>
  void kv_array(const std::string& name, const Range& values) {
    key(name);
    begin_array();
    for (const auto& v : values) value(static_cast<double>(v));
    end_array();
  }

 private:
  void open(char c) {
    separate();
    out_ += c;
    depth_.push_back(0);
  }

  void close(char c) {
    out_ += '\n';
    out_.append(2 * (depth_.size() - 1), ' ');
    out_ += c;
    depth_.pop_back();
    if (!depth_.empty()) ++depth_.back();
  }

  // Newline-and-indent before each sibling; no-op right after a key.
  void separate() {
    if (pending_key_) {
      pending_key_ = false;
      return;
    }
    if (depth_.empty()) return;
    if (depth_.back() > 0) out_ += ',';
    out_ += '\n';
    out_.append(2 * depth_.size(), ' ');
    ++depth_.back();
  }

  void write_string(const std::string& s) {
    out_ += '"';
    for (char c : s) {
      switch (c) {
        case '"': out_ += "\\\""; break;
        case '\\': out_ += "\\\\"; break;
        case '\n': out_ += "\\n"; break;
        case '\t': out_ += "\\t"; break;
        case '\r': out_ += "\\r"; break;
        default:
          if (static_cast<unsigned char>(c) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\u%04x", c);
            out_ += buf;
          } else {
            out_ += c;
          }
      }
    }
    out_ += '"';
  }

  std::string out_;
  std::vector<int> depth_;
  bool pending_key_ = false;
};

}  // namespace torq
