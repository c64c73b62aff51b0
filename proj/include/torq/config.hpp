#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "torq/errors.hpp"

namespace torq {

// key=value configuration with '#' comments. Unknown keys are rejected so
// typos do not silently fall back to defaults. CLI flags override file
// values by assigning after load.
class KvConfig {
 public:
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Canonical "key=value\n" listing in sorted key order.
  std::string canonical() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

bool is_known_config_key(const std::string& key);

std::uint64_t fnv1a64(const std::string& text);

// Stable hex fingerprint of a canonical config listing.
std::string config_fingerprint(const std::string& canonical_text);

}  // namespace torq
