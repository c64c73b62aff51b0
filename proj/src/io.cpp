#include "torq/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "torq/json_writer.hpp"

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts need swabbing");

namespace torq {

namespace {

constexpr std::uint32_t kTensorVersion = 1;
constexpr std::uint32_t kBundleVersion = 1;

template <class T>
void append_raw(std::string& out, const T& value) {
  const char* p = reinterpret_cast<const char*>(&value);
  out.append(p, sizeof(T));
}

template <class T>
T read_raw(const std::string& bytes, size_t& offset, const std::string& path) {
  if (offset + sizeof(T) > bytes.size())
    throw IoError("truncated file: " + path);
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  offset += sizeof(T);
  return value;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof()) throw IoError("read failure: " + path);
  return bytes;
}

std::uint32_t format_tag(FormatName name) {
  return static_cast<std::uint32_t>(name);
}

FormatName format_from_tag(std::uint32_t tag, const std::string& path) {
  switch (tag) {
    case 0: return FormatName::Mxfp4E2m1;
    case 1: return FormatName::Mxint4;
    case 2: return FormatName::Nvfp4E2m1;
  }
  throw IoError("unknown format tag in " + path);
}

std::string meta_to_json(const CalibMeta& meta) {
  JsonWriter w;
  w.begin_object();
  w.kv("samples", static_cast<long long>(meta.samples));
  w.kv("dataset", meta.dataset);
  w.kv("config_hash", meta.config_hash);
  w.kv("achieved_spread", meta.achieved_spread);
  w.kv("inter_steps", static_cast<long long>(meta.inter_steps));
  w.kv("inter_converged", meta.inter_converged);
  w.kv("initial_code_loss", meta.initial_code_loss);
  w.kv_array("loss_trace", meta.loss_trace);
  w.kv_array("s_step_loss", meta.s_step_loss);
  w.end_object();
  return w.str();
}

CalibMeta meta_from_json(const std::string& text, const std::string& path) {
  CalibMeta meta;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    meta.samples = j.at("samples").get<long long>();
    meta.dataset = j.at("dataset").get<std::string>();
    meta.config_hash = j.at("config_hash").get<std::string>();
    meta.achieved_spread = j.at("achieved_spread").get<double>();
    meta.inter_steps = j.at("inter_steps").get<long long>();
    meta.inter_converged = j.at("inter_converged").get<bool>();
    meta.initial_code_loss = j.at("initial_code_loss").get<double>();
    meta.loss_trace = j.at("loss_trace").get<std::vector<double>>();
    meta.s_step_loss = j.at("s_step_loss").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad bundle metadata in " + path + ": " + e.what());
  }
  return meta;
}

void append_matrix_row_major(std::string& out,
                             const Eigen::Ref<const Eigen::MatrixXd>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) append_raw(out, m(r, c));
}

}  // namespace

void write_bytes_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.good()) throw IoError("write failure: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

void write_text_atomic(const std::string& path, const std::string& content) {
  write_bytes_atomic(path, content);
}

void write_tensor(const std::string& path,
                  const Eigen::Ref<const Eigen::MatrixXd>& data,
                  TensorDType dtype) {
  std::string bytes;
  bytes.reserve(28 + static_cast<size_t>(data.size()) *
                         (dtype == TensorDType::F32 ? 4 : 8));
  bytes.append("TORQ", 4);
  append_raw(bytes, kTensorVersion);
  append_raw(bytes, static_cast<std::uint32_t>(dtype == TensorDType::F64 ? 1 : 0));
  append_raw(bytes, static_cast<std::uint64_t>(data.rows()));
  append_raw(bytes, static_cast<std::uint64_t>(data.cols()));
  for (Eigen::Index r = 0; r < data.rows(); ++r)
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      if (dtype == TensorDType::F32)
        append_raw(bytes, static_cast<float>(data(r, c)));
      else
        append_raw(bytes, data(r, c));
    }
  write_bytes_atomic(path, bytes);
}

TensorFile read_tensor(const std::string& path) {
  const std::string bytes = read_all(path);
  size_t off = 0;
  if (bytes.size() < 4 || bytes.compare(0, 4, "TORQ") != 0)
    throw IoError("not a TORQ tensor file: " + path);
  off = 4;
  const auto version = read_raw<std::uint32_t>(bytes, off, path);
  if (version != kTensorVersion)
    throw IoError("unsupported tensor version in " + path);
  const auto dtype_tag = read_raw<std::uint32_t>(bytes, off, path);
  if (dtype_tag > 1) throw IoError("unknown dtype tag in " + path);
  const auto rows = read_raw<std::uint64_t>(bytes, off, path);
  const auto cols = read_raw<std::uint64_t>(bytes, off, path);

  TensorFile out;
  out.dtype = dtype_tag == 1 ? TensorDType::F64 : TensorDType::F32;
  out.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < out.data.rows(); ++r)
    for (Eigen::Index c = 0; c < out.data.cols(); ++c)
      out.data(r, c) = out.dtype == TensorDType::F32
                           ? static_cast<double>(read_raw<float>(bytes, off, path))
                           : read_raw<double>(bytes, off, path);
  if (off != bytes.size()) throw IoError("trailing bytes in " + path);
  return out;
}

void write_bundle(const std::string& path, const RotationBundle& bundle) {
  std::string bytes;
  bytes.append("TORB", 4);
  append_raw(bytes, kBundleVersion);
  append_raw(bytes, static_cast<std::uint32_t>(bundle.shape.blocks));
  append_raw(bytes, static_cast<std::uint32_t>(bundle.shape.lanes));
  append_raw(bytes, format_tag(bundle.format));
  append_matrix_row_major(bytes, bundle.r_inter);
  append_matrix_row_major(bytes, bundle.r_intra);
  for (Eigen::Index i = 0; i < bundle.scales.scales.size(); ++i)
    append_raw(bytes, bundle.scales.scales[i]);
  const std::string meta = meta_to_json(bundle.meta);
  append_raw(bytes, static_cast<std::uint64_t>(meta.size()));
  bytes += meta;
  write_bytes_atomic(path, bytes);
}

RotationBundle read_bundle(const std::string& path) {
  const std::string bytes = read_all(path);
  if (bytes.size() < 4 || bytes.compare(0, 4, "TORB") != 0)
    throw IoError("not a TORB bundle file: " + path);
  size_t off = 4;
  const auto version = read_raw<std::uint32_t>(bytes, off, path);
  if (version != kBundleVersion)
    throw IoError("unsupported bundle version in " + path);
  const auto blocks = read_raw<std::uint32_t>(bytes, off, path);
  const auto lanes = read_raw<std::uint32_t>(bytes, off, path);
  const auto tag = read_raw<std::uint32_t>(bytes, off, path);

  RotationBundle bundle;
  bundle.shape = BlockShape::make(blocks, lanes);
  bundle.format = format_from_tag(tag, path);
  bundle.r_inter.resize(blocks, blocks);
  for (Eigen::Index r = 0; r < bundle.r_inter.rows(); ++r)
    for (Eigen::Index c = 0; c < bundle.r_inter.cols(); ++c)
      bundle.r_inter(r, c) = read_raw<double>(bytes, off, path);
  bundle.r_intra.resize(lanes, lanes);
  for (Eigen::Index r = 0; r < bundle.r_intra.rows(); ++r)
    for (Eigen::Index c = 0; c < bundle.r_intra.cols(); ++c)
      bundle.r_intra(r, c) = read_raw<double>(bytes, off, path);
  bundle.scales.scales.resize(blocks);
  for (Eigen::Index i = 0; i < bundle.scales.scales.size(); ++i)
    bundle.scales.scales[i] = read_raw<double>(bytes, off, path);

  const auto meta_len = read_raw<std::uint64_t>(bytes, off, path);
  if (off + meta_len > bytes.size()) throw IoError("truncated file: " + path);
  bundle.meta = meta_from_json(bytes.substr(off, meta_len), path);
  off += meta_len;
  if (off != bytes.size()) throw IoError("trailing bytes in " + path);
  return bundle;
}

}  // namespace torq
