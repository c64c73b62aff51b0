#pragma once

#include <Eigen/Dense>
#include <string>

#include "torq/errors.hpp"
#include "torq/pipeline.hpp"

namespace torq {

enum class TensorDType { F32, F64 };

struct TensorFile {
  TensorDType dtype = TensorDType::F32;
  Eigen::MatrixXd data;  // T x d, loaded as double
};

// Tensor container: magic "TORQ", u32 version, u32 dtype (0 = f32, 1 = f64),
// u64 rows, u64 cols, then the row-major little-endian payload.
void write_tensor(const std::string& path,
                  const Eigen::Ref<const Eigen::MatrixXd>& data,
                  TensorDType dtype);
TensorFile read_tensor(const std::string& path);

// Bundle container: magic "TORB", u32 version, u32 blocks, u32 lanes,
// u32 format tag, then f64 little-endian payloads for r_inter (row-major),
// r_intra (row-major) and scales, then a u64-length-prefixed UTF-8 JSON
// metadata blob.
void write_bundle(const std::string& path, const RotationBundle& bundle);
RotationBundle read_bundle(const std::string& path);

// Write-to-temp-then-rename, so readers never observe partial files.
void write_text_atomic(const std::string& path, const std::string& content);
void write_bytes_atomic(const std::string& path, const std::string& bytes);

}  // namespace torq
