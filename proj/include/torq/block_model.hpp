#pragma once

#include <Eigen/Dense>
#include <vector>

#include "torq/errors.hpp"

namespace torq {

/// Block layout of a token vector: element i belongs to block i/K, lane i%K.
struct BlockShape {
  Eigen::Index blocks = 0;  // B
  Eigen::Index lanes = 0;   // K

  Eigen::Index dim() const { return blocks * lanes; }

  static BlockShape make(Eigen::Index blocks, Eigen::Index lanes) {
    if (blocks < 2 || lanes < 2)
      throw ShapeError("BlockShape requires at least 2 blocks and 2 lanes");
    return BlockShape{blocks, lanes};
  }
};

/// T calibration samples, each reshaped to a B x K matrix.
struct BlockTensor {
  BlockShape shape;
  std::vector<Eigen::MatrixXd> samples;

  Eigen::Index count() const { return static_cast<Eigen::Index>(samples.size()); }
};

/// Per-position second-moment matrices Sigma_k (B x B, one per lane) and
/// their average. A ridge delta*I is folded into each matrix.
struct PositionCovariance {
  std::vector<Eigen::MatrixXd> per_position;
  Eigen::MatrixXd pooled;
  double ridge = 0.0;
};

BlockTensor reshape_tokens(const Eigen::Ref<const Eigen::MatrixXd>& flat,
                           BlockShape shape);

Eigen::MatrixXd flatten_tokens(const BlockTensor& data);

// Uncentered covariance per lane position: Sigma_k = (1/T) sum_t x[:,k] x[:,k]^T
// + ridge*I. No mean subtraction; accumulation is in double with a fixed
// sequential sample order.
PositionCovariance estimate_covariances(const BlockTensor& data,
                                        double ridge = 1e-8);

// Squared Euclidean norm of every block row; entry (t, b).
Eigen::MatrixXd block_variances(const BlockTensor& data);

// All samples stacked vertically into a (T*B) x K matrix.
Eigen::MatrixXd stack_blocks(const BlockTensor& data);

}  // namespace torq
