#include "torq/block_model.hpp"

namespace torq {

BlockTensor reshape_tokens(const Eigen::Ref<const Eigen::MatrixXd>& flat,
                           BlockShape shape) {
  if (shape.blocks < 2 || shape.lanes < 2)
    throw ShapeError("reshape_tokens: blocks and lanes must both be >= 2");
  if (flat.cols() != shape.dim())
    throw ShapeError("reshape_tokens: token width does not match B*K");
  if (flat.rows() < 1) throw ShapeError("reshape_tokens: need at least one sample");
  if (!flat.allFinite()) throw InvalidInput("reshape_tokens: non-finite entries");

  BlockTensor out;
  out.shape = shape;
  out.samples.reserve(static_cast<size_t>(flat.rows()));
  for (Eigen::Index t = 0; t < flat.rows(); ++t) {
    Eigen::MatrixXd x(shape.blocks, shape.lanes);
    for (Eigen::Index b = 0; b < shape.blocks; ++b)
      x.row(b) = flat.row(t).segment(b * shape.lanes, shape.lanes);
    out.samples.push_back(std::move(x));
  }
  return out;
}

Eigen::MatrixXd flatten_tokens(const BlockTensor& data) {
  const auto& s = data.shape;
  Eigen::MatrixXd flat(data.count(), s.dim());
  for (Eigen::Index t = 0; t < data.count(); ++t)
    for (Eigen::Index b = 0; b < s.blocks; ++b)
      flat.row(t).segment(b * s.lanes, s.lanes) = data.samples[static_cast<size_t>(t)].row(b);
  return flat;
}

PositionCovariance estimate_covariances(const BlockTensor& data, double ridge) {
  const Eigen::Index B = data.shape.blocks;
  const Eigen::Index K = data.shape.lanes;
  const Eigen::Index T = data.count();
  if (T < 1) throw InvalidInput("estimate_covariances: empty tensor");

  PositionCovariance cov;
  cov.ridge = ridge;
  cov.per_position.resize(static_cast<size_t>(K));
  Eigen::MatrixXd cols(B, T);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index t = 0; t < T; ++t)
      cols.col(t) = data.samples[static_cast<size_t>(t)].col(k);
    Eigen::MatrixXd sigma = (cols * cols.transpose()) / static_cast<double>(T);
    sigma.diagonal().array() += ridge;
    cov.per_position[static_cast<size_t>(k)] = std::move(sigma);
  }
  cov.pooled = Eigen::MatrixXd::Zero(B, B);
  for (Eigen::Index k = 0; k < K; ++k)
    cov.pooled += cov.per_position[static_cast<size_t>(k)];
  cov.pooled /= static_cast<double>(K);
  return cov;
}

Eigen::MatrixXd block_variances(const BlockTensor& data) {
  Eigen::MatrixXd out(data.count(), data.shape.blocks);
  for (Eigen::Index t = 0; t < data.count(); ++t)
    out.row(t) = data.samples[static_cast<size_t>(t)].rowwise().squaredNorm().transpose();
  return out;
}

Eigen::MatrixXd stack_blocks(const BlockTensor& data) {
  const Eigen::Index B = data.shape.blocks;
  Eigen::MatrixXd out(data.count() * B, data.shape.lanes);
  for (Eigen::Index t = 0; t < data.count(); ++t)
    out.middleRows(t * B, B) = data.samples[static_cast<size_t>(t)];
  return out;
}

}  // namespace torq
