#include "torq/pipeline.hpp"

#include <chrono>
#include <cmath>

namespace torq {

namespace {

void check_bundle_shape(const Eigen::Ref<const Eigen::MatrixXd>& x,
                        const RotationBundle& bundle) {
  if (x.rows() != bundle.shape.blocks || x.cols() != bundle.shape.lanes)
    throw ShapeError("input matrix does not match the bundle's block shape");
}

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>* sink) : sink_(sink) {}

  void mark(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    if (sink_)
      sink_->push_back({stage, std::chrono::duration<double>(now - last_).count()});
    last_ = now;
  }

 private:
  std::vector<StageTiming>* sink_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace

RotationBundle calibrate(const BlockTensor& calib, const CalibOptions& opt,
                         const MxFormat& fmt, std::vector<StageTiming>* timing) {
  if (calib.count() < 1) throw InvalidInput("calibrate: empty calibration tensor");
  const Eigen::Index b = calib.shape.blocks;
  const Eigen::Index k = calib.shape.lanes;
  StageClock clock(timing);

  RotationBundle bundle;
  bundle.shape = calib.shape;
  bundle.format = fmt.name;
  bundle.meta.samples = calib.count();

  InterRotation inter;
  if (opt.skip_inter) {
    inter.matrix = Eigen::MatrixXd::Identity(b, b);
    clock.mark("inter");
  } else {
    const PositionCovariance cov = estimate_covariances(calib, opt.ridge);
    clock.mark("covariance");
    InterBuildResult built = try_build_inter_rotation(cov.pooled, opt.inter);
    if (!built.converged && !opt.allow_nonconverged)
      throw ConvergenceError("calibrate: inter-block equalization did not converge",
                             built.rotation.achieved_spread);
    inter = std::move(built.rotation);
    bundle.meta.inter_converged = built.converged;
    bundle.meta.achieved_spread = inter.achieved_spread;
    bundle.meta.inter_steps = static_cast<Eigen::Index>(inter.steps.size());
    clock.mark("inter");
  }
  bundle.r_inter = inter.matrix;

  const BlockTensor rotated = opt.skip_inter ? calib : apply_inter(calib, inter);
  clock.mark("rotate");

  if (opt.skip_intra) {
    bundle.r_intra = Eigen::MatrixXd::Identity(k, k);
  } else {
    const IntraRotation intra =
        build_intra_rotation(stack_blocks(rotated), opt.intra, fmt);
    bundle.r_intra = intra.matrix;
    bundle.meta.initial_code_loss = intra.initial_loss;
    bundle.meta.loss_trace = intra.loss_trace;
    bundle.meta.s_step_loss = intra.s_step_loss;
  }
  clock.mark("intra");

  // Deployment scales: pooled per-block maxima of the fully rotated data.
  Eigen::VectorXd max_abs = Eigen::VectorXd::Zero(b);
  for (const auto& x : rotated.samples) {
    const Eigen::MatrixXd z = x * bundle.r_intra;
    max_abs = max_abs.cwiseMax(z.cwiseAbs().rowwise().maxCoeff());
  }
  bundle.scales.scales.resize(b);
  for (Eigen::Index i = 0; i < b; ++i)
    bundle.scales.scales[i] =
        max_abs[i] == 0.0 ? 1.0
                          : clip_to_pow2(max_abs[i] / fmt.c_max, opt.intra.pow2_mode);
  clock.mark("scales");
  return bundle;
}

QuantizedMatrix forward_quantize(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const RotationBundle& bundle,
                                 bool dynamic_scales) {
  check_bundle_shape(x, bundle);
  const MxFormat& fmt = format_by_id(bundle.format);
  const Eigen::MatrixXd z = bundle.r_inter * x * bundle.r_intra;

  QuantizedMatrix out;
  out.dequantized.resize(z.rows(), z.cols());
  out.codes.resize(z.rows(), z.cols());
  out.scales.resize(z.rows());
  for (Eigen::Index b = 0; b < z.rows(); ++b) {
    const Eigen::VectorXd row = z.row(b).transpose();
    const double s =
        dynamic_scales ? block_scale(row, fmt) : bundle.scales.scales[b];
    const QuantizedBlock qb = quantize_block(row, s, fmt);
    out.scales[b] = s;
    out.dequantized.row(b) = qb.dequantized.transpose();
    for (Eigen::Index i = 0; i < z.cols(); ++i)
      out.codes(b, i) = qb.codes[static_cast<size_t>(i)];
  }
  return out;
}

Eigen::MatrixXd inverse_rotations(const Eigen::Ref<const Eigen::MatrixXd>& zhat,
                                  const RotationBundle& bundle) {
  check_bundle_shape(zhat, bundle);
  return bundle.r_inter.transpose() * zhat * bundle.r_intra.transpose();
}

Eigen::VectorXd explicit_inverse(const Eigen::Ref<const Eigen::MatrixXd>& zhat,
                                 const RotationBundle& bundle) {
  const Eigen::MatrixXd x = inverse_rotations(zhat, bundle);
  return Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
}

Eigen::MatrixXd kronecker(const Eigen::Ref<const Eigen::MatrixXd>& a,
                          const Eigen::Ref<const Eigen::MatrixXd>& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

FusedWeights fuse_weights(const Eigen::Ref<const Eigen::MatrixXd>& w,
                          const RotationBundle& bundle) {
  if (w.cols() != bundle.shape.dim())
    throw ShapeError("fuse_weights: weight width does not match B*K");
  FusedWeights out;
  out.out_dim = w.rows();
  out.in_dim = w.cols();
  // Column-major vec: vec(A X B) = (B^T kron A) vec(X) with A = R_inter^T and
  // B = R_intra^T, hence the R_intra kron R_inter^T factor. The fusion
  // equivalence test pins this orientation.
  out.fused = w * kronecker(bundle.r_intra, bundle.r_inter.transpose());
  return out;
}

RtnResult rtn_baseline(const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const MxFormat& fmt) {
  if (!x.allFinite()) throw InvalidInput("rtn_baseline: non-finite input");
  RtnResult out;
  out.dequantized.resize(x.rows(), x.cols());
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    const Eigen::VectorXd row = x.row(b).transpose();
    const QuantizedBlock qb = quantize_block(row, block_scale(row, fmt), fmt);
    out.dequantized.row(b) = qb.dequantized.transpose();
  }
  out.mse = (x - out.dequantized).squaredNorm() / static_cast<double>(x.size());
  return out;
}

Eigen::MatrixXd reconstruct(const Eigen::Ref<const Eigen::MatrixXd>& x,
                            const RotationBundle& bundle, bool dynamic_scales) {
  return inverse_rotations(forward_quantize(x, bundle, dynamic_scales).dequantized,
                           bundle);
}

RotationBundle identity_bundle(BlockShape shape, FormatName format) {
  RotationBundle bundle;
  bundle.shape = shape;
  bundle.format = format;
  bundle.r_inter = Eigen::MatrixXd::Identity(shape.blocks, shape.blocks);
  bundle.r_intra = Eigen::MatrixXd::Identity(shape.lanes, shape.lanes);
  bundle.scales.scales = Eigen::VectorXd::Ones(shape.blocks);
  return bundle;
}

}  // namespace torq
