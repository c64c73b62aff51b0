#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "torq/block_model.hpp"
#include "torq/inter_rotation.hpp"
#include "torq/intra_rotation.hpp"
#include "torq/mx_formats.hpp"

namespace torq {

struct CalibMeta {
  Eigen::Index samples = 0;  // T
  std::string dataset;
  std::string config_hash;
  double achieved_spread = 0.0;
  Eigen::Index inter_steps = 0;
  bool inter_converged = true;
  double initial_code_loss = 0.0;
  std::vector<double> loss_trace;
  std::vector<double> s_step_loss;
};

/// Everything the deployment path needs: R_inter, R_intra, the calibrated
/// per-block scales and the provenance of the calibration run.
struct RotationBundle {
  BlockShape shape;
  Eigen::MatrixXd r_inter;  // B x B
  Eigen::MatrixXd r_intra;  // K x K
  ScaleVector scales;       // length B
  FormatName format = FormatName::Mxfp4E2m1;
  CalibMeta meta;

  Eigen::Index parameter_count() const {
    return r_inter.size() + r_intra.size() + scales.scales.size();
  }
};

struct CalibOptions {
  EqualizationConfig inter;
  IntraConfig intra;
  double ridge = 1e-8;
  bool allow_nonconverged = false;
  bool skip_inter = false;  // ablation: identity R_inter
  bool skip_intra = false;  // ablation: identity R_intra
};

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

// Full calibration: pooled covariance -> R_inter -> rotate -> R_intra + S.
// Deployment scales come from the pooled per-block maxima of the fully
// rotated calibration data. Throws ConvergenceError unless allow_nonconverged.
RotationBundle calibrate(const BlockTensor& calib, const CalibOptions& opt,
                         const MxFormat& fmt,
                         std::vector<StageTiming>* timing = nullptr);

struct QuantizedMatrix {
  Eigen::MatrixXd dequantized;  // rotated space
  Eigen::MatrixXi codes;
  Eigen::VectorXd scales;
};

// Z = R_inter * X * R_intra, then per-block quantize-dequantize. Scales come
// from the bundle, or per-input from the format rule when dynamic_scales.
QuantizedMatrix forward_quantize(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const RotationBundle& bundle,
                                 bool dynamic_scales = false);

// R_inter^T * Zhat * R_intra^T: back to the original coordinates. Zhat is the
// dequantized matrix (scales already applied), so no scale factor reappears.
Eigen::MatrixXd inverse_rotations(const Eigen::Ref<const Eigen::MatrixXd>& zhat,
                                  const RotationBundle& bundle);

// Column-major vec of inverse_rotations(zhat).
Eigen::VectorXd explicit_inverse(const Eigen::Ref<const Eigen::MatrixXd>& zhat,
                                 const RotationBundle& bundle);

struct FusedWeights {
  Eigen::Index out_dim = 0;  // d'
  Eigen::Index in_dim = 0;   // d
  Eigen::MatrixXd fused;     // W' = W (R_intra kron R_inter^T)
};

Eigen::MatrixXd kronecker(const Eigen::Ref<const Eigen::MatrixXd>& a,
                          const Eigen::Ref<const Eigen::MatrixXd>& b);

// Fold the inverse rotations into a following linear layer so that
// fused * vec(Zhat) == W * explicit_inverse(Zhat) for every Zhat.
FusedWeights fuse_weights(const Eigen::Ref<const Eigen::MatrixXd>& w,
                          const RotationBundle& bundle);

struct RtnResult {
  Eigen::MatrixXd dequantized;
  double mse = 0.0;
};

// Round-to-nearest baseline: per-block format-rule scale, no rotations.
RtnResult rtn_baseline(const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const MxFormat& fmt);

// forward_quantize then inverse_rotations: the reconstruction in the
// original coordinates.
Eigen::MatrixXd reconstruct(const Eigen::Ref<const Eigen::MatrixXd>& x,
                            const RotationBundle& bundle,
                            bool dynamic_scales = false);

// Identity bundle (no rotations, unit scales) for baselines and tests.
RotationBundle identity_bundle(BlockShape shape, FormatName format);

}  // namespace torq
