#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "torq/block_model.hpp"
#include "torq/errors.hpp"
#include "torq/intra_rotation.hpp"
#include "torq/mx_formats.hpp"
#include "torq/pipeline.hpp"

namespace torq {

// Mean squared elementwise difference.
template <class A, class B>
double quantization_mse(const Eigen::MatrixBase<A>& x,
                        const Eigen::MatrixBase<B>& xhat) {
  if (x.rows() != xhat.rows() || x.cols() != xhat.cols())
    throw ShapeError("quantization_mse: shape mismatch");
  return (x.derived() - xhat.derived()).squaredNorm() /
         static_cast<double>(x.size());
}

/// Asymptotic per-block error-floor factors: granularity Delta_min^2/12 * K,
/// shape factor exp(2 Var(log2|a|)) and matching factor exp(KL to uniform
/// over the representable log2 range). Reported as diagnostics only.
struct BoundDiagnostics {
  double granularity = 0.0;
  double shape_factor = 0.0;
  double matching_factor = 0.0;
  double bound = 0.0;
  Eigen::Index zero_count = 0;  // entries excluded from the log population
};

// Absent when fewer than two nonzero magnitudes are available.
std::optional<BoundDiagnostics> bound_diagnostics(
    const Eigen::Ref<const Eigen::VectorXd>& normalized_block,
    const MxFormat& fmt);

struct SpreadStats {
  double cv = 0.0;
  double max_over_mean = 1.0;
};

// Coefficient of variation and max/mean of the block-energy population.
SpreadStats variance_spread(const BlockTensor& data);
SpreadStats spread_from_energies(const Eigen::Ref<const Eigen::MatrixXd>& energies);

struct AggregateBound {
  BoundDiagnostics mean;                   // factors averaged over valid blocks
  std::optional<BoundDiagnostics> pooled;  // all values as one population
  Eigen::Index valid_blocks = 0;
  Eigen::Index skipped_blocks = 0;
};

// Per-block diagnostics of every row of `normalized`, averaged, plus the
// pooled variant over all entries.
std::optional<AggregateBound> aggregate_bound(
    const Eigen::Ref<const Eigen::MatrixXd>& normalized, const MxFormat& fmt);

/// Metrics of one quantization arm (a configuration evaluated on a tensor).
struct ArmStats {
  std::string name;
  double mse = 0.0;
  double code_loss = 0.0;
  SpreadStats spread;
  Eigen::VectorXd occupancy;
  std::optional<AggregateBound> bound;
};

struct PerPositionDiag {
  double pooled_residual_max = 0.0;   // spread left per position by one R_inter
  double pooled_residual_mean = 0.0;
  double per_position_max = 0.0;      // spread achievable with per-k rotations
};

struct CalibReport {
  std::string command;  // calibrate | quantize | compare
  std::string format;
  Eigen::Index samples = 0;
  Eigen::Index blocks = 0;
  Eigen::Index lanes = 0;
  std::optional<ArmStats> before;
  std::optional<ArmStats> after;
  std::vector<ArmStats> arms;  // compare mode
  std::optional<CalibMeta> calibration;
  std::optional<PerPositionDiag> per_position;
  std::vector<StageTiming> timing;
  bool include_timing = false;  // wall-clock in the output breaks determinism
};

std::string render_report(const CalibReport& report);

// Deterministic JSON document (stable key order, 17-significant-digit
// floats); absent optionals are explicit nulls. Histograms can additionally
// go to CSV (columns bin_index, lower_bound, upper_bound, probability).
void emit_report(const CalibReport& report, const std::string& path,
                 const std::string& csv_prefix = "");

// Measures one arm on a tensor: end-to-end MSE, pooled occupancy loss in the
// arm's normalized space, rotated block-energy spread and bound diagnostics.
ArmStats evaluate_arm(const std::string& name, const BlockTensor& data,
                      const RotationBundle& bundle, const MxFormat& fmt,
                      bool dynamic_scales);

}  // namespace torq
