#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "torq/errors.hpp"
#include "torq/mx_formats.hpp"

namespace torq {

enum class Pow2Mode { Round, Floor };

struct IntraConfig {
  int max_iter = 10;
  double epsilon_intra = 1e-6;        // minimum post-R-step improvement
  Eigen::Index k_top = -1;            // candidate pool size; -1 = K/2
  Eigen::Index pairs_per_step = -1;   // P; -1 = K/4, 0 = no rotations
  double lambda = 1.0;                // complementarity weight
  Eigen::Index angle_sample_blocks = 0;  // rows used for the angle set; 0 = all
  Pow2Mode pow2_mode = Pow2Mode::Round;
};

/// Per-block scales, each an exact power of two.
struct ScaleVector {
  Eigen::VectorXd scales;
};

struct OccupancyState {
  std::vector<Eigen::VectorXd> per_column;  // K histograms of length J
  Eigen::VectorXd global;                   // pooled histogram
  double loss = 0.0;                        // squared distance to uniform
};

struct IntraRotation {
  Eigen::MatrixXd matrix;           // K x K orthogonal
  double initial_loss = 0.0;        // loss at R = I with first S-step scales
  std::vector<double> loss_trace;   // post-R-step loss per outer iteration
  std::vector<double> s_step_loss;  // post-S-step loss per outer iteration
  ScaleVector final_scales;         // one scale per input row
};

struct AngleResult {
  double theta = 0.0;
  double loss = 0.0;
};

struct RStepResult {
  Eigen::MatrixXd rotation;
  double loss = 0.0;
};

// Nearest power of two in log2 space; Floor reproduces the shared-exponent
// rule of the base format. x must be positive.
double clip_to_pow2(double x, Pow2Mode mode = Pow2Mode::Round);

// Pooled codeword-occupancy loss sum_j (p_j - 1/J)^2 over all entries.
double code_loss(const Eigen::Ref<const Eigen::MatrixXd>& normalized,
                 const MxFormat& fmt);

// Loss computed from raw bin counts; shared by code_loss and the angle
// solver so both produce bit-identical values.
double loss_from_counts(const std::vector<std::int64_t>& counts, double total);

// Per-block scales of data*r_intra: clip_to_pow2(max|z_b| / c_max), 1 for an
// all-zero block.
ScaleVector s_step(const Eigen::Ref<const Eigen::MatrixXd>& data,
                   const Eigen::Ref<const Eigen::MatrixXd>& r_intra,
                   const MxFormat& fmt, Pow2Mode mode = Pow2Mode::Round);

// Squared distance of one column histogram from uniform.
double imbalance_score(const Eigen::Ref<const Eigen::VectorXd>& hist);

// Negated inner product of the two deviation-from-uniform vectors; positive
// when one column over-occupies the bins the other under-occupies.
double complementarity(const Eigen::Ref<const Eigen::VectorXd>& hist_k,
                       const Eigen::Ref<const Eigen::VectorXd>& hist_l);

// Greedy disjoint pairs from the k_top most imbalanced columns, ranked by
// h_k + h_l + lambda * c_{k,l}; deterministic index tie-breaks.
std::vector<std::pair<Eigen::Index, Eigen::Index>> select_pairs(
    const std::vector<Eigen::VectorXd>& hists, const IntraConfig& cfg);

// All rotation angles in [0, 2pi) at which some sample of the (u, v) plane
// crosses a decision boundary on either axis, deduplicated within 1e-12.
std::vector<double> critical_angles(const Eigen::Ref<const Eigen::VectorXd>& u,
                                    const Eigen::Ref<const Eigen::VectorXd>& v,
                                    const MxFormat& fmt);

// Globally optimal Givens angle for columns (p, q) of `normalized` under the
// pooled occupancy loss. Evaluates the loss on every interval between
// consecutive critical angles (theta = 0 is always a candidate, so the
// returned loss never exceeds the current one). sample_rows > 0 builds the
// candidate set from a strided row subset.
AngleResult best_angle(const Eigen::Ref<const Eigen::MatrixXd>& normalized,
                       Eigen::Index p, Eigen::Index q, const MxFormat& fmt,
                       Eigen::Index sample_rows = 0);

// One R-step: select pairs on data*rotation, solve them sequentially with
// histogram refresh after each accepted rotation, return the updated rotation
// and the pooled loss (never above the starting loss).
RStepResult r_step(const Eigen::Ref<const Eigen::MatrixXd>& normalized,
                   const Eigen::Ref<const Eigen::MatrixXd>& rotation,
                   const IntraConfig& cfg, const MxFormat& fmt);

// Alternating S-step / R-step optimization. Stops on max_iter or when the
// post-R-step improvement drops to epsilon_intra; returns the best (R, S)
// visited together with the full loss trace.
IntraRotation build_intra_rotation(const Eigen::Ref<const Eigen::MatrixXd>& data,
                                   const IntraConfig& cfg, const MxFormat& fmt);

OccupancyState occupancy_state(const Eigen::Ref<const Eigen::MatrixXd>& normalized,
                               const MxFormat& fmt);

}  // namespace torq
