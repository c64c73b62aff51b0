#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "torq/block_model.hpp"
#include "torq/errors.hpp"

namespace torq {

// ExactTransfer solves the quadratic in tan(theta) that moves one diagonal
// entry exactly onto the target and terminates in at most B-1 rotations.
// PaperArctan is the Jacobi diagonalizing angle 0.5*atan2(2*s_ij, s_ii-s_jj),
// kept selectable for fidelity experiments; it stalls whenever the
// off-diagonal entry vanishes while the diagonals are still unequal.
enum class AngleMode { ExactTransfer, PaperArctan };

struct EqualizationConfig {
  double epsilon_rel = 1e-8;      // convergence threshold as a fraction of c
  double epsilon_abs = 0.0;       // optional absolute override (> 0 wins)
  Eigen::Index max_sweeps = 0;    // 0 = auto (4*B^2)
  AngleMode angle_mode = AngleMode::ExactTransfer;
};

struct GivensStep {
  Eigen::Index i = 0;  // 0 <= i < j
  Eigen::Index j = 0;
  double theta = 0.0;
};

/// Orthogonal B x B matrix R with diag(R * Sigma * R^T) ~= trace(Sigma)/B,
/// plus the Givens sequence that produced it.
struct InterRotation {
  Eigen::MatrixXd matrix;
  std::vector<GivensStep> steps;
  double achieved_spread = 0.0;
};

struct InterBuildResult {
  InterRotation rotation;
  bool converged = false;
};

// Equalization target c = trace(sigma)/B.
double equalization_target(const Eigen::Ref<const Eigen::MatrixXd>& sigma);

// Pair with opposite diagonal deviation signs: the entry farthest above c and
// the entry farthest below (ties broken by lowest index). Empty when no
// opposite-sign pair exists.
std::optional<std::pair<Eigen::Index, Eigen::Index>> select_pair(
    const Eigen::Ref<const Eigen::MatrixXd>& sigma, double c);

// Rotation angle in the (i, j) plane. In ExactTransfer mode theta solves
// (s_jj - c) t^2 + 2 s_ij t + (s_ii - c) = 0 in t = tan(theta) (smaller-|t|
// root) so the rotated (i, i) entry lands exactly on c; the opposite-sign
// precondition guarantees a real root. PaperArctan returns the printed
// formula verbatim.
double equalizing_angle(const Eigen::Ref<const Eigen::MatrixXd>& sigma,
                        Eigen::Index i, Eigen::Index j, double c,
                        AngleMode mode);

InterBuildResult try_build_inter_rotation(
    const Eigen::Ref<const Eigen::MatrixXd>& sigma,
    const EqualizationConfig& cfg = {});

// Same as try_build_inter_rotation but throws ConvergenceError (carrying the
// achieved spread) when the sweep budget runs out.
InterRotation build_inter_rotation(const Eigen::Ref<const Eigen::MatrixXd>& sigma,
                                   const EqualizationConfig& cfg = {});

Eigen::MatrixXd apply_inter(const Eigen::Ref<const Eigen::MatrixXd>& data,
                            const InterRotation& rot);

BlockTensor apply_inter(const BlockTensor& data, const InterRotation& rot);

}  // namespace torq
