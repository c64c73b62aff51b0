#include "torq/inter_rotation.hpp"

#include <cmath>

namespace torq {

namespace {

void check_symmetric(const Eigen::Ref<const Eigen::MatrixXd>& sigma) {
  if (sigma.rows() != sigma.cols())
    throw ShapeError("covariance matrix must be square");
  const double scale = 1.0 + sigma.cwiseAbs().maxCoeff();
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw InvalidInput("covariance matrix is not symmetric");
}

// A <- G^T A G for the Givens rotation G acting in the (i, j) plane, where
// column i of G is cos*e_i + sin*e_j and column j is -sin*e_i + cos*e_j.
void rotate_symmetric(Eigen::MatrixXd& a, Eigen::Index i, Eigen::Index j,
                      double ct, double st) {
  const Eigen::VectorXd ci = a.col(i), cj = a.col(j);
  a.col(i) = ct * ci + st * cj;
  a.col(j) = -st * ci + ct * cj;
  const Eigen::RowVectorXd ri = a.row(i), rj = a.row(j);
  a.row(i) = ct * ri + st * rj;
  a.row(j) = -st * ri + ct * rj;
}

void rotate_columns(Eigen::MatrixXd& m, Eigen::Index i, Eigen::Index j,
                    double ct, double st) {
  const Eigen::VectorXd ci = m.col(i), cj = m.col(j);
  m.col(i) = ct * ci + st * cj;
  m.col(j) = -st * ci + ct * cj;
}

std::optional<std::pair<Eigen::Index, Eigen::Index>> select_pair_masked(
    const Eigen::MatrixXd& sigma, double c, const std::vector<char>& pinned) {
  Eigen::Index above = -1, below = -1;
  double above_dev = 0.0, below_dev = 0.0;
  for (Eigen::Index i = 0; i < sigma.rows(); ++i) {
    if (!pinned.empty() && pinned[static_cast<size_t>(i)]) continue;
    const double dev = sigma(i, i) - c;
    if (dev > above_dev) {
      above_dev = dev;
      above = i;
    } else if (dev < below_dev) {
      below_dev = dev;
      below = i;
    }
  }
  if (above < 0 || below < 0) return std::nullopt;
  return std::make_pair(above, below);
}

}  // namespace

double equalization_target(const Eigen::Ref<const Eigen::MatrixXd>& sigma) {
  check_symmetric(sigma);
  return sigma.trace() / static_cast<double>(sigma.rows());
}

std::optional<std::pair<Eigen::Index, Eigen::Index>> select_pair(
    const Eigen::Ref<const Eigen::MatrixXd>& sigma, double c) {
  check_symmetric(sigma);
  return select_pair_masked(sigma, c, {});
}

double equalizing_angle(const Eigen::Ref<const Eigen::MatrixXd>& sigma,
                        Eigen::Index i, Eigen::Index j, double c,
                        AngleMode mode) {
  const double di = sigma(i, i) - c;
  const double dj = sigma(j, j) - c;
  if (!(di * dj < 0.0))
    throw NoTransferPossible(
        "equalizing_angle: diagonal deviations do not have opposite signs");
  if (mode == AngleMode::PaperArctan)
    return 0.5 * std::atan2(2.0 * sigma(i, j), sigma(i, i) - sigma(j, j));

  // (dj) t^2 + (2 s_ij) t + (di) = 0; discriminant > 0 because di*dj < 0.
  const double a = dj;
  const double b = 2.0 * sigma(i, j);
  const double root = std::sqrt(b * b - 4.0 * a * di);
  const double q = b >= 0.0 ? -0.5 * (b + root) : -0.5 * (b - root);
  const double t1 = q / a;
  const double t2 = di / q;
  double t = std::abs(t1) < std::abs(t2) ? t1 : t2;
  if (std::abs(t1) == std::abs(t2)) t = std::max(t1, t2);
  return std::atan(t);
}

InterBuildResult try_build_inter_rotation(
    const Eigen::Ref<const Eigen::MatrixXd>& sigma,
    const EqualizationConfig& cfg) {
  check_symmetric(sigma);
  const Eigen::Index b = sigma.rows();
  Eigen::MatrixXd a = 0.5 * (sigma + sigma.transpose());
  const double c = a.trace() / static_cast<double>(b);
  const double eps =
      cfg.epsilon_abs > 0.0 ? cfg.epsilon_abs : cfg.epsilon_rel * std::abs(c);
  const Eigen::Index max_sweeps =
      cfg.max_sweeps > 0 ? cfg.max_sweeps : 4 * b * b;
  const bool exact = cfg.angle_mode == AngleMode::ExactTransfer;

  InterBuildResult out;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(b, b);
  std::vector<char> pinned(static_cast<size_t>(b), 0);
  bool converged = false;

  while (true) {
    const double spread = (a.diagonal().array() - c).abs().maxCoeff();
    if (spread <= eps) {
      converged = true;
      break;
    }
    if (static_cast<Eigen::Index>(out.rotation.steps.size()) >= max_sweeps) break;

    const auto pair = exact ? select_pair_masked(a, c, pinned)
                            : select_pair_masked(a, c, {});
    if (!pair) break;
    const auto [p, q] = *pair;
    const double theta = equalizing_angle(a, p, q, c, cfg.angle_mode);

    // Record the step with ordered indices; swizzling the plane negates the
    // angle but applies the same rotation, so (p, p) still lands on c.
    GivensStep step;
    if (p < q)
      step = {p, q, theta};
    else
      step = {q, p, -theta};
    const double ct = std::cos(step.theta);
    const double st = std::sin(step.theta);
    rotate_symmetric(a, step.i, step.j, ct, st);
    rotate_columns(acc, step.i, step.j, ct, st);
    out.rotation.steps.push_back(step);
    if (exact) pinned[static_cast<size_t>(p)] = 1;
  }

  // The loop accumulates Sigma <- G^T Sigma G with acc <- acc*G, so the
  // equalized matrix is acc^T Sigma acc; diag(R Sigma R^T) = c needs R = acc^T.
  out.rotation.matrix = acc.transpose();
  out.rotation.achieved_spread = (a.diagonal().array() - c).abs().maxCoeff();
  out.converged = converged;
  return out;
}

InterRotation build_inter_rotation(const Eigen::Ref<const Eigen::MatrixXd>& sigma,
                                   const EqualizationConfig& cfg) {
  InterBuildResult result = try_build_inter_rotation(sigma, cfg);
  if (!result.converged)
    throw ConvergenceError("inter-block equalization did not converge",
                           result.rotation.achieved_spread);
  return std::move(result.rotation);
}

Eigen::MatrixXd apply_inter(const Eigen::Ref<const Eigen::MatrixXd>& data,
                            const InterRotation& rot) {
  if (data.rows() != rot.matrix.rows())
    throw ShapeError("apply_inter: row count does not match rotation size");
  return rot.matrix * data;
}

BlockTensor apply_inter(const BlockTensor& data, const InterRotation& rot) {
  if (data.shape.blocks != rot.matrix.rows())
    throw ShapeError("apply_inter: block count does not match rotation size");
  BlockTensor out;
  out.shape = data.shape;
  out.samples.reserve(data.samples.size());
  for (const auto& x : data.samples) out.samples.push_back(rot.matrix * x);
  return out;
}

}  // namespace torq
