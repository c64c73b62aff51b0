#include "torq/synth.hpp"

#include <cmath>
#include <random>

namespace torq {

Distribution distribution_by_name(const std::string& name) {
  if (name == "gaussian") return Distribution::Gaussian;
  if (name == "lognormal") return Distribution::Lognormal;
  if (name == "laplace") return Distribution::Laplace;
  if (name == "outlier_mixture") return Distribution::OutlierMixture;
  throw InvalidInput("unknown distribution: " + name);
}

const char* distribution_name(Distribution dist) {
  switch (dist) {
    case Distribution::Gaussian: return "gaussian";
    case Distribution::Lognormal: return "lognormal";
    case Distribution::Laplace: return "laplace";
    case Distribution::OutlierMixture: return "outlier_mixture";
  }
  return "unknown";
}

Eigen::MatrixXd synth_tensor(const SynthConfig& cfg) {
  if (cfg.samples < 1 || cfg.dim < 1)
    throw InvalidInput("synth_tensor: samples and dim must be positive");
  if (cfg.dist == Distribution::OutlierMixture &&
      (cfg.outlier_prob < 0.0 || cfg.outlier_prob > 1.0 || cfg.outlier_scale <= 0.0))
    throw InvalidInput("synth_tensor: bad outlier mixture parameters");
  if (cfg.dist == Distribution::Lognormal && cfg.lognormal_sigma <= 0.0)
    throw InvalidInput("synth_tensor: lognormal sigma must be positive");
  if (cfg.dist == Distribution::Laplace && cfg.laplace_scale <= 0.0)
    throw InvalidInput("synth_tensor: laplace scale must be positive");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  // Outlier channels persist across tokens: real activation outliers live in
  // fixed feature channels, which is what makes the inter-block energy
  // imbalance stationary and equalizable from calibration statistics.
  std::vector<char> hot;
  if (cfg.dist == Distribution::OutlierMixture) {
    hot.resize(static_cast<size_t>(cfg.dim));
    for (Eigen::Index i = 0; i < cfg.dim; ++i)
      hot[static_cast<size_t>(i)] = uniform(rng) < cfg.outlier_prob;
  }

  Eigen::MatrixXd out(cfg.samples, cfg.dim);
  for (Eigen::Index t = 0; t < cfg.samples; ++t) {
    for (Eigen::Index i = 0; i < cfg.dim; ++i) {
      double v = 0.0;
      switch (cfg.dist) {
        case Distribution::Gaussian:
          v = normal(rng);
          break;
        case Distribution::Lognormal: {
          const double sign = uniform(rng) < 0.5 ? -1.0 : 1.0;
          v = sign * std::exp(cfg.lognormal_mu + cfg.lognormal_sigma * normal(rng));
          break;
        }
        case Distribution::Laplace: {
          // Inverse CDF; the max() keeps the left tail finite.
          const double u = std::max(uniform(rng), 1e-300) - 0.5;
          v = -cfg.laplace_scale * std::copysign(1.0, u) *
              std::log1p(-2.0 * std::abs(u));
          break;
        }
        case Distribution::OutlierMixture:
          v = normal(rng);
          if (hot[static_cast<size_t>(i)]) v *= cfg.outlier_scale;
          break;
      }
      out(t, i) = v;
    }
  }
  return out;
}

}  // namespace torq
