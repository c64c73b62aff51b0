#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "torq/errors.hpp"

namespace torq {

enum class Distribution { Gaussian, Lognormal, Laplace, OutlierMixture };

struct SynthConfig {
  Distribution dist = Distribution::Gaussian;
  Eigen::Index samples = 128;  // T
  Eigen::Index dim = 2048;     // d
  std::uint64_t seed = 42;
  double outlier_prob = 0.01;
  double outlier_scale = 50.0;
  double lognormal_mu = 0.0;
  double lognormal_sigma = 1.0;
  double laplace_scale = 1.0;
};

Distribution distribution_by_name(const std::string& name);
const char* distribution_name(Distribution dist);

// Deterministic T x d tensor for the given seed and parameters. The outlier
// mixture draws every element from N(0, 1); each feature channel is marked
// hot with probability outlier_prob (once per tensor) and hot channels are
// multiplied by outlier_scale in every token, reproducing the stationary
// inter-block energy imbalance of real activations.
Eigen::MatrixXd synth_tensor(const SynthConfig& cfg);

}  // namespace torq
