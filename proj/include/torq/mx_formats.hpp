#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "torq/errors.hpp"

namespace torq {

enum class FormatName { Mxfp4E2m1, Mxint4, Nvfp4E2m1 };

// How a block scale is picked when no calibrated scale vector is supplied.
// Pow2FloorOfMax is the shared-exponent rule 2^floor(log2 max|z|);
// Optimized maps the block maximum onto the largest codeword (max|z|/c_max).
enum class ScaleRule { Pow2FloorOfMax, Optimized };

/// A microscaling block format: the nonnegative codeword magnitudes, the
/// nearest-neighbor decision boundaries between them, and the default scale
/// rule. Signs are handled separately; codes are indices into the signed
/// codeword table (magnitude index for non-negative values, bins()+index for
/// negative ones).
struct MxFormat {
  FormatName name;
  std::vector<double> codewords;   // strictly increasing; first entry may be 0
  std::vector<double> boundaries;  // J-1 midpoints; implicit d_0 = 0, d_J = inf
  double c_max = 0.0;
  ScaleRule scale_rule = ScaleRule::Pow2FloorOfMax;
  double e_min = 0.0;  // log2 of the smallest positive codeword
  double e_max = 0.0;  // log2(c_max) - log2(1.5); integral for e2m1

  int bins() const { return static_cast<int>(codewords.size()); }  // J
  int num_codes() const { return 2 * bins(); }
  double delta_min() const { return codewords[1]; }

  // Interval [L, U] of representable log2 magnitudes, used by the error
  // diagnostics. For e2m1 this is [e_min, e_max + log2 1.5] = [-1, log2 6].
  double log_lo() const { return e_min; }
  double log_hi() const { return e_max + std::log2(1.5); }

  double signed_codeword(int code) const {
    const int j = bins();
    return code < j ? codewords[static_cast<size_t>(code)]
                    : -codewords[static_cast<size_t>(code - j)];
  }
};

const MxFormat& mxfp4_e2m1();
const MxFormat& mxint4();
const MxFormat& nvfp4_e2m1();

// Lookup by CLI name: "mxfp4", "mxint4" or "nvfp4". Throws InvalidInput.
const MxFormat& format_by_name(const std::string& name);
const MxFormat& format_by_id(FormatName name);
const char* format_name_string(FormatName name);

struct QuantizedBlock {
  double scale = 1.0;
  std::vector<int> codes;
  Eigen::VectorXd dequantized;
};

// Shared-exponent scale 2^floor(log2 max|z|); 1 for an all-zero block.
// Requires fmt.scale_rule == Pow2FloorOfMax.
double default_scale(const Eigen::Ref<const Eigen::VectorXd>& block,
                     const MxFormat& fmt);

// Scale under the format's own rule (shared exponent or max/c_max).
double block_scale(const Eigen::Ref<const Eigen::VectorXd>& block,
                   const MxFormat& fmt);

// Index of the magnitude bin containing |value|. Ties at a boundary go to the
// smaller-magnitude bin; values beyond c_max land in the last bin.
inline int magnitude_bin(double value, const MxFormat& fmt) {
  const double m = std::abs(value);
  return static_cast<int>(
      std::lower_bound(fmt.boundaries.begin(), fmt.boundaries.end(), m) -
      fmt.boundaries.begin());
}

// Nearest signed codeword of a finite value in normalized space.
double project_nearest(double value, const MxFormat& fmt);

// Signed code index of the nearest codeword (zero is always code 0).
int project_code(double value, const MxFormat& fmt);

QuantizedBlock quantize_block(const Eigen::Ref<const Eigen::VectorXd>& block,
                              double scale, const MxFormat& fmt);

// Per-bin counts of the magnitudes of every entry of `values`.
template <class Derived>
std::vector<std::int64_t> occupancy_counts(const Eigen::DenseBase<Derived>& values,
                                           const MxFormat& fmt) {
  std::vector<std::int64_t> counts(static_cast<size_t>(fmt.bins()), 0);
  for (Eigen::Index c = 0; c < values.cols(); ++c)
    for (Eigen::Index r = 0; r < values.rows(); ++r)
      ++counts[static_cast<size_t>(magnitude_bin(values.derived()(r, c), fmt))];
  return counts;
}

// Empirical codeword occupancy probabilities over the J magnitude bins.
template <class Derived>
Eigen::VectorXd occupancy_histogram(const Eigen::DenseBase<Derived>& values,
                                    const MxFormat& fmt) {
  const Eigen::Index n = values.size();
  if (n < 1) throw InvalidInput("occupancy_histogram: empty input");
  const auto counts = occupancy_counts(values, fmt);
  Eigen::VectorXd hist(fmt.bins());
  for (int j = 0; j < fmt.bins(); ++j)
    hist[j] = static_cast<double>(counts[static_cast<size_t>(j)]) /
              static_cast<double>(n);
  return hist;
}

}  // namespace torq
