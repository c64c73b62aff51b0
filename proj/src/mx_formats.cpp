#include "torq/mx_formats.hpp"

#include <cassert>

namespace torq {

namespace {

MxFormat make_format(FormatName name, std::vector<double> codewords,
                     ScaleRule rule, double e_min, double e_max) {
  MxFormat fmt;
  fmt.name = name;
  fmt.codewords = std::move(codewords);
  fmt.scale_rule = rule;
  fmt.e_min = e_min;
  fmt.e_max = e_max;
  fmt.c_max = fmt.codewords.back();
  fmt.boundaries.resize(fmt.codewords.size() - 1);
  for (size_t j = 0; j + 1 < fmt.codewords.size(); ++j)
    fmt.boundaries[j] = 0.5 * (fmt.codewords[j] + fmt.codewords[j + 1]);
  for (size_t j = 0; j + 1 < fmt.codewords.size(); ++j) {
    assert(fmt.codewords[j] < fmt.codewords[j + 1]);
    assert(fmt.boundaries[j] > fmt.codewords[j] &&
           fmt.boundaries[j] < fmt.codewords[j + 1]);
  }
  return fmt;
}

}  // namespace

const MxFormat& mxfp4_e2m1() {
  static const MxFormat fmt =
      make_format(FormatName::Mxfp4E2m1, {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0},
                  ScaleRule::Pow2FloorOfMax, -1.0, 2.0);
  return fmt;
}

const MxFormat& mxint4() {
  static const MxFormat fmt =
      make_format(FormatName::Mxint4, {0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0},
                  ScaleRule::Pow2FloorOfMax, 0.0,
                  std::log2(7.0) - std::log2(1.5));
  return fmt;
}

const MxFormat& nvfp4_e2m1() {
  static const MxFormat fmt =
      make_format(FormatName::Nvfp4E2m1, {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0},
                  ScaleRule::Optimized, -1.0, 2.0);
  return fmt;
}

const MxFormat& format_by_name(const std::string& name) {
  if (name == "mxfp4") return mxfp4_e2m1();
  if (name == "mxint4") return mxint4();
  if (name == "nvfp4") return nvfp4_e2m1();
  throw InvalidInput("unknown format name: " + name);
}

const MxFormat& format_by_id(FormatName name) {
  switch (name) {
    case FormatName::Mxfp4E2m1: return mxfp4_e2m1();
    case FormatName::Mxint4: return mxint4();
    case FormatName::Nvfp4E2m1: return nvfp4_e2m1();
  }
  throw InvalidInput("unknown format id");
}

const char* format_name_string(FormatName name) {
  switch (name) {
    case FormatName::Mxfp4E2m1: return "mxfp4";
    case FormatName::Mxint4: return "mxint4";
    case FormatName::Nvfp4E2m1: return "nvfp4";
  }
  return "unknown";
}

double default_scale(const Eigen::Ref<const Eigen::VectorXd>& block,
                     const MxFormat& fmt) {
  if (fmt.scale_rule != ScaleRule::Pow2FloorOfMax)
    throw InvalidInput("default_scale requires a shared-exponent format");
  if (block.size() < 1 || !block.allFinite())
    throw InvalidInput("default_scale: non-finite or empty block");
  const double m = block.cwiseAbs().maxCoeff();
  if (m == 0.0) return 1.0;
  int exp = 0;
  std::frexp(m, &exp);  // m = f * 2^exp with f in [0.5, 1)
  return std::ldexp(1.0, exp - 1);
}

double block_scale(const Eigen::Ref<const Eigen::VectorXd>& block,
                   const MxFormat& fmt) {
  if (fmt.scale_rule == ScaleRule::Pow2FloorOfMax) return default_scale(block, fmt);
  if (block.size() < 1 || !block.allFinite())
    throw InvalidInput("block_scale: non-finite or empty block");
  const double m = block.cwiseAbs().maxCoeff();
  return m == 0.0 ? 1.0 : m / fmt.c_max;
}

double project_nearest(double value, const MxFormat& fmt) {
  const double c = fmt.codewords[static_cast<size_t>(magnitude_bin(value, fmt))];
  if (c == 0.0) return 0.0;  // collapse signed zero
  return value < 0.0 ? -c : c;
}

int project_code(double value, const MxFormat& fmt) {
  const int j = magnitude_bin(value, fmt);
  if (j == 0) return 0;
  return value < 0.0 ? fmt.bins() + j : j;
}

QuantizedBlock quantize_block(const Eigen::Ref<const Eigen::VectorXd>& block,
                              double scale, const MxFormat& fmt) {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw InvalidScale("quantize_block: scale must be positive and finite");
  if (!block.allFinite())
    throw InvalidInput("quantize_block: non-finite block");
  QuantizedBlock out;
  out.scale = scale;
  out.codes.resize(static_cast<size_t>(block.size()));
  out.dequantized.resize(block.size());
  for (Eigen::Index i = 0; i < block.size(); ++i) {
    const int code = project_code(block[i] / scale, fmt);
    out.codes[static_cast<size_t>(i)] = code;
    out.dequantized[i] = scale * fmt.signed_codeword(code);
  }
  return out;
}

}  // namespace torq
