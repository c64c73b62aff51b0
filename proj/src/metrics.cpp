#include "torq/metrics.hpp"

#include <cmath>

#include "torq/io.hpp"
#include "torq/json_writer.hpp"

namespace torq {

namespace {

constexpr int kKlBins = 32;

// Core of the error-floor diagnostics over a log2-magnitude population.
// `lanes` is the block length entering the granularity term.
std::optional<BoundDiagnostics> bound_core(const std::vector<double>& logs,
                                           Eigen::Index zero_count,
                                           Eigen::Index lanes,
                                           const MxFormat& fmt) {
  if (logs.size() < 2) return std::nullopt;
  const double n = static_cast<double>(logs.size());

  double mean = 0.0;
  for (double x : logs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : logs) var += (x - mean) * (x - mean);
  var /= n;

  const double lo = fmt.log_lo();
  const double hi = fmt.log_hi();
  const double width = (hi - lo) / kKlBins;
  std::vector<std::int64_t> counts(kKlBins, 0);
  for (double x : logs) {
    int idx = static_cast<int>(std::floor((x - lo) / width));
    idx = std::clamp(idx, 0, kKlBins - 1);  // out-of-range mass to edge bins
    ++counts[static_cast<size_t>(idx)];
  }
  double kl = 0.0;
  for (std::int64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    kl += p * std::log(p * kKlBins);
  }

  BoundDiagnostics out;
  out.granularity = fmt.delta_min() * fmt.delta_min() / 12.0 *
                    static_cast<double>(lanes);
  out.shape_factor = std::exp(2.0 * var);
  out.matching_factor = std::exp(kl);
  out.bound = out.granularity * out.shape_factor * out.matching_factor;
  out.zero_count = zero_count;
  return out;
}

void collect_logs(const Eigen::Ref<const Eigen::VectorXd>& block,
                  std::vector<double>& logs, Eigen::Index& zeros) {
  for (Eigen::Index i = 0; i < block.size(); ++i) {
    if (block[i] == 0.0)
      ++zeros;
    else
      logs.push_back(std::log2(std::abs(block[i])));
  }
}

void write_arm(JsonWriter& w, const ArmStats& arm) {
  w.begin_object();
  w.kv("name", arm.name);
  w.kv("mse", arm.mse);
  w.kv("code_loss", arm.code_loss);
  w.key("variance_spread");
  w.begin_object();
  w.kv("cv", arm.spread.cv);
  w.kv("max_over_mean", arm.spread.max_over_mean);
  w.end_object();
  w.kv_array("occupancy", arm.occupancy);
  w.key("bound");
  if (arm.bound) {
    const auto& b = *arm.bound;
    w.begin_object();
    const auto write_diag = [&](const BoundDiagnostics& d) {
      w.begin_object();
      w.kv("granularity", d.granularity);
      w.kv("shape_factor", d.shape_factor);
      w.kv("matching_factor", d.matching_factor);
      w.kv("bound", d.bound);
      w.kv("zero_count", static_cast<long long>(d.zero_count));
      w.end_object();
    };
    w.key("mean");
    write_diag(b.mean);
    w.key("pooled");
    if (b.pooled)
      write_diag(*b.pooled);
    else
      w.null();
    w.kv("valid_blocks", static_cast<long long>(b.valid_blocks));
    w.kv("skipped_blocks", static_cast<long long>(b.skipped_blocks));
    w.end_object();
  } else {
    w.null();
  }
  w.end_object();
}

}  // namespace

std::optional<BoundDiagnostics> bound_diagnostics(
    const Eigen::Ref<const Eigen::VectorXd>& normalized_block,
    const MxFormat& fmt) {
  std::vector<double> logs;
  logs.reserve(static_cast<size_t>(normalized_block.size()));
  Eigen::Index zeros = 0;
  collect_logs(normalized_block, logs, zeros);
  return bound_core(logs, zeros, normalized_block.size(), fmt);
}

SpreadStats spread_from_energies(const Eigen::Ref<const Eigen::MatrixXd>& energies) {
  if (energies.size() < 2)
    throw InvalidInput("variance_spread: need at least two block energies");
  const double n = static_cast<double>(energies.size());
  const double mean = energies.sum() / n;
  if (mean == 0.0) return {0.0, 1.0};
  const double var = (energies.array() - mean).square().sum() / n;
  return {std::sqrt(var) / mean, energies.maxCoeff() / mean};
}

SpreadStats variance_spread(const BlockTensor& data) {
  return spread_from_energies(block_variances(data));
}

std::optional<AggregateBound> aggregate_bound(
    const Eigen::Ref<const Eigen::MatrixXd>& normalized, const MxFormat& fmt) {
  AggregateBound agg;
  double granularity = 0.0, shape = 0.0, matching = 0.0, bound = 0.0;
  Eigen::Index zeros_total = 0;
  std::vector<double> pooled_logs;
  Eigen::Index pooled_zeros = 0;

  for (Eigen::Index b = 0; b < normalized.rows(); ++b) {
    const Eigen::VectorXd row = normalized.row(b).transpose();
    collect_logs(row, pooled_logs, pooled_zeros);
    const auto diag = bound_diagnostics(row, fmt);
    if (!diag) {
      ++agg.skipped_blocks;
      continue;
    }
    ++agg.valid_blocks;
    granularity += diag->granularity;
    shape += diag->shape_factor;
    matching += diag->matching_factor;
    bound += diag->bound;
    zeros_total += diag->zero_count;
  }
  if (agg.valid_blocks == 0) return std::nullopt;

  const double n = static_cast<double>(agg.valid_blocks);
  agg.mean.granularity = granularity / n;
  agg.mean.shape_factor = shape / n;
  agg.mean.matching_factor = matching / n;
  agg.mean.bound = bound / n;
  agg.mean.zero_count = zeros_total;
  agg.pooled = bound_core(pooled_logs, pooled_zeros, normalized.cols(), fmt);
  return agg;
}

ArmStats evaluate_arm(const std::string& name, const BlockTensor& data,
                      const RotationBundle& bundle, const MxFormat& fmt,
                      bool dynamic_scales) {
  const Eigen::Index b = data.shape.blocks;
  const Eigen::Index k = data.shape.lanes;
  ArmStats arm;
  arm.name = name;

  double sq_err = 0.0;
  Eigen::MatrixXd energies(data.count(), b);
  Eigen::MatrixXd normalized(data.count() * b, k);
  for (Eigen::Index t = 0; t < data.count(); ++t) {
    const Eigen::MatrixXd& x = data.samples[static_cast<size_t>(t)];
    const Eigen::MatrixXd z = bundle.r_inter * x * bundle.r_intra;
    energies.row(t) = z.rowwise().squaredNorm().transpose();
    for (Eigen::Index i = 0; i < b; ++i) {
      const double s = dynamic_scales
                           ? block_scale(z.row(i).transpose(), fmt)
                           : bundle.scales.scales[i];
      normalized.row(t * b + i) = z.row(i) / s;
    }
    const Eigen::MatrixXd recon = reconstruct(x, bundle, dynamic_scales);
    sq_err += (x - recon).squaredNorm();
  }
  arm.mse = sq_err / static_cast<double>(data.count() * b * k);
  arm.spread = spread_from_energies(energies);
  arm.occupancy = occupancy_histogram(normalized, fmt);
  arm.code_loss = code_loss(normalized, fmt);
  arm.bound = aggregate_bound(normalized, fmt);
  return arm;
}

std::string render_report(const CalibReport& report) {
  JsonWriter w;
  w.begin_object();
  w.kv("schema", "torq-report/1");
  w.kv("command", report.command);
  w.kv("format", report.format);
  w.key("shape");
  w.begin_object();
  w.kv("samples", static_cast<long long>(report.samples));
  w.kv("blocks", static_cast<long long>(report.blocks));
  w.kv("lanes", static_cast<long long>(report.lanes));
  w.end_object();

  w.key("before");
  if (report.before)
    write_arm(w, *report.before);
  else
    w.null();
  w.key("after");
  if (report.after)
    write_arm(w, *report.after);
  else
    w.null();
  w.key("arms");
  if (report.arms.empty()) {
    w.null();
  } else {
    w.begin_array();
    for (const auto& arm : report.arms) write_arm(w, arm);
    w.end_array();
  }

  w.key("calibration");
  if (report.calibration) {
    const auto& c = *report.calibration;
    w.begin_object();
    w.kv("samples", static_cast<long long>(c.samples));
    w.kv("dataset", c.dataset);
    w.kv("config_hash", c.config_hash);
    w.kv("achieved_spread", c.achieved_spread);
    w.kv("inter_steps", static_cast<long long>(c.inter_steps));
    w.kv("inter_converged", c.inter_converged);
    w.kv("initial_code_loss", c.initial_code_loss);
    w.kv_array("loss_trace", c.loss_trace);
    w.kv_array("s_step_loss", c.s_step_loss);
    w.end_object();
  } else {
    w.null();
  }

  w.key("per_position");
  if (report.per_position) {
    w.begin_object();
    w.kv("pooled_residual_max", report.per_position->pooled_residual_max);
    w.kv("pooled_residual_mean", report.per_position->pooled_residual_mean);
    w.kv("per_position_max", report.per_position->per_position_max);
    w.end_object();
  } else {
    w.null();
  }

  w.key("timing");
  if (report.include_timing && !report.timing.empty()) {
    w.begin_object();
    for (const auto& t : report.timing) w.kv(t.stage, t.seconds);
    w.end_object();
  } else {
    w.null();
  }
  w.end_object();
  std::string text = w.str();
  text += '\n';
  return text;
}

void emit_report(const CalibReport& report, const std::string& path,
                 const std::string& csv_prefix) {
  write_text_atomic(path, render_report(report));
  if (csv_prefix.empty()) return;

  const MxFormat& fmt = format_by_name(report.format);
  const auto write_csv = [&](const ArmStats& arm) {
    std::string csv = "bin_index,lower_bound,upper_bound,probability\n";
    for (int j = 0; j < fmt.bins(); ++j) {
      const double lower = j == 0 ? 0.0 : fmt.boundaries[static_cast<size_t>(j - 1)];
      char buf[96];
      if (j + 1 < fmt.bins())
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", j, lower,
                      fmt.boundaries[static_cast<size_t>(j)], arm.occupancy[j]);
      else
        std::snprintf(buf, sizeof(buf), "%d,%.17g,inf,%.17g\n", j, lower,
                      arm.occupancy[j]);
      csv += buf;
    }
    write_text_atomic(csv_prefix + "_" + arm.name + ".csv", csv);
  };
  if (report.before) write_csv(*report.before);
  if (report.after) write_csv(*report.after);
  for (const auto& arm : report.arms) write_csv(arm);
}

}  // namespace torq
