// torq: calibration and quantization toolkit for MX 4-bit block formats.
//
// Subcommands: synth, calibrate, quantize, compare, report. All output files
// are written atomically and every command is deterministic for a fixed
// (seed, config, input bytes) triple.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "json.hpp"

#include "torq/block_model.hpp"
#include "torq/config.hpp"
#include "torq/io.hpp"
#include "torq/metrics.hpp"
#include "torq/pipeline.hpp"
#include "torq/synth.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitConvergence = 3;

struct CliOptions {
  std::string config_path;
  std::string input;
  std::string output;
  std::string bundle;
  std::string eval;
  std::string report;
  std::string csv;
  std::string dataset_tag;
  bool dynamic_scales = false;
  torq::KvConfig cfg;
};

void add_config_flag(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--config", opt.config_path, "key=value config file");
}

// Flags land in the KvConfig after the file loads, so flags win.
void add_common_overrides(CLI::App* cmd, CliOptions& opt) {
  const auto bind = [cmd, &opt](const std::string& flag, const std::string& key,
                                const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&opt, key](const std::string& v) { opt.cfg.set(key, v); }, help);
  };
  bind("--format", "format", "mxfp4 | mxint4 | nvfp4");
  bind("--blocks", "shape.blocks", "blocks per token (B)");
  bind("--lanes", "shape.lanes", "lanes per block (K)");
  bind("--samples", "shape.samples", "token count (T)");
  bind("--seed", "seed", "RNG seed");
  bind("--dist", "dist.name",
       "gaussian | lognormal | laplace | outlier_mixture");
  bind("--outlier-prob", "dist.outlier_prob", "outlier mixture probability");
  bind("--outlier-scale", "dist.outlier_scale", "outlier mixture multiplier");
  bind("--lognormal-mu", "dist.lognormal_mu", "lognormal log-mean");
  bind("--lognormal-sigma", "dist.lognormal_sigma", "lognormal log-stddev");
  bind("--laplace-scale", "dist.laplace_scale", "laplace scale");
  bind("--dtype", "dtype", "tensor payload type: f32 | f64");
  bind("--ridge", "block.ridge", "covariance ridge delta");
  bind("--per-position", "report.per_position",
       "report per-position equalization diagnostics (true/false)");
  bind("--timing", "report.timing",
       "include wall-clock stage timing in reports (breaks byte determinism)");
}

void load_config_file(CliOptions& opt) {
  if (opt.config_path.empty()) return;
  torq::KvConfig file_cfg;
  file_cfg.load_file(opt.config_path);
  for (const auto& [k, v] : file_cfg.values())
    if (!opt.cfg.has(k)) opt.cfg.set(k, v);
}

torq::BlockShape shape_from_config(const torq::KvConfig& cfg) {
  return torq::BlockShape::make(cfg.get_int("shape.blocks", 64),
                                cfg.get_int("shape.lanes", 32));
}

torq::SynthConfig synth_from_config(const torq::KvConfig& cfg) {
  torq::SynthConfig synth;
  synth.dist = torq::distribution_by_name(cfg.get_string("dist.name", "gaussian"));
  const torq::BlockShape shape = shape_from_config(cfg);
  synth.samples = cfg.get_int("shape.samples", 128);
  synth.dim = shape.dim();
  synth.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 42));
  synth.outlier_prob = cfg.get_double("dist.outlier_prob", 0.01);
  synth.outlier_scale = cfg.get_double("dist.outlier_scale", 50.0);
  synth.lognormal_mu = cfg.get_double("dist.lognormal_mu", 0.0);
  synth.lognormal_sigma = cfg.get_double("dist.lognormal_sigma", 1.0);
  synth.laplace_scale = cfg.get_double("dist.laplace_scale", 1.0);
  return synth;
}

torq::CalibOptions calib_from_config(const torq::KvConfig& cfg) {
  torq::CalibOptions opt;
  opt.ridge = cfg.get_double("block.ridge", 1e-8);
  opt.inter.epsilon_rel = cfg.get_double("inter.epsilon_rel", 1e-8);
  opt.inter.max_sweeps = cfg.get_int("inter.max_sweeps", 0);
  const std::string mode = cfg.get_string("inter.angle_mode", "exact");
  if (mode == "exact")
    opt.inter.angle_mode = torq::AngleMode::ExactTransfer;
  else if (mode == "paper")
    opt.inter.angle_mode = torq::AngleMode::PaperArctan;
  else
    throw torq::InvalidInput("inter.angle_mode must be exact or paper");
  opt.intra.max_iter = static_cast<int>(cfg.get_int("intra.max_iter", 10));
  opt.intra.epsilon_intra = cfg.get_double("intra.epsilon", 1e-6);
  opt.intra.k_top = cfg.get_int("intra.k_top", -1);
  opt.intra.pairs_per_step = cfg.get_int("intra.pairs", -1);
  opt.intra.lambda = cfg.get_double("intra.lambda", 1.0);
  opt.intra.angle_sample_blocks = cfg.get_int("intra.angle_sample_blocks", 0);
  const std::string pow2 = cfg.get_string("intra.pow2_mode", "round");
  if (pow2 == "round")
    opt.intra.pow2_mode = torq::Pow2Mode::Round;
  else if (pow2 == "floor")
    opt.intra.pow2_mode = torq::Pow2Mode::Floor;
  else
    throw torq::InvalidInput("intra.pow2_mode must be round or floor");
  opt.allow_nonconverged = true;  // non-fatal mode: flag in meta, exit 3
  return opt;
}

torq::TensorDType dtype_from_config(const torq::KvConfig& cfg) {
  const std::string dtype = cfg.get_string("dtype", "f32");
  if (dtype == "f32") return torq::TensorDType::F32;
  if (dtype == "f64") return torq::TensorDType::F64;
  throw torq::InvalidInput("dtype must be f32 or f64");
}

torq::BlockTensor load_block_tensor(const std::string& path,
                                    const torq::KvConfig& cfg,
                                    torq::TensorDType* dtype_out = nullptr) {
  const torq::TensorFile file = torq::read_tensor(path);
  if (dtype_out) *dtype_out = file.dtype;
  const torq::BlockShape shape = shape_from_config(cfg);
  if (file.data.cols() != shape.dim())
    throw torq::ShapeError(path + ": token width " +
                           std::to_string(file.data.cols()) +
                           " does not match blocks*lanes = " +
                           std::to_string(shape.dim()));
  return torq::reshape_tokens(file.data, shape);
}

std::string default_report_path(const std::string& output) {
  return output + ".report.json";
}

torq::PerPositionDiag per_position_diagnostics(const torq::BlockTensor& calib,
                                               const torq::RotationBundle& bundle,
                                               double ridge) {
  const torq::PositionCovariance cov = torq::estimate_covariances(calib, ridge);
  torq::PerPositionDiag diag;
  double sum = 0.0;
  for (const auto& sigma : cov.per_position) {
    const double c = sigma.trace() / static_cast<double>(sigma.rows());
    const Eigen::MatrixXd rotated =
        bundle.r_inter * sigma * bundle.r_inter.transpose();
    const double residual =
        (rotated.diagonal().array() - c).abs().maxCoeff() / std::abs(c);
    diag.pooled_residual_max = std::max(diag.pooled_residual_max, residual);
    sum += residual;

    const torq::InterBuildResult perk = torq::try_build_inter_rotation(sigma, {});
    diag.per_position_max = std::max(
        diag.per_position_max, perk.rotation.achieved_spread / std::abs(c));
  }
  diag.pooled_residual_mean = sum / static_cast<double>(cov.per_position.size());
  return diag;
}

std::string effective_config_hash(const torq::KvConfig& cfg) {
  return torq::config_fingerprint(cfg.canonical());
}

int run_synth(CliOptions& opt) {
  load_config_file(opt);
  const torq::SynthConfig synth = synth_from_config(opt.cfg);
  const Eigen::MatrixXd data = torq::synth_tensor(synth);
  torq::write_tensor(opt.output, data, dtype_from_config(opt.cfg));
  std::cout << "wrote " << opt.output << " (" << synth.samples << " x "
            << synth.dim << ", " << torq::distribution_name(synth.dist)
            << ", seed " << synth.seed << ")\n";
  return kExitOk;
}

int run_calibrate(CliOptions& opt) {
  load_config_file(opt);
  const torq::BlockTensor calib = load_block_tensor(opt.input, opt.cfg);
  const torq::MxFormat& fmt =
      torq::format_by_name(opt.cfg.get_string("format", "mxfp4"));
  const torq::CalibOptions copt = calib_from_config(opt.cfg);

  std::vector<torq::StageTiming> timing;
  torq::RotationBundle bundle = torq::calibrate(calib, copt, fmt, &timing);
  bundle.meta.dataset = opt.dataset_tag.empty()
                            ? std::filesystem::path(opt.input).filename().string()
                            : opt.dataset_tag;
  bundle.meta.config_hash = effective_config_hash(opt.cfg);

  torq::CalibReport report;
  report.command = "calibrate";
  report.format = torq::format_name_string(fmt.name);
  report.samples = calib.count();
  report.blocks = calib.shape.blocks;
  report.lanes = calib.shape.lanes;
  report.before = torq::evaluate_arm(
      "rtn", calib, torq::identity_bundle(calib.shape, fmt.name), fmt, true);
  report.after = torq::evaluate_arm("torq", calib, bundle, fmt, false);
  report.calibration = bundle.meta;
  if (opt.cfg.get_bool("report.per_position", false))
    report.per_position = per_position_diagnostics(calib, bundle, copt.ridge);
  report.timing = timing;
  report.include_timing = opt.cfg.get_bool("report.timing", false);

  torq::write_bundle(opt.output, bundle);
  const std::string report_path =
      opt.report.empty() ? default_report_path(opt.output) : opt.report;
  torq::emit_report(report, report_path, opt.csv);
  std::cout << "wrote " << opt.output << " and " << report_path << "\n";
  std::cout << "mse rtn " << report.before->mse << " -> torq "
            << report.after->mse << "\n";

  if (!bundle.meta.inter_converged) {
    std::cerr << "warning: inter-block equalization did not converge (spread "
              << bundle.meta.achieved_spread << "); bundle flagged\n";
    return kExitConvergence;
  }
  return kExitOk;
}

int run_quantize(CliOptions& opt) {
  load_config_file(opt);
  const torq::RotationBundle bundle = torq::read_bundle(opt.bundle);
  opt.cfg.set("shape.blocks", std::to_string(bundle.shape.blocks));
  opt.cfg.set("shape.lanes", std::to_string(bundle.shape.lanes));
  torq::TensorDType dtype = torq::TensorDType::F32;
  const torq::BlockTensor data = load_block_tensor(opt.input, opt.cfg, &dtype);
  const torq::MxFormat& fmt = torq::format_by_id(bundle.format);

  torq::BlockTensor recon;
  recon.shape = data.shape;
  for (const auto& x : data.samples)
    recon.samples.push_back(torq::reconstruct(x, bundle, opt.dynamic_scales));
  torq::write_tensor(opt.output, torq::flatten_tokens(recon), dtype);

  torq::CalibReport report;
  report.command = "quantize";
  report.format = torq::format_name_string(bundle.format);
  report.samples = data.count();
  report.blocks = data.shape.blocks;
  report.lanes = data.shape.lanes;
  report.after =
      torq::evaluate_arm("torq", data, bundle, fmt, opt.dynamic_scales);
  const std::string report_path =
      opt.report.empty() ? default_report_path(opt.output) : opt.report;
  torq::emit_report(report, report_path, opt.csv);
  std::cout << "wrote " << opt.output << " and " << report_path << " (mse "
            << report.after->mse << ")\n";
  return kExitOk;
}

int run_compare(CliOptions& opt) {
  load_config_file(opt);
  const torq::BlockTensor calib = load_block_tensor(opt.input, opt.cfg);
  const torq::BlockTensor eval = load_block_tensor(opt.eval, opt.cfg);
  const torq::MxFormat& fmt =
      torq::format_by_name(opt.cfg.get_string("format", "mxfp4"));
  const torq::CalibOptions base = calib_from_config(opt.cfg);

  // The four arms share the calibrated-scale backend and differ only in
  // which rotations they carry, so the component contributions are isolated
  // from the scale rule.
  torq::CalibOptions none = base;
  none.skip_inter = none.skip_intra = true;
  torq::CalibOptions inter_only = base;
  inter_only.skip_intra = true;
  torq::CalibOptions intra_only = base;
  intra_only.skip_inter = true;

  const torq::RotationBundle bundle_none = torq::calibrate(calib, none, fmt);
  const torq::RotationBundle bundle_inter = torq::calibrate(calib, inter_only, fmt);
  const torq::RotationBundle bundle_intra = torq::calibrate(calib, intra_only, fmt);
  const torq::RotationBundle bundle_full = torq::calibrate(calib, base, fmt);

  torq::CalibReport report;
  report.command = "compare";
  report.format = torq::format_name_string(fmt.name);
  report.samples = eval.count();
  report.blocks = eval.shape.blocks;
  report.lanes = eval.shape.lanes;
  report.arms.push_back(torq::evaluate_arm("rtn", eval, bundle_none, fmt, false));
  report.arms.push_back(
      torq::evaluate_arm("inter_only", eval, bundle_inter, fmt, false));
  report.arms.push_back(
      torq::evaluate_arm("intra_only", eval, bundle_intra, fmt, false));
  report.arms.push_back(torq::evaluate_arm("torq", eval, bundle_full, fmt, false));

  torq::emit_report(report, opt.output, opt.csv);
  std::cout << "wrote " << opt.output << "\n";
  for (const auto& arm : report.arms)
    std::cout << "  " << arm.name << ": mse " << arm.mse << ", code_loss "
              << arm.code_loss << ", cv " << arm.spread.cv << "\n";

  if (!bundle_full.meta.inter_converged || !bundle_inter.meta.inter_converged) {
    std::cerr << "warning: inter-block equalization did not converge\n";
    return kExitConvergence;
  }
  return kExitOk;
}

int run_report(CliOptions& opt) {
  std::ifstream in(opt.input);
  if (!in) throw torq::IoError("cannot open report: " + opt.input);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw torq::IoError("bad report JSON in " + opt.input + ": " + e.what());
  }

  std::cout << "schema:  " << doc.value("schema", std::string("?")) << "\n";
  std::cout << "command: " << doc.value("command", std::string("?")) << "\n";
  std::cout << "format:  " << doc.value("format", std::string("?")) << "\n";
  if (doc.contains("shape") && doc["shape"].is_object())
    std::cout << "shape:   T=" << doc["shape"].value("samples", 0)
              << " B=" << doc["shape"].value("blocks", 0)
              << " K=" << doc["shape"].value("lanes", 0) << "\n";

  const auto print_arm = [](const nlohmann::json& arm) {
    std::cout << "  " << arm.value("name", std::string("?"))
              << ": mse=" << arm.value("mse", 0.0)
              << " code_loss=" << arm.value("code_loss", 0.0);
    if (arm.contains("variance_spread"))
      std::cout << " cv=" << arm["variance_spread"].value("cv", 0.0);
    std::cout << "\n";
  };
  for (const char* key : {"before", "after"})
    if (doc.contains(key) && doc[key].is_object()) print_arm(doc[key]);
  if (doc.contains("arms") && doc["arms"].is_array())
    for (const auto& arm : doc["arms"]) print_arm(arm);

  if (!opt.csv.empty()) {
    const torq::MxFormat& fmt =
        torq::format_by_name(doc.value("format", std::string("mxfp4")));
    const auto write_csv = [&](const nlohmann::json& arm) {
      if (!arm.contains("occupancy") || !arm["occupancy"].is_array()) return;
      std::string csv = "bin_index,lower_bound,upper_bound,probability\n";
      const auto& occ = arm["occupancy"];
      for (int j = 0; j < fmt.bins() && j < static_cast<int>(occ.size()); ++j) {
        const double lower =
            j == 0 ? 0.0 : fmt.boundaries[static_cast<size_t>(j - 1)];
        char buf[96];
        if (j + 1 < fmt.bins())
          std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", j, lower,
                        fmt.boundaries[static_cast<size_t>(j)],
                        occ[static_cast<size_t>(j)].get<double>());
        else
          std::snprintf(buf, sizeof(buf), "%d,%.17g,inf,%.17g\n", j, lower,
                        occ[static_cast<size_t>(j)].get<double>());
        csv += buf;
      }
      torq::write_text_atomic(
          opt.csv + "_" + arm.value("name", std::string("arm")) + ".csv", csv);
    };
    for (const char* key : {"before", "after"})
      if (doc.contains(key) && doc[key].is_object()) write_csv(doc[key]);
    if (doc.contains("arms") && doc["arms"].is_array())
      for (const auto& arm : doc["arms"]) write_csv(arm);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("TORQ_THREADS")) {
    const int n = std::atoi(threads);
    if (n > 0) Eigen::setNbThreads(n);
  }

  CLI::App app{"TORQ: two-level rotation calibration for MX 4-bit block formats"};
  app.require_subcommand(1);
  CliOptions opt;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic tensor");
  synth->add_option("--output", opt.output, "output tensor path")->required();
  add_config_flag(synth, opt);
  add_common_overrides(synth, opt);

  CLI::App* calibrate =
      app.add_subcommand("calibrate", "build a rotation bundle from a tensor");
  calibrate->add_option("--input", opt.input, "calibration tensor")->required();
  calibrate->add_option("--output", opt.output, "output bundle path")->required();
  calibrate->add_option("--report", opt.report, "report path (default <output>.report.json)");
  calibrate->add_option("--csv", opt.csv, "histogram CSV path prefix");
  calibrate->add_option("--dataset-tag", opt.dataset_tag, "dataset tag stored in the bundle");
  add_config_flag(calibrate, opt);
  add_common_overrides(calibrate, opt);

  CLI::App* quantize =
      app.add_subcommand("quantize", "quantize-dequantize a tensor with a bundle");
  quantize->add_option("--input", opt.input, "input tensor")->required();
  quantize->add_option("--bundle", opt.bundle, "rotation bundle")->required();
  quantize->add_option("--output", opt.output, "reconstructed tensor path")->required();
  quantize->add_option("--report", opt.report, "report path (default <output>.report.json)");
  quantize->add_option("--csv", opt.csv, "histogram CSV path prefix");
  quantize->add_flag("--dynamic-scales", opt.dynamic_scales,
                     "recompute block scales per input instead of using the bundle");
  add_config_flag(quantize, opt);
  add_common_overrides(quantize, opt);

  CLI::App* compare = app.add_subcommand(
      "compare", "run rtn / inter-only / intra-only / full arms on held-out data");
  compare->add_option("--input", opt.input, "calibration tensor")->required();
  compare->add_option("--eval", opt.eval, "held-out evaluation tensor")->required();
  compare->add_option("--output", opt.output, "report path")->required();
  compare->add_option("--csv", opt.csv, "histogram CSV path prefix");
  add_config_flag(compare, opt);
  add_common_overrides(compare, opt);

  CLI::App* report = app.add_subcommand("report", "summarize a report JSON");
  report->add_option("--input", opt.input, "report JSON path")->required();
  report->add_option("--csv", opt.csv, "histogram CSV path prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const torq::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return run_synth(opt);
    if (calibrate->parsed()) return run_calibrate(opt);
    if (quantize->parsed()) return run_quantize(opt);
    if (compare->parsed()) return run_compare(opt);
    if (report->parsed()) return run_report(opt);
  } catch (const torq::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
