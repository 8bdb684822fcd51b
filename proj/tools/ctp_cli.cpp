// ctp: calibrate nucleus sampling with split conformal prediction.
//
// Every subcommand prints one JSON line on stdout ({"command", "status",
// "elapsed_ms", ...}) and writes its artifacts atomically. Exit codes:
// 0 ok, 2 usage/config, 3 data validation, 4 internal invariant.

#include <chrono>
#include <cmath>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctp/conformal.hpp"
#include "ctp/decoding.hpp"
#include "ctp/error.hpp"
#include "ctp/evaluation.hpp"
#include "ctp/io.hpp"
#include "ctp/kernels.hpp"
#include "ctp/records.hpp"
#include "ctp/synth.hpp"

namespace {

using ojson = nlohmann::ordered_json;

void require_open_unit(const char* name, double v) {
  if (!(v > 0.0 && v < 1.0)) {
    throw ctp::UsageError(std::string("--") + name + " must lie in (0, 1), got " + std::to_string(v));
  }
}

ctp::ReadOptions read_opts(bool lenient, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw ctp::UsageError("--eps must lie in (0, 1)");
  return {lenient ? ctp::ReadMode::Lenient : ctp::ReadMode::Strict, eps};
}

ojson report_json(const ctp::ReadReport& r) {
  ojson j;
  j["lines"] = r.lines;
  j["kept"] = r.kept;
  j["dropped"] = r.dropped;
  j["dropped_by_code"] = ojson::object();
  for (const auto& [k, v] : r.dropped_by_code) j["dropped_by_code"][k] = v;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  ctp::write_file_atomic(path, [&text](std::ostream& out) { out << text; });
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string spec_path, out_path;
  std::optional<std::uint64_t> subsample_seed;
};

ojson cmd_synth(const SynthArgs& a) {
  const auto spec = ctp::load_spec(a.spec_path);
  auto ds = ctp::generate_world(spec);
  if (a.subsample_seed) ds = ctp::subsample_one_per_sequence(ds, *a.subsample_seed);
  ctp::write_dataset(ds, a.out_path);
  ojson j;
  j["records"] = ds.size();
  j["vocab"] = ds.vocab_size();
  j["out"] = a.out_path;
  return j;
}

// --- validate --------------------------------------------------------------

struct ValidateArgs {
  std::string in_path;
  bool strict = false;
  double eps = ctp::kDefaultMassEps;
};

ojson cmd_validate(const ValidateArgs& a, int& exit_code) {
  ctp::ReadReport rep;
  const auto ds = ctp::read_dataset(a.in_path, read_opts(!a.strict, a.eps), &rep);
  ojson j = report_json(rep);
  j["valid"] = rep.dropped == 0;
  if (rep.dropped > 0) exit_code = 3;
  return j;
}

// --- calibrate -------------------------------------------------------------

struct CalibrateArgs {
  std::string in_path, out_path;
  double alpha = 0.1;
  std::size_t bins = 10;
  bool lenient = false;
  double eps = ctp::kDefaultMassEps;
};

ojson cmd_calibrate(const CalibrateArgs& a) {
  require_open_unit("alpha", a.alpha);
  if (a.bins < 1) throw ctp::UsageError("--bins must be >= 1");
  ctp::ReadReport rep;
  const auto ds = ctp::read_dataset(a.in_path, read_opts(a.lenient, a.eps), &rep);
  if (ds.empty()) throw ctp::ValidationError("no valid records in '" + a.in_path + "'");
  auto model = ctp::fit_binned(ds, a.alpha, a.bins);
  model.metadata["source"] = a.in_path;
  for (const auto& [k, v] : ds.metadata) model.metadata["data." + k] = v;
  ctp::save_model(model, a.out_path);

  ojson j;
  j["records"] = ds.size();
  j["dropped"] = rep.dropped;
  j["mode"] = model.mode == ctp::CalibrationMode::Global ? "global" : "binned";
  j["qhats"] = model.qhats;
  j["out"] = a.out_path;
  return j;
}

// --- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string model_path, test_path, report_path;
  bool lenient = false;
  double eps = ctp::kDefaultMassEps;
};

ojson cmd_evaluate(const EvaluateArgs& a) {
  const auto model = ctp::load_model(a.model_path);
  const auto test = ctp::read_dataset(a.test_path, read_opts(a.lenient, a.eps));
  const auto rep = ctp::empirical_coverage(model, test);
  write_text(a.report_path, ctp::report_to_json(rep) + "\n");
  ojson j;
  j["n_test"] = rep.n_test;
  j["coverage"] = rep.coverage;
  j["set_coverage"] = rep.set_coverage;
  j["target"] = rep.target;
  j["theorem_upper"] = rep.theorem_upper;
  j["mean_set_size"] = rep.mean_set_size;
  j["out"] = a.report_path;
  return j;
}

// --- curve -----------------------------------------------------------------

struct CurveArgs {
  std::string in_path, csv_path;
  std::string alphas = "0.05:0.5:0.05";
  std::size_t bins = 1;
  std::optional<double> effective_p;
  bool lenient = false;
  double eps = ctp::kDefaultMassEps;
};

ojson cmd_curve(const CurveArgs& a) {
  if (a.bins < 1) throw ctp::UsageError("--bins must be >= 1");
  std::vector<double> alphas;
  if (!a.effective_p) alphas = ctp::parse_alpha_range(a.alphas);
  if (a.effective_p && !(*a.effective_p > 0.0 && *a.effective_p <= 1.0)) {
    throw ctp::UsageError("--effective-p must lie in (0, 1]");
  }
  const auto ds = ctp::read_dataset(a.in_path, read_opts(a.lenient, a.eps));
  std::vector<ctp::CurvePoint> pts;
  ojson j;
  if (a.effective_p) {
    pts = ctp::effective_confidence_curve(*a.effective_p, ds, a.bins);
    j["kind"] = "effective_confidence";
  } else {
    const auto mode = a.bins == 1 ? ctp::CalibrationMode::Global : ctp::CalibrationMode::EntropyBinned;
    pts = ctp::qhat_curve(ds, alphas, mode, a.bins);
    j["kind"] = "qhat";
    std::size_t above = 0;
    for (const auto& p : pts) above += p.y > p.x ? 1 : 0;
    j["points_above_diagonal"] = above;
  }
  write_text(a.csv_path, ctp::curve_to_csv(pts));
  j["points"] = pts.size();
  j["out"] = a.csv_path;
  return j;
}

// --- decode ----------------------------------------------------------------

struct DecodeArgs {
  std::string model_path, stream_path, trace_path;
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;  // 0 = whole stream
  std::string method = "conformal";
  double p = 0.9;
  std::size_t k = 50;
  double eps = ctp::kDefaultMassEps;
};

ojson cmd_decode(const DecodeArgs& a) {
  if (a.method != "conformal" && a.method != "top-p" && a.method != "top-k") {
    throw ctp::UsageError("--method must be conformal, top-p or top-k");
  }
  if (a.method == "top-p" && !(a.p > 0.0 && a.p <= 1.0)) throw ctp::UsageError("--p must lie in (0, 1]");
  if (a.method == "top-k" && a.k < 1) throw ctp::UsageError("--k must be >= 1");
  std::optional<ctp::CalibrationModel> model;
  if (a.method == "conformal") model = ctp::load_model(a.model_path);

  ctp::RecordReader reader(a.stream_path, {ctp::ReadMode::Strict, a.eps});
  std::size_t steps = 0, hits = 0, total_size = 0;
  ctp::write_file_atomic(a.trace_path, [&](std::ostream& out) {
    while (a.max_steps == 0 || steps < a.max_steps) {
      auto rec = reader.next();
      if (!rec) break;
      const auto dense = ctp::dense_form(*rec);
      const auto& probs = dense.dense().probs;
      const auto seed = ctp::step_seed(a.seed, steps);
      ctp::DecodeStep step;
      if (a.method == "conformal") {
        step = ctp::conformal_decode_step(probs, *model, seed);
      } else if (a.method == "top-p") {
        step = ctp::vanilla_top_p_step(probs, a.p, seed);
      } else {
        step = ctp::vanilla_top_k_step(probs, a.k, seed);
      }
      if (!step.set.contains(step.chosen_token)) {
        throw ctp::InvariantError("sampled token outside its prediction set");
      }
      hits += step.set.contains(rec->gold) ? 1 : 0;
      total_size += step.set.size();
      out << ctp::format_trace_line(steps, step) << '\n';
      ++steps;
    }
  });
  ojson j;
  j["steps"] = steps;
  j["gold_in_set_rate"] = steps ? static_cast<double>(hits) / static_cast<double>(steps) : 0.0;
  j["mean_set_size"] = steps ? static_cast<double>(total_size) / static_cast<double>(steps) : 0.0;
  j["out"] = a.trace_path;
  return j;
}

// --- band ------------------------------------------------------------------

struct BandArgs {
  std::string spec_path, out_path;
  double alpha = 0.1;
  std::size_t n_cal = 999, n_test = 10000, trials = 100;
  std::uint64_t seed = 0;
  std::optional<double> slack;
};

ojson cmd_band(const BandArgs& a, int& exit_code) {
  require_open_unit("alpha", a.alpha);
  if (a.n_cal < 1 || a.n_test < 1 || a.trials < 1) {
    throw ctp::UsageError("--n-cal, --n-test and --trials must be >= 1");
  }
  if (a.slack && !(*a.slack >= 0.0)) throw ctp::UsageError("--slack must be >= 0");
  const auto spec = ctp::load_spec(a.spec_path);
  const auto b = ctp::theorem_band_check(spec, a.alpha, a.n_cal, a.n_test, a.trials, a.seed, a.slack);
  if (!a.out_path.empty()) write_text(a.out_path, ctp::band_to_json(b) + "\n");
  if (!b.pass && b.band_guaranteed) exit_code = 3;
  ojson j;
  j["pass"] = b.pass;
  j["band_guaranteed"] = b.band_guaranteed;
  j["mean_coverage"] = b.mean_coverage;
  j["mean_set_coverage"] = b.mean_set_coverage;
  j["lower"] = b.lower;
  j["upper"] = b.upper;
  j["slack"] = b.slack;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  const auto t0 = std::chrono::steady_clock::now();
  CLI::App app{"Conformal calibration of nucleus (top-p) sampling"};
  app.require_subcommand(1);

  double eps = ctp::kDefaultMassEps;

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic record file from a JSON world spec");
  s_synth->add_option("spec", synth.spec_path, "World spec (JSON)")->required();
  s_synth->add_option("out", synth.out_path, "Output record file (JSON Lines)")->required();
  s_synth->add_option("--one-per-sequence", synth.subsample_seed,
                      "Keep one uniformly chosen record per sequence, using this seed");

  ValidateArgs validate;
  auto* s_validate = app.add_subcommand("validate", "Check a record file against the record invariants");
  s_validate->add_option("in", validate.in_path, "Record file")->required();
  s_validate->add_flag("--strict", validate.strict, "Stop at the first bad row");
  s_validate->add_option("--eps", eps, "Probability-mass tolerance")->capture_default_str();

  CalibrateArgs calibrate;
  auto* s_cal = app.add_subcommand("calibrate", "Fit conformal thresholds (global or per entropy bin)");
  s_cal->add_option("in", calibrate.in_path, "Calibration record file")->required();
  s_cal->add_option("-o,--out", calibrate.out_path, "Output model (JSON)")->required();
  s_cal->add_option("--alpha", calibrate.alpha, "Miscoverage level; confidence is 1 - alpha")->capture_default_str();
  s_cal->add_option("--bins", calibrate.bins, "Entropy bins (1 = global)")->capture_default_str();
  s_cal->add_flag("--lenient", calibrate.lenient, "Drop invalid rows instead of failing");
  s_cal->add_option("--eps", eps, "Probability-mass tolerance")->capture_default_str();

  EvaluateArgs evaluate;
  auto* s_eval = app.add_subcommand("evaluate", "Measure empirical coverage of a fitted model");
  s_eval->add_option("model", evaluate.model_path, "Model (JSON)")->required();
  s_eval->add_option("test", evaluate.test_path, "Test record file")->required();
  s_eval->add_option("-o,--out", evaluate.report_path, "Coverage report (JSON)")->required();
  s_eval->add_flag("--lenient", evaluate.lenient, "Drop invalid rows instead of failing");
  s_eval->add_option("--eps", eps, "Probability-mass tolerance")->capture_default_str();

  CurveArgs curve;
  auto* s_curve = app.add_subcommand("curve", "Threshold-vs-confidence or effective-confidence curves as CSV");
  s_curve->add_option("in", curve.in_path, "Record file")->required();
  s_curve->add_option("-o,--out", curve.csv_path, "Output CSV (x,y,series)")->required();
  s_curve->add_option("--alphas", curve.alphas, "start:stop:step (inclusive) or a comma list")->capture_default_str();
  s_curve->add_option("--bins", curve.bins, "Entropy bins (1 = global)")->capture_default_str();
  s_curve->add_option("--effective-p", curve.effective_p,
                      "Instead of thresholds, emit per-bin hit rate of fixed-p nucleus sets");
  s_curve->add_flag("--lenient", curve.lenient, "Drop invalid rows instead of failing");
  s_curve->add_option("--eps", eps, "Probability-mass tolerance")->capture_default_str();

  DecodeArgs decode;
  auto* s_decode = app.add_subcommand("decode", "Sample from a stream of next-token distributions");
  s_decode->add_option("model", decode.model_path, "Model (JSON); ignored for top-p/top-k")->required();
  s_decode->add_option("stream", decode.stream_path, "Record file read line by line")->required();
  s_decode->add_option("-o,--out", decode.trace_path, "Trace (JSON Lines)")->required();
  s_decode->add_option("--seed", decode.seed, "Stream seed")->capture_default_str();
  s_decode->add_option("--max-steps", decode.max_steps, "Stop after this many steps (0 = all)")->capture_default_str();
  s_decode->add_option("--method", decode.method, "conformal | top-p | top-k")->capture_default_str();
  s_decode->add_option("--p", decode.p, "Nucleus mass for top-p")->capture_default_str();
  s_decode->add_option("--k", decode.k, "Set size for top-k")->capture_default_str();
  s_decode->add_option("--eps", eps, "Probability-mass tolerance")->capture_default_str();

  BandArgs band;
  auto* s_band = app.add_subcommand("band", "Monte Carlo check of the finite-sample coverage band");
  s_band->add_option("spec", band.spec_path, "World spec (JSON)")->required();
  s_band->add_option("-o,--out", band.out_path, "Band report (JSON)");
  s_band->add_option("--alpha", band.alpha)->capture_default_str();
  s_band->add_option("--n-cal", band.n_cal)->capture_default_str();
  s_band->add_option("--n-test", band.n_test)->capture_default_str();
  s_band->add_option("--trials", band.trials)->capture_default_str();
  s_band->add_option("--seed", band.seed)->capture_default_str();
  s_band->add_option("--slack", band.slack, "Fixed slack instead of the 3-sigma bound");

  std::string command = "none";
  auto elapsed_ms = [&t0]() {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };
  auto emit = [&](const std::string& status, int code, ojson details, const std::string& err) {
    ojson j;
    j["command"] = command;
    j["status"] = status;
    j["exit_code"] = code;
    j["elapsed_ms"] = std::round(elapsed_ms() * 1000.0) / 1000.0;
    if (!err.empty()) j["error"] = err;
    for (auto& [k, v] : details.items()) j[k] = v;
    std::cout << j.dump() << std::endl;
    return code;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    if (!app.get_subcommands().empty()) command = app.get_subcommands().front()->get_name();
    return emit("error", 2, ojson::object(), e.what());
  }
  command = app.get_subcommands().front()->get_name();
  validate.eps = calibrate.eps = evaluate.eps = curve.eps = decode.eps = eps;

  int code = 0;
  try {
    ojson details;
    if (command == "synth") {
      details = cmd_synth(synth);
    } else if (command == "validate") {
      details = cmd_validate(validate, code);
    } else if (command == "calibrate") {
      details = cmd_calibrate(calibrate);
    } else if (command == "evaluate") {
      details = cmd_evaluate(evaluate);
    } else if (command == "curve") {
      details = cmd_curve(curve);
    } else if (command == "decode") {
      details = cmd_decode(decode);
    } else if (command == "band") {
      details = cmd_band(band, code);
    }
    details["threads"] = ctp::kernels::worker_count();
    return emit(code == 0 ? "ok" : "failed", code, std::move(details), "");
  } catch (const ctp::Error& e) {
    std::cerr << "ctp " << command << ": " << e.what() << '\n';
    return emit("error", static_cast<int>(e.kind()), ojson::object(), e.what());
  } catch (const std::exception& e) {
    std::cerr << "ctp " << command << ": internal error: " << e.what() << '\n';
    return emit("error", 4, ojson::object(), e.what());
  }
}
