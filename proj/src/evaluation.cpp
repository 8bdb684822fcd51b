#include "ctp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ctp/error.hpp"
#include "ctp/kernels.hpp"
#include "ctp/rng.hpp"

namespace ctp {

namespace {

double neumaier_sum(std::span<const double> xs) {
  double sum = 0.0, c = 0.0;
  for (double x : xs) {
    const double t = sum + x;
    c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return sum + c;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

CoverageReport empirical_coverage(const CalibrationModel& model, const Dataset& test) {
  if (test.empty()) throw UsageError("empirical_coverage: empty test set");
  if (test.vocab_size() != model.vocab_size) {
    throw UsageError("empirical_coverage: test vocab " + std::to_string(test.vocab_size()) +
                     " != model vocab " + std::to_string(model.vocab_size));
  }
  const std::size_t n = test.size();
  std::vector<double> ents(n), thresholds(n);
  kernels::entropies(test.records, ents);
  std::vector<std::size_t> bins(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (model.mode == CalibrationMode::EntropyBinned) bins[i] = bin_of(model, ents[i]);
    thresholds[i] = model.qhats[bins[i]];
  }
  // The theorem's event: the gold's score is within the threshold. Nucleus
  // membership is a superset (the token that crosses the threshold is in the
  // set while its own score exceeds it) and is reported separately.
  std::vector<double> scores(n);
  kernels::aps_scores(test.records, scores);
  std::vector<std::uint8_t> in_set(n);
  std::vector<std::size_t> sizes(n);
  kernels::coverage(test.records, thresholds, in_set, sizes);

  CoverageReport rep;
  rep.n_test = n;
  rep.n_cal = std::accumulate(model.n_per_bin.begin(), model.n_per_bin.end(), std::size_t{0});
  rep.target = 1.0 - model.alpha;
  rep.theorem_upper = rep.target + 1.0 / static_cast<double>(rep.n_cal + 1);

  rep.per_bin.resize(model.num_bins());
  std::vector<std::size_t> hits(model.num_bins(), 0), set_hits(model.num_bins(), 0);
  std::size_t total_hits = 0, total_set_hits = 0, total_size = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t hit = scores[i] <= thresholds[i] ? 1 : 0;
    ++rep.per_bin[bins[i]].n;
    hits[bins[i]] += hit;
    set_hits[bins[i]] += in_set[i];
    total_hits += hit;
    total_set_hits += in_set[i];
    total_size += sizes[i];
    rep.max_set_size = std::max(rep.max_set_size, sizes[i]);
  }
  for (std::size_t b = 0; b < rep.per_bin.size(); ++b) {
    auto& pb = rep.per_bin[b];
    pb.bin = b;
    pb.qhat = model.qhats[b];
    if (pb.n) {
      pb.coverage = static_cast<double>(hits[b]) / static_cast<double>(pb.n);
      pb.set_coverage = static_cast<double>(set_hits[b]) / static_cast<double>(pb.n);
    }
  }
  const double dn = static_cast<double>(n);
  rep.coverage = static_cast<double>(total_hits) / dn;
  rep.set_coverage = static_cast<double>(total_set_hits) / dn;
  rep.coverage_gap = rep.target - rep.coverage;
  rep.mean_set_size = static_cast<double>(total_size) / dn;
  return rep;
}

std::vector<CurvePoint> effective_confidence_curve(double p, const Dataset& test,
                                                   std::size_t num_bins) {
  if (!(p > 0.0 && p <= 1.0)) throw UsageError("effective_confidence_curve: p must lie in (0, 1]");
  if (test.empty()) throw UsageError("effective_confidence_curve: empty test set");
  if (num_bins == 0) throw UsageError("num_bins must be >= 1");
  const std::size_t n = test.size();
  std::vector<double> ents(n);
  kernels::entropies(test.records, ents);
  std::vector<double> sorted = ents;
  std::sort(sorted.begin(), sorted.end());
  const auto edges = percentile_edges(sorted, num_bins);

  std::vector<double> thresholds(n, p);
  std::vector<std::uint8_t> covered(n);
  std::vector<std::size_t> sizes(n);
  kernels::coverage(test.records, thresholds, covered, sizes);

  std::vector<std::size_t> count(num_bins, 0), hits(num_bins, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = bin_index(edges, ents[i]);
    ++count[b];
    hits[b] += covered[i];
  }
  std::ostringstream label;
  label << "top_p=" << p;
  std::vector<CurvePoint> out;
  for (std::size_t b = 0; b < num_bins; ++b) {
    if (count[b] == 0) continue;
    out.push_back({100.0 * (static_cast<double>(b) + 0.5) / static_cast<double>(num_bins),
                   static_cast<double>(hits[b]) / static_cast<double>(count[b]), label.str()});
  }
  return out;
}

std::vector<CurvePoint> qhat_curve(const Dataset& cal, const std::vector<double>& alphas,
                                   CalibrationMode mode, std::size_t num_bins) {
  if (alphas.empty()) throw UsageError("qhat_curve: no alphas");
  std::vector<double> sorted_alphas = alphas;
  std::sort(sorted_alphas.begin(), sorted_alphas.end(), std::greater<>());

  std::vector<CurvePoint> global;
  std::vector<std::vector<CurvePoint>> per_bin;
  for (double a : sorted_alphas) {
    if (mode == CalibrationMode::Global) {
      const auto m = fit_global(cal, a);
      global.push_back({1.0 - a, m.qhats[0], "global"});
    } else {
      const auto m = fit_binned(cal, a, num_bins);
      per_bin.resize(m.num_bins());
      for (std::size_t b = 0; b < m.num_bins(); ++b) {
        per_bin[b].push_back({1.0 - a, m.qhats[b], "bin_" + std::to_string(b)});
      }
    }
  }
  if (mode == CalibrationMode::Global) return global;
  std::vector<CurvePoint> out;
  for (auto& series : per_bin) out.insert(out.end(), series.begin(), series.end());
  return out;
}

std::vector<double> parse_alpha_range(std::string_view spec) {
  auto to_double = [](std::string_view s) {
    std::string str(s);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(str, &used);
    } catch (const std::exception&) {
      throw UsageError("bad number '" + str + "' in alpha list");
    }
    if (used != str.size()) throw UsageError("bad number '" + str + "' in alpha list");
    return v;
  };
  std::vector<double> out;
  const auto c1 = spec.find(':');
  if (c1 == std::string_view::npos) {
    std::size_t start = 0;
    while (start <= spec.size()) {
      const auto comma = spec.find(',', start);
      const auto end = comma == std::string_view::npos ? spec.size() : comma;
      out.push_back(to_double(spec.substr(start, end - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  } else {
    const auto c2 = spec.find(':', c1 + 1);
    if (c2 == std::string_view::npos) throw UsageError("alpha range must be start:stop:step");
    const double start = to_double(spec.substr(0, c1));
    const double stop = to_double(spec.substr(c1 + 1, c2 - c1 - 1));
    const double step = to_double(spec.substr(c2 + 1));
    if (!(step > 0.0)) throw UsageError("alpha range step must be > 0");
    if (start > stop) throw UsageError("alpha range start exceeds stop");
    for (std::size_t i = 0;; ++i) {
      const double a = start + static_cast<double>(i) * step;
      if (a > stop + 1e-12) break;
      out.push_back(std::min(a, stop));
    }
  }
  for (double a : out) {
    if (!(a > 0.0 && a < 1.0)) throw UsageError("alpha " + fmt(a) + " outside (0, 1)");
  }
  return out;
}

BandCheck theorem_band_check(const WorldSampler& sample, bool exchangeable, double alpha,
                             std::size_t n_cal, std::size_t n_test, std::size_t trials,
                             std::uint64_t seed, std::optional<double> slack) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");
  if (n_cal == 0 || n_test == 0 || trials == 0) {
    throw UsageError("n_cal, n_test and trials must be >= 1");
  }
  std::vector<double> cov(trials), set_cov(trials), qhat(trials);
  std::vector<std::uint8_t> tied(trials, 0);
  kernels::for_each_index(trials, [&](std::size_t t) {
    Dataset all = sample(derive_seed(seed, t), n_cal + n_test);
    if (all.size() < n_cal + n_test) throw InvariantError("world sampler returned too few records");
    Dataset cal, test;
    cal.records.assign(std::make_move_iterator(all.records.begin()),
                       std::make_move_iterator(all.records.begin() + static_cast<std::ptrdiff_t>(n_cal)));
    test.records.assign(
        std::make_move_iterator(all.records.begin() + static_cast<std::ptrdiff_t>(n_cal)),
        std::make_move_iterator(all.records.begin() + static_cast<std::ptrdiff_t>(n_cal + n_test)));
    const auto model = fit_global(cal, alpha);
    const auto rep = empirical_coverage(model, test);
    cov[t] = rep.coverage;
    set_cov[t] = rep.set_coverage;
    qhat[t] = model.qhats[0];
    std::size_t at_qhat = 0;
    for (const auto& sr : score_dataset(cal)) at_qhat += sr.score == qhat[t] ? 1 : 0;
    tied[t] = at_qhat > 1 ? 1 : 0;
  });

  BandCheck b;
  b.band_guaranteed = exchangeable;
  b.alpha = alpha;
  b.n_cal = n_cal;
  b.n_test = n_test;
  b.trials = trials;
  const double tn = static_cast<double>(trials);
  b.mean_coverage = neumaier_sum(cov) / tn;
  b.mean_set_coverage = neumaier_sum(set_cov) / tn;
  b.mean_qhat = neumaier_sum(qhat) / tn;
  b.upper_applies = std::none_of(tied.begin(), tied.end(), [](std::uint8_t x) { return x != 0; });
  std::vector<double> sq(trials);
  for (std::size_t t = 0; t < trials; ++t) sq[t] = (cov[t] - b.mean_coverage) * (cov[t] - b.mean_coverage);
  b.sd_coverage = trials > 1 ? std::sqrt(neumaier_sum(sq) / (tn - 1.0)) : 0.0;
  b.min_coverage = *std::min_element(cov.begin(), cov.end());
  b.max_coverage = *std::max_element(cov.begin(), cov.end());
  b.lower = 1.0 - alpha;
  b.upper = 1.0 - alpha + 1.0 / static_cast<double>(n_cal + 1);
  if (slack) {
    b.slack = *slack;
  } else {
    // Per-trial coverage varies with the test draw (binomial) and with the
    // calibration draw (Beta with variance ~ alpha(1-alpha)/(n_cal+2)).
    const double var = alpha * (1.0 - alpha) *
                       (1.0 / static_cast<double>(n_test) + 1.0 / static_cast<double>(n_cal + 2));
    b.slack = 3.0 * std::sqrt(var / tn);
  }
  b.coverage_gap = b.lower - b.mean_coverage;
  b.pass = b.mean_coverage >= b.lower - b.slack &&
           (!b.upper_applies || b.mean_coverage <= b.upper + b.slack);
  return b;
}

BandCheck theorem_band_check(const SynthSpec& world, double alpha, std::size_t n_cal,
                             std::size_t n_test, std::size_t trials, std::uint64_t seed,
                             std::optional<double> slack) {
  validate_spec(world);
  WorldSampler sampler = [world](std::uint64_t s, std::size_t n) {
    SynthSpec spec = world;
    spec.seed = s;
    if (spec.kind == WorldKind::Dirichlet) {
      spec.num_records = n;
      return gen_dirichlet_world(spec);
    }
    spec.markov.num_sequences = (n + spec.markov.seq_len - 1) / spec.markov.seq_len;
    return gen_markov_world(spec);
  };
  return theorem_band_check(sampler, world.kind == WorldKind::Dirichlet, alpha, n_cal, n_test,
                            trials, seed, slack);
}

std::string report_to_json(const CoverageReport& r) {
  nlohmann::ordered_json j;
  j["n_test"] = r.n_test;
  j["n_cal"] = r.n_cal;
  j["coverage"] = r.coverage;
  j["set_coverage"] = r.set_coverage;
  j["target"] = r.target;
  j["theorem_upper"] = r.theorem_upper;
  j["coverage_gap"] = r.coverage_gap;
  j["mean_set_size"] = r.mean_set_size;
  j["max_set_size"] = r.max_set_size;
  j["per_bin"] = nlohmann::ordered_json::array();
  for (const auto& b : r.per_bin) {
    nlohmann::ordered_json e;
    e["bin"] = b.bin;
    e["n"] = b.n;
    e["coverage"] = b.coverage;
    e["set_coverage"] = b.set_coverage;
    e["qhat"] = b.qhat;
    j["per_bin"].push_back(e);
  }
  return j.dump(2);
}

std::string band_to_json(const BandCheck& b) {
  nlohmann::ordered_json j;
  j["pass"] = b.pass;
  j["band_guaranteed"] = b.band_guaranteed;
  j["alpha"] = b.alpha;
  j["n_cal"] = b.n_cal;
  j["n_test"] = b.n_test;
  j["trials"] = b.trials;
  j["mean_coverage"] = b.mean_coverage;
  j["sd_coverage"] = b.sd_coverage;
  j["min_coverage"] = b.min_coverage;
  j["max_coverage"] = b.max_coverage;
  j["lower"] = b.lower;
  j["upper"] = b.upper;
  j["upper_applies"] = b.upper_applies;
  j["slack"] = b.slack;
  j["mean_set_coverage"] = b.mean_set_coverage;
  j["mean_qhat"] = b.mean_qhat;
  j["coverage_gap"] = b.coverage_gap;
  return j.dump(2);
}

std::string curve_to_csv(const std::vector<CurvePoint>& pts) {
  std::ostringstream os;
  os << "x,y,series\n";
  for (const auto& p : pts) os << fmt(p.x) << ',' << fmt(p.y) << ',' << p.series << '\n';
  return os.str();
}

}  // namespace ctp
