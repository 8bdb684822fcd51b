#include "ctp/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ctp/error.hpp"
#include "ctp/io.hpp"
#include "ctp/kernels.hpp"
#include "ctp/ranking.hpp"

namespace ctp {

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw UsageError("alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
}

double sparse_score(const DistributionRecord& r) {
  const auto& s = r.sparse();
  auto it = std::find(s.ids.begin(), s.ids.end(), r.gold);
  if (it == s.ids.end()) return 1.0;
  const double pg = s.probs[static_cast<std::size_t>(it - s.ids.begin())];
  if (!(pg > 0.0)) return 1.0;

  std::vector<double> qualifying;
  for (double p : s.probs) {
    if (p >= pg) qualifying.push_back(p);
  }
  std::sort(qualifying.begin(), qualifying.end(), std::greater<>());
  double score = 0.0;
  for (double p : qualifying) score += p;

  const std::size_t m = r.vocab_size - s.ids.size();
  if (m > 0 && s.tail_mass / static_cast<double>(m) >= pg) score += s.tail_mass;

  const double ahead = gold_mass_ahead_sparse(r);
  if (ahead >= score) score = std::nextafter(ahead, std::numeric_limits<double>::infinity());
  return std::min(score, 1.0);
}

}  // namespace

double aps_score_unchecked(const DistributionRecord& r) {
  if (!r.is_dense()) return sparse_score(r);
  const auto& probs = r.dense().probs;
  if (!(probs[r.gold] > 0.0)) return 1.0;
  const GoldMass gm = gold_mass_dense(probs, r.gold);
  double score = gm.through_ties;
  if (gm.ahead >= score) score = std::nextafter(gm.ahead, std::numeric_limits<double>::infinity());
  return std::min(score, 1.0);
}

double aps_score(const DistributionRecord& r, double eps) {
  checked_entropy(r, eps);
  return aps_score_unchecked(r);
}

std::size_t conformal_rank(std::size_t n, double alpha) {
  check_alpha(alpha);
  const double x = static_cast<double>(n + 1) * (1.0 - alpha);
  // (n+1)(1-alpha) is often an integer in exact arithmetic but lands one ulp
  // above it in doubles (10 * (1 - 0.3) = 7.000000000000001).
  const double r = std::ceil(x - 1e-9 * std::max(1.0, x));
  return static_cast<std::size_t>(std::max(1.0, r));
}

double conformal_quantile(std::span<const double> scores, double alpha) {
  check_alpha(alpha);
  if (scores.empty()) throw UsageError("conformal_quantile: no scores");
  const std::size_t r = conformal_rank(scores.size(), alpha);
  if (r > scores.size()) return 1.0;
  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(r - 1),
                   sorted.end());
  return sorted[r - 1];
}

double CalibrationModel::threshold_for(double entropy) const {
  if (mode == CalibrationMode::Global) return qhats.at(0);
  return qhats.at(bin_index(bin_edges, entropy));
}

void check_model(const CalibrationModel& m) {
  auto fail = [](const std::string& why) { throw ValidationError("bad calibration model: " + why); };
  if (!(m.alpha > 0.0 && m.alpha < 1.0)) fail("alpha outside (0, 1)");
  if (m.vocab_size == 0) fail("vocab is 0");
  if (m.qhats.empty()) fail("no thresholds");
  if (m.n_per_bin.size() != m.qhats.size()) fail("n_per_bin and qhats differ in length");
  for (double q : m.qhats) {
    if (!(q > 0.0 && q <= 1.0)) fail("threshold outside (0, 1]");
  }
  if (m.mode == CalibrationMode::Global) {
    if (m.qhats.size() != 1 || !m.bin_edges.empty()) fail("global model must have one bin");
  } else {
    if (m.bin_edges.size() + 1 != m.qhats.size()) fail("need B - 1 edges for B bins");
    if (!std::is_sorted(m.bin_edges.begin(), m.bin_edges.end())) fail("edges not sorted");
    for (double e : m.bin_edges) {
      if (!std::isfinite(e)) fail("non-finite edge");
    }
  }
}

std::vector<ScoredRecord> score_dataset(const Dataset& ds) {
  const auto n = ds.records.size();
  std::vector<double> scores(n), ents(n);
  kernels::aps_scores(ds.records, scores);
  kernels::entropies(ds.records, ents);
  std::vector<ScoredRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {&ds.records[i], scores[i], ents[i]};
  return out;
}

CalibrationModel fit_global(const Dataset& ds, double alpha) {
  check_alpha(alpha);
  require_fit_ready(ds);
  std::vector<double> scores(ds.size());
  kernels::aps_scores(ds.records, scores);

  CalibrationModel m;
  m.alpha = alpha;
  m.mode = CalibrationMode::Global;
  m.qhats = {conformal_quantile(scores, alpha)};
  m.n_per_bin = {ds.size()};
  m.vocab_size = ds.vocab_size();
  return m;
}

std::vector<double> percentile_edges(std::span<const double> sorted, std::size_t num_bins) {
  if (num_bins == 0) throw UsageError("num_bins must be >= 1");
  if (sorted.empty()) throw UsageError("percentile_edges: no values");
  const std::size_t n = sorted.size();
  std::vector<double> edges;
  edges.reserve(num_bins - 1);
  for (std::size_t b = 1; b < num_bins; ++b) {
    const std::size_t rank = (b * n + num_bins - 1) / num_bins;  // ceil(b n / B)
    edges.push_back(sorted[std::max<std::size_t>(rank, 1) - 1]);
  }
  return edges;
}

std::size_t bin_index(std::span<const double> edges, double entropy) noexcept {
  return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), entropy) -
                                  edges.begin());
}

std::size_t bin_of(const CalibrationModel& model, double entropy) {
  if (model.mode != CalibrationMode::EntropyBinned) {
    throw UsageError("bin_of: model is not entropy-binned");
  }
  return bin_index(model.bin_edges, entropy);
}

CalibrationModel fit_binned(const Dataset& ds, double alpha, std::size_t num_bins) {
  check_alpha(alpha);
  if (num_bins == 0) throw UsageError("num_bins must be >= 1");
  if (num_bins > ds.size()) {
    throw UsageError("num_bins (" + std::to_string(num_bins) + ") exceeds record count (" +
                     std::to_string(ds.size()) + ")");
  }
  if (num_bins == 1) return fit_global(ds, alpha);
  require_fit_ready(ds);

  const auto scored = score_dataset(ds);
  std::vector<double> sorted_ent(scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) sorted_ent[i] = scored[i].entropy;
  std::sort(sorted_ent.begin(), sorted_ent.end());

  CalibrationModel m;
  m.alpha = alpha;
  m.mode = CalibrationMode::EntropyBinned;
  m.bin_edges = percentile_edges(sorted_ent, num_bins);
  m.vocab_size = ds.vocab_size();

  std::vector<std::vector<double>> per_bin(num_bins);
  for (const auto& s : scored) per_bin[bin_index(m.bin_edges, s.entropy)].push_back(s.score);

  m.qhats.assign(num_bins, 0.0);
  m.n_per_bin.assign(num_bins, 0);
  for (std::size_t b = 0; b < num_bins; ++b) {
    m.n_per_bin[b] = per_bin[b].size();
    if (!per_bin[b].empty()) m.qhats[b] = conformal_quantile(per_bin[b], alpha);
  }
  // Empty bins (duplicate edges) take the nearest non-empty lower bin's
  // threshold. Bin 0 always holds the record defining the first edge.
  for (std::size_t b = 1; b < num_bins; ++b) {
    if (m.n_per_bin[b] == 0) m.qhats[b] = m.qhats[b - 1];
  }
  if (m.n_per_bin[0] == 0) throw InvariantError("fit_binned: bin 0 is empty");
  return m;
}

// ---------------------------------------------------------------------------

std::string model_to_json(const CalibrationModel& m) {
  nlohmann::ordered_json j;
  j["alpha"] = m.alpha;
  j["mode"] = m.mode == CalibrationMode::Global ? "global" : "binned";
  j["bin_edges"] = m.bin_edges;
  j["qhats"] = m.qhats;
  j["n_per_bin"] = m.n_per_bin;
  j["vocab"] = m.vocab_size;
  j["meta"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.metadata) j["meta"][k] = v;
  return j.dump(2);
}

CalibrationModel model_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("model: malformed JSON: ") + e.what());
  }
  CalibrationModel m;
  try {
    m.alpha = j.at("alpha").get<double>();
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "global") {
      m.mode = CalibrationMode::Global;
    } else if (mode == "binned") {
      m.mode = CalibrationMode::EntropyBinned;
    } else {
      throw ValidationError("model: unknown mode '" + mode + "'");
    }
    m.bin_edges = j.at("bin_edges").get<std::vector<double>>();
    m.qhats = j.at("qhats").get<std::vector<double>>();
    m.n_per_bin = j.at("n_per_bin").get<std::vector<std::size_t>>();
    m.vocab_size = j.at("vocab").get<std::uint32_t>();
    if (j.contains("meta")) {
      for (const auto& [k, v] : j["meta"].items()) {
        m.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
  check_model(m);
  return m;
}

void save_model(const CalibrationModel& m, const std::filesystem::path& path) {
  check_model(m);
  const auto text = model_to_json(m);
  write_file_atomic(path, [&text](std::ostream& out) { out << text << '\n'; });
}

CalibrationModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open model '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

}  // namespace ctp
