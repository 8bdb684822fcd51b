#include "ctp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ctp/error.hpp"
#include "ctp/kernels.hpp"
#include "ctp/rng.hpp"

namespace ctp {

namespace {

constexpr double kTransitionFloor = 1e-4;
constexpr int kMaxMatrixAttempts = 16;

std::vector<double> draw_dirichlet(Engine& eng, std::size_t k, double concentration) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (auto& x : p) {
    x = gamma(eng);
    total += x;
  }
  if (!(total > 0.0)) {
    // Every gamma draw underflowed; fall back to a point mass.
    std::fill(p.begin(), p.end(), 0.0);
    p[static_cast<std::size_t>(uniform01(eng) * static_cast<double>(k))] = 1.0;
    return p;
  }
  for (auto& x : p) x /= total;
  return p;
}

TokenId draw_categorical(Engine& eng, std::span<const double> p) {
  double total = 0.0;
  for (double x : p) total += x;
  const double target = uniform01(eng) * total;
  double acc = 0.0;
  TokenId last_positive = 0;
  for (TokenId i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) last_positive = i;
    acc += p[i];
    if (acc > target) return i;
  }
  return last_positive;
}

double temperature_for(const SynthSpec& spec, std::span<const double> truth) {
  if (spec.low_entropy_temp && entropy(truth) < spec.low_entropy_cutoff) {
    return *spec.low_entropy_temp;
  }
  return spec.distortion_temp;
}

void check_matrix(const std::vector<std::vector<double>>& m) {
  for (const auto& row : m) {
    if (row.size() != m.size()) throw UsageError("transition matrix must be square");
    double total = 0.0;
    for (double x : row) {
      if (!(x >= 0.0)) throw UsageError("transition matrix has a negative entry");
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-9) throw UsageError("transition row does not sum to 1");
  }
}

}  // namespace

void validate_spec(const SynthSpec& spec) {
  auto fail = [](const std::string& why) { throw UsageError("synth spec: " + why); };
  if (!(spec.concentration > 0.0)) fail("concentration must be > 0");
  if (!(spec.distortion_temp > 0.0)) fail("temperature must be > 0");
  if (spec.low_entropy_temp && !(*spec.low_entropy_temp > 0.0)) {
    fail("low_entropy_temperature must be > 0");
  }
  if (spec.kind == WorldKind::Dirichlet) {
    if (spec.vocab_size < 2) fail("vocab must be >= 2");
    if (spec.num_records == 0) fail("records must be >= 1");
  } else {
    const auto& mk = spec.markov;
    if (mk.num_states < 2) fail("states must be >= 2");
    if (mk.seq_len < 1) fail("length must be >= 1");
    if (mk.num_sequences < 1) fail("sequences must be >= 1");
    if (!mk.transition.empty()) {
      if (mk.transition.size() != mk.num_states) fail("transition matrix size != states");
      check_matrix(mk.transition);
    }
  }
}

std::vector<double> apply_temperature(std::span<const double> probs, double tau) {
  std::vector<double> out(probs.size(), 0.0);
  if (tau == 1.0) {
    out.assign(probs.begin(), probs.end());
    return out;
  }
  double max_log = -std::numeric_limits<double>::infinity();
  for (double p : probs) {
    if (p > 0.0) max_log = std::max(max_log, std::log(p));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) {
      out[i] = std::exp((std::log(probs[i]) - max_log) / tau);
      total += out[i];
    }
  }
  for (auto& x : out) x /= total;
  return out;
}

Dataset gen_dirichlet_world(const SynthSpec& spec) {
  if (spec.kind != WorldKind::Dirichlet) throw UsageError("gen_dirichlet_world: wrong kind");
  validate_spec(spec);

  Dataset ds;
  ds.records.resize(spec.num_records);
  kernels::for_each_index(spec.num_records, [&](std::size_t i) {
    Engine eng(derive_seed(spec.seed, i));
    const auto truth = draw_dirichlet(eng, spec.vocab_size, spec.concentration);
    DistributionRecord& r = ds.records[i];
    r.seq_id = i;
    r.pos = 0;
    r.vocab_size = spec.vocab_size;
    r.gold = draw_categorical(eng, truth);
    r.body = DenseProbs{apply_temperature(truth, temperature_for(spec, truth))};
  });
  ds.metadata = {{"source", "synth"}, {"kind", "dirichlet"}, {"seed", std::to_string(spec.seed)}};
  return ds;
}

bool is_ergodic(const std::vector<std::vector<double>>& matrix) {
  const std::size_t n = matrix.size();
  if (n == 0) return false;
  // Irreducible: every state reaches every other (forward and reverse BFS from 0).
  auto reaches_all = [&](bool reverse) {
    std::vector<char> seen(n, 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const auto s = stack.back();
      stack.pop_back();
      for (std::size_t t = 0; t < n; ++t) {
        const double w = reverse ? matrix[t][s] : matrix[s][t];
        if (w > 0.0 && !seen[t]) {
          seen[t] = 1;
          stack.push_back(t);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  };
  if (!reaches_all(false) || !reaches_all(true)) return false;
  // Aperiodic: gcd of cycle lengths is 1. BFS levels give the period as
  // gcd over edges (u -> v) of level(u) + 1 - level(v).
  std::vector<long> level(n, -1);
  std::vector<std::size_t> queue{0};
  level[0] = 0;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const auto s = queue[head];
    for (std::size_t t = 0; t < n; ++t) {
      if (matrix[s][t] > 0.0 && level[t] < 0) {
        level[t] = level[s] + 1;
        queue.push_back(t);
      }
    }
  }
  long period = 0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = 0; t < n; ++t) {
      if (matrix[s][t] > 0.0) period = std::gcd(period, std::abs(level[s] + 1 - level[t]));
    }
  }
  return period == 1;
}

std::vector<double> stationary_distribution(const std::vector<std::vector<double>>& matrix) {
  const std::size_t n = matrix.size();
  std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
  for (int iter = 0; iter < 10000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t t = 0; t < n; ++t) next[t] += pi[s] * matrix[s][t];
    }
    double diff = 0.0;
    for (std::size_t t = 0; t < n; ++t) diff += std::abs(next[t] - pi[t]);
    pi.swap(next);
    if (diff < 1e-14) break;
  }
  return pi;
}

std::vector<std::vector<double>> markov_transition_matrix(const SynthSpec& spec) {
  const auto& mk = spec.markov;
  if (!mk.transition.empty()) {
    if (!is_ergodic(mk.transition)) throw UsageError("explicit transition matrix is not ergodic");
    return mk.transition;
  }
  const std::size_t n = mk.num_states;
  for (int attempt = 0; attempt < kMaxMatrixAttempts; ++attempt) {
    std::vector<std::vector<double>> m(n);
    for (std::size_t s = 0; s < n; ++s) {
      Engine eng(derive_seed(derive_seed(mk.matrix_seed, static_cast<std::uint64_t>(attempt)), s));
      auto row = draw_dirichlet(eng, n, spec.concentration);
      double total = 0.0;
      for (auto& x : row) {
        x = std::max(x, kTransitionFloor);
        total += x;
      }
      for (auto& x : row) x /= total;
      m[s] = std::move(row);
    }
    if (is_ergodic(m)) return m;
  }
  throw InvariantError("could not draw an ergodic transition matrix");
}

Dataset gen_markov_world(const SynthSpec& spec) {
  if (spec.kind != WorldKind::Markov) throw UsageError("gen_markov_world: wrong kind");
  validate_spec(spec);
  const auto& mk = spec.markov;
  const auto matrix = markov_transition_matrix(spec);
  const auto pi = stationary_distribution(matrix);

  std::vector<std::vector<double>> recorded(matrix.size());
  for (std::size_t s = 0; s < matrix.size(); ++s) {
    recorded[s] = apply_temperature(matrix[s], temperature_for(spec, matrix[s]));
  }

  Dataset ds;
  ds.records.resize(mk.num_sequences * mk.seq_len);
  kernels::for_each_index(mk.num_sequences, [&](std::size_t j) {
    Engine eng(derive_seed(spec.seed, j));
    TokenId state = draw_categorical(eng, pi);
    for (std::size_t t = 0; t < mk.seq_len; ++t) {
      const TokenId next = draw_categorical(eng, matrix[state]);
      DistributionRecord& r = ds.records[j * mk.seq_len + t];
      r.seq_id = j;
      r.pos = t;
      r.vocab_size = mk.num_states;
      r.gold = next;
      r.body = DenseProbs{recorded[state]};
      state = next;
    }
  });
  ds.metadata = {{"source", "synth"}, {"kind", "markov"}, {"seed", std::to_string(spec.seed)}};
  return ds;
}

Dataset generate_world(const SynthSpec& spec) {
  return spec.kind == WorldKind::Dirichlet ? gen_dirichlet_world(spec) : gen_markov_world(spec);
}

Dataset subsample_one_per_sequence(const Dataset& ds, std::uint64_t seed) {
  std::map<std::uint64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.records.size(); ++i) groups[ds.records[i].seq_id].push_back(i);

  Dataset out;
  out.metadata = ds.metadata;
  out.records.reserve(groups.size());
  for (const auto& [seq, idx] : groups) {
    const double u = uniform01_from_seed(derive_seed(seed, seq));
    const auto pick = std::min(idx.size() - 1, static_cast<std::size_t>(u * static_cast<double>(idx.size())));
    out.records.push_back(ds.records[idx[pick]]);
  }
  return out;
}

// ---------------------------------------------------------------------------

SynthSpec spec_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(std::string("synth spec: malformed JSON: ") + e.what());
  }
  SynthSpec s;
  try {
    const auto kind = j.value("kind", std::string("dirichlet"));
    if (kind == "dirichlet") {
      s.kind = WorldKind::Dirichlet;
    } else if (kind == "markov") {
      s.kind = WorldKind::Markov;
    } else {
      throw UsageError("synth spec: unknown kind '" + kind + "'");
    }
    s.vocab_size = j.value("vocab", s.vocab_size);
    s.concentration = j.value("concentration", s.concentration);
    s.distortion_temp = j.value("temperature", s.distortion_temp);
    if (j.contains("low_entropy_temperature")) {
      s.low_entropy_temp = j["low_entropy_temperature"].get<double>();
      s.low_entropy_cutoff = j.at("low_entropy_cutoff").get<double>();
    }
    s.num_records = j.value("records", s.num_records);
    s.seed = j.value("seed", s.seed);
    if (j.contains("markov")) {
      const auto& m = j["markov"];
      s.markov.num_states = m.value("states", s.markov.num_states);
      s.markov.matrix_seed = m.value("matrix_seed", s.markov.matrix_seed);
      s.markov.seq_len = m.value("length", s.markov.seq_len);
      s.markov.num_sequences = m.value("sequences", s.markov.num_sequences);
      if (m.contains("transition")) {
        s.markov.transition = m["transition"].get<std::vector<std::vector<double>>>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("synth spec: ") + e.what());
  }
  validate_spec(s);
  return s;
}

std::string spec_to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["kind"] = s.kind == WorldKind::Dirichlet ? "dirichlet" : "markov";
  j["vocab"] = s.vocab_size;
  j["concentration"] = s.concentration;
  j["temperature"] = s.distortion_temp;
  if (s.low_entropy_temp) {
    j["low_entropy_temperature"] = *s.low_entropy_temp;
    j["low_entropy_cutoff"] = s.low_entropy_cutoff;
  }
  j["records"] = s.num_records;
  j["seed"] = s.seed;
  if (s.kind == WorldKind::Markov) {
    auto& m = j["markov"];
    m["states"] = s.markov.num_states;
    m["matrix_seed"] = s.markov.matrix_seed;
    m["length"] = s.markov.seq_len;
    m["sequences"] = s.markov.num_sequences;
    if (!s.markov.transition.empty()) m["transition"] = s.markov.transition;
  }
  return j.dump(2);
}

SynthSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open synth spec '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return spec_from_json(buf.str());
}

}  // namespace ctp
