#pragma once

// Independent reference computations and fuzz generators for the tests.
// Nothing here calls into the ranking or conformal code it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ctp/records.hpp"

namespace ctp::oracle {

/// Conformal quantile by exhaustive threshold search, alpha = num / den.
/// The rank is computed in integer arithmetic; the answer is the smallest
/// candidate (any score value, or 1.0) covering at least `rank` scores.
inline double quantile_by_search(const std::vector<double>& scores, std::uint64_t num,
                                 std::uint64_t den) {
  const std::uint64_t n = scores.size();
  const std::uint64_t rank = ((n + 1) * (den - num) + den - 1) / den;
  if (rank > n) return 1.0;
  double best = 1.0;
  bool found = false;
  for (double cand : scores) {
    std::uint64_t covered = 0;
    for (double s : scores) covered += s <= cand ? 1 : 0;
    if (covered >= rank && (!found || cand < best)) {
      best = cand;
      found = true;
    }
  }
  return best;
}

/// APS score straight from its set-builder definition, summed in index order.
inline double aps_by_definition(const std::vector<double>& probs, TokenId gold) {
  double s = 0.0;
  for (double p : probs) {
    if (p >= probs[gold]) s += p;
  }
  return s;
}

/// Smallest number of tokens whose total mass reaches q, by subset
/// enumeration (k <= 12).
inline std::size_t min_cardinality_by_enumeration(const std::vector<double>& probs, double q) {
  const std::size_t k = probs.size();
  std::size_t best = k;
  for (std::uint32_t mask = 1; mask < (1u << k); ++mask) {
    double mass = 0.0;
    std::size_t card = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (mask & (1u << i)) {
        mass += probs[i];
        ++card;
      }
    }
    if (mass >= q - 1e-12 && card < best) best = card;
  }
  return best;
}

/// Fuzzed distribution mixing the shapes that stress tie and boundary
/// handling: smooth, heavily tied, sparse with exact zeros, one-hot, and
/// extremely skewed (mass below one ulp of the leader).
inline std::vector<double> random_distribution(std::mt19937_64& eng, std::size_t k) {
  std::uniform_int_distribution<int> shape(0, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> p(k, 0.0);
  switch (shape(eng)) {
    case 0: {
      std::gamma_distribution<double> g(std::exp(unit(eng) * 4.0 - 3.0), 1.0);
      for (auto& x : p) x = g(eng);
      break;
    }
    case 1: {
      std::uniform_int_distribution<int> level(0, 3);
      for (auto& x : p) x = static_cast<double>(level(eng));
      break;
    }
    case 2: {
      for (auto& x : p) x = unit(eng) < 0.5 ? 0.0 : unit(eng);
      break;
    }
    case 3: {
      p[std::uniform_int_distribution<std::size_t>(0, k - 1)(eng)] = 1.0;
      break;
    }
    default: {
      for (auto& x : p) x = std::pow(10.0, -unit(eng) * 25.0);
      p[std::uniform_int_distribution<std::size_t>(0, k - 1)(eng)] = 1.0;
      break;
    }
  }
  double total = 0.0;
  for (double x : p) total += x;
  if (!(total > 0.0)) {
    p[0] = 1.0;
    total = 1.0;
  }
  for (auto& x : p) x /= total;
  return p;
}

inline DistributionRecord dense_record(std::vector<double> probs, TokenId gold,
                                       std::uint64_t seq = 0, std::uint64_t pos = 0) {
  DistributionRecord r;
  r.seq_id = seq;
  r.pos = pos;
  r.vocab_size = static_cast<std::uint32_t>(probs.size());
  r.gold = gold;
  r.body = DenseProbs{std::move(probs)};
  return r;
}

/// Record whose APS score is exactly `s` (0.1 < s <= 1): gold token 0 holds
/// s, the other nine tokens share the rest evenly and stay below s.
inline DistributionRecord record_with_score(double s, std::uint64_t seq) {
  std::vector<double> p(10, (1.0 - s) / 9.0);
  p[0] = s;
  return dense_record(std::move(p), 0, seq);
}

}  // namespace ctp::oracle
