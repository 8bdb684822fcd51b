#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"

#include "ctp/conformal.hpp"
#include "ctp/decoding.hpp"
#include "ctp/error.hpp"
#include "ctp/rng.hpp"
#include "ctp/synth.hpp"
#include "oracles.hpp"

using namespace ctp;
using oracle::dense_record;

namespace {

using Ids = std::vector<TokenId>;

CalibrationModel global_model(double q, std::uint32_t vocab) {
  CalibrationModel m;
  m.alpha = 0.1;
  m.qhats = {q};
  m.n_per_bin = {100};
  m.vocab_size = vocab;
  return m;
}

// Empirical token frequencies over `draws` consecutive seeds.
std::vector<double> frequencies(std::size_t vocab, std::size_t draws,
                                const std::function<TokenId(std::uint64_t)>& draw) {
  std::vector<double> f(vocab, 0.0);
  for (std::size_t i = 0; i < draws; ++i) f[draw(step_seed(2024, i))] += 1.0;
  for (auto& x : f) x /= static_cast<double>(draws);
  return f;
}

}  // namespace

TEST_CASE("prediction_set examples") {
  const std::vector<double> p{0.5, 0.3, 0.2};
  auto a = prediction_set(p, 0.8);
  CHECK(a.token_ids == Ids{0, 1});
  CHECK(a.cum_mass == doctest::Approx(0.8));
  CHECK(a.threshold_used == 0.8);
  auto b = prediction_set(p, 0.5);
  CHECK(b.token_ids == Ids{0});
  CHECK(b.cum_mass == 0.5);
  CHECK(prediction_set(p, 1.0).token_ids == Ids{0, 1, 2});
  CHECK(prediction_set(std::vector<double>{0.95, 0.05}, 0.9).token_ids == Ids{0});
}

TEST_CASE("prediction_set order, ties and errors") {
  const std::vector<double> p{0.1, 0.4, 0.1, 0.4};
  CHECK(prediction_set(p, 0.5).token_ids == Ids{1, 3});
  CHECK(prediction_set(p, 0.85).token_ids == Ids{1, 3, 0});
  CHECK(prediction_set(std::vector<double>{0.0, 1.0, 0.0}, 1.0).token_ids == Ids{1, 0, 2});
  CHECK_THROWS_AS(prediction_set(p, 0.0), UsageError);
  CHECK_THROWS_AS(prediction_set(p, 1.0000001), UsageError);
  CHECK_THROWS_AS(prediction_set(std::vector<double>{}, 0.5), UsageError);
  CHECK(prediction_set(p, 0.5).contains(3));
  CHECK_FALSE(prediction_set(p, 0.5).contains(0));
}

TEST_CASE("top_k_set") {
  const std::vector<double> p{0.2, 0.5, 0.3};
  auto s = top_k_set(p, 2);
  CHECK(s.token_ids == Ids{1, 2});
  CHECK(s.cum_mass == doctest::Approx(0.8));
  CHECK(s.threshold_used == s.cum_mass);
  CHECK_THROWS_AS(top_k_set(p, 0), UsageError);
  CHECK_THROWS_AS(top_k_set(p, 4), UsageError);
}

TEST_CASE("sample_from_set examples") {
  const std::vector<double> p{0.5, 0.3, 0.2};
  const auto single = prediction_set(p, 0.5);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) CHECK(sample_from_set(p, single, seed) == 0);

  const auto pair = prediction_set(p, 0.8);
  std::size_t zeros = 0;
  const std::size_t draws = 100000;
  for (std::uint64_t i = 0; i < draws; ++i) {
    const auto t = sample_from_set(p, pair, step_seed(7, i));
    REQUIRE((t == 0 || t == 1));
    zeros += t == 0 ? 1 : 0;
  }
  CHECK(std::abs(static_cast<double>(zeros) / draws - 0.625) <= 0.01);

  for (std::uint64_t seed : {0ull, 1ull, 42ull, ~0ull}) {
    CHECK(sample_from_set(p, pair, seed) == sample_from_set(p, pair, seed));
  }
}

TEST_CASE("sample_from_set never returns a zero-mass token when another has mass") {
  const std::vector<double> p{0.0, 1.0, 0.0};
  const auto full = prediction_set(p, 1.0);
  for (std::uint64_t seed = 0; seed < 2000; ++seed) CHECK(sample_from_set(p, full, seed) == 1);
}

TEST_CASE("sampling is a fixed function of the seed") {
  // uniform01_from_seed is the documented generator: top 53 bits of one
  // splitmix64 output. Walking [0.5, 0.3, 0.2] with u decides the token.
  const std::vector<double> p{0.5, 0.3, 0.2};
  const auto full = prediction_set(p, 1.0);
  for (std::uint64_t seed = 0; seed < 5000; ++seed) {
    const double u = static_cast<double>(splitmix64(seed) >> 11) * 0x1.0p-53;
    const double target = u * full.cum_mass;
    const TokenId expect = target < 0.5 ? 0 : (target < 0.5 + 0.3 ? 1 : 2);
    REQUIRE(sample_from_set(p, full, seed) == expect);
  }
}

TEST_CASE("conformal_decode_step with a full-vocabulary threshold") {
  const std::vector<double> p{0.1, 0.6, 0.3};
  const auto m = global_model(1.0, 3);
  auto step = conformal_decode_step(p, m, 5);
  CHECK(step.set.size() == 3);
  CHECK_FALSE(step.bin.has_value());
  CHECK(step.qhat_used == 1.0);
  CHECK(step.rng_state_before == 5);
  CHECK(std::abs(step.entropy - entropy(std::span<const double>(p))) < 1e-15);

  const auto f = frequencies(3, 100000, [&](std::uint64_t s) {
    return conformal_decode_step(p, m, s).chosen_token;
  });
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(f[i] - p[i]) < 0.01);
}

TEST_CASE("conformal_decode_step on a one-hot distribution") {
  CalibrationModel m;
  m.mode = CalibrationMode::EntropyBinned;
  m.bin_edges = {0.5, 1.0};
  m.qhats = {0.97, 0.9, 0.8};
  m.n_per_bin = {10, 10, 10};
  m.vocab_size = 4;
  const std::vector<double> p{0.0, 0.0, 1.0, 0.0};
  auto step = conformal_decode_step(p, m, 1);
  CHECK(step.entropy == 0.0);
  CHECK(step.bin == std::optional<std::size_t>(0));
  CHECK(step.qhat_used == 0.97);
  CHECK(step.set.token_ids == Ids{2});
  CHECK(step.chosen_token == 2);

  const std::vector<double> flat{0.25, 0.25, 0.25, 0.25};
  auto high = conformal_decode_step(flat, m, 1);
  CHECK(high.bin == std::optional<std::size_t>(2));
  CHECK(high.qhat_used == 0.8);
  CHECK(high.set.size() == 4);
}

TEST_CASE("conformal_decode_step rejects a vocabulary mismatch") {
  const std::vector<double> p{0.5, 0.5};
  CHECK_THROWS_AS(conformal_decode_step(p, global_model(0.9, 3), 0), UsageError);
}

TEST_CASE("conformal decoding on a calibrated stream covers the gold token") {
  SynthSpec spec;
  spec.num_records = 10000;
  spec.seed = 100;
  const auto model = fit_binned(gen_dirichlet_world(spec), 0.1, 10);
  spec.num_records = 50000;
  spec.seed = 101;
  const auto stream = gen_dirichlet_world(spec);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const auto& r = stream.records[i];
    const auto step = conformal_decode_step(r.dense().probs, model, step_seed(9, i));
    REQUIRE(step.set.contains(step.chosen_token));
    hits += step.set.contains(r.gold) ? 1 : 0;
  }
  const double rate = static_cast<double>(hits) / stream.size();
  CHECK(rate >= 0.89);
  CHECK(rate <= 0.92);
}

TEST_CASE("vanilla baselines") {
  const std::vector<double> p{0.3, 0.4, 0.4, 0.1};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto greedy = vanilla_top_k_step(p, 1, seed);
    CHECK(greedy.chosen_token == 1);
    CHECK(greedy.set.token_ids == Ids{1});
    CHECK(greedy.qhat_used == 0.4);
  }
  const std::vector<double> q{0.5, 0.3, 0.2};
  auto tp = vanilla_top_p_step(q, 0.9, 3);
  CHECK(tp.set.token_ids == Ids{0, 1, 2});
  CHECK(tp.qhat_used == 0.9);
  CHECK_FALSE(tp.bin.has_value());
  CHECK_THROWS_AS(vanilla_top_k_step(q, 0, 1), UsageError);
  CHECK_THROWS_AS(vanilla_top_k_step(q, 4, 1), UsageError);
  CHECK_THROWS_AS(vanilla_top_p_step(q, 1.5, 1), UsageError);

  const std::vector<double> r{0.15, 0.05, 0.5, 0.3};
  const auto f = frequencies(4, 100000, [&](std::uint64_t s) {
    return vanilla_top_k_step(r, 4, s).chosen_token;
  });
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(f[i] - r[i]) < 0.01);
}

TEST_CASE("trace line format") {
  const std::vector<double> p{0.5, 0.3, 0.2};
  auto s = vanilla_top_p_step(p, 0.8, 12);
  const auto line = format_trace_line(3, s);
  CHECK(line.find("{\"step\":3,\"token\":") == 0);
  CHECK(line.find("\"set_size\":2") != std::string::npos);
  CHECK(line.find("\"bin\":null") != std::string::npos);
  CHECK(line.find("\"seed\":12") != std::string::npos);
  CHECK(line.find('\n') == std::string::npos);
}

TEST_CASE("property: prediction sets are minimal prefixes of the canonical order") {
  std::mt19937_64 eng(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 20000; ++i) {
    const std::size_t k = 1 + eng() % 10;
    const auto p = oracle::random_distribution(eng, k);
    const double q = std::max(1e-9, u(eng));
    const auto set = prediction_set(p, q);
    REQUIRE(set.size() >= 1);
    // Canonical order and accumulated mass.
    double cum = 0.0;
    for (std::size_t j = 0; j < set.size(); ++j) {
      if (j > 0) {
        const auto a = set.token_ids[j - 1];
        const auto b = set.token_ids[j];
        CHECK((p[a] > p[b] || (p[a] == p[b] && a < b)));
      }
      cum += p[set.token_ids[j]];
    }
    CHECK(cum == set.cum_mass);
    CHECK(set.size() == oracle::min_cardinality_by_enumeration(p, q));
  }
}
