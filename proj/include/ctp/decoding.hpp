#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctp/conformal.hpp"
#include "ctp/records.hpp"

namespace ctp {

/// Smallest high-probability prefix C_q of a next-token distribution.
struct PredictionSet {
  std::vector<TokenId> token_ids;  // canonical order
  double cum_mass = 0.0;           // accumulated along token_ids
  double threshold_used = 0.0;

  std::size_t size() const noexcept { return token_ids.size(); }
  bool contains(TokenId t) const;
};

/// Smallest canonical prefix whose cumulative mass reaches q (>=). q == 1
/// yields the full vocabulary, as does a prefix that never reaches q.
/// Throws UsageError unless 0 < q <= 1 and probs is non-empty.
PredictionSet prediction_set(std::span<const double> probs, double q);

/// The k most probable tokens. Throws UsageError unless 1 <= k <= |probs|.
PredictionSet top_k_set(std::span<const double> probs, std::size_t k);

/// Draws token i of the set with probability probs[i] / set.cum_mass.
///
/// One uniform u = splitmix64(seed) / 2^64 (top 53 bits) is drawn and the
/// set is walked in its stored order until the running mass exceeds
/// u * cum_mass, so the result depends only on (probs, set, seed).
TokenId sample_from_set(std::span<const double> probs, const PredictionSet& set,
                        std::uint64_t seed);

struct DecodeStep {
  TokenId chosen_token = 0;
  PredictionSet set;
  double entropy = 0.0;
  std::optional<std::size_t> bin;
  double qhat_used = 0.0;
  std::uint64_t rng_state_before = 0;  // the seed consumed by this step
};

/// entropy -> bin -> threshold -> prediction set -> sample. Throws
/// UsageError when the distribution length differs from the model's vocab.
DecodeStep conformal_decode_step(std::span<const double> probs, const CalibrationModel& model,
                                 std::uint64_t seed);

DecodeStep vanilla_top_p_step(std::span<const double> probs, double p, std::uint64_t seed);

/// qhat_used reports the mass of the k-prefix.
DecodeStep vanilla_top_k_step(std::span<const double> probs, std::size_t k, std::uint64_t seed);

/// Seed used for step `index` of a stream seeded with `stream_seed`.
std::uint64_t step_seed(std::uint64_t stream_seed, std::uint64_t index) noexcept;

/// One trace line: {"step","token","set_size","cum_mass","entropy","bin","qhat","seed"}.
std::string format_trace_line(std::uint64_t step, const DecodeStep& s);

}  // namespace ctp
