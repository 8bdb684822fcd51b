#include "ctp/decoding.hpp"

#include <algorithm>

#include <json.hpp>

#include "ctp/error.hpp"
#include "ctp/ranking.hpp"
#include "ctp/rng.hpp"

namespace ctp {

bool PredictionSet::contains(TokenId t) const {
  return std::find(token_ids.begin(), token_ids.end(), t) != token_ids.end();
}

PredictionSet prediction_set(std::span<const double> probs, double q) {
  if (probs.empty()) throw UsageError("prediction_set: empty distribution");
  if (!(q > 0.0 && q <= 1.0)) {
    throw UsageError("prediction_set: threshold must lie in (0, 1], got " + std::to_string(q));
  }
  PredictionSet set;
  set.threshold_used = q;
  set.token_ids = rank_tokens(probs);
  double cum = 0.0;
  std::size_t keep = set.token_ids.size();
  for (std::size_t i = 0; i < set.token_ids.size(); ++i) {
    cum += probs[set.token_ids[i]];
    if (q < 1.0 && cum >= q) {
      keep = i + 1;
      break;
    }
  }
  set.token_ids.resize(keep);
  set.cum_mass = cum;
  return set;
}

PredictionSet top_k_set(std::span<const double> probs, std::size_t k) {
  if (k < 1 || k > probs.size()) {
    throw UsageError("top_k: k must lie in [1, " + std::to_string(probs.size()) + "], got " +
                     std::to_string(k));
  }
  PredictionSet set;
  set.token_ids = rank_tokens(probs);
  set.token_ids.resize(k);
  for (TokenId t : set.token_ids) set.cum_mass += probs[t];
  set.threshold_used = set.cum_mass;
  return set;
}

TokenId sample_from_set(std::span<const double> probs, const PredictionSet& set,
                        std::uint64_t seed) {
  if (set.token_ids.empty()) throw UsageError("sample_from_set: empty set");
  const double target = uniform01_from_seed(seed) * set.cum_mass;
  double acc = 0.0;
  TokenId last_positive = set.token_ids.front();
  for (TokenId t : set.token_ids) {
    const double p = probs[t];
    if (p > 0.0) last_positive = t;
    acc += p;
    if (acc > target) return t;
  }
  // Rounding left target at or above the final running sum.
  return last_positive;
}

std::uint64_t step_seed(std::uint64_t stream_seed, std::uint64_t index) noexcept {
  return derive_seed(stream_seed, index);
}

DecodeStep conformal_decode_step(std::span<const double> probs, const CalibrationModel& model,
                                 std::uint64_t seed) {
  if (probs.size() != model.vocab_size) {
    throw UsageError("decode: distribution has " + std::to_string(probs.size()) +
                     " entries, model vocab is " + std::to_string(model.vocab_size));
  }
  DecodeStep step;
  step.rng_state_before = seed;
  step.entropy = entropy(probs);
  if (model.mode == CalibrationMode::EntropyBinned) step.bin = bin_of(model, step.entropy);
  step.qhat_used = model.qhats.at(step.bin.value_or(0));
  step.set = prediction_set(probs, step.qhat_used);
  step.chosen_token = sample_from_set(probs, step.set, seed);
  return step;
}

DecodeStep vanilla_top_p_step(std::span<const double> probs, double p, std::uint64_t seed) {
  DecodeStep step;
  step.rng_state_before = seed;
  step.entropy = entropy(probs);
  step.qhat_used = p;
  step.set = prediction_set(probs, p);
  step.chosen_token = sample_from_set(probs, step.set, seed);
  return step;
}

DecodeStep vanilla_top_k_step(std::span<const double> probs, std::size_t k, std::uint64_t seed) {
  DecodeStep step;
  step.rng_state_before = seed;
  step.entropy = entropy(probs);
  step.set = top_k_set(probs, k);
  step.qhat_used = step.set.cum_mass;
  step.chosen_token = sample_from_set(probs, step.set, seed);
  return step;
}

std::string format_trace_line(std::uint64_t step, const DecodeStep& s) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["token"] = s.chosen_token;
  j["set_size"] = s.set.size();
  j["cum_mass"] = s.set.cum_mass;
  j["entropy"] = s.entropy;
  if (s.bin) {
    j["bin"] = *s.bin;
  } else {
    j["bin"] = nullptr;
  }
  j["qhat"] = s.qhat_used;
  j["seed"] = s.rng_state_before;
  return j.dump();
}

}  // namespace ctp
