#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctp/records.hpp"

namespace ctp {

// Canonical token order: probability descending, ties by ascending token id.
//
// Scores, prediction sets and coverage checks all accumulate mass along this
// order, left to right, with plain double addition. Because every consumer
// sums the same prefix in the same order, "gold lies in the set for
// threshold q" and "mass strictly ahead of gold < q" agree bit for bit.
//
// Sparse records use a block rule: the unlisted tokens, each carrying
// tail_mass / (vocab - |ids|), form one block placed after every listed token
// with probability >= that share and before the rest; inside the block they
// run in ascending id.

inline bool ranks_before(double pa, TokenId a, double pb, TokenId b) noexcept {
  return pa > pb || (pa == pb && a < b);
}

/// All token ids of a dense distribution in canonical order.
std::vector<TokenId> rank_tokens(std::span<const double> probs);

/// Ids of the tokens that rank strictly ahead of `gold`, in canonical order.
std::vector<TokenId> tokens_ahead_of(std::span<const double> probs, TokenId gold);

struct GoldMass {
  double ahead = 0.0;         // cumulative mass strictly ahead of gold
  double through_ties = 0.0;  // cumulative mass through the end of gold's tie group
};

GoldMass gold_mass_dense(std::span<const double> probs, TokenId gold);

/// Mass ahead of the gold token under the sparse block rule.
double gold_mass_ahead_sparse(const DistributionRecord& r);

/// Size of the smallest canonical prefix reaching mass q; q >= 1 (or a prefix
/// that never reaches q) gives the whole vocabulary.
std::size_t prefix_size_dense(std::span<const double> probs, double q);
std::size_t prefix_size_sparse(const DistributionRecord& r, double q);

/// True iff the gold token lies in the threshold-q prediction set.
bool gold_in_set(const DistributionRecord& r, double q);

}  // namespace ctp
