#include "ctp/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ctp {

namespace {

void sort_canonical(std::span<const double> probs, std::vector<TokenId>& ids) {
  std::sort(ids.begin(), ids.end(),
            [probs](TokenId a, TokenId b) { return ranks_before(probs[a], a, probs[b], b); });
}

double unlisted_share(const DistributionRecord& r) {
  const auto& s = r.sparse();
  const std::size_t m = r.vocab_size - s.ids.size();
  return m > 0 ? s.tail_mass / static_cast<double>(m) : 0.0;
}

}  // namespace

std::vector<TokenId> rank_tokens(std::span<const double> probs) {
  std::vector<TokenId> ids(probs.size());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  sort_canonical(probs, ids);
  return ids;
}

std::vector<TokenId> tokens_ahead_of(std::span<const double> probs, TokenId gold) {
  const double pg = probs[gold];
  std::vector<TokenId> ids;
  for (TokenId i = 0; i < probs.size(); ++i) {
    if (ranks_before(probs[i], i, pg, gold)) ids.push_back(i);
  }
  sort_canonical(probs, ids);
  return ids;
}

GoldMass gold_mass_dense(std::span<const double> probs, TokenId gold) {
  const double pg = probs[gold];
  // {i : p_i >= p_gold} in canonical order is exactly the canonical prefix
  // ending with gold's tie group.
  std::vector<TokenId> ids;
  for (TokenId i = 0; i < probs.size(); ++i) {
    if (probs[i] >= pg) ids.push_back(i);
  }
  sort_canonical(probs, ids);

  GoldMass out;
  double cum = 0.0;
  for (TokenId i : ids) {
    if (i == gold) out.ahead = cum;
    cum += probs[i];
  }
  out.through_ties = cum;
  return out;
}

double gold_mass_ahead_sparse(const DistributionRecord& r) {
  const auto& s = r.sparse();
  const double u = unlisted_share(r);
  auto listed = std::find(s.ids.begin(), s.ids.end(), r.gold);

  double ahead = 0.0;
  if (listed != s.ids.end()) {
    const double pg = s.probs[static_cast<std::size_t>(listed - s.ids.begin())];
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
      if (ranks_before(s.probs[i], s.ids[i], pg, r.gold)) ahead += s.probs[i];
    }
    if (u > pg) ahead += s.tail_mass;
    return ahead;
  }
  std::size_t listed_below = 0;
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    if (s.probs[i] >= u) ahead += s.probs[i];
    if (s.ids[i] < r.gold) ++listed_below;
  }
  ahead += u * static_cast<double>(r.gold - listed_below);
  return ahead;
}

std::size_t prefix_size_dense(std::span<const double> probs, double q) {
  if (q >= 1.0) return probs.size();
  const auto order = rank_tokens(probs);
  double cum = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    cum += probs[order[i]];
    if (cum >= q) return i + 1;
  }
  return probs.size();
}

std::size_t prefix_size_sparse(const DistributionRecord& r, double q) {
  if (q >= 1.0) return r.vocab_size;
  const auto& s = r.sparse();
  const double u = unlisted_share(r);
  const std::size_t m = r.vocab_size - s.ids.size();

  std::vector<std::size_t> idx(s.ids.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&s](std::size_t a, std::size_t b) {
    return ranks_before(s.probs[a], s.ids[a], s.probs[b], s.ids[b]);
  });

  double cum = 0.0;
  std::size_t size = 0;
  bool block_done = (m == 0);
  // Returns true once the block alone reaches q.
  auto take_block = [&]() {
    block_done = true;
    if (u <= 0.0) return false;
    const double need = std::ceil((q - cum) / u);
    const auto t = static_cast<std::size_t>(std::max(1.0, need));
    if (t <= m) {
      size += t;
      return true;
    }
    size += m;
    cum += s.tail_mass;
    return false;
  };

  for (std::size_t k : idx) {
    if (!block_done && s.probs[k] < u && take_block()) return size;
    cum += s.probs[k];
    ++size;
    if (cum >= q) return size;
  }
  if (!block_done && take_block()) return size;
  return r.vocab_size;
}

bool gold_in_set(const DistributionRecord& r, double q) {
  if (q >= 1.0) return true;
  if (r.is_dense()) return gold_mass_dense(r.dense().probs, r.gold).ahead < q;
  return gold_mass_ahead_sparse(r) < q;
}

}  // namespace ctp
