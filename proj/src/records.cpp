#include "ctp/records.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_set>

#include "ctp/error.hpp"

namespace ctp {

namespace {

// Neumaier-compensated sum; mass checks should not depend on summation order
// at the 1e-16 level.
double compensated_sum(std::span<const double> xs) {
  double sum = 0.0;
  double c = 0.0;
  for (double x : xs) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      c += (sum - t) + x;
    } else {
      c += (x - t) + sum;
    }
    sum = t;
  }
  return sum + c;
}

inline double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string_view code_name(ViolationCode c) {
  switch (c) {
    case ViolationCode::NegProb: return "NEG_PROB";
    case ViolationCode::BadSum: return "BAD_SUM";
    case ViolationCode::GoldOob: return "GOLD_OOB";
    case ViolationCode::DupId: return "DUP_ID";
    case ViolationCode::IdOob: return "ID_OOB";
    case ViolationCode::LenMismatch: return "LEN_MISMATCH";
    case ViolationCode::NonFinite: return "NON_FINITE";
    case ViolationCode::EmptyVocab: return "EMPTY_VOCAB";
  }
  return "UNKNOWN";
}

std::vector<Violation> validate_record(const DistributionRecord& r, double eps) {
  std::vector<Violation> out;
  auto add = [&out](ViolationCode c, std::string d) { out.push_back({c, std::move(d)}); };

  if (r.vocab_size == 0) add(ViolationCode::EmptyVocab, "vocab_size is 0");
  if (r.gold >= r.vocab_size) {
    add(ViolationCode::GoldOob,
        "gold " + std::to_string(r.gold) + " not in [0, " + std::to_string(r.vocab_size) + ")");
  }

  auto check_probs = [&](std::span<const double> probs) {
    bool finite = true;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (!std::isfinite(probs[i])) {
        finite = false;
        add(ViolationCode::NonFinite, "probs[" + std::to_string(i) + "] is not finite");
      } else if (probs[i] < 0.0) {
        add(ViolationCode::NegProb, "probs[" + std::to_string(i) + "] = " + fmt_double(probs[i]));
      }
    }
    return finite;
  };

  if (r.is_dense()) {
    const auto& d = r.dense();
    if (d.probs.size() != r.vocab_size) {
      add(ViolationCode::LenMismatch, "dense length " + std::to_string(d.probs.size()) +
                                          " != vocab " + std::to_string(r.vocab_size));
    }
    if (check_probs(d.probs)) {
      const double total = compensated_sum(d.probs);
      if (!(std::abs(total - 1.0) <= eps)) {
        add(ViolationCode::BadSum, "mass " + fmt_double(total));
      }
    }
  } else {
    const auto& s = r.sparse();
    if (s.ids.size() != s.probs.size()) {
      add(ViolationCode::LenMismatch, "ids length " + std::to_string(s.ids.size()) +
                                          " != probs length " + std::to_string(s.probs.size()));
    }
    if (s.ids.size() > r.vocab_size) {
      add(ViolationCode::LenMismatch, "more ids than vocabulary entries");
    }
    std::unordered_set<TokenId> seen;
    seen.reserve(s.ids.size());
    for (TokenId id : s.ids) {
      if (id >= r.vocab_size) add(ViolationCode::IdOob, "id " + std::to_string(id));
      if (!seen.insert(id).second) add(ViolationCode::DupId, "id " + std::to_string(id));
    }
    bool finite = check_probs(s.probs);
    if (!std::isfinite(s.tail_mass)) {
      finite = false;
      add(ViolationCode::NonFinite, "tail is not finite");
    } else if (s.tail_mass < 0.0) {
      add(ViolationCode::NegProb, "tail = " + fmt_double(s.tail_mass));
    }
    if (finite) {
      const double total = compensated_sum(s.probs) + s.tail_mass;
      if (!(std::abs(total - 1.0) <= eps)) {
        add(ViolationCode::BadSum, "mass " + fmt_double(total));
      }
    }
  }
  return out;
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) h -= plogp(p);
  return h;
}

double entropy(const DistributionRecord& r) {
  if (r.is_dense()) return entropy(r.dense().probs);
  const auto& s = r.sparse();
  double h = entropy(s.probs);
  const std::size_t unlisted = r.vocab_size - s.ids.size();
  if (s.tail_mass > 0.0 && unlisted > 0) {
    h -= s.tail_mass * std::log(s.tail_mass / static_cast<double>(unlisted));
  }
  return h;
}

RecordStats record_stats(const DistributionRecord& r) {
  RecordStats st;
  st.entropy = entropy(r);
  if (r.is_dense()) {
    const auto& p = r.dense().probs;
    st.max_prob = *std::max_element(p.begin(), p.end());
    st.gold_prob = p[r.gold];
    return st;
  }
  const auto& s = r.sparse();
  const std::size_t unlisted = r.vocab_size - s.ids.size();
  const double share = unlisted > 0 ? s.tail_mass / static_cast<double>(unlisted) : 0.0;
  st.max_prob = share;
  st.gold_prob = share;
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    st.max_prob = std::max(st.max_prob, s.probs[i]);
    if (s.ids[i] == r.gold) st.gold_prob = s.probs[i];
  }
  return st;
}

double checked_entropy(const DistributionRecord& r, double eps) {
  auto v = validate_record(r, eps);
  if (!v.empty()) {
    throw ValidationError("invalid record (seq " + std::to_string(r.seq_id) + ", pos " +
                          std::to_string(r.pos) + "): " + std::string(code_name(v[0].code)) +
                          " " + v[0].detail);
  }
  return entropy(r);
}

DistributionRecord dense_form(const DistributionRecord& r) {
  if (r.is_dense()) return r;
  const auto& s = r.sparse();
  const std::size_t unlisted = r.vocab_size - s.ids.size();
  const double share = unlisted > 0 ? s.tail_mass / static_cast<double>(unlisted) : 0.0;
  DenseProbs d;
  d.probs.assign(r.vocab_size, share);
  for (std::size_t i = 0; i < s.ids.size(); ++i) d.probs[s.ids[i]] = s.probs[i];
  DistributionRecord out = r;
  out.body = std::move(d);
  return out;
}

std::uint32_t Dataset::vocab_size() const {
  if (records.empty()) throw ValidationError("dataset is empty");
  const std::uint32_t k = records.front().vocab_size;
  for (const auto& r : records) {
    if (r.vocab_size != k) {
      throw ValidationError("vocab_size mismatch: " + std::to_string(r.vocab_size) + " vs " +
                            std::to_string(k));
    }
  }
  return k;
}

void require_fit_ready(const Dataset& ds, double eps) {
  ds.vocab_size();
  std::set<std::pair<std::uint64_t, std::uint64_t>> keys;
  for (const auto& r : ds.records) {
    checked_entropy(r, eps);
    if (!keys.emplace(r.seq_id, r.pos).second) {
      throw ValidationError("duplicate (seq, pos) = (" + std::to_string(r.seq_id) + ", " +
                            std::to_string(r.pos) + ")");
    }
  }
}

}  // namespace ctp
