#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace ctp {

using TokenId = std::uint32_t;

/// Default tolerance on total probability mass.
inline constexpr double kDefaultMassEps = 1e-6;

struct DenseProbs {
  std::vector<double> probs;  // length == vocab_size
};

/// Top-K export: listed tokens plus one collective mass for everything else.
struct SparseProbs {
  std::vector<TokenId> ids;
  std::vector<double> probs;  // parallel to ids
  double tail_mass = 0.0;
};

/// One observed next-token distribution together with the token that
/// actually followed.
struct DistributionRecord {
  std::uint64_t seq_id = 0;
  std::uint64_t pos = 0;
  std::uint32_t vocab_size = 0;
  TokenId gold = 0;
  std::variant<DenseProbs, SparseProbs> body;

  bool is_dense() const noexcept { return std::holds_alternative<DenseProbs>(body); }
  const DenseProbs& dense() const { return std::get<DenseProbs>(body); }
  const SparseProbs& sparse() const { return std::get<SparseProbs>(body); }

  friend bool operator==(const DistributionRecord&, const DistributionRecord&) = default;
};

inline bool operator==(const DenseProbs& a, const DenseProbs& b) { return a.probs == b.probs; }
inline bool operator==(const SparseProbs& a, const SparseProbs& b) {
  return a.ids == b.ids && a.probs == b.probs && a.tail_mass == b.tail_mass;
}

enum class ViolationCode {
  NegProb,      // NEG_PROB: a probability or the tail mass is negative
  BadSum,       // BAD_SUM: total mass outside [1-eps, 1+eps]
  GoldOob,      // GOLD_OOB: gold not in [0, vocab)
  DupId,        // DUP_ID: sparse id listed twice
  IdOob,        // ID_OOB: sparse id not in [0, vocab)
  LenMismatch,  // LEN_MISMATCH: dense length != vocab, or ids/probs lengths differ
  NonFinite,    // NON_FINITE: NaN or infinite probability
  EmptyVocab,   // EMPTY_VOCAB: vocab_size == 0
};

std::string_view code_name(ViolationCode c);

struct Violation {
  ViolationCode code;
  std::string detail;
};

/// Every invariant the record breaks; empty means valid.
std::vector<Violation> validate_record(const DistributionRecord& r, double eps = kDefaultMassEps);

inline bool is_valid(const DistributionRecord& r, double eps = kDefaultMassEps) {
  return validate_record(r, eps).empty();
}

struct RecordStats {
  double entropy = 0.0;  // nats
  double max_prob = 0.0;
  double gold_prob = 0.0;
};

// The functions below treat the unlisted tokens of a sparse record as
// sharing tail_mass uniformly. They do not validate; use the checked
// variants on untrusted input.

/// Shannon entropy in nats, 0 * ln 0 == 0.
double entropy(const DistributionRecord& r);
double entropy(std::span<const double> probs);

RecordStats record_stats(const DistributionRecord& r);

/// Throws ValidationError when the record is invalid.
double checked_entropy(const DistributionRecord& r, double eps = kDefaultMassEps);

/// Expands a sparse record to its dense form (tail spread uniformly).
/// Dense records are returned unchanged.
DistributionRecord dense_form(const DistributionRecord& r);

struct Dataset {
  std::vector<DistributionRecord> records;
  std::map<std::string, std::string> metadata;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  /// Shared vocabulary size; throws ValidationError on an empty or mixed set.
  std::uint32_t vocab_size() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws ValidationError if the set is empty, has invalid records, mixed
/// vocabularies or duplicate (seq_id, pos) keys.
void require_fit_ready(const Dataset& ds, double eps = kDefaultMassEps);

// ---------------------------------------------------------------------------
// JSON Lines record files

enum class ReadMode { Strict, Lenient };

struct ReadOptions {
  ReadMode mode = ReadMode::Strict;
  double eps = kDefaultMassEps;
};

struct ReadReport {
  std::size_t lines = 0;    // record lines seen (excludes blank and meta lines)
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::map<std::string, std::size_t> dropped_by_code;
};

/// Parses one record line. Throws ValidationError on malformed JSON or a
/// missing/ill-typed field; never checks mass invariants.
DistributionRecord parse_record_line(std::string_view line);
std::string format_record_line(const DistributionRecord& r);

/// Streaming reader: yields validated records one at a time so a large
/// vocabulary file never has to be resident all at once.
class RecordReader {
 public:
  explicit RecordReader(const std::filesystem::path& path, ReadOptions opts = {});

  /// Next valid record, or nullopt at end of file. In strict mode throws
  /// ValidationError naming the line of the first bad row.
  std::optional<DistributionRecord> next();

  const std::map<std::string, std::string>& metadata() const noexcept { return meta_; }
  const ReadReport& report() const noexcept { return report_; }

 private:
  void reject(std::size_t line_no, const std::string& code, const std::string& detail);

  std::filesystem::path path_;
  std::ifstream in_;
  ReadOptions opts_;
  ReadReport report_;
  std::map<std::string, std::string> meta_;
  std::size_t line_no_ = 0;
  std::optional<std::uint32_t> vocab_;
};

Dataset read_dataset(const std::filesystem::path& path, ReadOptions opts = {},
                     ReadReport* report = nullptr);

/// Writes atomically (temp file + rename).
void write_dataset(const Dataset& ds, const std::filesystem::path& path);

}  // namespace ctp
