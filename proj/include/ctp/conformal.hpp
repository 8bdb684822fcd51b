#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ctp/records.hpp"

namespace ctp {

/// APS conformal score: total mass of every token at least as probable as
/// the gold token, ties included.
///
/// Dense records accumulate along the canonical order (see ranking.hpp), so
/// the gold token is always inside prediction_set(probs, score). Two edge
/// rules keep that identity exact in floating point:
///  - a zero-probability gold scores 1.0 (only the full vocabulary holds it);
///  - if the gold's own mass is absorbed by rounding, the score is nudged one
///    ulp above the mass ahead of it.
/// Scores are capped at 1.0.
///
/// Sparse records: an unlisted gold scores 1.0 (worst case). Otherwise the
/// listed mass >= p_gold is summed, plus the tail when its uniform share is
/// itself >= p_gold.
///
/// Throws ValidationError on an invalid record.
double aps_score(const DistributionRecord& r, double eps = kDefaultMassEps);

/// aps_score without validation, for kernels working on prevalidated data.
double aps_score_unchecked(const DistributionRecord& r);

/// 1-based rank ceil((n + 1)(1 - alpha)) of the conformal quantile. May
/// exceed n.
std::size_t conformal_rank(std::size_t n, double alpha);

/// r-th smallest score with r = conformal_rank(n, alpha); 1.0 when r > n.
/// Throws UsageError on empty input or alpha outside (0, 1).
double conformal_quantile(std::span<const double> scores, double alpha);

enum class CalibrationMode { Global, EntropyBinned };

struct CalibrationModel {
  double alpha = 0.1;
  CalibrationMode mode = CalibrationMode::Global;
  std::vector<double> bin_edges;  // B - 1 entries, nats
  std::vector<double> qhats;      // B entries
  std::vector<std::size_t> n_per_bin;
  std::uint32_t vocab_size = 0;
  std::map<std::string, std::string> metadata;

  std::size_t num_bins() const noexcept { return qhats.size(); }
  /// Threshold for a distribution of the given entropy (any mode).
  double threshold_for(double entropy) const;

  friend bool operator==(const CalibrationModel&, const CalibrationModel&) = default;
};

/// Throws ValidationError when the model's fields are inconsistent.
void check_model(const CalibrationModel& m);

struct ScoredRecord {
  const DistributionRecord* record = nullptr;
  double score = 0.0;
  double entropy = 0.0;
};

/// Scores and entropies of every record, in dataset order.
std::vector<ScoredRecord> score_dataset(const Dataset& ds);

CalibrationModel fit_global(const Dataset& ds, double alpha);

/// Per-entropy-percentile calibration. num_bins == 1 returns exactly
/// fit_global's model.
CalibrationModel fit_binned(const Dataset& ds, double alpha, std::size_t num_bins = 10);

/// Nearest-rank percentile edges: edge b (1-based) is the ceil(b n / B)-th
/// smallest value. `sorted` must be ascending.
std::vector<double> percentile_edges(std::span<const double> sorted, std::size_t num_bins);

/// First bin whose upper edge >= entropy; values above the last edge clamp
/// to the last bin.
std::size_t bin_index(std::span<const double> edges, double entropy) noexcept;

/// bin_index on a binned model. Throws UsageError on a global model.
std::size_t bin_of(const CalibrationModel& model, double entropy);

std::string model_to_json(const CalibrationModel& m);
CalibrationModel model_from_json(std::string_view text);
void save_model(const CalibrationModel& m, const std::filesystem::path& path);
CalibrationModel load_model(const std::filesystem::path& path);

}  // namespace ctp
