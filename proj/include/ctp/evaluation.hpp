#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctp/conformal.hpp"
#include "ctp/records.hpp"
#include "ctp/synth.hpp"

namespace ctp {

struct BinCoverage {
  std::size_t bin = 0;
  std::size_t n = 0;
  double coverage = 0.0;
  double set_coverage = 0.0;
  double qhat = 0.0;
};

struct CoverageReport {
  std::size_t n_test = 0;
  std::size_t n_cal = 0;
  double coverage = 0.0;        // gold score <= threshold
  double set_coverage = 0.0;    // gold inside the nucleus prediction set
  double target = 0.0;          // 1 - alpha
  double theorem_upper = 0.0;   // 1 - alpha + 1 / (n_cal + 1)
  double coverage_gap = 0.0;    // target - coverage
  double mean_set_size = 0.0;
  std::size_t max_set_size = 0;
  std::vector<BinCoverage> per_bin;
};

/// Coverage of a fitted model on a test set, threshold chosen by each
/// record's entropy bin.
///
/// `coverage` counts records whose gold score is within the threshold, the
/// event the finite-sample band is about. `set_coverage` counts gold membership in the
/// nucleus prefix prediction_set(probs, q), which also holds when the gold is
/// the token that crosses q, so set_coverage >= coverage. Set sizes are those
/// of the nucleus prefix. n_cal is read from the model's n_per_bin. Throws
/// UsageError on an empty test set or a vocabulary mismatch.
CoverageReport empirical_coverage(const CalibrationModel& model, const Dataset& test);

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
  std::string series;
};

/// Per-entropy-percentile hit rate of fixed-p nucleus sets. Bins come from
/// the test set's own entropies; x is the bin's percentile midpoint (0-100).
/// Empty bins emit no point.
std::vector<CurvePoint> effective_confidence_curve(double p, const Dataset& test,
                                                   std::size_t num_bins);

/// (1 - alpha, qhat) per alpha; one series ("global") or one per bin
/// ("bin_<b>").
std::vector<CurvePoint> qhat_curve(const Dataset& cal, const std::vector<double>& alphas,
                                   CalibrationMode mode, std::size_t num_bins = 10);

/// Inclusive start:stop:step sweep; stop is kept when within 1e-12.
std::vector<double> parse_alpha_range(std::string_view spec);

struct BandCheck {
  bool pass = false;
  bool band_guaranteed = true;  // false for dependent (non-exchangeable) worlds
  double alpha = 0.0;
  std::size_t n_cal = 0;
  std::size_t n_test = 0;
  std::size_t trials = 0;
  double mean_coverage = 0.0;
  double sd_coverage = 0.0;     // across trials
  double min_coverage = 0.0;
  double max_coverage = 0.0;
  double lower = 0.0;           // 1 - alpha
  double upper = 0.0;           // 1 - alpha + 1 / (n_cal + 1)
  bool upper_applies = true;    // false once a trial had calibration scores tied at qhat
  double slack = 0.0;           // Monte Carlo slack applied on both sides
  double mean_set_coverage = 0.0;
  double mean_qhat = 0.0;
  double coverage_gap = 0.0;    // (1 - alpha) - mean coverage
};

/// Draws `n` fresh records for one trial from the given seed.
using WorldSampler = std::function<Dataset(std::uint64_t seed, std::size_t n)>;

/// Repeated calibrate/test cycles against the finite-sample coverage band.
/// PASS iff mean coverage lies in [lower - slack, upper + slack]. The upper
/// edge assumes untied scores; when any trial's calibration scores tie at
/// its qhat only the lower edge is checked. Without an
/// explicit slack, a 3-sigma bound on the mean over trials is used, covering
/// both the test-set and the calibration-draw variance.
BandCheck theorem_band_check(const WorldSampler& sample, bool exchangeable, double alpha,
                             std::size_t n_cal, std::size_t n_test, std::size_t trials,
                             std::uint64_t seed, std::optional<double> slack = std::nullopt);

/// Synthetic-world form. Dirichlet worlds are exchangeable; Markov worlds
/// (cut into consecutive calibration and test segments) are flagged as not
/// guaranteed but still measured.
BandCheck theorem_band_check(const SynthSpec& world, double alpha, std::size_t n_cal,
                             std::size_t n_test, std::size_t trials, std::uint64_t seed,
                             std::optional<double> slack = std::nullopt);

std::string report_to_json(const CoverageReport& r);
std::string band_to_json(const BandCheck& b);
/// "x,y,series" header plus one row per point.
std::string curve_to_csv(const std::vector<CurvePoint>& pts);

}  // namespace ctp
