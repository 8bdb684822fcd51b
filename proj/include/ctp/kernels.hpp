#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "ctp/records.hpp"

// Data-parallel per-record loops.
//
// Each kernel has a serial reference in kernels::serial and an OpenMP
// version in kernels::parallel. Both write slot i from record i only, so
// outputs are identical regardless of worker count; tests compare the two
// element for element and bench/ times them against each other.
namespace ctp::kernels {

/// Worker cap from CONFORMAL_DECODE_THREADS (unset or 0 = all available).
/// Always 1 when built without OpenMP.
int worker_count();

bool openmp_enabled() noexcept;

enum class Exec { Serial, Parallel };

namespace serial {
void aps_scores(std::span<const DistributionRecord> recs, std::span<double> out);
void entropies(std::span<const DistributionRecord> recs, std::span<double> out);
/// covered[i] = gold of recs[i] lies in its threshold-q[i] set;
/// set_sizes[i] = size of that set.
void coverage(std::span<const DistributionRecord> recs, std::span<const double> thresholds,
              std::span<std::uint8_t> covered, std::span<std::size_t> set_sizes);
}  // namespace serial

namespace parallel {
void aps_scores(std::span<const DistributionRecord> recs, std::span<double> out);
void entropies(std::span<const DistributionRecord> recs, std::span<double> out);
void coverage(std::span<const DistributionRecord> recs, std::span<const double> thresholds,
              std::span<std::uint8_t> covered, std::span<std::size_t> set_sizes);
}  // namespace parallel

void aps_scores(std::span<const DistributionRecord> recs, std::span<double> out,
                Exec exec = Exec::Parallel);
void entropies(std::span<const DistributionRecord> recs, std::span<double> out,
               Exec exec = Exec::Parallel);
void coverage(std::span<const DistributionRecord> recs, std::span<const double> thresholds,
              std::span<std::uint8_t> covered, std::span<std::size_t> set_sizes,
              Exec exec = Exec::Parallel);

/// Runs fn(0..n-1), in parallel unless exec is Serial. fn must only touch
/// state owned by its index. The first exception thrown by any call is
/// rethrown after the loop.
void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn,
                    Exec exec = Exec::Parallel);

}  // namespace ctp::kernels
