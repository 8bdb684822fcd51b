#include "ctp/kernels.hpp"

#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ctp/conformal.hpp"
#include "ctp/error.hpp"
#include "ctp/ranking.hpp"

namespace ctp::kernels {

namespace {

void check_sizes(std::size_t n, std::size_t m, const char* what) {
  if (n != m) {
    throw InvariantError(std::string(what) + ": output size " + std::to_string(m) +
                         " != input size " + std::to_string(n));
  }
}

// Below this many records the fork/join overhead outweighs the work.
constexpr std::size_t kMinParallel = 256;

inline std::size_t set_size(const DistributionRecord& r, double q) {
  return r.is_dense() ? prefix_size_dense(r.dense().probs, q) : prefix_size_sparse(r, q);
}

}  // namespace

bool openmp_enabled() noexcept {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int worker_count() {
#ifdef _OPENMP
  int avail = omp_get_max_threads();
  if (const char* env = std::getenv("CONFORMAL_DECODE_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap > 0 && cap < avail) avail = static_cast<int>(cap);
  }
  return avail < 1 ? 1 : avail;
#else
  return 1;
#endif
}

namespace serial {

void aps_scores(std::span<const DistributionRecord> recs, std::span<double> out) {
  check_sizes(recs.size(), out.size(), "aps_scores");
  for (std::size_t i = 0; i < recs.size(); ++i) out[i] = aps_score_unchecked(recs[i]);
}

void entropies(std::span<const DistributionRecord> recs, std::span<double> out) {
  check_sizes(recs.size(), out.size(), "entropies");
  for (std::size_t i = 0; i < recs.size(); ++i) out[i] = entropy(recs[i]);
}

void coverage(std::span<const DistributionRecord> recs, std::span<const double> thresholds,
              std::span<std::uint8_t> covered, std::span<std::size_t> set_sizes) {
  check_sizes(recs.size(), thresholds.size(), "coverage");
  check_sizes(recs.size(), covered.size(), "coverage");
  check_sizes(recs.size(), set_sizes.size(), "coverage");
  for (std::size_t i = 0; i < recs.size(); ++i) {
    covered[i] = gold_in_set(recs[i], thresholds[i]) ? 1 : 0;
    set_sizes[i] = set_size(recs[i], thresholds[i]);
  }
}

}  // namespace serial

namespace parallel {

void aps_scores(std::span<const DistributionRecord> recs, std::span<double> out) {
  check_sizes(recs.size(), out.size(), "aps_scores");
  const auto n = static_cast<std::ptrdiff_t>(recs.size());
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = aps_score_unchecked(recs[i]);
}

void entropies(std::span<const DistributionRecord> recs, std::span<double> out) {
  check_sizes(recs.size(), out.size(), "entropies");
  const auto n = static_cast<std::ptrdiff_t>(recs.size());
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = entropy(recs[i]);
}

void coverage(std::span<const DistributionRecord> recs, std::span<const double> thresholds,
              std::span<std::uint8_t> covered, std::span<std::size_t> set_sizes) {
  check_sizes(recs.size(), thresholds.size(), "coverage");
  check_sizes(recs.size(), covered.size(), "coverage");
  check_sizes(recs.size(), set_sizes.size(), "coverage");
  const auto n = static_cast<std::ptrdiff_t>(recs.size());
  // Dense set sizes sort the whole vocabulary; the cost is even per record.
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    covered[i] = gold_in_set(recs[i], thresholds[i]) ? 1 : 0;
    set_sizes[i] = set_size(recs[i], thresholds[i]);
  }
}

}  // namespace parallel

namespace {
bool go_parallel(Exec exec, std::size_t n) {
  return exec == Exec::Parallel && openmp_enabled() && n >= kMinParallel && worker_count() > 1;
}
}  // namespace

void aps_scores(std::span<const DistributionRecord> recs, std::span<double> out, Exec exec) {
  go_parallel(exec, recs.size()) ? parallel::aps_scores(recs, out) : serial::aps_scores(recs, out);
}

void entropies(std::span<const DistributionRecord> recs, std::span<double> out, Exec exec) {
  go_parallel(exec, recs.size()) ? parallel::entropies(recs, out) : serial::entropies(recs, out);
}

void coverage(std::span<const DistributionRecord> recs, std::span<const double> thresholds,
              std::span<std::uint8_t> covered, std::span<std::size_t> set_sizes, Exec exec) {
  if (go_parallel(exec, recs.size())) {
    parallel::coverage(recs, thresholds, covered, set_sizes);
  } else {
    serial::coverage(recs, thresholds, covered, set_sizes);
  }
}

void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn, Exec exec) {
  if (!(exec == Exec::Parallel && openmp_enabled() && n > 1 && worker_count() > 1)) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr first;
  std::mutex mu;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic) num_threads(worker_count())
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu);
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace ctp::kernels
