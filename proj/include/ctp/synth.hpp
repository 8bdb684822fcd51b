#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctp/records.hpp"

namespace ctp {

enum class WorldKind { Dirichlet, Markov };

struct MarkovParams {
  std::uint32_t num_states = 20;
  std::uint64_t matrix_seed = 0;
  std::size_t seq_len = 200;
  std::size_t num_sequences = 500;
  /// Explicit row-stochastic matrix; when set it replaces the random draw.
  std::vector<std::vector<double>> transition;
};

/// Synthetic world with known ground truth.
///
/// Dirichlet worlds draw an IID true distribution per record and the gold
/// token from it. Markov worlds walk a fixed ergodic chain; the record at
/// each step is the current state's transition row and the gold token is the
/// realized next state. In both, the recorded distribution is the truth
/// distorted by temperature: normalize(p^(1/tau)). tau < 1 sharpens
/// (overconfident), tau > 1 flattens (underconfident), tau == 1 is exact.
struct SynthSpec {
  WorldKind kind = WorldKind::Dirichlet;
  std::uint32_t vocab_size = 50;  // Dirichlet only; Markov uses num_states
  double concentration = 0.3;     // symmetric Dirichlet parameter
  double distortion_temp = 1.0;
  /// Records whose true entropy (nats) is below low_entropy_cutoff use this
  /// temperature instead of distortion_temp.
  std::optional<double> low_entropy_temp;
  double low_entropy_cutoff = 0.0;
  std::size_t num_records = 10000;  // Dirichlet only
  MarkovParams markov;
  std::uint64_t seed = 0;
};

/// Throws UsageError on an out-of-range field.
void validate_spec(const SynthSpec& spec);

Dataset gen_dirichlet_world(const SynthSpec& spec);
Dataset gen_markov_world(const SynthSpec& spec);
/// Dispatches on spec.kind.
Dataset generate_world(const SynthSpec& spec);

/// The chain used by gen_markov_world: explicit matrix if given, else rows
/// drawn from Dirichlet(concentration), floored at 1e-4 and renormalized.
std::vector<std::vector<double>> markov_transition_matrix(const SynthSpec& spec);
/// Irreducible and aperiodic.
bool is_ergodic(const std::vector<std::vector<double>>& matrix);
std::vector<double> stationary_distribution(const std::vector<std::vector<double>>& matrix);

/// normalize(p^(1/tau)) computed in log space; zeros stay zero.
std::vector<double> apply_temperature(std::span<const double> probs, double tau);

/// One uniformly chosen record per seq_id, in ascending seq_id order.
Dataset subsample_one_per_sequence(const Dataset& ds, std::uint64_t seed);

SynthSpec spec_from_json(std::string_view text);
std::string spec_to_json(const SynthSpec& spec);
SynthSpec load_spec(const std::filesystem::path& path);

}  // namespace ctp
