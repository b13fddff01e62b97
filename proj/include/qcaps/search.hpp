#ifndef QCAPS_SEARCH_HPP_
#define QCAPS_SEARCH_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qcaps/inference.hpp"

namespace qcaps {

/// Maps a quantization config to an accuracy in [0, 1]. Must be
/// deterministic; the search calls it repeatedly.
using AccuracyOracle = std::function<double(const QuantConfig&)>;

/// Which wordlengths a search step changes. Activations carry the routing
/// bits along (routing internals follow Q_a until they are searched alone).
enum class SearchTarget
{
  WeightsAndActivations,
  Weights,
  Activations,
};

/// The per-layer quantities the search needs from a model.
struct ModelProfile
{
  std::vector<std::uint64_t> params;      // P^l
  std::vector<std::uint64_t> activations; // A^l
  std::vector<bool> routing;

  std::size_t num_layers() const noexcept { return params.size(); }
};

ModelProfile profile_of(const CapsModel& model);

/// Oracle backed by evaluate(model, data, cfg, seed).
AccuracyOracle make_model_oracle(const CapsModel& model, const LabeledDataset& data, std::uint64_t seed);

/// acc_FP32 * (1 - acc_TOL)
double target_accuracy(double acc_fp32, double acc_tol) noexcept;
/// acc_FP32 * (1 - 0.05 * acc_TOL): Step 1 may spend 5% of the tolerance.
double step1_threshold(double acc_fp32, double acc_tol) noexcept;

/// No wordlength in the searched range reaches the accuracy floor.
class SearchInfeasible : public std::runtime_error
{
public:
  SearchInfeasible(const std::string& what, std::optional<QuantConfig> best, double best_accuracy)
      : std::runtime_error(what), best(std::move(best)), best_accuracy(best_accuracy)
  {
  }
  std::optional<QuantConfig> best;
  double best_accuracy;
};

/// Even the all-floor assignment exceeds the memory budget.
class BudgetInfeasible : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Sets the targeted wordlength(s) of layer l.
void set_bits(QuantConfig& cfg, SearchTarget target, std::size_t l, int bits);
int get_bits(const QuantConfig& cfg, SearchTarget target, std::size_t l);

struct UniformSearchResult
{
  QuantConfig config;
  int bits = 0;
  double accuracy = 0.0;
  int oracle_calls = 0;
};

/// Bisection over Q in [1, q_init] for the smallest Q whose uniform config
/// reaches acc_min, assuming accuracy is non-decreasing in Q. Makes at most
/// ceil(log2(q_init)) + 1 oracle calls. Untargeted fields come from `base`.
UniformSearchResult binary_search_uniform(const AccuracyOracle& oracle, SearchTarget target, const QuantConfig& base,
                                          int q_init, double acc_min);

/// Largest (Q)_0 such that sum_l P^l * max((Q)_0 - l, floor) <= budget, as
/// the list [(Q)_0, (Q)_0 - 1, ...] clamped at floor. (Q)_0 is capped at
/// `ceiling` when given. Units are whatever the caller uses for Q.
std::vector<int> memory_budget_wordlengths(std::span<const std::uint64_t> params, std::uint64_t budget, int floor,
                                           std::optional<int> ceiling = std::nullopt);

struct LayerwiseResult
{
  QuantConfig config;
  std::vector<int> bits;
  double accuracy = 0.0;
  /// A suffix reached the floor before accuracy dropped below acc_min.
  bool floor_reached = false;
  int oracle_calls = 0;
};

/// Layer-wise descent: for StartL = 1 .. L-1, lower layers [StartL, L) by
/// one bit together while accuracy stays >= acc_min, then step back up by
/// one. Layer 0 keeps its initial wordlength. A suffix never drops below
/// `floor`. Throws SearchInfeasible if q_init itself fails.
LayerwiseResult layerwise_quantization(const AccuracyOracle& oracle, SearchTarget target, const QuantConfig& base,
                                       std::span<const int> q_init, double acc_min, int floor);

struct DrQuantResult
{
  QuantConfig config;
  int bits = 0;
  double accuracy = 0.0;
  int oracle_calls = 0;
};

/// Linear descent of Q_DR for one routing layer; returns the last passing
/// value. Throws SearchInfeasible if q_init fails.
DrQuantResult dr_quantization(const AccuracyOracle& oracle, const QuantConfig& base, std::size_t layer, int q_init,
                              double acc_min, int floor);

struct ConfigMetrics
{
  double accuracy = 0.0;
  std::uint64_t weight_memory_bits = 0;
  std::uint64_t activation_memory_bits = 0;
  double weight_reduction = 0.0;
  double activation_reduction = 0.0;
};

/// sum_l P^l * (1 + Q_w[l]).
std::uint64_t weight_memory_bits(std::span<const std::uint64_t> params, std::span<const int> weight_bits);
/// sum_l A^l * (1 + Q_a[l]).
std::uint64_t activation_memory_bits(std::span<const std::uint64_t> activations, std::span<const int> activation_bits);
std::uint64_t weight_memory_bits(const CapsModel& model, std::span<const int> weight_bits);
std::uint64_t activation_memory_bits(const CapsModel& model, std::span<const int> activation_bits);

ConfigMetrics measure(const ModelProfile& profile, const QuantConfig& cfg, double accuracy);

struct ScoredConfig
{
  QuantConfig config;
  ConfigMetrics metrics;
};

enum class SearchPath
{
  A,
  B,
  Infeasible,
};

std::string_view to_string(SearchPath p) noexcept;

struct SearchOutcome
{
  RoundingScheme scheme = RoundingScheme::TRN;
  SearchPath path = SearchPath::Infeasible;
  std::optional<ScoredConfig> satisfied; // Path A
  std::optional<ScoredConfig> memory;    // Path B (and the Step 2 model on Path A)
  std::optional<ScoredConfig> accuracy;  // Path B
  int step1_bits = 0;
  std::optional<double> acc_mm;
  int oracle_calls = 0;
  std::string note;
};

struct FrameworkInputs
{
  ModelProfile profile;
  double acc_fp32 = 1.0;
  double acc_tol = 0.0;
  std::uint64_t memory_budget_bits = 0;
  std::vector<RoundingScheme> schemes{RoundingScheme::TRN, RoundingScheme::RTN, RoundingScheme::SR};
  int floor_bits = 1;
  int q_init = 32;
};

/// One pass of the framework for a single rounding scheme.
SearchOutcome run_framework(const FrameworkInputs& in, RoundingScheme scheme, const AccuracyOracle& oracle);
/// One outcome per scheme, in the order of in.schemes. Runs are independent.
std::vector<SearchOutcome> run_framework(const FrameworkInputs& in, const AccuracyOracle& oracle);

struct SelectedConfig
{
  std::string role; // model_satisfied | model_memory | model_accuracy
  RoundingScheme scheme = RoundingScheme::TRN;
  ScoredConfig scored;
};

struct Selection
{
  SearchPath path = SearchPath::Infeasible;
  std::vector<SelectedConfig> configs;
};

/// If any outcome took Path A: smallest weight memory, then fewest
/// activation bits, then simplest scheme (TRN < RTN < SR). Otherwise the
/// most accurate model_memory and the smallest model_accuracy. Independent
/// of input order. Throws std::invalid_argument when nothing is feasible.
Selection select_rounding_scheme(std::span<const SearchOutcome> outcomes);

} // namespace qcaps

#endif // QCAPS_SEARCH_HPP_
