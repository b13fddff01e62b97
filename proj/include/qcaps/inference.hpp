#ifndef QCAPS_INFERENCE_HPP_
#define QCAPS_INFERENCE_HPP_

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "qcaps/dataset.hpp"
#include "qcaps/fixed_point.hpp"
#include "qcaps/model.hpp"

namespace qcaps {

/// Integer bits of every quantized value; one sign/integer bit.
inline constexpr int kIntegerBits = 1;

/// Per-layer fractional bits for weights (Q_w), activations (Q_a) and
/// routing internals (Q_DR, present only for routing layers).
struct QuantConfig
{
  RoundingScheme scheme = RoundingScheme::TRN;
  std::vector<int> weight_bits;
  std::vector<int> activation_bits;
  std::vector<std::optional<int>> routing_bits;

  /// All entries set to `bits`; Q_DR present exactly where `routing` is set.
  static QuantConfig uniform(RoundingScheme scheme, const std::vector<bool>& routing, int bits);

  std::size_t num_layers() const noexcept { return weight_bits.size(); }

  friend auto operator<=>(const QuantConfig&, const QuantConfig&) = default;
  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

/// Throws std::invalid_argument if cfg does not fit the model.
void validate(const QuantConfig& cfg, const CapsModel& model);

/// A model whose parameters were rounded once for a given config.
struct PreparedModel
{
  const CapsModel* model = nullptr;
  std::optional<QuantConfig> config;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

/// Weights and biases of layer l are rounded at Q_w[l]. SR draws come from a
/// per-layer stream derived from `seed`, independent of any sample.
PreparedModel prepare(const CapsModel& model, const std::optional<QuantConfig>& cfg, std::uint64_t seed);

/// Output capsules [num_classes, D]. Activation and routing rounding draw
/// from `rng` in layer order.
Tensor forward(const PreparedModel& prepared, const Tensor& input, RandomStream& rng);
Tensor forward(const CapsModel& model, const Tensor& input, const std::optional<QuantConfig>& cfg, RandomStream& rng);

/// Index of the longest output capsule; ties go to the lowest index.
std::size_t predict_class(const Tensor& class_capsules);

/// Fraction of samples predicted correctly. Sample i uses
/// RandomStream(seed, i), so the result is independent of evaluation order
/// and thread count.
double evaluate(const CapsModel& model, const LabeledDataset& data, const std::optional<QuantConfig>& cfg,
                std::uint64_t seed);

} // namespace qcaps

#endif // QCAPS_INFERENCE_HPP_
