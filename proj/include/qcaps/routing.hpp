#ifndef QCAPS_ROUTING_HPP_
#define QCAPS_ROUTING_HPP_

#include <cstddef>
#include <optional>
#include <span>

#include "qcaps/fixed_point.hpp"
#include "qcaps/tensor.hpp"

namespace qcaps {

/// v = |s|^2 / (1 + |s|^2) * s / |s|, zero maps to zero.
void squash_vector(std::span<const double> s, std::span<double> v) noexcept;

/// Squash over the last axis. With a quantizer the input is snapped to its
/// grid first.
Tensor squash(const Tensor& s, const std::optional<Quantizer>& quant = std::nullopt, RandomStream* rng = nullptr);

/// Row softmax of logits b [N_in, N_out], normalised over the output
/// capsule index. With a quantizer the logits are snapped first.
Tensor routing_softmax(const Tensor& b, const std::optional<Quantizer>& quant = std::nullopt,
                       RandomStream* rng = nullptr);

struct RoutingState
{
  Tensor votes;        // [N_in, N_out, D]
  Tensor logits;       // b [N_in, N_out]
  Tensor coupling;     // c [N_in, N_out]
  Tensor preactivation; // s [N_out, D]
  Tensor output;       // v [N_out, D]
  Tensor agreement;    // a [N_in, N_out]
};

/// Routing-by-agreement over votes [N_in, N_out, D]; returns v [N_out, D].
///
/// With `drq`, every routing array (softmax input b, coupling c, squash
/// input s, output v, agreement a, updated b) is rounded to the DR format.
/// Agreement and the logit update are skipped after the last iteration since
/// they cannot affect v. If `state` is given it receives the final arrays.
Tensor dynamic_routing(const Tensor& votes, int iterations, const std::optional<Quantizer>& drq = std::nullopt,
                       RandomStream* rng = nullptr, RoutingState* state = nullptr);

} // namespace qcaps

#endif // QCAPS_ROUTING_HPP_
