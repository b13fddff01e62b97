#ifndef QCAPS_KERNELS_HPP_
#define QCAPS_KERNELS_HPP_

#include <cstddef>

#include "qcaps/fixed_point.hpp"
#include "qcaps/tensor.hpp"

namespace qcaps {

struct ConvGeometry
{
  std::size_t stride = 1;
  std::size_t padding = 0;
};

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g);

/// Cross-correlation. input [C_in,H,W], weight [C_out,C_in,k,k], bias [C_out]
/// or empty. Zero padding of g.padding on each side (0 = valid).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride);
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvGeometry& g);

/// Votes: out[i,j,:] = W[i,j,:,:] * u[i,:].
/// u [N_in,D_in], W [N_in,N_out,D_out,D_in] -> [N_in,N_out,D_out].
Tensor capsule_affine(const Tensor& u, const Tensor& w);

/// Euclidean norm over the last axis; drops that axis.
Tensor l2_norm_lastdim(const Tensor& t);

void relu_inplace(Tensor& t) noexcept;

/// Serial, loop-by-loop versions of the kernels above. Slow; used as the
/// comparison baseline in tests and benchmarks.
namespace reference {

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvGeometry& g);
Tensor capsule_affine(const Tensor& u, const Tensor& w);
/// Sequential draws through RandomStream::next(); must agree with the
/// parallel quantize_tensor bit for bit.
Tensor quantize_tensor(const Tensor& t, const FixedPointFormat& fmt, RoundingScheme scheme,
                       RandomStream* rng = nullptr);

} // namespace reference

} // namespace qcaps

#endif // QCAPS_KERNELS_HPP_
