#include "qcaps/kernels.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace qcaps {

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g)
{
  if (g.stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  const std::size_t padded = in + 2 * g.padding;
  if (kernel == 0 || kernel > padded)
    throw std::invalid_argument("conv2d: kernel " + std::to_string(kernel) + " larger than padded extent " +
                                std::to_string(padded));
  return (padded - kernel) / g.stride + 1;
}

namespace {

void check_conv_shapes(const Tensor& input, const Tensor& weight, const Tensor& bias)
{
  if (input.rank() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W], got " + shape_to_string(input.shape()));
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3))
    throw std::invalid_argument("conv2d: weight must be [C_out,C_in,k,k], got " + shape_to_string(weight.shape()));
  if (weight.dim(1) != input.dim(0))
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, input has " +
                                std::to_string(input.dim(0)));
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))
    throw std::invalid_argument("conv2d: bias must be [C_out], got " + shape_to_string(bias.shape()));
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride)
{
  return conv2d(input, weight, bias, ConvGeometry{stride, 0});
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvGeometry& g)
{
  check_conv_shapes(input, weight, bias);
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  const std::size_t oh = conv_output_extent(h, k, g), ow = conv_output_extent(w, k, g);
  const auto pad = static_cast<std::int64_t>(g.padding);
  const auto stride = static_cast<std::int64_t>(g.stride);

  Tensor out({cout, oh, ow});
  const double* in = input.data();
  const double* wt = weight.data();
  double* o = out.data();
  const bool has_bias = !bias.empty();

#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t co = 0; co < static_cast<std::int64_t>(cout); ++co) {
    for (std::int64_t oy = 0; oy < static_cast<std::int64_t>(oh); ++oy) {
      double* row = o + (co * oh + oy) * ow;
      const double b = has_bias ? bias[co] : 0.0;
      for (std::size_t ox = 0; ox < ow; ++ox) row[ox] = b;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* plane = in + ci * h * w;
        const double* kern = wt + (co * cin + ci) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::int64_t iy = oy * stride + static_cast<std::int64_t>(ky) - pad;
          if (iy < 0 || iy >= static_cast<std::int64_t>(h)) continue;
          const double* irow = plane + iy * w;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double kv = kern[ky * k + kx];
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::int64_t ix = static_cast<std::int64_t>(ox) * stride + static_cast<std::int64_t>(kx) - pad;
              if (ix < 0 || ix >= static_cast<std::int64_t>(w)) continue;
              row[ox] += kv * irow[ix];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor capsule_affine(const Tensor& u, const Tensor& w)
{
  if (u.rank() != 2 || w.rank() != 4 || w.dim(0) != u.dim(0) || w.dim(3) != u.dim(1))
    throw std::invalid_argument("capsule_affine: u " + shape_to_string(u.shape()) + " incompatible with W " +
                                shape_to_string(w.shape()));
  const std::size_t nin = w.dim(0), nout = w.dim(1), dout = w.dim(2), din = w.dim(3);
  Tensor out({nin, nout, dout});
  const double* uv = u.data();
  const double* wv = w.data();
  double* o = out.data();

#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(nin); ++i) {
    const double* ui = uv + i * din;
    for (std::size_t j = 0; j < nout; ++j) {
      const double* wij = wv + (i * nout + j) * dout * din;
      double* oij = o + (i * nout + j) * dout;
      for (std::size_t r = 0; r < dout; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < din; ++c) acc += wij[r * din + c] * ui[c];
        oij[r] = acc;
      }
    }
  }
  return out;
}

Tensor l2_norm_lastdim(const Tensor& t)
{
  if (t.rank() == 0 || t.shape().back() == 0) throw std::invalid_argument("l2_norm_lastdim: last dimension must be >= 1");
  const std::size_t d = t.shape().back();
  Shape shape(t.shape().begin(), t.shape().end() - 1);
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double ss = 0.0;
    for (std::size_t c = 0; c < d; ++c) ss += t[i * d + c] * t[i * d + c];
    out[i] = std::sqrt(ss);
  }
  return out;
}

void relu_inplace(Tensor& t) noexcept
{
  for (double& v : t.values())
    if (v < 0.0) v = 0.0;
}

} // namespace qcaps
