#include <stdexcept>

#include "qcaps/kernels.hpp"

namespace qcaps::reference {

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvGeometry& g)
{
  if (input.rank() != 3 || weight.rank() != 4 || weight.dim(1) != input.dim(0))
    throw std::invalid_argument("reference::conv2d: shape mismatch");
  const long cin = static_cast<long>(input.dim(0)), h = static_cast<long>(input.dim(1)), w = static_cast<long>(input.dim(2));
  const long cout = static_cast<long>(weight.dim(0)), k = static_cast<long>(weight.dim(2));
  const long pad = static_cast<long>(g.padding), stride = static_cast<long>(g.stride);
  const long oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;

  Tensor out({static_cast<std::size_t>(cout), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  for (long co = 0; co < cout; ++co)
    for (long oy = 0; oy < oh; ++oy)
      for (long ox = 0; ox < ow; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[co];
        for (long ci = 0; ci < cin; ++ci)
          for (long ky = 0; ky < k; ++ky)
            for (long kx = 0; kx < k; ++kx) {
              const long iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += weight[((co * cin + ci) * k + ky) * k + kx] * input[(ci * h + iy) * w + ix];
            }
        out[(co * oh + oy) * ow + ox] = acc;
      }
  return out;
}

Tensor capsule_affine(const Tensor& u, const Tensor& w)
{
  if (u.rank() != 2 || w.rank() != 4 || w.dim(0) != u.dim(0) || w.dim(3) != u.dim(1))
    throw std::invalid_argument("reference::capsule_affine: shape mismatch");
  const std::size_t nin = w.dim(0), nout = w.dim(1), dout = w.dim(2), din = w.dim(3);
  Tensor out({nin, nout, dout});
  for (std::size_t i = 0; i < nin; ++i)
    for (std::size_t j = 0; j < nout; ++j)
      for (std::size_t r = 0; r < dout; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < din; ++c) acc += w[((i * nout + j) * dout + r) * din + c] * u[i * din + c];
        out[(i * nout + j) * dout + r] = acc;
      }
  return out;
}

Tensor quantize_tensor(const Tensor& t, const FixedPointFormat& fmt, RoundingScheme scheme, RandomStream* rng)
{
  Tensor out = t;
  for (double& v : out.values()) v = quantize_value(v, fmt, scheme, rng);
  return out;
}

} // namespace qcaps::reference
