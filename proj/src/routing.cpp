#include "qcaps/routing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qcaps {

void squash_vector(std::span<const double> s, std::span<double> v) noexcept
{
  double sq = 0.0;
  for (double x : s) sq += x * x;
  if (sq == 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  const double norm = std::sqrt(sq);
  const double scale = sq / (1.0 + sq) / norm;
  for (std::size_t i = 0; i < s.size(); ++i) v[i] = s[i] * scale;
}

Tensor squash(const Tensor& s, const std::optional<Quantizer>& quant, RandomStream* rng)
{
  if (s.rank() == 0 || s.shape().back() == 0) throw std::invalid_argument("squash: last dimension must be >= 1");
  Tensor in = quant ? quantize_tensor(s, quant->format, quant->scheme, rng) : s;
  Tensor out(in.shape());
  const std::size_t d = in.shape().back();
  const std::size_t n = in.size() / d;
  for (std::size_t i = 0; i < n; ++i)
    squash_vector(in.values().subspan(i * d, d), out.values().subspan(i * d, d));
  return out;
}

Tensor routing_softmax(const Tensor& b, const std::optional<Quantizer>& quant, RandomStream* rng)
{
  if (b.rank() != 2) throw std::invalid_argument("routing_softmax: logits must be [N_in, N_out]");
  Tensor c = quant ? quantize_tensor(b, quant->format, quant->scheme, rng) : b;
  const std::size_t nin = c.dim(0), nout = c.dim(1);
  for (std::size_t i = 0; i < nin; ++i) {
    double* row = c.data() + i * nout;
    const double mx = *std::max_element(row, row + nout);
    double sum = 0.0;
    for (std::size_t j = 0; j < nout; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < nout; ++j) row[j] /= sum;
  }
  return c;
}

Tensor dynamic_routing(const Tensor& votes, int iterations, const std::optional<Quantizer>& drq, RandomStream* rng,
                       RoutingState* state)
{
  if (iterations < 1) throw std::invalid_argument("dynamic_routing: iterations must be >= 1");
  if (votes.rank() != 3) throw std::invalid_argument("dynamic_routing: votes must be [N_in, N_out, D]");
  const std::size_t nin = votes.dim(0), nout = votes.dim(1), d = votes.dim(2);

  auto snap = [&](Tensor& t) {
    if (drq) quantize_inplace(t, drq->format, drq->scheme, rng);
  };

  Tensor b({nin, nout});
  Tensor c, s, v, a({nin, nout});
  for (int it = 0; it < iterations; ++it) {
    c = routing_softmax(b);
    snap(c);

    s = Tensor({nout, d});
    for (std::size_t i = 0; i < nin; ++i)
      for (std::size_t j = 0; j < nout; ++j) {
        const double cij = c[i * nout + j];
        const double* u = votes.data() + (i * nout + j) * d;
        double* sj = s.data() + j * d;
        for (std::size_t k = 0; k < d; ++k) sj[k] += cij * u[k];
      }
    snap(s);

    v = squash(s);
    snap(v);

    if (it + 1 == iterations) break;

    for (std::size_t i = 0; i < nin; ++i)
      for (std::size_t j = 0; j < nout; ++j) {
        const double* u = votes.data() + (i * nout + j) * d;
        const double* vj = v.data() + j * d;
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += vj[k] * u[k];
        a[i * nout + j] = dot;
      }
    snap(a);
    for (std::size_t e = 0; e < b.size(); ++e) b[e] += a[e];
    snap(b);
  }

  if (state) {
    state->votes = votes;
    state->logits = b;
    state->coupling = c;
    state->preactivation = s;
    state->output = v;
    state->agreement = a;
  }
  return v;
}

} // namespace qcaps
