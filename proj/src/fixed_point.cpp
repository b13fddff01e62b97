#include "qcaps/fixed_point.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "qcaps/tensor.hpp"

namespace qcaps {

FixedPointFormat::FixedPointFormat(int ni, int nf) : integer_bits(ni), fractional_bits(nf)
{
  if (ni < 1 || ni > 62)
    throw std::invalid_argument("fixed-point integer bits must be in [1, 62], got " + std::to_string(ni));
  if (nf < 0 || nf > 60)
    throw std::invalid_argument("fixed-point fractional bits must be in [0, 60], got " + std::to_string(nf));
}

double FixedPointFormat::epsilon() const noexcept
{
  return std::ldexp(1.0, -fractional_bits);
}

std::pair<double, double> FixedPointFormat::range() const noexcept
{
  const double half = std::ldexp(1.0, integer_bits - 1);
  return {-half, half - epsilon()};
}

double epsilon(const FixedPointFormat& fmt) noexcept
{
  return fmt.epsilon();
}

std::pair<double, double> representable_range(const FixedPointFormat& fmt) noexcept
{
  return fmt.range();
}

std::string_view to_string(RoundingScheme s) noexcept
{
  switch (s) {
  case RoundingScheme::TRN: return "TRN";
  case RoundingScheme::RTN: return "RTN";
  case RoundingScheme::SR: return "SR";
  }
  return "?";
}

RoundingScheme parse_rounding_scheme(std::string_view name)
{
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "trn") return RoundingScheme::TRN;
  if (lower == "rtn") return RoundingScheme::RTN;
  if (lower == "sr") return RoundingScheme::SR;
  throw std::invalid_argument("unknown rounding scheme '" + std::string(name) + "'");
}

namespace detail {

// u is the uniform draw for SR; ignored otherwise.
double round_on_grid(double x, double eps, double lo, double hi, RoundingScheme scheme, double u) noexcept
{
  const double scaled = x / eps;
  const double fl = std::floor(scaled);
  double k = fl;
  switch (scheme) {
  case RoundingScheme::TRN: break;
  case RoundingScheme::RTN: k = std::floor(scaled + 0.5); break;
  case RoundingScheme::SR:
    if (u < scaled - fl) k = fl + 1.0;
    break;
  }
  return std::clamp(k * eps, lo, hi);
}

} // namespace detail

double quantize_value(double x, const FixedPointFormat& fmt, RoundingScheme scheme, RandomStream* rng)
{
  if (!std::isfinite(x))
    throw CorruptData("quantize_value: non-finite input");
  double u = 0.0;
  if (scheme == RoundingScheme::SR) {
    if (!rng) throw std::invalid_argument("stochastic rounding requires a random stream");
    u = rng->next();
  }
  const auto [lo, hi] = fmt.range();
  return detail::round_on_grid(x, fmt.epsilon(), lo, hi, scheme, u);
}

void quantize_inplace(Tensor& t, const FixedPointFormat& fmt, RoundingScheme scheme, RandomStream* rng)
{
  if (!t.all_finite())
    throw CorruptData("quantize_tensor: non-finite element in tensor of shape " + shape_to_string(t.shape()));
  if (scheme == RoundingScheme::SR && !rng)
    throw std::invalid_argument("stochastic rounding requires a random stream");

  const double eps = fmt.epsilon();
  const auto [lo, hi] = fmt.range();
  const auto n = static_cast<std::int64_t>(t.size());
  double* v = t.data();

  if (scheme == RoundingScheme::SR) {
    const std::uint64_t first = rng->skip(static_cast<std::uint64_t>(n));
    const RandomStream& draws = *rng;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
      v[i] = detail::round_on_grid(v[i], eps, lo, hi, scheme, draws.at(first + static_cast<std::uint64_t>(i)));
  } else {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
      v[i] = detail::round_on_grid(v[i], eps, lo, hi, scheme, 0.0);
  }
}

Tensor quantize_tensor(const Tensor& t, const FixedPointFormat& fmt, RoundingScheme scheme, RandomStream* rng)
{
  Tensor out = t;
  quantize_inplace(out, fmt, scheme, rng);
  return out;
}

} // namespace qcaps
