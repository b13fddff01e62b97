#ifndef QCAPS_FIXED_POINT_HPP_
#define QCAPS_FIXED_POINT_HPP_

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "qcaps/random_stream.hpp"

namespace qcaps {

class Tensor;

/// Thrown when a value that must be finite is NaN or infinite.
class CorruptData : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Two's-complement fixed-point format <NI.NF>.
struct FixedPointFormat
{
  int integer_bits = 1;
  int fractional_bits = 0;

  constexpr FixedPointFormat() = default;
  FixedPointFormat(int ni, int nf);

  int wordlength() const noexcept { return integer_bits + fractional_bits; }
  double epsilon() const noexcept;
  std::pair<double, double> range() const noexcept;

  friend bool operator==(const FixedPointFormat&, const FixedPointFormat&) = default;
};

enum class RoundingScheme : std::uint8_t
{
  TRN = 0,
  RTN = 1,
  SR = 2,
};

std::string_view to_string(RoundingScheme s) noexcept;
/// Accepts "trn", "rtn", "sr" in any case.
RoundingScheme parse_rounding_scheme(std::string_view name);

double epsilon(const FixedPointFormat& fmt) noexcept;
std::pair<double, double> representable_range(const FixedPointFormat& fmt) noexcept;

/// Rounds x onto the grid of fmt. Out-of-range results saturate to the
/// nearest endpoint. The stream is only read for SR (one draw).
double quantize_value(double x, const FixedPointFormat& fmt, RoundingScheme scheme,
                      RandomStream* rng = nullptr);

/// Elementwise quantize_value. SR consumes exactly one uniform per element,
/// element k using the k-th draw after the stream's current position.
Tensor quantize_tensor(const Tensor& t, const FixedPointFormat& fmt, RoundingScheme scheme,
                       RandomStream* rng = nullptr);

void quantize_inplace(Tensor& t, const FixedPointFormat& fmt, RoundingScheme scheme,
                      RandomStream* rng = nullptr);

/// Format plus scheme: what a quantization insertion point needs.
struct Quantizer
{
  FixedPointFormat format;
  RoundingScheme scheme = RoundingScheme::TRN;
};

} // namespace qcaps

#endif // QCAPS_FIXED_POINT_HPP_
