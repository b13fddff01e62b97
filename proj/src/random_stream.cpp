#include "qcaps/random_stream.hpp"

namespace qcaps {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t z) noexcept
{
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
    : seed_(seed), stream_(stream_id), key_(mix64(seed + kGolden) ^ mix64(stream_id * kGolden + 0x632BE59BD9B4E019ULL))
{
}

double RandomStream::at(std::uint64_t k) const noexcept
{
  const std::uint64_t bits = mix64(key_ + (k + 1) * kGolden);
  // top 53 bits -> [0, 1)
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

RandomStream RandomStream::derive(std::uint64_t tag) const noexcept
{
  return RandomStream(seed_, mix64(stream_ ^ mix64(tag + kGolden)));
}

} // namespace qcaps
