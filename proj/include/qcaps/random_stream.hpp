#ifndef QCAPS_RANDOM_STREAM_HPP_
#define QCAPS_RANDOM_STREAM_HPP_

#include <cstdint>

namespace qcaps {

/// Counter-addressed uniform stream. The k-th value depends only on
/// (seed, stream id, k), so blocks of draws can be consumed in parallel.
/// SplitMix64 evaluated at an arbitrary position.
class RandomStream
{
public:
  RandomStream() = default;
  RandomStream(std::uint64_t seed, std::uint64_t stream_id) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }
  std::uint64_t position() const noexcept { return counter_; }

  /// Uniform double in [0, 1) at absolute position k. Does not advance.
  double at(std::uint64_t k) const noexcept;
  double next() noexcept { return at(counter_++); }
  /// Reserves n draws; returns the position of the first.
  std::uint64_t skip(std::uint64_t n) noexcept
  {
    const auto first = counter_;
    counter_ += n;
    return first;
  }

  /// Independent child stream with the same seed.
  RandomStream derive(std::uint64_t tag) const noexcept;

private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z) noexcept;

} // namespace qcaps

#endif // QCAPS_RANDOM_STREAM_HPP_
