#ifndef QCAPS_DATASET_HPP_
#define QCAPS_DATASET_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "qcaps/tensor.hpp"

namespace qcaps {

/// Images [N,C,H,W] in [0,1] and one class index per image.
struct LabeledDataset
{
  Tensor images;
  std::vector<std::uint32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;
  Tensor sample(std::size_t i) const;
  /// First n samples (all when n == 0 or n >= size).
  LabeledDataset head(std::size_t n) const;
};

/// IDX pair: images magic 0x00000803, labels magic 0x00000801, big-endian
/// 32-bit dimensions, unsigned bytes. Pixels are scaled by 1/255.
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Writes the inverse of load_idx; pixels are rounded to the nearest byte.
void save_idx(const LabeledDataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

} // namespace qcaps

#endif // QCAPS_DATASET_HPP_
