#include "qcaps/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "qcaps/model_io.hpp"

namespace qcaps {

Shape LabeledDataset::sample_shape() const
{
  return Shape(images.shape().begin() + 1, images.shape().end());
}

Tensor LabeledDataset::sample(std::size_t i) const
{
  const Shape s = sample_shape();
  const std::size_t n = shape_size(s);
  auto first = images.values().begin() + static_cast<std::ptrdiff_t>(i * n);
  return Tensor(s, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

LabeledDataset LabeledDataset::head(std::size_t n) const
{
  if (n == 0 || n >= size()) return *this;
  Shape s = images.shape();
  const std::size_t per = shape_size(sample_shape());
  s[0] = n;
  LabeledDataset out;
  out.images = Tensor(s, std::vector<double>(images.values().begin(), images.values().begin() + static_cast<std::ptrdiff_t>(n * per)));
  out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path)
{
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(path.string() + ": truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v)
{
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

std::ifstream open_input(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::vector<unsigned char> read_bytes(std::istream& in, std::size_t n, const std::filesystem::path& path)
{
  std::vector<unsigned char> buf(n);
  if (n && !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n)))
    throw FormatError(path.string() + ": truncated IDX payload (expected " + std::to_string(n) + " bytes)");
  return buf;
}

} // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path)
{
  auto img = open_input(images_path);
  if (const auto magic = read_be32(img, images_path); magic != 0x00000803)
    throw FormatError(images_path.string() + ": bad IDX image magic");
  const std::uint32_t n = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);

  auto lab = open_input(labels_path);
  if (const auto magic = read_be32(lab, labels_path); magic != 0x00000801)
    throw FormatError(labels_path.string() + ": bad IDX label magic");
  const std::uint32_t nl = read_be32(lab, labels_path);
  if (nl != n)
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) + " labels");

  const std::size_t count = std::size_t{n} * rows * cols;
  const auto pixels = read_bytes(img, count, images_path);
  const auto labels = read_bytes(lab, n, labels_path);

  LabeledDataset out;
  std::vector<double> data(count);
  std::transform(pixels.begin(), pixels.end(), data.begin(), [](unsigned char p) { return p / 255.0; });
  out.images = Tensor({n, 1, rows, cols}, std::move(data));
  out.labels.assign(labels.begin(), labels.end());
  return out;
}

void save_idx(const LabeledDataset& data, const std::filesystem::path& images_path, const std::filesystem::path& labels_path)
{
  const Shape& s = data.images.shape();
  if (s.size() != 4 || s[1] != 1) throw std::invalid_argument("save_idx: images must be [N,1,H,W]");
  if (s[0] != data.labels.size()) throw std::invalid_argument("save_idx: image/label count mismatch");

  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot write " + images_path.string());
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(s[0]));
  write_be32(img, static_cast<std::uint32_t>(s[2]));
  write_be32(img, static_cast<std::uint32_t>(s[3]));
  for (double v : data.images.values())
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));

  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot write " + labels_path.string());
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(s[0]));
  for (auto l : data.labels) lab.put(static_cast<char>(static_cast<unsigned char>(l)));
  if (!img || !lab) throw IoError("write failed for " + images_path.string());
}

} // namespace qcaps
