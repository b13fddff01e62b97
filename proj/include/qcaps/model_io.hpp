#ifndef QCAPS_MODEL_IO_HPP_
#define QCAPS_MODEL_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcaps/inference.hpp"
#include "qcaps/model.hpp"

namespace qcaps {

/// Malformed file content: bad magic/version, shape or length mismatch.
class FormatError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// The file system refused a read or write.
class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kManifestMagic = "QCAPS-MANIFEST";
inline constexpr int kManifestVersion = 1;

struct TensorRecord
{
  std::string name;
  std::string role; // "weight" | "bias"
  std::size_t layer = 0;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

struct WeightManifest
{
  int version = kManifestVersion;
  std::string architecture;
  std::vector<TensorRecord> tensors;
};

nlohmann::json to_json(const WeightManifest& m);
/// Checks magic, version and per-record invariants (unique names, length
/// equal to 4 * elements, non-overlapping ranges).
WeightManifest manifest_from_json(const nlohmann::json& j);

/// Tensors in manifest order: per layer, weight then bias.
WeightManifest make_manifest(const CapsModel& model);

/// Manifest JSON + blob of little-endian float32 values.
void save_model(const CapsModel& model, const std::filesystem::path& manifest, const std::filesystem::path& blob);

/// Fills the parameters of `architecture` (a freshly built model) from the
/// manifest and blob.
CapsModel load_model(const std::filesystem::path& manifest, const std::filesystem::path& blob, CapsModel architecture);

/// Architecture documents: an explicit layer list, or {"preset": ...}.
nlohmann::json architecture_to_json(const CapsModel& model);
CapsModel architecture_from_json(const nlohmann::json& j);
/// A JSON file path, or a preset spec "shallowcaps[:width]" / "deepcaps_like".
CapsModel resolve_architecture(const std::string& path_or_preset);

nlohmann::json to_json(const QuantConfig& cfg);
QuantConfig quant_config_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Writes j.dump(2) plus a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace qcaps

#endif // QCAPS_MODEL_IO_HPP_
