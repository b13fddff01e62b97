#include "qcaps/model_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace qcaps {

using nlohmann::json;

namespace {

std::uint32_t to_little_endian(std::uint32_t v) noexcept
{
  if constexpr (std::endian::native == std::endian::big)
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  return v;
}

template <class T>
T field(const json& j, const char* key, const std::string& where)
{
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": field '" + key + "': " + e.what());
  }
}

template <class T>
T field_or(const json& j, const char* key, T fallback, const std::string& where)
{
  return j.contains(key) ? field<T>(j, key, where) : fallback;
}

} // namespace

json to_json(const WeightManifest& m)
{
  json tensors = json::array();
  for (const auto& t : m.tensors)
    tensors.push_back({{"name", t.name},
                       {"role", t.role},
                       {"layer", t.layer},
                       {"shape", t.shape},
                       {"offset", t.offset},
                       {"length", t.length}});
  return json{{"magic", kManifestMagic}, {"version", m.version}, {"architecture", m.architecture}, {"tensors", tensors}};
}

WeightManifest manifest_from_json(const json& j)
{
  if (!j.is_object()) throw FormatError("manifest: not a JSON object");
  if (field<std::string>(j, "magic", "manifest") != kManifestMagic) throw FormatError("manifest: bad magic");
  WeightManifest m;
  m.version = field<int>(j, "version", "manifest");
  if (m.version != kManifestVersion) throw FormatError("manifest: unsupported version " + std::to_string(m.version));
  m.architecture = field<std::string>(j, "architecture", "manifest");

  std::set<std::string> names;
  for (const auto& rec : field<json>(j, "tensors", "manifest")) {
    TensorRecord t;
    t.name = field<std::string>(rec, "name", "manifest tensor");
    const std::string where = "manifest tensor '" + t.name + "'";
    t.role = field<std::string>(rec, "role", where);
    t.layer = field<std::size_t>(rec, "layer", where);
    t.shape = field<Shape>(rec, "shape", where);
    t.offset = field<std::uint64_t>(rec, "offset", where);
    t.length = field<std::uint64_t>(rec, "length", where);
    if (t.role != "weight" && t.role != "bias") throw FormatError(where + ": role must be 'weight' or 'bias'");
    if (t.length != 4 * shape_size(t.shape))
      throw FormatError(where + ": byte length " + std::to_string(t.length) + " != 4 x " +
                        std::to_string(shape_size(t.shape)) + " elements");
    if (!names.insert(t.name).second) throw FormatError("manifest: duplicate tensor name '" + t.name + "'");
    m.tensors.push_back(std::move(t));
  }

  std::vector<const TensorRecord*> by_offset;
  for (const auto& t : m.tensors) by_offset.push_back(&t);
  std::sort(by_offset.begin(), by_offset.end(), [](auto* a, auto* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_offset.size(); ++i)
    if (by_offset[i - 1]->offset + by_offset[i - 1]->length > by_offset[i]->offset)
      throw FormatError("manifest: tensors '" + by_offset[i - 1]->name + "' and '" + by_offset[i]->name + "' overlap");
  return m;
}

WeightManifest make_manifest(const CapsModel& model)
{
  WeightManifest m;
  m.architecture = model.architecture();
  std::uint64_t offset = 0;
  auto add = [&](std::size_t l, const char* role, const Tensor& t) {
    TensorRecord r{model.layer(l).name + "." + role, role, l, t.shape(), offset, 4 * t.size()};
    offset += r.length;
    m.tensors.push_back(std::move(r));
  };
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    add(l, "weight", model.weight(l));
    if (!model.bias_shape(l).empty()) add(l, "bias", model.bias(l));
  }
  return m;
}

void save_model(const CapsModel& model, const std::filesystem::path& manifest_path, const std::filesystem::path& blob_path)
{
  const WeightManifest m = make_manifest(model);
  std::string bytes;
  for (const auto& rec : m.tensors) {
    const Tensor& t = rec.role == "weight" ? model.weight(rec.layer) : model.bias(rec.layer);
    for (double v : t.values()) {
      const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      char raw[4];
      std::memcpy(raw, &bits, 4);
      bytes.append(raw, 4);
    }
  }
  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot write " + blob_path.string());
  blob.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!blob) throw IoError("write failed for " + blob_path.string());
  write_json_file(manifest_path, to_json(m));
}

CapsModel load_model(const std::filesystem::path& manifest_path, const std::filesystem::path& blob_path, CapsModel model)
{
  const WeightManifest m = manifest_from_json(read_json_file(manifest_path));
  if (m.architecture != model.architecture())
    throw FormatError("manifest architecture '" + m.architecture + "' does not match '" + model.architecture() + "'");

  std::size_t expected = 0;
  for (std::size_t l = 0; l < model.num_layers(); ++l) expected += model.bias_shape(l).empty() ? 1 : 2;
  if (m.tensors.size() != expected)
    throw FormatError("manifest lists " + std::to_string(m.tensors.size()) + " tensors, architecture '" +
                      model.architecture() + "' expects " + std::to_string(expected));

  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot open " + blob_path.string());
  const std::string bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());

  std::set<std::pair<std::size_t, std::string>> seen;
  for (const auto& rec : m.tensors) {
    if (rec.layer >= model.num_layers())
      throw FormatError("tensor '" + rec.name + "': layer " + std::to_string(rec.layer) + " out of range");
    const Shape& want = rec.role == "weight" ? model.weight_shape(rec.layer) : model.bias_shape(rec.layer);
    if (rec.shape != want)
      throw FormatError("tensor '" + rec.name + "': shape " + shape_to_string(rec.shape) + " but layer " +
                        std::to_string(rec.layer) + " (" + model.layer(rec.layer).name + ") expects " +
                        (want.empty() ? std::string("no ") + rec.role : shape_to_string(want)));
    if (!seen.emplace(rec.layer, rec.role).second)
      throw FormatError("tensor '" + rec.name + "': duplicate " + rec.role + " for layer " + std::to_string(rec.layer));
    if (rec.offset + rec.length > bytes.size())
      throw FormatError("blob " + blob_path.string() + " truncated: tensor '" + rec.name + "' needs bytes up to " +
                        std::to_string(rec.offset + rec.length) + ", blob has " + std::to_string(bytes.size()));

    std::vector<double> data(rec.length / 4);
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + rec.offset + 4 * i, 4);
      data[i] = std::bit_cast<float>(to_little_endian(bits));
    }
    Tensor t(rec.shape, std::move(data));
    if (!t.all_finite()) throw FormatError("tensor '" + rec.name + "' contains non-finite values");
    if (rec.role == "weight")
      model.set_weight(rec.layer, std::move(t));
    else
      model.set_bias(rec.layer, std::move(t));
  }
  return model;
}

json architecture_to_json(const CapsModel& model)
{
  json layers = json::array();
  for (const auto& s : model.layers()) {
    layers.push_back({{"name", s.name},
                      {"kind", std::string(to_string(s.kind))},
                      {"channels", s.channels},
                      {"caps_dim", s.caps_dim},
                      {"kernel", s.kernel},
                      {"stride", s.stride},
                      {"padding", s.padding},
                      {"has_bias", s.has_bias},
                      {"uses_dynamic_routing", s.uses_dynamic_routing},
                      {"routing_iterations", s.routing_iterations},
                      {"inputs", s.inputs}});
  }
  return json{{"architecture", model.architecture()},
              {"input_shape", model.input_shape()},
              {"num_classes", model.num_classes()},
              {"layers", layers}};
}

CapsModel architecture_from_json(const json& j)
{
  const std::string where = "architecture";
  if (!j.is_object()) throw FormatError("architecture: not a JSON object");
  const std::size_t classes = field_or<std::size_t>(j, "num_classes", 10, where);
  const Shape input = field_or<Shape>(j, "input_shape", Shape{1, 28, 28}, where);

  if (j.contains("preset")) {
    const auto preset = field<std::string>(j, "preset", where);
    if (preset == "shallowcaps") return build_shallowcaps(classes, input, field_or<double>(j, "width", 1.0, where));
    if (preset == "deepcaps_like") {
      DeepCapsConfig cfg;
      cfg.input_shape = input;
      cfg.num_classes = classes;
      cfg.conv_channels = field_or<std::size_t>(j, "conv_channels", cfg.conv_channels, where);
      cfg.class_caps_dim = field_or<std::size_t>(j, "class_caps_dim", cfg.class_caps_dim, where);
      cfg.routing_iterations = field_or<int>(j, "routing_iterations", cfg.routing_iterations, where);
      if (j.contains("caps_types") || j.contains("caps_dims")) {
        const auto types = field_or<std::vector<std::size_t>>(j, "caps_types", {8, 8, 8, 8}, where);
        const auto dims = field_or<std::vector<std::size_t>>(j, "caps_dims", {4, 8, 8, 8}, where);
        if (types.size() != 4 || dims.size() != 4) throw FormatError("architecture: caps_types/caps_dims need 4 entries");
        std::copy(types.begin(), types.end(), cfg.caps_types);
        std::copy(dims.begin(), dims.end(), cfg.caps_dims);
      }
      return build_deepcaps_like(cfg);
    }
    throw FormatError("architecture: unknown preset '" + preset + "'");
  }

  std::vector<LayerSpec> layers;
  for (const auto& lj : field<json>(j, "layers", where)) {
    LayerSpec s;
    s.name = field<std::string>(lj, "name", "architecture layer");
    const std::string lw = "architecture layer '" + s.name + "'";
    try {
      s.kind = parse_layer_kind(field<std::string>(lj, "kind", lw));
    } catch (const std::invalid_argument& e) {
      throw FormatError(lw + ": " + e.what());
    }
    s.channels = field<std::size_t>(lj, "channels", lw);
    s.caps_dim = field_or<std::size_t>(lj, "caps_dim", 1, lw);
    s.kernel = field_or<std::size_t>(lj, "kernel", 1, lw);
    s.stride = field_or<std::size_t>(lj, "stride", 1, lw);
    s.padding = field_or<std::size_t>(lj, "padding", 0, lw);
    s.has_bias = field_or<bool>(lj, "has_bias", true, lw);
    s.uses_dynamic_routing = field_or<bool>(lj, "uses_dynamic_routing", false, lw);
    s.routing_iterations = field_or<int>(lj, "routing_iterations", 3, lw);
    s.inputs = field_or<std::vector<int>>(lj, "inputs", {}, lw);
    layers.push_back(std::move(s));
  }
  return CapsModel(input, classes, std::move(layers), field_or<std::string>(j, "architecture", "custom", where));
}

CapsModel resolve_architecture(const std::string& spec)
{
  if (std::filesystem::exists(spec)) return architecture_from_json(read_json_file(spec));
  const auto colon = spec.find(':');
  const std::string name = spec.substr(0, colon);
  json j{{"preset", name}};
  if (colon != std::string::npos) {
    try {
      j["width"] = std::stod(spec.substr(colon + 1));
    } catch (const std::exception&) {
      throw FormatError("architecture preset '" + spec + "': bad width");
    }
  }
  if (name != "shallowcaps" && name != "deepcaps_like")
    throw IoError("architecture '" + spec + "' is neither a readable file nor a known preset");
  return architecture_from_json(j);
}

json to_json(const QuantConfig& cfg)
{
  json dr = json::array();
  for (const auto& b : cfg.routing_bits) dr.push_back(b ? json(*b) : json(nullptr));
  return json{{"scheme", std::string(to_string(cfg.scheme))},
              {"weight_bits", cfg.weight_bits},
              {"activation_bits", cfg.activation_bits},
              {"routing_bits", dr}};
}

QuantConfig quant_config_from_json(const json& j)
{
  const std::string where = "quant config";
  QuantConfig cfg;
  try {
    cfg.scheme = parse_rounding_scheme(field<std::string>(j, "scheme", where));
  } catch (const std::invalid_argument& e) {
    throw FormatError(where + ": " + e.what());
  }
  cfg.weight_bits = field<std::vector<int>>(j, "weight_bits", where);
  cfg.activation_bits = field<std::vector<int>>(j, "activation_bits", where);
  for (const auto& b : field<json>(j, "routing_bits", where))
    cfg.routing_bits.push_back(b.is_null() ? std::nullopt : std::optional<int>(b.get<int>()));
  return cfg;
}

json read_json_file(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json_file(const std::filesystem::path& path, const json& j)
{
  write_text_file(path, j.dump(2) + "\n");
}

} // namespace qcaps
