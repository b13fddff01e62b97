#include "qcaps/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "qcaps/kernels.hpp"

namespace qcaps {

std::string_view to_string(LayerKind k) noexcept
{
  switch (k) {
  case LayerKind::Conv: return "conv";
  case LayerKind::PrimaryCaps: return "primary_caps";
  case LayerKind::ConvCaps: return "conv_caps";
  case LayerKind::FullyConnectedCaps: return "fc_caps";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name)
{
  if (name == "conv") return LayerKind::Conv;
  if (name == "primary_caps") return LayerKind::PrimaryCaps;
  if (name == "conv_caps") return LayerKind::ConvCaps;
  if (name == "fc_caps") return LayerKind::FullyConnectedCaps;
  throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

namespace {

[[noreturn]] void bad_layer(const LayerSpec& spec, std::size_t l, const std::string& what)
{
  throw std::invalid_argument("layer " + std::to_string(l) + " (" + spec.name + "): " + what);
}

Shape concat_shapes(const std::vector<Shape>& parts, const LayerSpec& spec, std::size_t l)
{
  Shape out = parts.front();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const Shape& s = parts[p];
    if (s.size() != out.size() || !std::equal(s.begin() + 1, s.end(), out.begin() + 1))
      bad_layer(spec, l, "cannot concatenate inputs " + shape_to_string(out) + " and " + shape_to_string(s));
    out[0] += s[0];
  }
  return out;
}

} // namespace

CapsModel::CapsModel(Shape input_shape, std::size_t num_classes, std::vector<LayerSpec> layers, std::string architecture)
    : architecture_(std::move(architecture)), input_shape_(std::move(input_shape)), num_classes_(num_classes),
      layers_(std::move(layers))
{
  if (input_shape_.size() != 3) throw std::invalid_argument("model input shape must be [C,H,W]");
  if (layers_.empty()) throw std::invalid_argument("model must have at least one layer");

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerSpec& spec = layers_[l];
    std::vector<int> inputs = spec.inputs;
    if (inputs.empty()) inputs.push_back(static_cast<int>(l) - 1);
    std::vector<Shape> parts;
    for (int src : inputs) {
      if (src < -1 || src >= static_cast<int>(l)) bad_layer(spec, l, "input index " + std::to_string(src) + " is not an earlier layer");
      parts.push_back(src < 0 ? input_shape_ : output_shapes_[static_cast<std::size_t>(src)]);
    }
    const Shape in = concat_shapes(parts, spec, l);

    if (spec.channels == 0) bad_layer(spec, l, "channel/capsule count must be >= 1");
    if (spec.caps_dim == 0) bad_layer(spec, l, "capsule dimension must be >= 1");
    if (spec.routing_iterations < 1) bad_layer(spec, l, "routing iterations must be >= 1");
    if (spec.uses_dynamic_routing && spec.kind != LayerKind::ConvCaps && spec.kind != LayerKind::FullyConnectedCaps)
      bad_layer(spec, l, "only ConvCaps and FullyConnectedCaps layers can route");
    if (spec.uses_dynamic_routing && spec.has_bias) bad_layer(spec, l, "routing layers carry no bias");

    Shape wshape, bshape, out;
    switch (spec.kind) {
    case LayerKind::Conv:
    case LayerKind::PrimaryCaps:
    case LayerKind::ConvCaps: {
      if (in.size() != 3 && in.size() != 4) bad_layer(spec, l, "needs a spatial input, got " + shape_to_string(in));
      const std::size_t h = in[in.size() - 2], w = in[in.size() - 1];
      const std::size_t cin = shape_size(in) / (h * w);
      const ConvGeometry g{spec.stride, spec.padding};
      const std::size_t oh = conv_output_extent(h, spec.kernel, g), ow = conv_output_extent(w, spec.kernel, g);
      const std::size_t types = spec.channels, dim = spec.caps_dim;
      if (spec.kind == LayerKind::Conv) {
        wshape = {types, cin, spec.kernel, spec.kernel};
        out = {types, oh, ow};
        if (spec.has_bias) bshape = {types};
      } else if (!spec.uses_dynamic_routing) {
        wshape = {types * dim, cin, spec.kernel, spec.kernel};
        out = {types, dim, oh, ow};
        if (spec.has_bias) bshape = {types * dim};
      } else {
        const std::size_t tin = in.size() == 4 ? in[0] : cin;
        const std::size_t din = in.size() == 4 ? in[1] : 1;
        wshape = {tin, types * dim, din, spec.kernel, spec.kernel};
        out = {types, dim, oh, ow};
      }
      break;
    }
    case LayerKind::FullyConnectedCaps: {
      std::size_t nin = 0, din = 0;
      if (in.size() == 4) {
        nin = in[0] * in[2] * in[3];
        din = in[1];
      } else if (in.size() == 2) {
        nin = in[0];
        din = in[1];
      } else {
        bad_layer(spec, l, "needs capsule input [N,D] or [T,D,H,W], got " + shape_to_string(in));
      }
      wshape = {nin, spec.channels, spec.caps_dim, din};
      out = {spec.channels, spec.caps_dim};
      if (spec.has_bias) bshape = {spec.channels, spec.caps_dim};
      break;
    }
    }

    resolved_inputs_.push_back(std::move(inputs));
    input_shapes_.push_back(in);
    output_shapes_.push_back(out);
    weight_shapes_.push_back(wshape);
    bias_shapes_.push_back(bshape);
    weights_.emplace_back(wshape);
    biases_.push_back(bshape.empty() ? Tensor() : Tensor(bshape));
  }

  const LayerSpec& last = layers_.back();
  if (last.kind != LayerKind::FullyConnectedCaps || last.channels != num_classes_)
    throw std::invalid_argument("last layer must be a FullyConnectedCaps layer with one capsule per class (" +
                                std::to_string(num_classes_) + ")");
}

void CapsModel::set_weight(std::size_t l, Tensor w)
{
  if (w.shape() != weight_shapes_.at(l))
    throw std::invalid_argument("layer " + std::to_string(l) + " (" + layers_[l].name + ") weight: expected shape " +
                                shape_to_string(weight_shapes_[l]) + ", got " + shape_to_string(w.shape()));
  weights_[l] = std::move(w);
}

void CapsModel::set_bias(std::size_t l, Tensor b)
{
  if (bias_shapes_.at(l).empty() || b.shape() != bias_shapes_[l])
    throw std::invalid_argument("layer " + std::to_string(l) + " (" + layers_[l].name + ") bias: expected shape " +
                                (bias_shapes_[l].empty() ? std::string("<none>") : shape_to_string(bias_shapes_[l])) +
                                ", got " + shape_to_string(b.shape()));
  biases_[l] = std::move(b);
}

std::uint64_t CapsModel::param_count(std::size_t l) const
{
  return weights_.at(l).size() + biases_.at(l).size();
}

std::uint64_t CapsModel::activation_count(std::size_t l) const
{
  return shape_size(output_shapes_.at(l));
}

std::vector<std::uint64_t> CapsModel::param_counts() const
{
  std::vector<std::uint64_t> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) out.push_back(param_count(l));
  return out;
}

std::vector<std::uint64_t> CapsModel::activation_counts() const
{
  std::vector<std::uint64_t> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) out.push_back(activation_count(l));
  return out;
}

std::vector<bool> CapsModel::routing_layers() const
{
  std::vector<bool> out;
  for (const auto& spec : layers_) out.push_back(spec.uses_dynamic_routing);
  return out;
}

void CapsModel::randomize(std::uint64_t seed, double gain)
{
  std::mt19937_64 gen(seed);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Shape& ws = weight_shapes_[l];
    std::size_t fan_in = 1;
    double k = 1.0;
    switch (layers_[l].kind) {
    case LayerKind::Conv: fan_in = ws[1] * ws[2] * ws[3]; k = 0.6; break;
    case LayerKind::FullyConnectedCaps: fan_in = ws[3]; k = 1.0; break;
    default: fan_in = ws.size() == 5 ? ws[2] * ws[3] * ws[4] : ws[1] * ws[2] * ws[3]; k = 4.0; break;
    }
    const double a = gain * k / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-a, a);
    // Round through float: parameters are FP32 values.
    for (double& v : weights_[l].values()) v = static_cast<float>(dist(gen));
    for (double& v : biases_[l].values()) v = 0.0;
  }
}

CapsModel build_shallowcaps(std::size_t num_classes, Shape input_shape, double width)
{
  if (!(width > 0.0 && width <= 1.0)) throw std::invalid_argument("width factor must be in (0, 1]");
  const auto scaled = [width](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(n) * width)));
  };
  std::vector<LayerSpec> layers(3);
  layers[0] = {.name = "conv1", .kind = LayerKind::Conv, .channels = scaled(256), .kernel = 9, .stride = 1};
  layers[1] = {.name = "primarycaps", .kind = LayerKind::PrimaryCaps, .channels = scaled(32), .caps_dim = 8, .kernel = 9,
               .stride = 2};
  layers[2] = {.name = "digitcaps", .kind = LayerKind::FullyConnectedCaps, .channels = num_classes, .caps_dim = 16,
               .has_bias = false, .uses_dynamic_routing = true, .routing_iterations = 3};
  return CapsModel(std::move(input_shape), num_classes, std::move(layers), "shallowcaps");
}

CapsModel build_deepcaps_like(const DeepCapsConfig& cfg)
{
  if (cfg.conv_channels == 0 || cfg.caps_kernel == 0 || cfg.class_caps_dim == 0 || cfg.num_classes == 0)
    throw std::invalid_argument("deepcaps config: counts must be >= 1");
  for (int b = 0; b < 4; ++b)
    if (cfg.caps_types[b] == 0 || cfg.caps_dims[b] == 0) throw std::invalid_argument("deepcaps config: block sizes must be >= 1");

  std::vector<LayerSpec> layers;
  layers.push_back({.name = "conv1", .kind = LayerKind::Conv, .channels = cfg.conv_channels, .kernel = cfg.conv_kernel,
                    .padding = cfg.conv_kernel / 2});
  std::vector<int> block_input{0};
  const std::size_t pad = cfg.caps_kernel / 2;
  for (int b = 0; b < 4; ++b) {
    const std::string prefix = "block" + std::to_string(b + 1) + ".";
    const int first = static_cast<int>(layers.size());
    const LayerSpec base{.kind = LayerKind::ConvCaps, .channels = cfg.caps_types[b], .caps_dim = cfg.caps_dims[b],
                         .kernel = cfg.caps_kernel, .stride = 1, .padding = pad};
    LayerSpec l1 = base, l2 = base, l3 = base, par = base;
    l1.name = prefix + "caps1";
    l1.stride = 2;
    l1.inputs = block_input;
    l2.name = prefix + "caps2";
    l3.name = prefix + "caps3";
    par.name = prefix + "parallel";
    par.inputs = {first};
    if (b == 3) {
      par.uses_dynamic_routing = true;
      par.has_bias = false;
      par.routing_iterations = cfg.routing_iterations;
    }
    layers.push_back(l1);
    layers.push_back(l2);
    layers.push_back(l3);
    layers.push_back(par);
    block_input = {first + 2, first + 3};
  }
  layers.push_back({.name = "classcaps", .kind = LayerKind::FullyConnectedCaps, .channels = cfg.num_classes,
                    .caps_dim = cfg.class_caps_dim, .has_bias = false, .uses_dynamic_routing = true,
                    .routing_iterations = cfg.routing_iterations, .inputs = block_input});
  return CapsModel(cfg.input_shape, cfg.num_classes, std::move(layers), "deepcaps_like");
}

} // namespace qcaps
