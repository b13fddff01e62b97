#include "qcaps/inference.hpp"

#include <atomic>
#include <stdexcept>
#include <string>

#include "qcaps/kernels.hpp"
#include "qcaps/routing.hpp"

namespace qcaps {

QuantConfig QuantConfig::uniform(RoundingScheme scheme, const std::vector<bool>& routing, int bits)
{
  QuantConfig cfg;
  cfg.scheme = scheme;
  cfg.weight_bits.assign(routing.size(), bits);
  cfg.activation_bits.assign(routing.size(), bits);
  for (bool r : routing) cfg.routing_bits.push_back(r ? std::optional<int>(bits) : std::nullopt);
  return cfg;
}

void validate(const QuantConfig& cfg, const CapsModel& model)
{
  const std::size_t L = model.num_layers();
  if (cfg.weight_bits.size() != L || cfg.activation_bits.size() != L || cfg.routing_bits.size() != L)
    throw std::invalid_argument("quant config has " + std::to_string(cfg.weight_bits.size()) + "/" +
                                std::to_string(cfg.activation_bits.size()) + "/" + std::to_string(cfg.routing_bits.size()) +
                                " weight/activation/routing entries, model has " + std::to_string(L) + " layers");
  auto check_bits = [](int b, std::size_t l, const char* what) {
    if (b < 0 || b > 52)
      throw std::invalid_argument(std::string(what) + " bits of layer " + std::to_string(l) + " out of range [0, 52]: " +
                                  std::to_string(b));
  };
  for (std::size_t l = 0; l < L; ++l) {
    check_bits(cfg.weight_bits[l], l, "weight");
    check_bits(cfg.activation_bits[l], l, "activation");
    const bool routes = model.layer(l).uses_dynamic_routing;
    if (routes != cfg.routing_bits[l].has_value())
      throw std::invalid_argument("routing bits of layer " + std::to_string(l) +
                                  (routes ? " missing for a routing layer" : " given for a non-routing layer"));
    if (routes) check_bits(*cfg.routing_bits[l], l, "routing");
  }
}

namespace {

constexpr std::uint64_t kWeightStreamTag = 0x51574549474854ULL;

Quantizer quantizer(RoundingScheme scheme, int bits)
{
  return Quantizer{FixedPointFormat(kIntegerBits, bits), scheme};
}

Tensor gather_input(const CapsModel& model, std::size_t l, const Tensor& input, const std::vector<Tensor>& outputs)
{
  const auto& srcs = model.layer_inputs(l);
  auto src_tensor = [&](int s) -> const Tensor& { return s < 0 ? input : outputs[static_cast<std::size_t>(s)]; };
  if (srcs.size() == 1) return src_tensor(srcs.front());
  std::vector<double> data;
  data.reserve(shape_size(model.layer_input_shape(l)));
  for (int s : srcs) {
    const auto v = src_tensor(s).values();
    data.insert(data.end(), v.begin(), v.end());
  }
  return Tensor(model.layer_input_shape(l), std::move(data));
}

Tensor as_planes(Tensor x)
{
  const Shape& s = x.shape();
  if (s.size() == 3) return x;
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  return std::move(x).reshaped({x.size() / (h * w), h, w});
}

// Squash every capsule of a grid [T, D, H, W]; D is strided by H*W.
void squash_grid(Tensor& grid)
{
  const std::size_t types = grid.dim(0), d = grid.dim(1), hw = grid.dim(2) * grid.dim(3);
  std::vector<double> s(d), v(d);
  for (std::size_t t = 0; t < types; ++t)
    for (std::size_t p = 0; p < hw; ++p) {
      double* base = grid.data() + t * d * hw + p;
      for (std::size_t k = 0; k < d; ++k) s[k] = base[k * hw];
      squash_vector(s, v);
      for (std::size_t k = 0; k < d; ++k) base[k * hw] = v[k];
    }
}

// Capsule matrix [N, D] from [N, D] or a grid [T, D, H, W] (index t, y, x).
Tensor as_capsules(const Tensor& x)
{
  if (x.rank() == 2) return x;
  const std::size_t types = x.dim(0), d = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({types * hw, d});
  for (std::size_t t = 0; t < types; ++t)
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t p = 0; p < hw; ++p) out[(t * hw + p) * d + k] = x[(t * d + k) * hw + p];
  return out;
}

Tensor routing_conv_caps(const LayerSpec& spec, const Tensor& x_in, const Tensor& weight, const std::optional<Quantizer>& drq,
                         RandomStream& rng)
{
  const Tensor x = x_in.rank() == 4 ? x_in : x_in.reshaped({x_in.dim(0), 1, x_in.dim(1), x_in.dim(2)});
  const std::size_t tin = x.dim(0), din = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t types = spec.channels, dim = spec.caps_dim, k = spec.kernel;
  const ConvGeometry g{spec.stride, spec.padding};
  const std::size_t oh = conv_output_extent(h, k, g), ow = conv_output_extent(w, k, g), ohw = oh * ow;

  // per input type: [T*D, oh, ow]
  std::vector<Tensor> type_votes;
  const std::size_t plane = din * h * w, wslice = types * dim * din * k * k;
  for (std::size_t i = 0; i < tin; ++i) {
    Tensor xi({din, h, w}, std::vector<double>(x.values().begin() + static_cast<std::ptrdiff_t>(i * plane),
                                               x.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * plane)));
    Tensor wi({types * dim, din, k, k}, std::vector<double>(weight.values().begin() + static_cast<std::ptrdiff_t>(i * wslice),
                                                            weight.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * wslice)));
    type_votes.push_back(conv2d(xi, wi, Tensor(), g));
  }

  Tensor out({types, dim, oh, ow});
  Tensor votes({tin, types, dim});
  for (std::size_t p = 0; p < ohw; ++p) {
    for (std::size_t i = 0; i < tin; ++i)
      for (std::size_t c = 0; c < types * dim; ++c) votes[i * types * dim + c] = type_votes[i][c * ohw + p];
    const Tensor v = dynamic_routing(votes, spec.routing_iterations, drq, &rng);
    for (std::size_t c = 0; c < types * dim; ++c) out[c * ohw + p] = v[c];
  }
  return out;
}

Tensor fc_caps(const LayerSpec& spec, const Tensor& x, const Tensor& weight, const Tensor& bias,
               const std::optional<Quantizer>& drq, RandomStream& rng)
{
  const Tensor votes = capsule_affine(as_capsules(x), weight);
  if (spec.uses_dynamic_routing) return dynamic_routing(votes, spec.routing_iterations, drq, &rng);

  const std::size_t nin = votes.dim(0), nout = votes.dim(1), d = votes.dim(2);
  Tensor s = bias.empty() ? Tensor({nout, d}) : bias;
  for (std::size_t i = 0; i < nin; ++i)
    for (std::size_t e = 0; e < nout * d; ++e) s[e] += votes[i * nout * d + e];
  return squash(s);
}

} // namespace

PreparedModel prepare(const CapsModel& model, const std::optional<QuantConfig>& cfg, std::uint64_t seed)
{
  PreparedModel p;
  p.model = &model;
  p.config = cfg;
  if (cfg) validate(*cfg, model);
  const RandomStream root(seed, kWeightStreamTag);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    Tensor w = model.weight(l), b = model.bias(l);
    if (cfg) {
      RandomStream rng = root.derive(l);
      const FixedPointFormat fmt(kIntegerBits, cfg->weight_bits[l]);
      quantize_inplace(w, fmt, cfg->scheme, &rng);
      quantize_inplace(b, fmt, cfg->scheme, &rng);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

Tensor forward(const PreparedModel& prepared, const Tensor& input, RandomStream& rng)
{
  const CapsModel& model = *prepared.model;
  if (input.shape() != model.input_shape())
    throw std::invalid_argument("forward: input shape " + shape_to_string(input.shape()) + " does not match model input " +
                                shape_to_string(model.input_shape()));
  const auto& cfg = prepared.config;
  std::vector<Tensor> outputs;
  outputs.reserve(model.num_layers());

  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const LayerSpec& spec = model.layer(l);
    const Tensor& w = prepared.weights[l];
    const Tensor& b = prepared.biases[l];
    std::optional<Quantizer> drq;
    if (cfg && spec.uses_dynamic_routing) drq = quantizer(cfg->scheme, *cfg->routing_bits[l]);

    Tensor x = gather_input(model, l, input, outputs);
    Tensor y;
    switch (spec.kind) {
    case LayerKind::Conv:
      y = conv2d(as_planes(std::move(x)), w, b, ConvGeometry{spec.stride, spec.padding});
      relu_inplace(y);
      break;
    case LayerKind::PrimaryCaps:
    case LayerKind::ConvCaps:
      if (spec.uses_dynamic_routing) {
        y = routing_conv_caps(spec, x, w, drq, rng);
      } else {
        Tensor planes = conv2d(as_planes(std::move(x)), w, b, ConvGeometry{spec.stride, spec.padding});
        y = std::move(planes).reshaped(model.layer_output_shape(l));
        squash_grid(y);
      }
      break;
    case LayerKind::FullyConnectedCaps: y = fc_caps(spec, x, w, b, drq, rng); break;
    }
    if (cfg) quantize_inplace(y, FixedPointFormat(kIntegerBits, cfg->activation_bits[l]), cfg->scheme, &rng);
    outputs.push_back(std::move(y));
  }
  return std::move(outputs.back());
}

Tensor forward(const CapsModel& model, const Tensor& input, const std::optional<QuantConfig>& cfg, RandomStream& rng)
{
  return forward(prepare(model, cfg, rng.seed()), input, rng);
}

std::size_t predict_class(const Tensor& class_capsules)
{
  const Tensor lengths = l2_norm_lastdim(class_capsules);
  std::size_t best = 0;
  for (std::size_t j = 1; j < lengths.size(); ++j)
    if (lengths[j] > lengths[best]) best = j;
  return best;
}

double evaluate(const CapsModel& model, const LabeledDataset& data, const std::optional<QuantConfig>& cfg, std::uint64_t seed)
{
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (data.images.rank() != 4 || data.images.dim(0) != data.size())
    throw std::invalid_argument("evaluate: images " + shape_to_string(data.images.shape()) + " do not match " +
                                std::to_string(data.size()) + " labels");
  if (data.sample_shape() != model.input_shape())
    throw std::invalid_argument("evaluate: sample shape " + shape_to_string(data.sample_shape()) +
                                " does not match model input " + shape_to_string(model.input_shape()));

  const PreparedModel prepared = prepare(model, cfg, seed);
  const auto n = static_cast<std::int64_t>(data.size());
  std::int64_t correct = 0;
  std::atomic<bool> failed{false};
  std::string failure;

#pragma omp parallel for schedule(dynamic, 1) reduction(+ : correct)
  for (std::int64_t i = 0; i < n; ++i) {
    if (failed.load(std::memory_order_relaxed)) continue;
    try {
      RandomStream rng(seed, static_cast<std::uint64_t>(i));
      const Tensor out = forward(prepared, data.sample(static_cast<std::size_t>(i)), rng);
      if (predict_class(out) == data.labels[static_cast<std::size_t>(i)]) ++correct;
    } catch (const std::exception& e) {
#pragma omp critical(qcaps_evaluate_failure)
      if (!failed.exchange(true)) failure = e.what();
    }
  }
  if (failed) throw std::runtime_error("evaluate: " + failure);
  return static_cast<double>(correct) / static_cast<double>(n);
}

} // namespace qcaps
