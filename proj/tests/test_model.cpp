#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "qcaps/inference.hpp"
#include "qcaps/kernels.hpp"
#include "qcaps/model.hpp"

using namespace qcaps;

namespace {

CapsModel tiny_model(std::size_t classes = 10)
{
  std::vector<LayerSpec> layers(3);
  layers[0] = {.name = "conv", .kind = LayerKind::Conv, .channels = 4, .kernel = 5};
  layers[1] = {.name = "primary", .kind = LayerKind::PrimaryCaps, .channels = 2, .caps_dim = 4, .kernel = 5, .stride = 2};
  layers[2] = {.name = "digits", .kind = LayerKind::FullyConnectedCaps, .channels = classes, .caps_dim = 6,
               .has_bias = false, .uses_dynamic_routing = true};
  return CapsModel({1, 12, 12}, classes, layers, "tiny");
}

LabeledDataset random_images(std::size_t n, const Shape& shape, std::uint64_t seed)
{
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  LabeledDataset d;
  Shape s{n};
  s.insert(s.end(), shape.begin(), shape.end());
  d.images = Tensor(s);
  for (double& v : d.images.values()) v = ud(gen);
  d.labels.assign(n, 0);
  return d;
}

} // namespace

TEST_CASE("shallowcaps topology")
{
  const CapsModel m = build_shallowcaps(10, {1, 28, 28});
  REQUIRE(m.num_layers() == 3);
  CHECK(m.layer(0).channels == 256);
  CHECK(m.layer_output_shape(0) == Shape{256, 20, 20});
  CHECK(m.layer_output_shape(1) == Shape{32, 8, 6, 6});
  CHECK(m.layer_output_shape(2) == Shape{10, 16});
  CHECK(m.layer(2).uses_dynamic_routing);
  CHECK(m.layer(2).routing_iterations == 3);

  const CapsModel small = build_shallowcaps(10, {1, 28, 28}, 1.0 / 8);
  CHECK(small.layer(0).channels == 32);
  CHECK(small.layer(1).channels == 4);
  CHECK(small.layer(1).caps_dim == 8);
  CHECK(small.layer(2).caps_dim == 16);
  CHECK(small.param_count(0) == 32 * 81 + 32);
  CHECK(small.param_count(1) == 32 * 32 * 81 + 32);
  CHECK(small.param_count(2) == 4 * 6 * 6 * 10 * 16 * 8);
  CHECK(small.activation_count(1) == 4 * 8 * 6 * 6);
  CHECK(small.routing_layers() == std::vector<bool>{false, false, true});
}

TEST_CASE("deepcaps-like topology")
{
  const CapsModel m = build_deepcaps_like();
  CHECK(m.num_layers() == 18);
  const auto n_caps = std::count_if(m.layers().begin(), m.layers().end(),
                                    [](const LayerSpec& s) { return s.kind == LayerKind::ConvCaps; });
  CHECK(n_caps == 16);
  const auto routing = m.routing_layers();
  CHECK(std::count(routing.begin(), routing.end(), true) == 2);
  CHECK(routing[16]);
  CHECK(routing[17]);
  // block outputs concatenate the third sequential layer with the parallel one
  CHECK(m.layer_inputs(5) == std::vector<int>{3, 4});
  CHECK(m.layer_input_shape(5)[0] == 16);
  CHECK(m.layer_output_shape(17) == Shape{10, 16});
}

TEST_CASE("deepcaps-like: zero input gives zero capsules")
{
  CapsModel m = build_deepcaps_like();
  m.randomize(3);
  RandomStream rng(0, 0);
  CHECK(forward(m, Tensor(m.input_shape()), std::nullopt, rng) == Tensor({10, 16}));
}

TEST_CASE("model construction errors")
{
  std::vector<LayerSpec> bad(2);
  bad[0] = {.name = "conv", .kind = LayerKind::Conv, .channels = 2, .kernel = 3, .uses_dynamic_routing = true};
  bad[1] = {.name = "fc", .kind = LayerKind::FullyConnectedCaps, .channels = 10, .caps_dim = 4, .has_bias = false};
  CHECK_THROWS_AS(CapsModel({1, 8, 8}, 10, bad, "x"), std::invalid_argument);
  bad[0].uses_dynamic_routing = false;
  CHECK_THROWS_AS(CapsModel({1, 8, 8}, 10, bad, "x"), std::invalid_argument); // fc cannot read a plain conv map
  CHECK_THROWS_AS(CapsModel({1, 2, 2}, 10, {bad[0]}, "x"), std::invalid_argument);

  CapsModel m = tiny_model();
  CHECK_THROWS_AS(m.set_weight(0, Tensor({3, 1, 5, 5})), std::invalid_argument);
  CHECK_THROWS_AS(m.set_bias(2, Tensor({10})), std::invalid_argument);
}

TEST_CASE("forward: FP32 path, predicted class, and errors")
{
  CapsModel m = tiny_model();
  m.randomize(1);
  const auto data = random_images(1, m.input_shape(), 2);
  const Tensor x = data.sample(0);
  RandomStream rng(0, 0);
  const Tensor out = forward(m, x, std::nullopt, rng);
  CHECK(out.shape() == Shape{10, 6});
  CHECK(rng.position() == 0);
  const Tensor lengths = l2_norm_lastdim(out);
  const auto argmax = static_cast<std::size_t>(std::max_element(lengths.values().begin(), lengths.values().end()) -
                                               lengths.values().begin());
  CHECK(predict_class(out) == argmax);
  for (double len : lengths.values()) CHECK(len < 1.0);

  CHECK_THROWS_AS(forward(m, Tensor({1, 10, 10}), std::nullopt, rng), std::invalid_argument);
  QuantConfig missing = QuantConfig::uniform(RoundingScheme::TRN, m.routing_layers(), 8);
  missing.activation_bits.pop_back();
  CHECK_THROWS_AS(forward(m, x, missing, rng), std::invalid_argument);
  QuantConfig no_dr = QuantConfig::uniform(RoundingScheme::TRN, m.routing_layers(), 8);
  no_dr.routing_bits[2].reset();
  CHECK_THROWS_AS(forward(m, x, no_dr, rng), std::invalid_argument);
}

TEST_CASE("forward with 24 fractional bits stays within 1e-3 of FP32")
{
  CapsModel m = build_shallowcaps(10, {1, 28, 28}, 1.0 / 8);
  m.randomize(4);
  const auto data = random_images(3, m.input_shape(), 5);
  for (auto scheme : {RoundingScheme::TRN, RoundingScheme::RTN, RoundingScheme::SR}) {
    const auto cfg = QuantConfig::uniform(scheme, m.routing_layers(), 24);
    for (std::size_t i = 0; i < data.size(); ++i) {
      RandomStream r1(7, i), r2(7, i);
      const Tensor ref = l2_norm_lastdim(forward(m, data.sample(i), std::nullopt, r1));
      const Tensor q = l2_norm_lastdim(forward(m, data.sample(i), cfg, r2));
      CHECK(max_abs_diff(ref, q) < 1e-3);
    }
  }
}

TEST_CASE("quantized forward snaps every layer output")
{
  CapsModel m = tiny_model();
  m.randomize(6);
  const auto data = random_images(1, m.input_shape(), 7);
  const auto cfg = QuantConfig::uniform(RoundingScheme::RTN, m.routing_layers(), 5);
  RandomStream rng(0, 0);
  const Tensor out = forward(m, data.sample(0), cfg, rng);
  for (double v : out.values()) CHECK(v * 32.0 == std::floor(v * 32.0));
}

TEST_CASE("evaluate counting examples")
{
  // All-zero parameters: every capsule has length 0, so class 0 wins ties.
  const CapsModel zero = tiny_model();
  auto data = random_images(100, zero.input_shape(), 8);
  CHECK(evaluate(zero, data, std::nullopt, 0) == 1.0);
  for (std::size_t i = 0; i < 100; ++i) data.labels[i] = static_cast<std::uint32_t>(i % 10);
  CHECK(evaluate(zero, data, std::nullopt, 0) == doctest::Approx(0.1));
  CHECK_THROWS_AS(evaluate(zero, LabeledDataset{}, std::nullopt, 0), std::invalid_argument);
}

TEST_CASE("evaluate: seeds only matter for SR, order does not matter for TRN/RTN")
{
  CapsModel m = tiny_model();
  m.randomize(9);
  auto data = random_images(40, m.input_shape(), 10);
  for (std::size_t i = 0; i < data.size(); ++i) {
    RandomStream rng(0, i);
    data.labels[i] = static_cast<std::uint32_t>(predict_class(forward(m, data.sample(i), std::nullopt, rng)));
  }
  CHECK(evaluate(m, data, std::nullopt, 1) == 1.0);
  CHECK(evaluate(m, data, std::nullopt, 2) == 1.0);

  const std::size_t per = shape_size(data.sample_shape());
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(11));
  LabeledDataset shuffled = data;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy_n(data.images.values().begin() + static_cast<std::ptrdiff_t>(perm[i] * per), per,
                shuffled.images.values().begin() + static_cast<std::ptrdiff_t>(i * per));
    shuffled.labels[i] = data.labels[perm[i]];
  }
  for (int bits : {2, 3, 4}) {
    for (auto s : {RoundingScheme::TRN, RoundingScheme::RTN}) {
      const auto cfg = QuantConfig::uniform(s, m.routing_layers(), bits);
      CHECK(evaluate(m, data, cfg, 3) == evaluate(m, shuffled, cfg, 4));
    }
  }
}

TEST_CASE("SR evaluation is independent of the thread count")
{
  CapsModel m = tiny_model();
  m.randomize(12);
  auto data = random_images(30, m.input_shape(), 13);
  for (std::size_t i = 0; i < data.size(); ++i) data.labels[i] = static_cast<std::uint32_t>(i % 10);
  const auto cfg = QuantConfig::uniform(RoundingScheme::SR, m.routing_layers(), 3);
#ifdef _OPENMP
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const double serial = evaluate(m, data, cfg, 21);
  omp_set_num_threads(4);
  const double parallel = evaluate(m, data, cfg, 21);
  omp_set_num_threads(saved);
  CHECK(serial == parallel);
#endif
  CHECK(evaluate(m, data, cfg, 21) == evaluate(m, data, cfg, 21));
}

TEST_CASE("forward converges to FP32 as wordlength grows")
{
  CapsModel m = build_shallowcaps(10, {1, 28, 28}, 1.0 / 8);
  m.randomize(14);
  const auto data = random_images(2, m.input_shape(), 15);
  double prev = 1e9;
  for (int nf : {4, 8, 12, 16, 20}) {
    double worst = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      RandomStream r1(0, i), r2(0, i);
      const Tensor ref = l2_norm_lastdim(forward(m, data.sample(i), std::nullopt, r1));
      const Tensor q = l2_norm_lastdim(forward(m, data.sample(i), QuantConfig::uniform(RoundingScheme::RTN, m.routing_layers(), nf), r2));
      worst = std::max(worst, max_abs_diff(ref, q));
    }
    CHECK(worst < prev);
    prev = worst;
  }
  CHECK(prev < 1e-3);
}
