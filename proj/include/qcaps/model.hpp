#ifndef QCAPS_MODEL_HPP_
#define QCAPS_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "qcaps/tensor.hpp"

namespace qcaps {

enum class LayerKind
{
  Conv,
  PrimaryCaps,
  ConvCaps,
  FullyConnectedCaps,
};

std::string_view to_string(LayerKind k) noexcept;
LayerKind parse_layer_kind(std::string_view name);

/// One node of the layer graph.
///
/// `channels` is the output channel count for Conv, the number of capsule
/// types for PrimaryCaps/ConvCaps, and the number of output capsules for
/// FullyConnectedCaps. Spatial capsule layers produce [types, D, H, W];
/// Conv produces [C, H, W]; FullyConnectedCaps produces [N_out, D_out].
///
/// `inputs` lists producer layer indices (-1 = network input). Empty means
/// the previous layer. Several inputs are concatenated along axis 0, which
/// for capsule grids is the capsule-type axis.
struct LayerSpec
{
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::size_t channels = 0;
  std::size_t caps_dim = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool has_bias = true;
  bool uses_dynamic_routing = false;
  int routing_iterations = 3;
  std::vector<int> inputs;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer graph plus FP32-origin parameters. Shapes are inferred and checked
/// at construction; parameters start at zero.
class CapsModel
{
public:
  CapsModel() = default;
  CapsModel(Shape input_shape, std::size_t num_classes, std::vector<LayerSpec> layers, std::string architecture = "custom");

  const std::string& architecture() const noexcept { return architecture_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const LayerSpec& layer(std::size_t l) const { return layers_.at(l); }

  /// Producers of layer l after resolving the "previous layer" default.
  const std::vector<int>& layer_inputs(std::size_t l) const { return resolved_inputs_.at(l); }
  const Shape& layer_input_shape(std::size_t l) const { return input_shapes_.at(l); }
  const Shape& layer_output_shape(std::size_t l) const { return output_shapes_.at(l); }
  const Shape& weight_shape(std::size_t l) const { return weight_shapes_.at(l); }
  const Shape& bias_shape(std::size_t l) const { return bias_shapes_.at(l); }

  const Tensor& weight(std::size_t l) const { return weights_.at(l); }
  const Tensor& bias(std::size_t l) const { return biases_.at(l); }
  void set_weight(std::size_t l, Tensor w);
  void set_bias(std::size_t l, Tensor b);

  /// P^l: weights plus biases of layer l.
  std::uint64_t param_count(std::size_t l) const;
  /// A^l: output activation elements of layer l.
  std::uint64_t activation_count(std::size_t l) const;
  std::vector<std::uint64_t> param_counts() const;
  std::vector<std::uint64_t> activation_counts() const;
  std::vector<bool> routing_layers() const;

  /// Uniform(-a, a) with a = gain * k / sqrt(fan_in); biases zero.
  /// k is 0.6 for conv, 4 for conv capsules, 1 for fc capsules, which keeps
  /// random-init activations inside [-1, 1) on [0, 1] inputs while class
  /// capsule lengths stay well away from zero. FC fan_in is D_in.
  void randomize(std::uint64_t seed, double gain = 1.0);

private:
  std::string architecture_ = "custom";
  Shape input_shape_;
  std::size_t num_classes_ = 0;
  std::vector<LayerSpec> layers_;
  std::vector<std::vector<int>> resolved_inputs_;
  std::vector<Shape> input_shapes_, output_shapes_, weight_shapes_, bias_shapes_;
  std::vector<Tensor> weights_, biases_;
};

/// Three-layer Conv -> PrimaryCaps -> DigitCaps network. `width` scales the
/// conv channels (256) and primary capsule types (32); capsule dimensions
/// (8 and 16) are kept.
CapsModel build_shallowcaps(std::size_t num_classes = 10, Shape input_shape = {1, 28, 28}, double width = 1.0);

struct DeepCapsConfig
{
  Shape input_shape{1, 28, 28};
  std::size_t num_classes = 10;
  std::size_t conv_channels = 32;
  std::size_t conv_kernel = 3;
  std::size_t caps_kernel = 3;
  std::size_t caps_types[4] = {8, 8, 8, 8};
  std::size_t caps_dims[4] = {4, 8, 8, 8};
  std::size_t class_caps_dim = 16;
  int routing_iterations = 3;
};

/// Conv + four blocks of (3 sequential ConvCaps, 1 parallel ConvCaps) + class
/// capsules. The first layer of each block has stride 2; the parallel layer
/// reads the block's first layer and its output is concatenated with the
/// third. The last block's parallel layer and the class layer route.
CapsModel build_deepcaps_like(const DeepCapsConfig& config = {});

} // namespace qcaps

#endif // QCAPS_MODEL_HPP_
