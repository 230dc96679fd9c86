#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedguard/tensor.hpp"

namespace fedguard {

// Square-kernel, stride-1 convolution. padding is applied on every side.
struct Conv2D {
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t kernel_size;
  std::size_t padding = 0;
};

// Non-overlapping max pooling (stride == window); trailing rows/cols that do
// not fill a window are dropped.
struct MaxPool2D {
  std::size_t window;
};

struct ReLU {};
struct Flatten {};

struct Dense {
  std::size_t in_dim;
  std::size_t out_dim;
};

using Layer = std::variant<Conv2D, MaxPool2D, ReLU, Flatten, Dense>;

std::string layer_name(const Layer& layer);

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
};

struct ModelSpec {
  ImageShape input;
  std::size_t classes = 10;
  std::vector<Layer> layers;

  // Per-sample activation shape after every layer (index i = output of
  // layer i). Throws ConfigError naming the first inconsistent layer.
  std::vector<Shape> activation_shapes() const;
  void validate() const { (void)activation_shapes(); }
  Shape input_shape() const { return {input.channels, input.height, input.width}; }
};

// Two conv(5x5)+ReLU+maxpool(2) blocks, a hidden dense layer and a linear
// output layer whose logits feed softmax cross-entropy.
ModelSpec paper_cnn(std::size_t classes = 10);
// Same topology at 8x8 input with 4 channels and "same" padding; cheap
// enough for exhaustive finite-difference checks.
ModelSpec paper_cnn_reduced(std::size_t classes = 10);
// Flatten -> Dense(784, 32) -> ReLU -> Dense(32, classes).
ModelSpec small_mlp(std::size_t classes = 10, ImageShape input = {});
// Resolves "paper_cnn", "paper_cnn_reduced" and "small_mlp".
ModelSpec model_by_name(std::string_view name, std::size_t classes = 10);

enum class ParamRole { weight, bias };

struct ParamTensor {
  std::size_t layer;  // index into ModelSpec::layers
  ParamRole role;
  Tensor value;

  friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

// Ordered (layer, role) parameter tensors. Dense weights are stored
// [in_dim, out_dim]; conv weights [out, in, k, k]; biases [out].
struct ModelParams {
  std::vector<ParamTensor> tensors;

  std::size_t element_count() const;
  bool same_structure(const ModelParams& other) const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// All-zero parameters with the structure implied by `spec`.
ModelParams zero_params(const ModelSpec& spec);

// Throws ShapeError naming the first mismatching tensor.
void require_same_structure(const ModelParams& a, const ModelParams& b,
                            std::string_view context);

// Flat views, handy for diffing and gradient checks.
std::vector<double> flatten_values(const ModelParams& params);
void assign_flat(ModelParams& params, std::span<const double> values);

}  // namespace fedguard
