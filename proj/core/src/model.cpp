#include "fedguard/model.hpp"

#include <algorithm>

#include "fedguard/errors.hpp"

namespace fedguard {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

[[noreturn]] void bad_layer(std::size_t index, const Layer& layer, const std::string& why) {
  throw ConfigError("layer " + std::to_string(index) + " (" + layer_name(layer) + "): " + why);
}

}  // namespace

std::string layer_name(const Layer& layer) {
  return std::visit(
      overloaded{
          [](const Conv2D& c) {
            return "Conv2D(" + std::to_string(c.in_channels) + "," + std::to_string(c.out_channels) +
                   "," + std::to_string(c.kernel_size) + ",pad=" + std::to_string(c.padding) + ")";
          },
          [](const MaxPool2D& p) { return "MaxPool2D(" + std::to_string(p.window) + ")"; },
          [](const ReLU&) { return std::string("ReLU"); },
          [](const Flatten&) { return std::string("Flatten"); },
          [](const Dense& d) {
            return "Dense(" + std::to_string(d.in_dim) + "," + std::to_string(d.out_dim) + ")";
          },
      },
      layer);
}

std::vector<Shape> ModelSpec::activation_shapes() const {
  if (input.channels == 0 || input.height == 0 || input.width == 0) {
    throw ConfigError("model input shape must be positive");
  }
  if (classes == 0) throw ConfigError("model must have at least one class");
  if (layers.empty()) throw ConfigError("model has no layers");

  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  Shape current = input_shape();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    std::visit(
        overloaded{
            [&](const Conv2D& c) {
              if (current.size() != 3) bad_layer(i, layer, "expects a [C,H,W] input, got " + shape_to_string(current));
              if (c.in_channels != current[0]) {
                bad_layer(i, layer, "expects " + std::to_string(c.in_channels) +
                                        " input channels, got " + std::to_string(current[0]));
              }
              if (c.out_channels == 0 || c.kernel_size == 0) bad_layer(i, layer, "zero-sized kernel");
              const std::size_t h = current[1] + 2 * c.padding;
              const std::size_t w = current[2] + 2 * c.padding;
              if (h < c.kernel_size || w < c.kernel_size) {
                bad_layer(i, layer, "kernel larger than padded input " + shape_to_string(current));
              }
              current = {c.out_channels, h - c.kernel_size + 1, w - c.kernel_size + 1};
            },
            [&](const MaxPool2D& p) {
              if (current.size() != 3) bad_layer(i, layer, "expects a [C,H,W] input, got " + shape_to_string(current));
              if (p.window == 0 || current[1] < p.window || current[2] < p.window) {
                bad_layer(i, layer, "window does not fit input " + shape_to_string(current));
              }
              current = {current[0], current[1] / p.window, current[2] / p.window};
            },
            [&](const ReLU&) {},
            [&](const Flatten&) { current = {shape_size(current)}; },
            [&](const Dense& d) {
              if (current.size() != 1) bad_layer(i, layer, "expects a flat input, got " + shape_to_string(current));
              if (d.in_dim != current[0]) {
                bad_layer(i, layer, "expects in_dim " + std::to_string(current[0]) + ", got " +
                                        std::to_string(d.in_dim));
              }
              if (d.out_dim == 0) bad_layer(i, layer, "zero output dimension");
              current = {d.out_dim};
            },
        },
        layer);
    shapes.push_back(current);
  }
  if (current.size() != 1 || current[0] != classes) {
    throw ConfigError("final layer produces " + shape_to_string(current) + ", expected [" +
                      std::to_string(classes) + "] class logits");
  }
  return shapes;
}

ModelSpec paper_cnn(std::size_t classes) {
  return ModelSpec{
      .input = {1, 28, 28},
      .classes = classes,
      .layers = {Conv2D{1, 32, 5}, ReLU{}, MaxPool2D{2}, Conv2D{32, 32, 5}, ReLU{}, MaxPool2D{2},
                 Flatten{}, Dense{32 * 4 * 4, 1024}, ReLU{}, Dense{1024, classes}},
  };
}

ModelSpec paper_cnn_reduced(std::size_t classes) {
  return ModelSpec{
      .input = {1, 8, 8},
      .classes = classes,
      .layers = {Conv2D{1, 4, 5, 2}, ReLU{}, MaxPool2D{2}, Conv2D{4, 4, 5, 2}, ReLU{}, MaxPool2D{2},
                 Flatten{}, Dense{4 * 2 * 2, 32}, ReLU{}, Dense{32, classes}},
  };
}

ModelSpec small_mlp(std::size_t classes, ImageShape input) {
  const std::size_t in = input.channels * input.height * input.width;
  return ModelSpec{
      .input = input,
      .classes = classes,
      .layers = {Flatten{}, Dense{in, 32}, ReLU{}, Dense{32, classes}},
  };
}

ModelSpec model_by_name(std::string_view name, std::size_t classes) {
  if (name == "paper_cnn") return paper_cnn(classes);
  if (name == "paper_cnn_reduced") return paper_cnn_reduced(classes);
  if (name == "small_mlp") return small_mlp(classes);
  throw ConfigError("unknown model spec '" + std::string(name) +
                    "' (expected paper_cnn, paper_cnn_reduced or small_mlp)");
}

std::size_t ModelParams::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

bool ModelParams::same_structure(const ModelParams& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i];
    const auto& b = other.tensors[i];
    if (a.layer != b.layer || a.role != b.role || a.value.shape() != b.value.shape()) return false;
  }
  return true;
}

ModelParams zero_params(const ModelSpec& spec) {
  spec.validate();
  ModelParams params;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (const auto* c = std::get_if<Conv2D>(&spec.layers[i])) {
      params.tensors.push_back(
          {i, ParamRole::weight, Tensor({c->out_channels, c->in_channels, c->kernel_size, c->kernel_size})});
      params.tensors.push_back({i, ParamRole::bias, Tensor({c->out_channels})});
    } else if (const auto* d = std::get_if<Dense>(&spec.layers[i])) {
      params.tensors.push_back({i, ParamRole::weight, Tensor({d->in_dim, d->out_dim})});
      params.tensors.push_back({i, ParamRole::bias, Tensor({d->out_dim})});
    }
  }
  return params;
}

void require_same_structure(const ModelParams& a, const ModelParams& b, std::string_view context) {
  if (a.tensors.size() != b.tensors.size()) {
    throw ShapeError(std::string(context) + ": expected " + std::to_string(a.tensors.size()) +
                     " parameter tensors, got " + std::to_string(b.tensors.size()));
  }
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const auto& x = a.tensors[i];
    const auto& y = b.tensors[i];
    if (x.layer != y.layer || x.role != y.role || x.value.shape() != y.value.shape()) {
      throw ShapeError(std::string(context) + ": layer " + std::to_string(x.layer) +
                       (x.role == ParamRole::weight ? " weight" : " bias") + " expected shape " +
                       shape_to_string(x.value.shape()) + ", got layer " + std::to_string(y.layer) +
                       " shape " + shape_to_string(y.value.shape()));
    }
  }
}

std::vector<double> flatten_values(const ModelParams& params) {
  std::vector<double> out;
  out.reserve(params.element_count());
  for (const auto& t : params.tensors) {
    auto v = t.value.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

void assign_flat(ModelParams& params, std::span<const double> values) {
  if (values.size() != params.element_count()) {
    throw ShapeError("flat parameter vector has " + std::to_string(values.size()) + " elements, expected " +
                     std::to_string(params.element_count()));
  }
  std::size_t offset = 0;
  for (auto& t : params.tensors) {
    auto dst = t.value.values();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
}

}  // namespace fedguard
