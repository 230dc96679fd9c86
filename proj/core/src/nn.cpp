#include "fedguard/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "fedguard/errors.hpp"

namespace fedguard {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

constexpr std::size_t kNoParam = std::numeric_limits<std::size_t>::max();

// Index of the weight tensor for each layer (bias follows at +1).
std::vector<std::size_t> weight_slots(const ModelSpec& spec, const ModelParams& params) {
  std::vector<std::size_t> slots(spec.layers.size(), kNoParam);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& t = params.tensors[i];
    if (t.role == ParamRole::weight && t.layer < slots.size()) slots[t.layer] = i;
  }
  return slots;
}

// Structure check without materialising a zero parameter set.
void check_params(const ModelSpec& spec, const ModelParams& params) {
  std::size_t t = 0;
  auto expect = [&](std::size_t layer, ParamRole role, const Shape& shape) {
    if (t >= params.tensors.size() || params.tensors[t].layer != layer || params.tensors[t].role != role ||
        params.tensors[t].value.shape() != shape) {
      throw ShapeError("model parameters: layer " + std::to_string(layer) + " (" + layer_name(spec.layers[layer]) +
                       ") " + (role == ParamRole::weight ? "weight" : "bias") + " expected shape " +
                       shape_to_string(shape));
    }
    ++t;
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (const auto* c = std::get_if<Conv2D>(&spec.layers[i])) {
      expect(i, ParamRole::weight, {c->out_channels, c->in_channels, c->kernel_size, c->kernel_size});
      expect(i, ParamRole::bias, {c->out_channels});
    } else if (const auto* d = std::get_if<Dense>(&spec.layers[i])) {
      expect(i, ParamRole::weight, {d->in_dim, d->out_dim});
      expect(i, ParamRole::bias, {d->out_dim});
    }
  }
  if (t != params.tensors.size()) throw ShapeError("model parameters: unexpected trailing tensors");
}

void check_input(const ModelSpec& spec, const Tensor& inputs) {
  const Shape expected = spec.input_shape();
  if (inputs.rank() != 4 || inputs.dim(1) != expected[0] || inputs.dim(2) != expected[1] ||
      inputs.dim(3) != expected[2]) {
    throw ShapeError("input shape mismatch: expected [B," + std::to_string(expected[0]) + "," +
                     std::to_string(expected[1]) + "," + std::to_string(expected[2]) + "], got " +
                     shape_to_string(inputs.shape()));
  }
}

void require_finite(const Tensor& t, std::size_t layer_index, const ModelSpec& spec, const char* what) {
  if (!all_finite(t.values())) {
    throw NumericError(std::string("non-finite ") + what + " at layer " + std::to_string(layer_index) + " (" +
                       layer_name(spec.layers[layer_index]) + ")");
  }
}

inline void axpy(double* __restrict y, double a, const double* __restrict x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

struct ConvGeometry {
  std::size_t cin, h, w, k, pad, oh, ow;
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Conv2D& c, const Shape& in) {
  ConvGeometry g{c.in_channels, in[1], in[2], c.kernel_size, c.padding, 0, 0};
  g.oh = g.h + 2 * g.pad - g.k + 1;
  g.ow = g.w + 2 * g.pad - g.k + 1;
  return g;
}

// cols[(ci*k + ki)*k + kj][oy*ow + ox] = x[ci][oy + ki - pad][ox + kj - pad]
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = cols + ((ci * g.k + ki) * g.k + kj) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ki) - pad;
          double* out = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill_n(out, g.ow, 0.0);
            continue;
          }
          const double* src = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kj) - pad;
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* dx) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols + ((ci * g.k + ki) * g.k + kj) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ki) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = dx + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kj) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Activations of one forward pass; acts[0] is the input and acts[i + 1] the
// output of layer i.
struct Trace {
  std::vector<Tensor> acts;
  std::vector<std::vector<std::size_t>> pool_argmax;  // per layer, flat input index
};

Tensor conv_forward(const Conv2D& c, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::size_t batch = x.dim(0);
  const Shape in{x.dim(1), x.dim(2), x.dim(3)};
  const ConvGeometry g = conv_geometry(c, in);
  Tensor y({batch, c.out_channels, g.oh, g.ow});
  std::vector<double> cols(g.rows() * g.cols());
  const std::size_t in_stride = shape_size(in);
  const std::size_t out_stride = c.out_channels * g.cols();
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(g, x.data() + b * in_stride, cols.data());
    double* out = y.data() + b * out_stride;
    for (std::size_t co = 0; co < c.out_channels; ++co) {
      double* o = out + co * g.cols();
      std::fill_n(o, g.cols(), bias[co]);
      const double* wrow = weight.data() + co * g.rows();
      for (std::size_t r = 0; r < g.rows(); ++r) axpy(o, wrow[r], cols.data() + r * g.cols(), g.cols());
    }
  }
  return y;
}

void conv_backward(const Conv2D& c, const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor& dw,
                   Tensor& db, Tensor* dx) {
  const std::size_t batch = x.dim(0);
  const Shape in{x.dim(1), x.dim(2), x.dim(3)};
  const ConvGeometry g = conv_geometry(c, in);
  std::vector<double> cols(g.rows() * g.cols());
  std::vector<double> dcols(dx ? g.rows() * g.cols() : 0);
  const std::size_t in_stride = shape_size(in);
  const std::size_t out_stride = c.out_channels * g.cols();
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(g, x.data() + b * in_stride, cols.data());
    const double* grad_out = dy.data() + b * out_stride;
    if (dx) std::fill(dcols.begin(), dcols.end(), 0.0);
    for (std::size_t co = 0; co < c.out_channels; ++co) {
      const double* go = grad_out + co * g.cols();
      double bsum = 0.0;
      for (std::size_t p = 0; p < g.cols(); ++p) bsum += go[p];
      db[co] += bsum;
      double* dwrow = dw.data() + co * g.rows();
      const double* wrow = weight.data() + co * g.rows();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        dwrow[r] += dot(go, cols.data() + r * g.cols(), g.cols());
        if (dx) axpy(dcols.data() + r * g.cols(), wrow[r], go, g.cols());
      }
    }
    if (dx) col2im_add(g, dcols.data(), dx->data() + b * in_stride);
  }
}

Tensor pool_forward(const MaxPool2D& p, const Tensor& x, std::vector<std::size_t>* argmax) {
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / p.window, ow = w / p.window;
  Tensor y({batch, ch, oh, ow});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < batch * ch; ++bc) {
    const std::size_t plane = bc * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = plane + (oy * p.window) * w + ox * p.window;
        for (std::size_t dy = 0; dy < p.window; ++dy) {
          for (std::size_t dx = 0; dx < p.window; ++dx) {
            const std::size_t idx = plane + (oy * p.window + dy) * w + ox * p.window + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[o] = x[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return y;
}

Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::size_t batch = x.dim(0), in = x.dim(1), out = bias.size();
  Tensor y({batch, out});
  for (std::size_t b = 0; b < batch; ++b) {
    double* yb = y.data() + b * out;
    std::copy_n(bias.data(), out, yb);
    const double* xb = x.data() + b * in;
    for (std::size_t i = 0; i < in; ++i) {
      if (xb[i] == 0.0) continue;  // MNIST inputs are mostly zero
      axpy(yb, xb[i], weight.data() + i * out, out);
    }
  }
  return y;
}

void dense_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor& dw, Tensor& db, Tensor* dx) {
  const std::size_t batch = x.dim(0), in = x.dim(1), out = db.size();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data() + b * in;
    const double* gb = dy.data() + b * out;
    for (std::size_t o = 0; o < out; ++o) db[o] += gb[o];
    for (std::size_t i = 0; i < in; ++i) {
      if (xb[i] != 0.0) axpy(dw.data() + i * out, xb[i], gb, out);
    }
    if (dx) {
      double* dxb = dx->data() + b * in;
      for (std::size_t i = 0; i < in; ++i) dxb[i] = dot(weight.data() + i * out, gb, out);
    }
  }
}

Trace run_forward(const ModelSpec& spec, const ModelParams& params, const Tensor& inputs, bool keep_trace) {
  check_input(spec, inputs);
  const auto slots = weight_slots(spec, params);
  Trace trace;
  trace.pool_argmax.resize(spec.layers.size());
  Tensor current = inputs;
  if (keep_trace) trace.acts.push_back(current);
  const std::size_t batch = inputs.dim(0);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& layer = spec.layers[i];
    Tensor next = std::visit(
        overloaded{
            [&](const Conv2D& c) {
              return conv_forward(c, current, params.tensors[slots[i]].value, params.tensors[slots[i] + 1].value);
            },
            [&](const MaxPool2D& p) {
              return pool_forward(p, current, keep_trace ? &trace.pool_argmax[i] : nullptr);
            },
            [&](const ReLU&) {
              Tensor y = current;
              for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
              return y;
            },
            [&](const Flatten&) { return current.reshaped({batch, current.size() / std::max<std::size_t>(batch, 1)}); },
            [&](const Dense&) {
              return dense_forward(current, params.tensors[slots[i]].value, params.tensors[slots[i] + 1].value);
            },
        },
        layer);
    require_finite(next, i, spec, "activation");
    current = std::move(next);
    if (keep_trace) trace.acts.push_back(current);
  }
  if (!keep_trace) trace.acts.push_back(std::move(current));
  return trace;
}

// Smallest distance of any ReLU input from 0, or of any pooling window's
// maximum from its runner-up, over one forward pass. Windows that a ReLU
// clamped entirely to 0 are skipped: their gradient is 0 on both sides.
double kink_distance(const ModelSpec& spec, const ModelParams& params, const Tensor& inputs) {
  const Trace trace = run_forward(spec, params, inputs, true);
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Tensor& x = trace.acts[i];
    if (std::holds_alternative<ReLU>(spec.layers[i])) {
      for (double v : x.values()) closest = std::min(closest, std::abs(v));
    } else if (const auto* p = std::get_if<MaxPool2D>(&spec.layers[i])) {
      const std::size_t h = x.dim(2), w = x.dim(3);
      for (std::size_t bc = 0; bc < x.dim(0) * x.dim(1); ++bc)
        for (std::size_t oy = 0; oy < h / p->window; ++oy)
          for (std::size_t ox = 0; ox < w / p->window; ++ox) {
            double first = -std::numeric_limits<double>::infinity(), second = first;
            for (std::size_t dy = 0; dy < p->window; ++dy)
              for (std::size_t dx = 0; dx < p->window; ++dx) {
                const double v = x[bc * h * w + (oy * p->window + dy) * w + ox * p->window + dx];
                if (v > first) {
                  second = first;
                  first = v;
                } else if (v > second) {
                  second = v;
                }
              }
            if (first != 0.0) closest = std::min(closest, first - second);
          }
    }
  }
  return closest;
}

void check_labels(const ModelSpec& spec, std::span<const int> labels) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= spec.classes) {
      throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(spec.classes) + ")");
    }
  }
}

// Sum (not mean) of per-row cross-entropy; optionally writes d(sum)/dlogits.
double cross_entropy_sum(const Tensor& logits, std::span<const int> labels, Tensor* dlogits) {
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* z = logits.data() + b * k;
    const double m = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - m);
    const double lse = m + std::log(s);
    total += lse - z[labels[b]];
    if (dlogits) {
      double* d = dlogits->data() + b * k;
      for (std::size_t j = 0; j < k; ++j) d[j] = std::exp(z[j] - lse);
      d[labels[b]] -= 1.0;
    }
  }
  return total;
}

std::size_t argmax_row(const double* z, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (z[j] > z[best]) best = j;
  }
  return best;
}

}  // namespace

Batch gather_batch(const Tensor& images, std::span<const int> labels, std::span<const std::size_t> indices) {
  if (images.rank() != 4) throw ShapeError("images must be [N,C,H,W], got " + shape_to_string(images.shape()));
  const std::size_t stride = images.size() / images.dim(0);
  Batch batch{Tensor({indices.size(), images.dim(1), images.dim(2), images.dim(3)}), {}};
  batch.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t idx = indices[i];
    if (idx >= images.dim(0)) throw DomainError("sample index " + std::to_string(idx) + " out of range");
    std::copy_n(images.data() + idx * stride, stride, batch.inputs.data() + i * stride);
    batch.labels.push_back(labels[idx]);
  }
  return batch;
}

ModelParams init_params(const ModelSpec& spec, Rng& rng) {
  ModelParams params = zero_params(spec);
  for (auto& t : params.tensors) {
    if (t.role != ParamRole::weight) continue;
    const Layer& layer = spec.layers[t.layer];
    std::size_t fan_in = 0;
    if (const auto* c = std::get_if<Conv2D>(&layer)) fan_in = c->in_channels * c->kernel_size * c->kernel_size;
    if (const auto* d = std::get_if<Dense>(&layer)) fan_in = d->in_dim;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.value.values()) v = dist(rng);
  }
  return params;
}

Tensor forward(const ModelSpec& spec, const ModelParams& params, const Tensor& inputs) {
  check_params(spec, params);
  return std::move(run_forward(spec, params, inputs, false).acts.back());
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [B,K], got " + shape_to_string(logits.shape()));
  Tensor out = logits;
  const std::size_t k = logits.dim(1);
  for (std::size_t b = 0; b < logits.dim(0); ++b) {
    double* z = out.data() + b * k;
    const double m = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) z[j] = std::exp(z[j] - lse);
  }
  return out;
}

double batch_loss(const ModelSpec& spec, const ModelParams& params, const Batch& batch) {
  if (batch.size() == 0) throw DomainError("loss of an empty batch");
  if (batch.inputs.rank() != 4 || batch.inputs.dim(0) != batch.size()) {
    throw ShapeError("batch has " + std::to_string(batch.size()) + " labels but inputs " +
                     shape_to_string(batch.inputs.shape()));
  }
  check_labels(spec, batch.labels);
  const Tensor logits = forward(spec, params, batch.inputs);
  const double loss = cross_entropy_sum(logits, batch.labels, nullptr) / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");
  return loss;
}

LossAndGrad loss_and_grad(const ModelSpec& spec, const ModelParams& params, const Batch& batch) {
  if (batch.size() == 0) throw DomainError("loss of an empty batch");
  if (batch.inputs.rank() != 4 || batch.inputs.dim(0) != batch.size()) {
    throw ShapeError("batch has " + std::to_string(batch.size()) + " labels but inputs " +
                     shape_to_string(batch.inputs.shape()));
  }
  check_labels(spec, batch.labels);
  check_params(spec, params);
  const Trace trace = run_forward(spec, params, batch.inputs, true);
  const Tensor& logits = trace.acts.back();

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  Tensor grad(logits.shape());
  LossAndGrad result;
  result.loss = cross_entropy_sum(logits, batch.labels, &grad) * inv_batch;
  if (!std::isfinite(result.loss)) throw NumericError("non-finite loss");
  for (double& g : grad.values()) g *= inv_batch;

  result.grads = zero_params(spec);
  const auto slots = weight_slots(spec, params);
  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const Tensor& x = trace.acts[li];
    const Tensor& y = trace.acts[li + 1];
    const bool need_dx = li > 0;
    Tensor dx = need_dx ? Tensor(x.shape()) : Tensor();
    std::visit(overloaded{
                   [&](const Conv2D& c) {
                     conv_backward(c, x, params.tensors[slots[li]].value, grad,
                                   result.grads.tensors[slots[li]].value,
                                   result.grads.tensors[slots[li] + 1].value, need_dx ? &dx : nullptr);
                   },
                   [&](const MaxPool2D&) {
                     if (!need_dx) return;
                     const auto& arg = trace.pool_argmax[li];
                     for (std::size_t o = 0; o < arg.size(); ++o) dx[arg[o]] += grad[o];
                   },
                   [&](const ReLU&) {
                     if (!need_dx) return;
                     for (std::size_t j = 0; j < dx.size(); ++j) dx[j] = y[j] > 0.0 ? grad[j] : 0.0;
                   },
                   [&](const Flatten&) {
                     if (need_dx) dx = grad.reshaped(x.shape());
                   },
                   [&](const Dense&) {
                     dense_backward(x, params.tensors[slots[li]].value, grad, result.grads.tensors[slots[li]].value,
                                    result.grads.tensors[slots[li] + 1].value, need_dx ? &dx : nullptr);
                   },
               },
               spec.layers[li]);
    if (slots[li] != kNoParam) {
      require_finite(result.grads.tensors[slots[li]].value, li, spec, "weight gradient");
      require_finite(result.grads.tensors[slots[li] + 1].value, li, spec, "bias gradient");
    }
    if (need_dx) grad = std::move(dx);
  }
  return result;
}

void sgd_step_inplace(ModelParams& params, const ModelParams& grads, double lr) {
  require_same_structure(params, grads, "sgd_step");
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto w = params.tensors[i].value.values();
    auto g = grads.tensors[i].value.values();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
  }
}

ModelParams sgd_step(const ModelParams& params, const ModelParams& grads, double lr) {
  ModelParams out = params;
  sgd_step_inplace(out, grads, lr);
  return out;
}

ModelParams finite_diff_grad(const ModelSpec& spec, const ModelParams& params, const Batch& batch, double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw DomainError("finite-difference epsilon must lie in [1e-7, 1e-3], got " + std::to_string(epsilon));
  }
  ModelParams probe = params;
  ModelParams grads = zero_params(spec);
  for (std::size_t t = 0; t < probe.tensors.size(); ++t) {
    auto w = probe.tensors[t].value.values();
    auto g = grads.tensors[t].value.values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      w[j] = saved + epsilon;
      const double plus = batch_loss(spec, probe, batch);
      w[j] = saved - epsilon;
      const double minus = batch_loss(spec, probe, batch);
      w[j] = saved;
      g[j] = (plus - minus) / (2.0 * epsilon);
    }
  }
  return grads;
}

double max_relative_error(const ModelParams& a, const ModelParams& b, double floor) {
  require_same_structure(a, b, "max_relative_error");
  double worst = 0.0;
  for (std::size_t t = 0; t < a.tensors.size(); ++t) {
    auto x = a.tensors[t].value.values();
    auto y = b.tensors[t].value.values();
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double denom = std::max({std::abs(x[j]), std::abs(y[j]), floor});
      worst = std::max(worst, std::abs(x[j] - y[j]) / denom);
    }
  }
  return worst;
}

double accuracy(const ModelSpec& spec, const ModelParams& params, const Tensor& images, std::span<const int> labels) {
  return evaluate(spec, params, images, labels).accuracy;
}

Evaluation evaluate(const ModelSpec& spec, const ModelParams& params, const Tensor& images,
                    std::span<const int> labels, std::span<const std::size_t> indices, std::size_t chunk) {
  if (images.rank() != 4) throw ShapeError("images must be [N,C,H,W], got " + shape_to_string(images.shape()));
  if (images.dim(0) != labels.size()) {
    throw ShapeError("images hold " + std::to_string(images.dim(0)) + " samples but " +
                     std::to_string(labels.size()) + " labels given");
  }
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(labels.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    indices = all;
  }
  if (indices.empty()) throw DomainError("evaluation over an empty dataset");
  chunk = std::max<std::size_t>(chunk, 1);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const auto part = indices.subspan(start, std::min(chunk, indices.size() - start));
    const Batch batch = gather_batch(images, labels, part);
    check_labels(spec, batch.labels);
    const Tensor logits = forward(spec, params, batch.inputs);
    loss_sum += cross_entropy_sum(logits, batch.labels, nullptr);
    const std::size_t k = logits.dim(1);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (argmax_row(logits.data() + b * k, k) == static_cast<std::size_t>(batch.labels[b])) ++correct;
    }
  }
  const double n = static_cast<double>(indices.size());
  Evaluation ev{loss_sum / n, static_cast<double>(correct) / n};
  if (!std::isfinite(ev.loss)) throw NumericError("non-finite evaluation loss");
  return ev;
}

GradcheckReport gradient_check(const ModelSpec& spec, std::uint64_t seed, std::size_t batch_size, double epsilon,
                               double fault) {
  spec.validate();
  if (batch_size == 0) throw DomainError("gradient_check needs a non-empty batch");
  Rng init_rng = make_rng(seed, {stream::kInit});
  const ModelParams params = init_params(spec, init_rng);

  Rng data_rng = make_rng(seed, {stream::kSynthetic});
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(spec.classes) - 1);
  Shape shape{batch_size};
  for (std::size_t d : spec.input_shape()) shape.push_back(d);
  Batch batch{Tensor(shape), std::vector<int>(batch_size)};
  // Central differences are only valid where the loss is smooth within
  // +-epsilon, so batches with a unit near a ReLU or pooling kink are redrawn.
  const double margin = 100.0 * epsilon;
  std::size_t redraws = 0;
  for (;; ++redraws) {
    for (double& v : batch.inputs.values()) v = pixel(data_rng);
    for (int& y : batch.labels) y = label(data_rng);
    if (kink_distance(spec, params, batch.inputs) > margin) break;
    if (redraws == 1000) throw DomainError("gradient_check could not draw a batch away from activation kinks");
  }

  LossAndGrad analytic = loss_and_grad(spec, params, batch);
  if (fault != 0.0) analytic.grads.tensors.front().value[0] += fault;
  const ModelParams numeric = finite_diff_grad(spec, params, batch, epsilon);
  return {max_relative_error(analytic.grads, numeric), params.element_count(), analytic.loss, redraws};
}

}  // namespace fedguard
