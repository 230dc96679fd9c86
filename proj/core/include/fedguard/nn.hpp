#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedguard/model.hpp"
#include "fedguard/rng.hpp"
#include "fedguard/tensor.hpp"

namespace fedguard {

// inputs is [B, C, H, W]; labels holds B class indices.
struct Batch {
  Tensor inputs;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

// Copies the selected samples out of an [N, C, H, W] image tensor.
Batch gather_batch(const Tensor& images, std::span<const int> labels,
                   std::span<const std::size_t> indices);

// Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero.
ModelParams init_params(const ModelSpec& spec, Rng& rng);

// Logits [B, classes].
Tensor forward(const ModelSpec& spec, const ModelParams& params, const Tensor& inputs);

// Row-wise softmax of a [B, K] tensor.
Tensor softmax(const Tensor& logits);

struct LossAndGrad {
  double loss = 0.0;
  ModelParams grads;
};

// Mean softmax cross-entropy over the batch and its exact gradient.
LossAndGrad loss_and_grad(const ModelSpec& spec, const ModelParams& params, const Batch& batch);

// Mean softmax cross-entropy without the backward pass.
double batch_loss(const ModelSpec& spec, const ModelParams& params, const Batch& batch);

ModelParams sgd_step(const ModelParams& params, const ModelParams& grads, double lr);
void sgd_step_inplace(ModelParams& params, const ModelParams& grads, double lr);

// Central differences, one coordinate at a time. Used as the oracle for
// loss_and_grad; cost is 2 * element_count forward passes.
ModelParams finite_diff_grad(const ModelSpec& spec, const ModelParams& params, const Batch& batch,
                             double epsilon);

// |a - b| / max(|a|, |b|, floor), maximised over all coordinates.
double max_relative_error(const ModelParams& a, const ModelParams& b, double floor = 1e-6);

// Fraction of samples whose argmax logit (lowest index on ties) equals the label.
double accuracy(const ModelSpec& spec, const ModelParams& params, const Tensor& images,
                std::span<const int> labels);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean cross-entropy and accuracy over `indices` (all samples when empty),
// processed in chunks so large test sets stay within memory.
Evaluation evaluate(const ModelSpec& spec, const ModelParams& params, const Tensor& images,
                    std::span<const int> labels, std::span<const std::size_t> indices = {},
                    std::size_t chunk = 512);

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  double loss = 0.0;
  std::size_t redraws = 0;  // batches rejected for sitting near a kink
};

// Compares loss_and_grad against finite_diff_grad on a seeded random batch
// of inputs in [0, 1), redrawn until every ReLU input and pooling margin is
// more than 100 * epsilon from its kink. `fault` is added to the first
// analytic gradient element (used to prove the check can fail).
GradcheckReport gradient_check(const ModelSpec& spec, std::uint64_t seed, std::size_t batch_size = 4,
                               double epsilon = 1e-5, double fault = 0.0);

}  // namespace fedguard
