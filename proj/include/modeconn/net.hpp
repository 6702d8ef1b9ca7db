#pragma once

#include <vector>

#include "modeconn/model.hpp"
#include "modeconn/tensor.hpp"

namespace modeconn {

struct ForwardResult {
    Tensor logits;  // (N, num_classes)
    double loss = 0.0;
};

struct BackpropResult {
    Tensor logits;
    double loss = 0.0;
    WeightVector weight_grad;  // d(mean loss)/dw, same layout as model weights
    Tensor input_grad;         // d(mean loss)/dx, same shape as the batch
};

// Mean softmax cross-entropy over the batch. Labels must lie in
// [0, num_classes). Throws on shape mismatch or non-finite activations.
ForwardResult forward(const Model& model, const Tensor& batch, const std::vector<int>& labels);

// Logits only; no labels needed.
Tensor forward_logits(const Model& model, const Tensor& batch);

// One reverse pass computes both gradients; forward activations are cached
// internally. Deterministic: fixed summation order throughout.
BackpropResult backprop(const Model& model, const Tensor& batch, const std::vector<int>& labels);

WeightVector grad_weights(const Model& model, const Tensor& batch, const std::vector<int>& labels);
Tensor grad_input(const Model& model, const Tensor& batch, const std::vector<int>& labels);

// Row-wise softmax of logits.
Tensor softmax(const Tensor& logits);

std::vector<int> predict(const Model& model, const Tensor& batch);

}  // namespace modeconn
