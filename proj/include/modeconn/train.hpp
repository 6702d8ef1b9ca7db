#pragma once

#include <cstdint>
#include <functional>

#include "modeconn/data.hpp"
#include "modeconn/model.hpp"
#include "modeconn/net.hpp"

namespace modeconn {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Called on each minibatch before the gradient step; used for adversarial
// training. Receives the current model and may rewrite the batch in place.
using BatchTransform = std::function<void(const Model&, Tensor&, std::vector<int>&)>;

// SGD with momentum over seeded-shuffled minibatches. Bit-identical results
// for identical (model, data, cfg). Throws on divergence with the epoch and
// batch in the message.
Model train(Model model, const LabeledDataset& data, const TrainConfig& cfg,
            const BatchTransform& transform = nullptr);

double accuracy(const Model& model, const LabeledDataset& data, int batch_size = 256);
double mean_loss(const Model& model, const LabeledDataset& data, int batch_size = 256);

// Fraction of samples classified as their (tampered) label; on a triggered
// dataset this is the attack success rate, and 1 minus it the failure rate.
double attack_success(const Model& model, const LabeledDataset& triggered, int batch_size = 256);

// Fraction of samples whose prediction differs from meta.original_label.
double pred_error_vs_true(const Model& model, const LabeledDataset& triggered,
                          int batch_size = 256);

}  // namespace modeconn
