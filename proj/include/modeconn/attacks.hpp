#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "modeconn/data.hpp"
#include "modeconn/model.hpp"
#include "modeconn/train.hpp"

namespace modeconn {

struct PGDConfig {
    double epsilon = 8.0 / 255.0;  // l-inf radius in pixel units
    int steps = 10;
    double step_size = -1.0;  // non-positive means epsilon/4
    bool random_start = false;

    double resolved_step() const { return step_size > 0.0 ? step_size : epsilon / 4.0; }
    void validate() const;
};

// Iterated sign-gradient ascent on cross-entropy, projected after every step
// onto the epsilon ball around the input intersected with the [0,1] box.
// epsilon 0 returns the batch unchanged. Deterministic: with random_start the
// caller may pass an rng; otherwise a fixed-seed one is used.
Tensor pgd_attack(const Model& model, const Tensor& batch, const std::vector<int>& labels,
                  const PGDConfig& cfg, std::mt19937_64* rng = nullptr);

// PGD-perturbs each minibatch (true labels kept) before the weight update.
Model adv_train(Model model, const LabeledDataset& data, const PGDConfig& pgd,
                const TrainConfig& cfg);

struct InjectionSpec {
    std::vector<int> target_indices;
    std::vector<int> target_labels;  // desired wrong predictions, one per target
    std::vector<int> keep_indices;
    double keep_weight = 1.0;
    int steps = 2000;
    double learning_rate = 0.05;

    void validate(const LabeledDataset& data) const;
};

struct InjectionResult {
    Model model;
    int targets_hit = 0;
    int steps_used = 0;
    bool success = false;  // all targets classified as their target labels
};

// Penalized gradient descent on the weights: cross-entropy pushing targets
// to their target labels plus keep_weight times cross-entropy holding the
// keep set at the model's entry predictions. Stops early on full target
// success; a miss after all steps is reported, not thrown.
InjectionResult inject_errors(const Model& model, const LabeledDataset& data,
                              const InjectionSpec& spec);

// Count of targets currently classified as their target labels.
int injection_hits(const Model& model, const LabeledDataset& data, const InjectionSpec& spec);

}  // namespace modeconn
