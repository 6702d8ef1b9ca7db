#include "modeconn/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "modeconn/rng.hpp"

namespace modeconn {

void PGDConfig::validate() const {
    if (epsilon < 0.0) throw std::invalid_argument("pgd epsilon must be non-negative");
    if (steps < 1) throw std::invalid_argument("pgd steps must be positive");
    if (epsilon > 0.0 && resolved_step() <= 0.0)
        throw std::invalid_argument("pgd step size must be positive");
}

Tensor pgd_attack(const Model& model, const Tensor& batch, const std::vector<int>& labels,
                  const PGDConfig& cfg, std::mt19937_64* rng) {
    cfg.validate();
    for (double v : batch.data)
        if (v < 0.0 || v > 1.0) throw std::invalid_argument("pgd input outside [0,1] box");
    if (cfg.epsilon == 0.0) return batch;

    double eta = cfg.resolved_step();
    Tensor delta(batch.shape);
    if (cfg.random_start) {
        std::mt19937_64 local = make_rng(0x5EED, 0xADF);
        std::mt19937_64& r = rng ? *rng : local;
        std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
        for (double& v : delta.data) v = u(r);
        for (std::size_t i = 0; i < delta.data.size(); ++i)
            delta.data[i] = std::clamp(batch.data[i] + delta.data[i], 0.0, 1.0) - batch.data[i];
    }

    Tensor adv = batch;
    for (std::size_t i = 0; i < adv.data.size(); ++i) adv.data[i] += delta.data[i];
    for (int k = 0; k < cfg.steps; ++k) {
        Tensor g = grad_input(model, adv, labels);
        for (std::size_t i = 0; i < delta.data.size(); ++i) {
            double s = g.data[i] > 0.0 ? 1.0 : (g.data[i] < 0.0 ? -1.0 : 0.0);
            double d = std::clamp(delta.data[i] + eta * s, -cfg.epsilon, cfg.epsilon);
            d = std::clamp(batch.data[i] + d, 0.0, 1.0) - batch.data[i];
            delta.data[i] = d;
            adv.data[i] = batch.data[i] + d;
        }
    }
    return adv;
}

Model adv_train(Model model, const LabeledDataset& data, const PGDConfig& pgd,
                const TrainConfig& cfg) {
    pgd.validate();
    return train(std::move(model), data, cfg,
                 [&pgd](const Model& m, Tensor& batch, std::vector<int>& labels) {
                     batch = pgd_attack(m, batch, labels, pgd);
                 });
}

void InjectionSpec::validate(const LabeledDataset& data) const {
    if (target_labels.size() != target_indices.size())
        throw std::invalid_argument("one target label required per target index");
    if (keep_weight <= 0.0) throw std::invalid_argument("keep_weight must be positive");
    if (steps < 0) throw std::invalid_argument("steps must be non-negative");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
    std::unordered_set<int> targets(target_indices.begin(), target_indices.end());
    if (targets.size() != target_indices.size())
        throw std::invalid_argument("duplicate target indices");
    for (int i : keep_indices)
        if (targets.count(i)) throw std::invalid_argument("target and keep sets overlap");
    for (std::size_t k = 0; k < target_indices.size(); ++k) {
        int i = target_indices[k];
        if (i < 0 || i >= data.size()) throw std::invalid_argument("target index out of range");
        int y = target_labels[k];
        if (y < 0 || y >= data.num_classes)
            throw std::invalid_argument("target label out of range");
        if (y == data.labels[static_cast<std::size_t>(i)])
            throw std::invalid_argument("target label equals original label at index " +
                                        std::to_string(i));
    }
    for (int i : keep_indices)
        if (i < 0 || i >= data.size()) throw std::invalid_argument("keep index out of range");
}

int injection_hits(const Model& model, const LabeledDataset& data, const InjectionSpec& spec) {
    if (spec.target_indices.empty()) return 0;
    auto [batch, _] = make_batch(data, spec.target_indices, 0,
                                 static_cast<int>(spec.target_indices.size()));
    auto preds = predict(model, batch);
    int hits = 0;
    for (std::size_t k = 0; k < preds.size(); ++k)
        if (preds[k] == spec.target_labels[k]) ++hits;
    return hits;
}

InjectionResult inject_errors(const Model& model, const LabeledDataset& data,
                              const InjectionSpec& spec) {
    data.validate();
    spec.validate(data);
    InjectionResult res;
    res.model = model;
    if (spec.target_indices.empty()) {
        res.success = true;
        return res;
    }

    int nt = static_cast<int>(spec.target_indices.size());
    auto [target_batch, _] = make_batch(data, spec.target_indices, 0, nt);
    const std::vector<int>& target_labels = spec.target_labels;

    Tensor keep_batch;
    std::vector<int> keep_labels;  // entry predictions, held fixed
    if (!spec.keep_indices.empty()) {
        int nk = static_cast<int>(spec.keep_indices.size());
        keep_batch = make_batch(data, spec.keep_indices, 0, nk).first;
        keep_labels = predict(model, keep_batch);
    }

    for (int step = 0; step < spec.steps; ++step) {
        res.targets_hit = injection_hits(res.model, data, spec);
        if (res.targets_hit == nt) {
            res.success = true;
            return res;
        }
        WeightVector grad = grad_weights(res.model, target_batch, target_labels);
        if (!keep_labels.empty()) {
            WeightVector kg = grad_weights(res.model, keep_batch, keep_labels);
            for (std::size_t i = 0; i < grad.data.size(); ++i)
                grad.data[i] += spec.keep_weight * kg.data[i];
        }
        for (std::size_t i = 0; i < grad.data.size(); ++i)
            res.model.weights.data[i] -= spec.learning_rate * grad.data[i];
        res.steps_used = step + 1;
    }
    res.targets_hit = injection_hits(res.model, data, spec);
    res.success = res.targets_hit == nt;
    return res;
}

}  // namespace modeconn
