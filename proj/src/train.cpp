#include "modeconn/train.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "modeconn/rng.hpp"

namespace modeconn {

void TrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum outside [0,1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
}

Model train(Model model, const LabeledDataset& data, const TrainConfig& cfg,
            const BatchTransform& transform) {
    cfg.validate();
    data.validate();
    if (data.size() == 0) throw std::invalid_argument("empty training set");
    if (data.num_classes != model.spec.num_classes)
        throw std::invalid_argument("dataset/model class count mismatch");

    auto rng = make_rng(cfg.seed, 0x7124);
    std::vector<int> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> velocity(model.weights.data.size(), 0.0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int begin = 0; begin < data.size(); begin += cfg.batch_size) {
            int count = std::min(cfg.batch_size, data.size() - begin);
            auto [batch, labels] = make_batch(data, order, begin, count);
            if (transform) transform(model, batch, labels);
            BackpropResult bp;
            try {
                bp = backprop(model, batch, labels);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                         " batch " + std::to_string(begin / cfg.batch_size) + ": " +
                                         e.what());
            }
            double* w = model.weights.data.data();
            const double* g = bp.weight_grad.data.data();
            for (std::size_t i = 0; i < velocity.size(); ++i) {
                velocity[i] =
                    cfg.momentum * velocity[i] - cfg.learning_rate * (g[i] + cfg.weight_decay * w[i]);
                w[i] += velocity[i];
            }
        }
    }
    return model;
}

namespace {

// Applies fn to each evaluation batch in index order.
template <typename Fn>
void for_batches(const LabeledDataset& data, int batch_size, Fn&& fn) {
    data.validate();
    std::vector<int> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
    for (int begin = 0; begin < data.size(); begin += batch_size) {
        int count = std::min(batch_size, data.size() - begin);
        auto [batch, labels] = make_batch(data, order, begin, count);
        fn(batch, labels, begin, count);
    }
}

}  // namespace

double accuracy(const Model& model, const LabeledDataset& data, int batch_size) {
    std::int64_t hits = 0;
    for_batches(data, batch_size, [&](const Tensor& batch, const std::vector<int>& labels, int, int) {
        auto preds = predict(model, batch);
        for (std::size_t i = 0; i < preds.size(); ++i)
            if (preds[i] == labels[i]) ++hits;
    });
    return static_cast<double>(hits) / data.size();
}

double mean_loss(const Model& model, const LabeledDataset& data, int batch_size) {
    double total = 0.0;
    for_batches(data, batch_size,
                [&](const Tensor& batch, const std::vector<int>& labels, int, int count) {
                    total += forward(model, batch, labels).loss * count;
                });
    return total / data.size();
}

double attack_success(const Model& model, const LabeledDataset& triggered, int batch_size) {
    return accuracy(model, triggered, batch_size);
}

double pred_error_vs_true(const Model& model, const LabeledDataset& triggered, int batch_size) {
    std::int64_t errors = 0;
    for_batches(triggered, batch_size,
                [&](const Tensor& batch, const std::vector<int>&, int begin, int count) {
                    auto preds = predict(model, batch);
                    for (int i = 0; i < count; ++i)
                        if (preds[static_cast<std::size_t>(i)] !=
                            triggered.meta[static_cast<std::size_t>(begin + i)].original_label)
                            ++errors;
                });
    return static_cast<double>(errors) / triggered.size();
}

}  // namespace modeconn
