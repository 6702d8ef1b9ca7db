#include "modeconn/repair.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "modeconn/net.hpp"
#include "modeconn/rng.hpp"

namespace modeconn {

namespace {

void require_unpoisoned(const LabeledDataset& bonafide) {
    for (const auto& m : bonafide.meta)
        if (m.poisoned) throw std::invalid_argument("bonafide data contains poisoned samples");
}

}  // namespace

std::vector<Evaluator> standard_evaluators(const LabeledDataset& clean_test,
                                           const LabeledDataset* triggered) {
    std::vector<Evaluator> evals{
        {"clean_loss", [&clean_test](const Model& m) { return mean_loss(m, clean_test); }},
        {"clean_error", [&clean_test](const Model& m) { return 1.0 - accuracy(m, clean_test); }},
    };
    if (triggered)
        evals.push_back(
            {"attack_success", [triggered](const Model& m) { return attack_success(m, *triggered); }});
    return evals;
}

RepairOutcome repair_by_connection(const Model& w1, const Model& w2,
                                   const LabeledDataset& bonafide, const PathTrainConfig& cfg,
                                   const std::vector<double>& t_grid,
                                   const std::vector<Evaluator>& evaluators, CurveKind kind) {
    if (!(w1.spec == w2.spec)) throw std::invalid_argument("endpoint model specs differ");
    require_unpoisoned(bonafide);
    CurveSpec curve = make_curve(kind, w1, w2);
    curve = train_path(std::move(curve), bonafide, cfg);
    PathProfile profile = sample_path(curve, t_grid, evaluators);
    return {std::move(curve), std::move(profile)};
}

RepairOutcome repair_single_model(const Model& w, const LabeledDataset& bonafide,
                                  const PathTrainConfig& path_cfg, const TrainConfig& finetune_cfg,
                                  const std::vector<double>& t_grid,
                                  const std::vector<Evaluator>& evaluators, CurveKind kind) {
    Model tuned = finetune(w, bonafide, finetune_cfg);
    return repair_by_connection(w, tuned, bonafide, path_cfg, t_grid, evaluators, kind);
}

Model finetune(const Model& model, const LabeledDataset& bonafide, const TrainConfig& cfg) {
    require_unpoisoned(bonafide);
    return train(model, bonafide, cfg);
}

Model train_scratch(const ModelSpec& spec, const LabeledDataset& bonafide,
                    const TrainConfig& cfg) {
    require_unpoisoned(bonafide);
    return train(init_model(spec, mix_seed(cfg.seed, 0x5C8A)), bonafide, cfg);
}

std::vector<Model> gaussian_noise_models(const Model& w1, const Model& w2, int n,
                                         std::uint64_t seed) {
    if (!(w1.spec == w2.spec)) throw std::invalid_argument("endpoint model specs differ");
    if (n < 1) throw std::invalid_argument("need at least one noisy model");
    auto rng = make_rng(seed, 0x90153);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Model> out;
    out.reserve(2 * static_cast<std::size_t>(n));
    for (const Model* base : {&w1, &w2}) {
        for (int k = 0; k < n; ++k) {
            Model noisy = *base;
            for (std::size_t i = 0; i < noisy.weights.data.size(); ++i) {
                double sd = std::fabs(w1.weights.data[i] - w2.weights.data[i]);
                if (sd > 0.0) noisy.weights.data[i] += sd * gauss(rng);
            }
            out.push_back(std::move(noisy));
        }
    }
    return out;
}

std::vector<std::uint8_t> prune_mask(const Model& model, double fraction) {
    if (fraction < 0.0 || fraction >= 1.0) throw std::invalid_argument("fraction outside [0,1)");
    const ModelSpec& spec = model.spec;
    std::vector<std::uint8_t> mask(model.weights.data.size(), 0);
    if (fraction == 0.0) return mask;

    // Find the last parameterized layer; its output units are the classes
    // and must survive.
    std::size_t last_param = spec.layers.size();
    for (std::size_t li = spec.layers.size(); li-- > 0;) {
        std::int64_t len = model.weights.layout[li].length;
        if (len > 0) {
            last_param = li;
            break;
        }
    }

    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        if (li == last_param) continue;
        const auto& l = spec.layers[li];
        std::int64_t off = model.weights.layout[li].offset;
        int units = 0;
        std::int64_t per_unit = 0;
        if (std::holds_alternative<Dense>(l)) {
            units = std::get<Dense>(l).out;
            per_unit = std::get<Dense>(l).in;
        } else if (std::holds_alternative<Conv2D>(l)) {
            const auto& c = std::get<Conv2D>(l);
            units = c.out_ch;
            per_unit = static_cast<std::int64_t>(c.in_ch) * c.kernel * c.kernel;
        } else {
            continue;
        }
        int prune_n = static_cast<int>(std::floor(fraction * units));
        if (prune_n == 0) continue;
        if (prune_n >= units)
            throw std::invalid_argument("fraction would prune an entire layer");
        std::vector<std::pair<double, int>> norms;
        for (int u = 0; u < units; ++u) {
            double l1 = 0.0;
            const double* w = model.weights.data.data() + off + u * per_unit;
            for (std::int64_t k = 0; k < per_unit; ++k) l1 += std::fabs(w[k]);
            norms.emplace_back(l1, u);
        }
        std::sort(norms.begin(), norms.end());
        std::int64_t bias_off = off + layer_bias_offset(l);
        for (int k = 0; k < prune_n; ++k) {
            int u = norms[static_cast<std::size_t>(k)].second;
            for (std::int64_t j = 0; j < per_unit; ++j)
                mask[static_cast<std::size_t>(off + u * per_unit + j)] = 1;
            mask[static_cast<std::size_t>(bias_off + u)] = 1;
        }
    }
    return mask;
}

Model prune_and_retrain(const Model& model, double fraction, const LabeledDataset& bonafide,
                        const TrainConfig& cfg) {
    require_unpoisoned(bonafide);
    cfg.validate();
    std::vector<std::uint8_t> mask = prune_mask(model, fraction);
    Model out = model;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) out.weights.data[i] = 0.0;

    // Same loop as train(), but masked coordinates take no updates so the
    // pruned units stay exactly zero.
    auto rng = make_rng(cfg.seed, 0x7124);
    std::vector<int> order(static_cast<std::size_t>(bonafide.size()));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> velocity(out.weights.data.size(), 0.0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int begin = 0; begin < bonafide.size(); begin += cfg.batch_size) {
            int count = std::min(cfg.batch_size, bonafide.size() - begin);
            auto [batch, labels] = make_batch(bonafide, order, begin, count);
            BackpropResult bp = backprop(out, batch, labels);
            double* w = out.weights.data.data();
            const double* g = bp.weight_grad.data.data();
            for (std::size_t i = 0; i < velocity.size(); ++i) {
                if (mask[i]) continue;
                velocity[i] = cfg.momentum * velocity[i] -
                              cfg.learning_rate * (g[i] + cfg.weight_decay * w[i]);
                w[i] += velocity[i];
            }
        }
    }
    return out;
}

TSelectResult select_t(const CurveSpec& curve, const LabeledDataset& bonafide,
                       const TSelectConfig& tcfg, const PathTrainConfig& path_cfg,
                       const std::vector<double>& grid) {
    curve.validate();
    require_unpoisoned(bonafide);
    if (tcfg.k < 2) throw std::invalid_argument("t-selection needs k >= 2 folds");
    if (tcfg.k > bonafide.size())
        throw std::invalid_argument("more folds than bonafide samples");
    if (tcfg.delta_a < 0.0 || tcfg.delta_a > 1.0)
        throw std::invalid_argument("delta_a outside [0,1]");

    std::vector<int> order(static_cast<std::size_t>(bonafide.size()));
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(path_cfg.seed, 0xF01D);
    std::shuffle(order.begin(), order.end(), rng);

    Model w1{curve.spec, curve.w1};
    Model w2{curve.spec, curve.w2};

    std::vector<double> acc_sum(grid.size(), 0.0);
    double endpoint_sum = 0.0;
    for (int fold = 0; fold < tcfg.k; ++fold) {
        std::vector<int> train_idx, eval_idx;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (static_cast<int>(i % static_cast<std::size_t>(tcfg.k)) == fold)
                eval_idx.push_back(order[i]);
            else
                train_idx.push_back(order[i]);
        }
        LabeledDataset train_set = subset(bonafide, train_idx);
        LabeledDataset eval_set = subset(bonafide, eval_idx);

        PathTrainConfig fold_cfg = path_cfg;
        fold_cfg.seed = mix_seed(path_cfg.seed, static_cast<std::uint64_t>(fold));
        CurveSpec fold_curve = make_curve(curve.kind, w1, w2);
        fold_curve = train_path(std::move(fold_curve), train_set, fold_cfg);

        for (std::size_t gi = 0; gi < grid.size(); ++gi)
            acc_sum[gi] += accuracy(model_at(fold_curve, grid[gi]), eval_set);
        endpoint_sum += std::max(accuracy(w1, eval_set), accuracy(w2, eval_set));
    }

    TSelectResult res;
    res.grid = grid;
    res.endpoint_accuracy = endpoint_sum / tcfg.k;
    res.mean_accuracy.resize(grid.size());
    for (std::size_t gi = 0; gi < grid.size(); ++gi) res.mean_accuracy[gi] = acc_sum[gi] / tcfg.k;

    double threshold = res.endpoint_accuracy - tcfg.delta_a;
    double best_acc = -1.0;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        double t = grid[gi];
        if (t <= 0.0 || t >= 1.0) continue;  // endpoints are the tampered models
        if (!res.qualified && res.mean_accuracy[gi] >= threshold) {
            res.t = t;
            res.qualified = true;
        }
        if (res.mean_accuracy[gi] > best_acc) {
            best_acc = res.mean_accuracy[gi];
            if (!res.qualified) res.t = t;
        }
    }
    if (std::isnan(res.t)) throw std::invalid_argument("grid has no interior points");
    return res;
}

StabilityStats stability_runs(const Model& w1, const Model& w2, const LabeledDataset& data,
                              const PathTrainConfig& cfg, const std::vector<double>& grid,
                              const std::vector<Evaluator>& evaluators, int runs, CurveKind kind) {
    if (runs < 2) throw std::invalid_argument("stability needs at least 2 runs");
    StabilityStats stats;
    stats.grid = grid;
    stats.runs = runs;
    for (const auto& ev : evaluators) stats.metric_names.push_back(ev.name);
    std::vector<std::vector<std::vector<double>>> samples(
        evaluators.size(), std::vector<std::vector<double>>(grid.size()));

    for (int r = 0; r < runs; ++r) {
        PathTrainConfig run_cfg = cfg;
        run_cfg.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(r));
        CurveSpec curve = make_curve(kind, w1, w2);
        curve = train_path(std::move(curve), data, run_cfg);
        PathProfile profile = sample_path(curve, grid, evaluators);
        for (std::size_t mi = 0; mi < evaluators.size(); ++mi)
            for (std::size_t gi = 0; gi < grid.size(); ++gi)
                samples[mi][gi].push_back(profile.value(gi, evaluators[mi].name));
    }

    stats.mean.assign(evaluators.size(), std::vector<double>(grid.size(), 0.0));
    stats.stddev.assign(evaluators.size(), std::vector<double>(grid.size(), 0.0));
    for (std::size_t mi = 0; mi < evaluators.size(); ++mi) {
        for (std::size_t gi = 0; gi < grid.size(); ++gi) {
            const auto& xs = samples[mi][gi];
            double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / runs;
            double var = 0.0;
            for (double x : xs) var += (x - mean) * (x - mean);
            stats.mean[mi][gi] = mean;
            stats.stddev[mi][gi] = std::sqrt(var / (runs - 1));
        }
    }
    return stats;
}

}  // namespace modeconn
