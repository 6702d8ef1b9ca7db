#include "modeconn/adaptive.hpp"

#include <random>

#include "modeconn/net.hpp"
#include "modeconn/rng.hpp"

namespace modeconn {

namespace {

std::pair<Model, Model> train_endpoint_pair(const ModelSpec& spec, const LabeledDataset& data,
                                            const TrainConfig& cfg) {
    TrainConfig c1 = cfg;
    TrainConfig c2 = cfg;
    c2.seed = cfg.seed + 1;
    Model w1 = train(init_model(spec, mix_seed(cfg.seed, 1)), data, c1);
    Model w2 = train(init_model(spec, mix_seed(cfg.seed, 2)), data, c2);
    return {std::move(w1), std::move(w2)};
}

}  // namespace

AdaptiveEndpoints adaptive_backdoor_endpoints(const ModelSpec& spec,
                                              const LabeledDataset& poisoned,
                                              const TrainConfig& endpoint_cfg,
                                              const PathTrainConfig& path_cfg) {
    auto [w1, w2] = train_endpoint_pair(spec, poisoned, endpoint_cfg);
    CurveSpec curve = make_curve(CurveKind::Bezier2, w1, w2, /*endpoints_trainable=*/true);
    curve = train_path(std::move(curve), poisoned, path_cfg);
    return {Model{spec, curve.w1}, Model{spec, curve.w2}};
}

AdaptiveEndpoints adaptive_injection_endpoints(const ModelSpec& spec, const LabeledDataset& data,
                                               const InjectionSpec& injspec,
                                               const TrainConfig& endpoint_cfg,
                                               const PathTrainConfig& path_cfg) {
    auto [clean1, clean2] = train_endpoint_pair(spec, data, endpoint_cfg);
    InjectionResult r1 = inject_errors(clean1, data, injspec);
    InjectionResult r2 = inject_errors(clean2, data, injspec);
    CurveSpec curve = make_curve(CurveKind::Bezier2, r1.model, r2.model,
                                 /*endpoints_trainable=*/true);
    curve = train_path(curve, data, path_cfg);
    if (injspec.steps == 0 || injspec.target_indices.empty())
        return {Model{spec, curve.w1}, Model{spec, curve.w2}};

    // Joint phase: push the injection objective through curve models at
    // t = 0, a fresh uniform draw, and 1 each step, so the gradient reaches
    // all three parameter blocks.
    int nt = static_cast<int>(injspec.target_indices.size());
    auto [target_batch, _] = make_batch(data, injspec.target_indices, 0, nt);
    Tensor keep_batch;
    std::vector<int> keep_labels;
    if (!injspec.keep_indices.empty()) {
        int nk = static_cast<int>(injspec.keep_indices.size());
        keep_batch = make_batch(data, injspec.keep_indices, 0, nk).first;
        keep_labels = predict(Model{spec, curve.w1}, keep_batch);
    }

    auto rng = make_rng(path_cfg.seed, 0xADAB);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> grid = default_grid();

    auto objective_grad = [&](const Model& m) {
        WeightVector g = grad_weights(m, target_batch, injspec.target_labels);
        if (!keep_labels.empty()) {
            WeightVector kg = grad_weights(m, keep_batch, keep_labels);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                g.data[i] += injspec.keep_weight * kg.data[i];
        }
        return g;
    };
    auto all_grid_hits = [&]() {
        for (double t : grid)
            if (injection_hits(model_at(curve, t), data, injspec) < nt) return false;
        return true;
    };

    for (int step = 0; step < injspec.steps; ++step) {
        if (all_grid_hits()) break;
        double u = unif(rng);
        for (double t : {0.0, u, 1.0}) {
            WeightVector g = objective_grad(model_at(curve, t));
            auto [c1, c2] = endpoint_scales(curve.kind, t);
            double cth = tangent_scale(curve.kind, t);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                curve.w1.data[i] -= injspec.learning_rate * c1 * g.data[i];
                curve.theta.data[i] -= injspec.learning_rate * cth * g.data[i];
                curve.w2.data[i] -= injspec.learning_rate * c2 * g.data[i];
            }
        }
    }
    return {Model{spec, curve.w1}, Model{spec, curve.w2}};
}

}  // namespace modeconn
