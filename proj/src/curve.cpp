#include "modeconn/curve.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "modeconn/net.hpp"
#include "modeconn/rng.hpp"

namespace modeconn {

std::string curve_kind_name(CurveKind kind) {
    return kind == CurveKind::Bezier2 ? "bezier2" : "polychain1";
}

CurveKind curve_kind_from(const std::string& name) {
    if (name == "bezier2") return CurveKind::Bezier2;
    if (name == "polychain1") return CurveKind::PolyChain1;
    throw std::invalid_argument("unknown curve kind: " + name);
}

void CurveSpec::validate() const {
    spec.validate();
    WeightVector ref = make_weight_vector(spec);
    if (!w1.layout_matches(ref) || !w2.layout_matches(ref) || !theta.layout_matches(ref))
        throw std::invalid_argument("curve weight layouts do not match the model spec");
    if (w1.size() != ref.size() || w2.size() != ref.size() || theta.size() != ref.size())
        throw std::invalid_argument("curve weight sizes do not match the model spec");
}

CurveSpec make_curve(CurveKind kind, const Model& w1, const Model& w2, bool endpoints_trainable) {
    if (!(w1.spec == w2.spec)) throw std::invalid_argument("endpoint model specs differ");
    CurveSpec c;
    c.kind = kind;
    c.spec = w1.spec;
    c.w1 = w1.weights;
    c.w2 = w2.weights;
    c.theta = w1.weights;
    for (std::size_t i = 0; i < c.theta.data.size(); ++i)
        c.theta.data[i] = 0.5 * (w1.weights.data[i] + w2.weights.data[i]);
    c.endpoints_trainable = endpoints_trainable;
    c.validate();
    return c;
}

namespace {

void check_t(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("t outside [0,1]");
}

}  // namespace

WeightVector curve_point(const CurveSpec& curve, double t) {
    check_t(t);
    if (t == 0.0) return curve.w1;
    if (t == 1.0) return curve.w2;
    WeightVector out = curve.theta;
    const double* a = curve.w1.data.data();
    const double* b = curve.w2.data.data();
    const double* th = curve.theta.data.data();
    if (curve.kind == CurveKind::Bezier2) {
        double ca = (1.0 - t) * (1.0 - t);
        double cth = 2.0 * t * (1.0 - t);
        double cb = t * t;
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = ca * a[i] + cth * th[i] + cb * b[i];
    } else if (t <= 0.5) {
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = 2.0 * (t * th[i] + (0.5 - t) * a[i]);
    } else {
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = 2.0 * ((t - 0.5) * b[i] + (1.0 - t) * th[i]);
    }
    return out;
}

Model model_at(const CurveSpec& curve, double t) {
    Model m;
    m.spec = curve.spec;
    m.weights = curve_point(curve, t);
    return m;
}

double tangent_scale(CurveKind kind, double t) {
    check_t(t);
    if (kind == CurveKind::Bezier2) return 2.0 * t * (1.0 - t);
    return t <= 0.5 ? 2.0 * t : 2.0 * (1.0 - t);
}

std::pair<double, double> endpoint_scales(CurveKind kind, double t) {
    check_t(t);
    if (kind == CurveKind::Bezier2) return {(1.0 - t) * (1.0 - t), t * t};
    if (t <= 0.5) return {1.0 - 2.0 * t, 0.0};
    return {0.0, 2.0 * t - 1.0};
}

void PathTrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum outside [0,1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
}

namespace {

CurveSpec train_path_impl(CurveSpec curve, const LabeledDataset& data, const PathTrainConfig& cfg,
                          const BatchTransform& transform) {
    cfg.validate();
    curve.validate();
    data.validate();
    if (data.size() == 0) throw std::invalid_argument("empty path-training set");
    if (data.num_classes != curve.spec.num_classes)
        throw std::invalid_argument("dataset/curve class count mismatch");

    auto rng = make_rng(cfg.seed, 0xC0AF);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<int> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);

    std::size_t dim = curve.theta.data.size();
    std::vector<double> v_theta(dim, 0.0), v_w1, v_w2;
    if (curve.endpoints_trainable) {
        v_w1.assign(dim, 0.0);
        v_w2.assign(dim, 0.0);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int begin = 0; begin < data.size(); begin += cfg.batch_size) {
            int count = std::min(cfg.batch_size, data.size() - begin);
            auto [batch, labels] = make_batch(data, order, begin, count);
            double t = unif(rng);
            Model m = model_at(curve, t);
            if (transform) transform(m, batch, labels);
            WeightVector grad;
            try {
                grad = grad_weights(m, batch, labels);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("path training diverged at epoch " +
                                         std::to_string(epoch) + " batch " +
                                         std::to_string(begin / cfg.batch_size) + ": " + e.what());
            }
            double s = tangent_scale(curve.kind, t);
            const double* g = grad.data.data();
            double* th = curve.theta.data.data();
            for (std::size_t i = 0; i < dim; ++i) {
                v_theta[i] = cfg.momentum * v_theta[i] -
                             cfg.learning_rate * (s * g[i] + cfg.weight_decay * th[i]);
                th[i] += v_theta[i];
            }
            if (curve.endpoints_trainable) {
                auto [c1, c2] = endpoint_scales(curve.kind, t);
                double* a = curve.w1.data.data();
                double* b = curve.w2.data.data();
                for (std::size_t i = 0; i < dim; ++i) {
                    v_w1[i] = cfg.momentum * v_w1[i] -
                              cfg.learning_rate * (c1 * g[i] + cfg.weight_decay * a[i]);
                    a[i] += v_w1[i];
                    v_w2[i] = cfg.momentum * v_w2[i] -
                              cfg.learning_rate * (c2 * g[i] + cfg.weight_decay * b[i]);
                    b[i] += v_w2[i];
                }
            }
        }
    }
    return curve;
}

}  // namespace

CurveSpec train_path(CurveSpec curve, const LabeledDataset& data, const PathTrainConfig& cfg) {
    return train_path_impl(std::move(curve), data, cfg, nullptr);
}

CurveSpec train_path_robust(CurveSpec curve, const LabeledDataset& data, const PGDConfig& pgd,
                            const PathTrainConfig& cfg) {
    pgd.validate();
    return train_path_impl(std::move(curve), data, cfg,
                           [&pgd](const Model& m, Tensor& batch, std::vector<int>& labels) {
                               batch = pgd_attack(m, batch, labels, pgd);
                           });
}

double PathProfile::value(std::size_t record_idx, const std::string& metric) const {
    if (record_idx >= records.size()) throw std::invalid_argument("record index out of range");
    for (const auto& [name, v] : records[record_idx].values)
        if (name == metric) return v;
    for (const auto& [name, msg] : records[record_idx].errors)
        if (name == metric)
            throw std::invalid_argument("metric " + metric + " failed at t=" +
                                        std::to_string(records[record_idx].t) + ": " + msg);
    throw std::invalid_argument("metric not in profile: " + metric);
}

std::vector<double> PathProfile::column(const std::string& metric) const {
    std::vector<double> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) out.push_back(value(i, metric));
    return out;
}

PathProfile sample_path(const CurveSpec& curve, const std::vector<double>& t_grid,
                        const std::vector<Evaluator>& evaluators) {
    curve.validate();
    for (double t : t_grid) check_t(t);
    PathProfile profile;
    profile.t_grid = t_grid;
    for (const auto& ev : evaluators) profile.metric_names.push_back(ev.name);
    for (double t : t_grid) {
        PathRecord rec;
        rec.t = t;
        Model m = model_at(curve, t);
        for (const auto& ev : evaluators) {
            try {
                rec.values.emplace_back(ev.name, ev.fn(m));
            } catch (const std::exception& e) {
                rec.errors.emplace_back(ev.name, e.what());
            }
        }
        profile.records.push_back(std::move(rec));
    }
    return profile;
}

std::vector<double> default_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
    return g;
}

}  // namespace modeconn
