#include "modeconn/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "modeconn/net.hpp"
#include "modeconn/rng.hpp"
#include "modeconn/train.hpp"

namespace modeconn {

Tensor hvp(const GradFn& grad, const Tensor& x, const Tensor& v, double h) {
    double vn = norm2(v.data);
    if (vn == 0.0) throw std::invalid_argument("hvp probe direction is zero");
    if (h <= 0.0) h = 1e-4 * (1.0 + norm2(x.data)) / vn;
    Tensor shifted = x;
    for (std::size_t i = 0; i < shifted.data.size(); ++i) shifted.data[i] += h * v.data[i];
    Tensor g1 = grad(shifted);
    Tensor g0 = grad(x);
    Tensor out = g1;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = (g1.data[i] - g0.data[i]) / h;
    require_finite(out, "hessian-vector product");
    return out;
}

HessianProbe power_lambda_max(const GradFn& grad, const Tensor& x, double rel_tol, int max_iter,
                              std::uint64_t seed) {
    if (rel_tol <= 0.0) throw std::invalid_argument("rel_tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be positive");

    auto rng = make_rng(seed, 0xE16);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Tensor v(x.shape);
    for (double& e : v.data) e = gauss(rng);
    double vn = norm2(v.data);
    for (double& e : v.data) e /= vn;

    HessianProbe probe;
    double prev = 0.0;
    for (int k = 0; k < max_iter; ++k) {
        Tensor hv = hvp(grad, x, v);
        double rayleigh = dot(v.data, hv.data);
        probe.iterations_used = k + 1;
        probe.lambda_max = rayleigh;
        double hn = norm2(hv.data);
        if (hn == 0.0) {
            // x sits in the Hessian's null space along v; eigenvalue 0.
            probe.lambda_max = 0.0;
            probe.converged = true;
            break;
        }
        if (k > 0 && std::fabs(rayleigh - prev) <= rel_tol * std::max(std::fabs(rayleigh), 1e-12)) {
            probe.converged = true;
            break;  // keep v: it produced the reported Rayleigh quotient
        }
        prev = rayleigh;
        for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = hv.data[i] / hn;
    }
    probe.eigvec = v;
    Tensor g = grad(x);
    double gn = norm2(g.data);
    probe.alignment_c = gn > 0.0 ? std::fabs(dot(g.data, v.data)) / gn : 0.0;
    return probe;
}

HessianProbe input_lambda_max(const Model& model, const Tensor& image, int label, double rel_tol,
                              int max_iter, std::uint64_t seed) {
    Tensor batch = image;
    if (batch.shape.size() == 3) batch.shape.insert(batch.shape.begin(), 1);
    std::vector<int> labels{label};
    GradFn grad = [&](const Tensor& x) { return grad_input(model, x, labels); };
    return power_lambda_max(grad, batch, rel_tol, max_iter, seed);
}

double mean_lambda_max(const Model& model, const LabeledDataset& data, const HessianConfig& cfg) {
    data.validate();
    int n = std::min(cfg.samples, data.size());
    if (n < 1) throw std::invalid_argument("hessian subset is empty");
    std::vector<int> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(cfg.seed, 0x5AB);
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    for (int k = 0; k < n; ++k) {
        int i = order[static_cast<std::size_t>(k)];
        auto [batch, labels] = make_batch(data, order, k, 1);
        HessianProbe p = input_lambda_max(model, batch, labels[0], cfg.rel_tol, cfg.max_iter,
                                          mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        total += p.lambda_max;
    }
    return total / n;
}

double robustness_loss(const Model& model, const LabeledDataset& data, const PGDConfig& pgd,
                       int batch_size) {
    data.validate();
    std::vector<int> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
    double total = 0.0;
    for (int begin = 0; begin < data.size(); begin += batch_size) {
        int count = std::min(batch_size, data.size() - begin);
        auto [batch, labels] = make_batch(data, order, begin, count);
        Tensor adv = pgd_attack(model, batch, labels, pgd);
        total += forward(model, adv, labels).loss * count;
    }
    return total / data.size();
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("pearson needs two equal-length sequences of size >= 2");
    double n = static_cast<double>(a.size());
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

CorrelationResult correlation_profile(const CurveSpec& curve, const LabeledDataset& data,
                                      const PGDConfig& pgd, const std::vector<double>& grid,
                                      const HessianConfig& hessian) {
    if (grid.size() < 3) throw std::invalid_argument("correlation grid needs at least 3 points");
    std::vector<Evaluator> evals{
        {"robustness_loss", [&](const Model& m) { return robustness_loss(m, data, pgd); }},
        {"lambda_max", [&](const Model& m) { return mean_lambda_max(m, data, hessian); }},
        {"log_lambda_max",
         [&](const Model& m) { return std::log(mean_lambda_max(m, data, hessian)); }},
    };
    CorrelationResult res;
    res.profile = sample_path(curve, grid, evals);
    res.pcc = pearson(res.profile.column("lambda_max"), res.profile.column("robustness_loss"));
    return res;
}

Prop1Report prop1_toy_validation(double epsilon, const std::vector<double>& grid) {
    if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
    if (grid.size() < 3) throw std::invalid_argument("grid needs at least 3 points");

    // Unit direction in a small input space; any unit v works.
    Tensor v({4});
    v.data = {1.0, 2.0, -1.0, 0.5};
    double vn = norm2(v.data);
    for (double& e : v.data) e /= vn;
    const double c0 = 0.5, g0 = 0.7;
    auto lambda_of = [](double t) { return 1.0 + t; };

    Prop1Report rep;
    rep.t_grid = grid;
    rep.alignment_min = 1.0;
    double gn_min = std::numeric_limits<double>::infinity(), gn_max = 0.0;
    Tensor x0({4});  // origin
    for (double t : grid) {
        double lam = lambda_of(t);
        rep.lambda_exact.push_back(lam);
        // max over |delta|<=eps of c0 + g0*s + lam/2*s^2, s = v.delta in [-eps,eps]
        rep.robust_max.push_back(c0 + std::fabs(g0) * epsilon + 0.5 * lam * epsilon * epsilon);

        GradFn grad = [&, lam](const Tensor& x) {
            double s = dot(v.data, x.data);
            Tensor g = v;
            for (double& e : g.data) e *= g0 + lam * s;
            return g;
        };
        HessianProbe p = power_lambda_max(grad, x0, 1e-6, 200, 0x9A0);
        rep.lambda_power.push_back(p.lambda_max);
        rep.alignment_min = std::min(rep.alignment_min, p.alignment_c);
        double gn = norm2(grad(x0).data);
        gn_min = std::min(gn_min, gn);
        gn_max = std::max(gn_max, gn);
    }
    rep.grad_norm_spread = gn_max - gn_min;
    rep.pcc = pearson(rep.robust_max, rep.lambda_power);
    return rep;
}

namespace {

// Mean m = |s-1|/2 between input gradients of two models over a sample set.
std::pair<double, int> mean_grad_distance(const Model& a, const Model& b,
                                          const LabeledDataset& data, int max_samples) {
    int n = std::min(max_samples, data.size());
    std::vector<int> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
    double total = 0.0;
    int used = 0, skipped = 0;
    for (int i = 0; i < n; ++i) {
        auto [batch, labels] = make_batch(data, order, i, 1);
        Tensor ga = grad_input(a, batch, labels);
        Tensor gb = grad_input(b, batch, labels);
        double na = norm2(ga.data), nb = norm2(gb.data);
        if (na == 0.0 || nb == 0.0) {
            ++skipped;
            continue;
        }
        double s = dot(ga.data, gb.data) / (na * nb);
        total += std::fabs(s - 1.0) / 2.0;
        ++used;
    }
    return {used > 0 ? total / used : 0.0, skipped};
}

}  // namespace

std::vector<SimilarityRecord> input_grad_similarity(const CurveSpec& curve,
                                                    const LabeledDataset& clean,
                                                    const LabeledDataset& tampered,
                                                    const std::vector<double>& grid,
                                                    int max_samples) {
    curve.validate();
    clean.validate();
    tampered.validate();
    if (clean.size() == 0 || tampered.size() == 0)
        throw std::invalid_argument("similarity needs non-empty datasets");
    Model w1{curve.spec, curve.w1};
    Model w2{curve.spec, curve.w2};
    std::vector<SimilarityRecord> out;
    for (double t : grid) {
        Model mt = model_at(curve, t);
        SimilarityRecord rec;
        rec.t = t;
        auto [c1, sc1] = mean_grad_distance(mt, w1, clean, max_samples);
        auto [c2, sc2] = mean_grad_distance(mt, w2, clean, max_samples);
        auto [t1, st1] = mean_grad_distance(mt, w1, tampered, max_samples);
        auto [t2, st2] = mean_grad_distance(mt, w2, tampered, max_samples);
        rec.m_clean_to_w1 = c1;
        rec.m_clean_to_w2 = c2;
        rec.m_tampered_to_w1 = t1;
        rec.m_tampered_to_w2 = t2;
        rec.skipped_clean = sc1 + sc2;
        rec.skipped_tampered = st1 + st2;
        out.push_back(rec);
    }
    return out;
}

double barrier_height(const PathProfile& profile, const std::string& metric) {
    if (profile.records.size() < 3)
        throw std::invalid_argument("barrier needs interior grid points");
    const auto& recs = profile.records;
    double t_lo = recs.front().t, t_hi = recs.back().t;
    double end_lo = profile.value(0, metric);
    double end_hi = profile.value(recs.size() - 1, metric);
    if (t_lo != 0.0 || t_hi != 1.0)
        throw std::invalid_argument("barrier profile must span t=0..1");
    double endpoint_max = std::max(end_lo, end_hi);
    double interior_max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < recs.size(); ++i)
        interior_max = std::max(interior_max, profile.value(i, metric));
    return interior_max - endpoint_max;
}

EnsembleReport ensemble_eval(const CurveSpec& curve, const std::vector<double>& t_samples,
                             const LabeledDataset& data, const Model& attack_source,
                             const PGDConfig& pgd) {
    curve.validate();
    data.validate();
    if (t_samples.empty()) throw std::invalid_argument("ensemble needs at least one t sample");

    std::vector<Model> members;
    for (double t : t_samples) members.push_back(model_at(curve, t));

    std::vector<int> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
    const int batch_size = 256;
    std::int64_t clean_hits = 0, transfer_fooled = 0, source_fooled = 0;

    auto ensemble_predict = [&](const Tensor& batch) {
        int n = batch.shape[0], nc = curve.spec.num_classes;
        Tensor avg({n, nc});
        for (const Model& m : members) {
            Tensor p = softmax(forward_logits(m, batch));
            for (std::size_t i = 0; i < avg.data.size(); ++i) avg.data[i] += p.data[i];
        }
        std::vector<int> preds(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const double* row = avg.data.data() + static_cast<std::int64_t>(i) * nc;
            int best = 0;
            for (int k = 1; k < nc; ++k)
                if (row[k] > row[best]) best = k;
            preds[static_cast<std::size_t>(i)] = best;
        }
        return preds;
    };

    for (int begin = 0; begin < data.size(); begin += batch_size) {
        int count = std::min(batch_size, data.size() - begin);
        auto [batch, labels] = make_batch(data, order, begin, count);
        auto clean_preds = ensemble_predict(batch);
        Tensor adv = pgd_attack(attack_source, batch, labels, pgd);
        auto adv_preds = ensemble_predict(adv);
        auto source_preds = predict(attack_source, adv);
        for (int i = 0; i < count; ++i) {
            std::size_t k = static_cast<std::size_t>(i);
            if (clean_preds[k] == labels[k]) ++clean_hits;
            if (adv_preds[k] != labels[k]) ++transfer_fooled;
            if (source_preds[k] != labels[k]) ++source_fooled;
        }
    }
    EnsembleReport rep;
    rep.clean_accuracy = static_cast<double>(clean_hits) / data.size();
    rep.transfer_attack_success = static_cast<double>(transfer_fooled) / data.size();
    rep.source_attack_success = static_cast<double>(source_fooled) / data.size();
    return rep;
}

}  // namespace modeconn
