#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "modeconn/landscape.hpp"
#include "modeconn/net.hpp"
#include "modeconn/rng.hpp"
#include "modeconn/train.hpp"

using namespace modeconn;

namespace {

// Quadratic loss 1/2 x^T H x as a gradient oracle: grad(x) = H x.
GradFn quadratic_grad(const std::vector<std::vector<double>>& H) {
    return [H](const Tensor& x) {
        Tensor g(x.shape);
        std::size_t n = x.data.size();
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += H[i][j] * x.data[j];
            g.data[i] = acc;
        }
        return g;
    };
}

double dot(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

std::vector<std::vector<double>> random_symmetric(int dim, std::uint64_t seed) {
    auto rng = make_rng(seed, 0x515);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> H(dim, std::vector<double>(dim, 0.0));
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j <= i; ++j) {
            double v = gauss(rng);
            H[i][j] = v;
            H[j][i] = v;
        }
    return H;
}

double dominant_eigenvalue(const std::vector<std::vector<double>>& H) {
    int n = static_cast<int>(H.size());
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) M(i, j) = H[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(M);
    const auto& ev = solver.eigenvalues();
    double best = ev(0);
    for (int i = 1; i < n; ++i)
        if (std::abs(ev(i)) > std::abs(best)) best = ev(i);
    return best;
}

}  // namespace

TEST_CASE("finite-difference Hessian-vector products are exact on quadratics") {
    std::vector<std::vector<double>> H{{3.0, 0.0}, {0.0, 1.0}};
    GradFn grad = quadratic_grad(H);
    Tensor x({2});
    x.data = {0.4, -0.2};
    Tensor v({2});
    v.data = {1.0, 0.0};
    Tensor hv = hvp(grad, x, v);
    CHECK(hv.data[0] == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(hv.data[1] == doctest::Approx(0.0).epsilon(1e-6));

    Tensor zero({2});
    CHECK_THROWS_AS(hvp(grad, x, zero), std::invalid_argument);
}

TEST_CASE("Hessian-vector products are symmetric in their probe directions") {
    auto H = random_symmetric(6, 31);
    GradFn grad = quadratic_grad(H);
    auto rng = make_rng(4, 2);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Tensor x({6}), u({6}), v({6});
    for (int i = 0; i < 6; ++i) {
        x.data[static_cast<std::size_t>(i)] = gauss(rng);
        u.data[static_cast<std::size_t>(i)] = gauss(rng);
        v.data[static_cast<std::size_t>(i)] = gauss(rng);
    }
    double uhv = dot(u, hvp(grad, x, v));
    double vhu = dot(v, hvp(grad, x, u));
    CHECK(std::abs(uhv - vhu) < 1e-3 * std::max(1.0, std::abs(uhv)));
}

TEST_CASE("power iteration recovers dominant eigenvalues with sign") {
    std::vector<std::vector<double>> H{{3.0, 0.0}, {0.0, 1.0}};
    Tensor x({2});
    HessianProbe probe = power_lambda_max(quadratic_grad(H), x, 1e-8, 200, 5);
    CHECK(probe.converged);
    CHECK(probe.lambda_max == doctest::Approx(3.0).epsilon(1e-5));
    CHECK(std::abs(norm2(probe.eigvec) - 1.0) < 1e-10);
    CHECK(std::abs(probe.eigvec.data[0]) == doctest::Approx(1.0).epsilon(1e-4));

    // negative-definite direction dominates: the signed estimate is negative
    std::vector<std::vector<double>> N{{-4.0, 0.0}, {0.0, 1.0}};
    HessianProbe neg = power_lambda_max(quadratic_grad(N), x, 1e-8, 200, 5);
    CHECK(neg.lambda_max == doctest::Approx(-4.0).epsilon(1e-5));

    // random symmetric systems against the dense solver
    for (int dim : {4, 9}) {
        auto M = random_symmetric(dim, static_cast<std::uint64_t>(dim) * 7 + 1);
        Tensor origin({dim});
        HessianProbe p = power_lambda_max(quadratic_grad(M), origin, 1e-4, 500, 11);
        double oracle = dominant_eigenvalue(M);
        CHECK(std::abs(p.lambda_max - oracle) <= 1e-3 * std::abs(oracle));
    }
}

TEST_CASE("input-Hessian probe of a trained model is positive at a confident sample") {
    LabeledDataset ds = gen_synthetic(3, 6, 8, 0.2, 41);
    ModelSpec spec = mlp_spec({1, 8, 8}, 6, 3);
    Model model = train(init_model(spec, 1), ds, {20, 6, 0.05, 0.9, 0.0, 2});
    Tensor img({1, 8, 8});
    std::copy(ds.images.data.begin(), ds.images.data.begin() + 64, img.data.begin());
    HessianProbe probe = input_lambda_max(model, img, ds.labels[0]);
    CHECK(probe.iterations_used >= 1);
    CHECK(std::isfinite(probe.lambda_max));
    CHECK(probe.alignment_c >= 0.0);
    CHECK(probe.alignment_c <= 1.0 + 1e-12);

    HessianConfig cfg;
    cfg.samples = 4;
    double mean1 = mean_lambda_max(model, ds, cfg);
    double mean2 = mean_lambda_max(model, ds, cfg);
    CHECK(mean1 == mean2);  // same seeded subset, same starts
}

TEST_CASE("pearson correlation matches hand-computed values") {
    CHECK(pearson({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(pearson({1, 2, 3}, {10, 20, 30}) == doctest::Approx(1.0));
    CHECK(pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(std::isnan(pearson({1, 1, 1}, {1, 2, 3})));
    CHECK_THROWS_AS(pearson({1}, {2}), std::invalid_argument);
    CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("the closed-form curvature family correlates perfectly with its ball maximum") {
    std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
    Prop1Report rep = prop1_toy_validation(8.0 / 255.0, grid);
    REQUIRE(rep.t_grid.size() == grid.size());
    CHECK(rep.pcc > 0.999);
    CHECK(rep.alignment_min > 0.999);
    CHECK(rep.grad_norm_spread < 1e-9);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        CHECK(rep.lambda_exact[i] == doctest::Approx(1.0 + grid[i]).epsilon(1e-12));
        CHECK(rep.lambda_power[i] == doctest::Approx(rep.lambda_exact[i]).epsilon(1e-4));
        // max over the ball of c0 + g0 (v.x) + lambda/2 (v.x)^2 at |x|<=eps
        double eps = 8.0 / 255.0;
        double expect = 0.5 + 0.7 * eps + 0.5 * rep.lambda_exact[i] * eps * eps;
        CHECK(rep.robust_max[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("input-gradient distance is zero against the endpoint itself") {
    LabeledDataset ds = gen_synthetic(3, 4, 8, 0.2, 51);
    ModelSpec spec = mlp_spec({1, 8, 8}, 5, 3);
    Model w1 = train(init_model(spec, 1), ds, {8, 6, 0.05, 0.9, 0.0, 3});
    Model w2 = train(init_model(spec, 2), ds, {8, 6, 0.05, 0.9, 0.0, 4});
    CurveSpec curve = make_curve(CurveKind::Bezier2, w1, w2);

    auto records = input_grad_similarity(curve, ds, ds, {0.0, 0.5, 1.0}, 6);
    REQUIRE(records.size() == 3);
    CHECK(records[0].m_clean_to_w1 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(records[2].m_clean_to_w2 == doctest::Approx(0.0).epsilon(1e-12));
    for (const auto& r : records) {
        CHECK(r.m_clean_to_w1 >= 0.0);
        CHECK(r.m_clean_to_w1 <= 1.0 + 1e-12);
        CHECK(r.m_tampered_to_w2 >= 0.0);
        CHECK(r.m_tampered_to_w2 <= 1.0 + 1e-12);
    }
}

TEST_CASE("barrier height is interior max minus the larger endpoint") {
    PathProfile profile;
    profile.t_grid = {0.0, 0.5, 1.0};
    profile.metric_names = {"loss"};
    profile.records.resize(3);
    auto set = [&](int i, double t, double v) {
        profile.records[static_cast<std::size_t>(i)].t = t;
        profile.records[static_cast<std::size_t>(i)].values = {{"loss", v}};
    };
    set(0, 0.0, 1.0);
    set(1, 0.5, 3.0);
    set(2, 1.0, 1.0);
    CHECK(barrier_height(profile, "loss") == doctest::Approx(2.0));

    set(1, 0.5, 0.5);  // flat-ish path: no barrier
    CHECK(barrier_height(profile, "loss") < 0.0);

    PathProfile two;
    two.t_grid = {0.0, 1.0};
    CHECK_THROWS_AS(barrier_height(two, "loss"), std::invalid_argument);
}

TEST_CASE("path ensembles average probabilities and report transfer rates") {
    LabeledDataset ds = gen_synthetic(3, 5, 8, 0.25, 61);
    ModelSpec spec = mlp_spec({1, 8, 8}, 6, 3);
    Model w1 = train(init_model(spec, 1), ds, {15, 8, 0.05, 0.9, 0.0, 5});
    Model w2 = train(init_model(spec, 2), ds, {15, 8, 0.05, 0.9, 0.0, 6});
    CurveSpec curve = make_curve(CurveKind::Bezier2, w1, w2);

    PGDConfig pgd;
    pgd.epsilon = 0.1;
    pgd.steps = 5;

    // a single-member "ensemble" at t=0 behaves exactly like w1
    EnsembleReport solo = ensemble_eval(curve, {0.0}, ds, w1, pgd);
    CHECK(solo.clean_accuracy == doctest::Approx(accuracy(w1, ds)));
    CHECK(solo.transfer_attack_success == doctest::Approx(solo.source_attack_success));

    EnsembleReport rep = ensemble_eval(curve, {0.0, 0.5, 1.0}, ds, w1, pgd);
    CHECK(rep.clean_accuracy >= 0.0);
    CHECK(rep.clean_accuracy <= 1.0);
    // white-box examples transfer imperfectly to the ensemble
    CHECK(rep.transfer_attack_success <= rep.source_attack_success + 1e-12);
}
