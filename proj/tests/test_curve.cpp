#include "doctest.h"

#include <cmath>

#include "modeconn/attacks.hpp"
#include "modeconn/curve.hpp"
#include "modeconn/data.hpp"
#include "modeconn/net.hpp"
#include "modeconn/rng.hpp"
#include "modeconn/train.hpp"

using namespace modeconn;

namespace {

// Tiny curve for algebra checks: the given coordinates land in the first
// slots of a minimal 1-input dense model (4 weights total, rest zero).
CurveSpec toy_curve(CurveKind kind, std::vector<double> w1, std::vector<double> w2,
                    std::vector<double> theta) {
    ModelSpec spec;
    spec.input_shape = {1, 1, 1};
    spec.num_classes = 2;
    spec.layers = {Flatten{}, Dense{1, 2}};
    Model m1 = make_model(spec);
    Model m2 = make_model(spec);
    std::copy(w1.begin(), w1.end(), m1.weights.data.begin());
    std::copy(w2.begin(), w2.end(), m2.weights.data.begin());
    CurveSpec curve = make_curve(kind, m1, m2);
    std::copy(theta.begin(), theta.end(), curve.theta.data.begin());
    return curve;
}

}  // namespace

TEST_CASE("curve endpoints are the given models, bit for bit") {
    for (CurveKind kind : {CurveKind::Bezier2, CurveKind::PolyChain1}) {
        CurveSpec curve = toy_curve(kind, {0.1, -0.7}, {0.3, 0.9}, {5.0, -5.0});
        CHECK(curve_point(curve, 0.0).data == curve.w1.data);
        CHECK(curve_point(curve, 1.0).data == curve.w2.data);
        CHECK_THROWS_AS(curve_point(curve, -0.01), std::invalid_argument);
        CHECK_THROWS_AS(curve_point(curve, 1.01), std::invalid_argument);
    }
}

TEST_CASE("quadratic Bezier midpoint matches direct substitution") {
    CurveSpec curve = toy_curve(CurveKind::Bezier2, {1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0});
    WeightVector mid = curve_point(curve, 0.5);
    CHECK(mid.data[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(mid.data[1] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("polygonal chain matches direct substitution and is continuous at the bend") {
    CurveSpec curve = toy_curve(CurveKind::PolyChain1, {0.0, 0.0}, {4.0, 4.0}, {2.0, 2.0});
    CHECK(curve_point(curve, 0.25).data[0] == doctest::Approx(1.0).epsilon(1e-15));

    // both branches evaluate to theta exactly at t = 0.5
    CurveSpec bent = toy_curve(CurveKind::PolyChain1, {1.0, -2.0}, {3.0, 5.0}, {0.25, 0.125});
    WeightVector at_half = curve_point(bent, 0.5);
    CHECK(at_half.data[0] == 0.25);
    CHECK(at_half.data[1] == 0.125);
    double eps = 1e-9;
    WeightVector lo = curve_point(bent, 0.5 - eps);
    WeightVector hi = curve_point(bent, 0.5 + eps);
    CHECK(std::abs(lo.data[0] - hi.data[0]) < 1e-7);
    CHECK(std::abs(lo.data[1] - hi.data[1]) < 1e-7);
}

TEST_CASE("tangent and endpoint scale factors match the curve derivatives") {
    CHECK(tangent_scale(CurveKind::Bezier2, 0.5) == doctest::Approx(0.5));
    CHECK(tangent_scale(CurveKind::Bezier2, 0.0) == 0.0);
    CHECK(tangent_scale(CurveKind::Bezier2, 0.25) == doctest::Approx(2 * 0.25 * 0.75));
    CHECK(tangent_scale(CurveKind::PolyChain1, 0.25) == doctest::Approx(0.5));
    CHECK(tangent_scale(CurveKind::PolyChain1, 0.75) == doctest::Approx(0.5));
    CHECK(tangent_scale(CurveKind::PolyChain1, 0.5) == doctest::Approx(1.0));

    auto [c1, c2] = endpoint_scales(CurveKind::Bezier2, 0.25);
    CHECK(c1 == doctest::Approx(0.75 * 0.75));
    CHECK(c2 == doctest::Approx(0.25 * 0.25));
    auto [p1, p2] = endpoint_scales(CurveKind::PolyChain1, 0.25);
    CHECK(p1 == doctest::Approx(0.5));
    CHECK(p2 == 0.0);
    auto [q1, q2] = endpoint_scales(CurveKind::PolyChain1, 0.75);
    CHECK(q1 == 0.0);
    CHECK(q2 == doctest::Approx(0.5));
}

TEST_CASE("gradient in theta is the tangent scale times the weight gradient") {
    // finite differences through the curve parameterization
    LabeledDataset ds = gen_synthetic(3, 4, 8, 0.2, 17);
    ModelSpec spec = mlp_spec({1, 8, 8}, 6, 3);
    Model w1 = init_model(spec, 1);
    Model w2 = init_model(spec, 2);
    auto [x, y] = make_batch(ds, {0, 4, 8}, 0, 3);

    for (CurveKind kind : {CurveKind::Bezier2, CurveKind::PolyChain1}) {
        CurveSpec curve = make_curve(kind, w1, w2);
        for (double t : {0.3, 0.5, 0.8}) {
            Model at = model_at(curve, t);
            BackpropResult bp = backprop(at, x, y);
            double s = tangent_scale(kind, t);
            // probe a few coordinates by central difference on theta
            for (std::size_t k : {std::size_t{0}, std::size_t{31}, std::size_t{57}}) {
                double h = 1e-6;
                CurveSpec up = curve, dn = curve;
                up.theta.data[k] += h;
                dn.theta.data[k] -= h;
                double lu = forward(model_at(up, t), x, y).loss;
                double ld = forward(model_at(dn, t), x, y).loss;
                double fd = (lu - ld) / (2 * h);
                double analytic = s * bp.weight_grad.data[k];
                CHECK(std::abs(fd - analytic) <=
                      1e-6 * std::max({std::abs(fd), std::abs(analytic), 1e-8}));
            }
        }
    }
}

TEST_CASE("path training moves only theta unless endpoints are trainable") {
    LabeledDataset ds = gen_synthetic(3, 6, 8, 0.2, 23);
    ModelSpec spec = mlp_spec({1, 8, 8}, 6, 3);
    Model w1 = train(init_model(spec, 1), ds, {8, 6, 0.05, 0.9, 0.0, 11});
    Model w2 = train(init_model(spec, 2), ds, {8, 6, 0.05, 0.9, 0.0, 12});

    CurveSpec before = make_curve(CurveKind::Bezier2, w1, w2);
    PathTrainConfig cfg{10, 6, 0.05, 0.9, 0.0, 5};
    CurveSpec after = train_path(before, ds, cfg);
    CHECK(after.w1.data == w1.weights.data);
    CHECK(after.w2.data == w2.weights.data);
    CHECK(after.theta.data != before.theta.data);

    PathTrainConfig zero = cfg;
    zero.epochs = 0;
    CurveSpec untouched = train_path(before, ds, zero);
    CHECK(untouched.theta.data == before.theta.data);

    CurveSpec trainable = make_curve(CurveKind::Bezier2, w1, w2, true);
    CurveSpec moved = train_path(trainable, ds, cfg);
    CHECK(moved.w1.data != w1.weights.data);
    CHECK(moved.w2.data != w2.weights.data);

    // determinism
    CurveSpec again = train_path(before, ds, cfg);
    CHECK(again.theta.data == after.theta.data);
}

TEST_CASE("path training lowers the loss of the initial midpoint") {
    LabeledDataset ds = gen_synthetic(4, 10, 10, 0.3, 31);
    ModelSpec spec = mlp_spec({1, 10, 10}, 8, 4);
    Model w1 = train(init_model(spec, 3), ds, {15, 8, 0.05, 0.9, 0.0, 21});
    Model w2 = train(init_model(spec, 4), ds, {15, 8, 0.05, 0.9, 0.0, 22});

    CurveSpec curve = make_curve(CurveKind::Bezier2, w1, w2);
    double before = mean_loss(model_at(curve, 0.5), ds);
    curve = train_path(std::move(curve), ds, {25, 8, 0.05, 0.9, 0.0, 9});
    double after = mean_loss(model_at(curve, 0.5), ds);
    CHECK(after < before);
}

TEST_CASE("robust path training with epsilon zero reproduces standard path training") {
    LabeledDataset ds = gen_synthetic(3, 5, 8, 0.2, 41);
    ModelSpec spec = mlp_spec({1, 8, 8}, 5, 3);
    Model w1 = init_model(spec, 5);
    Model w2 = init_model(spec, 6);
    PathTrainConfig cfg{6, 4, 0.03, 0.9, 0.0, 77};

    CurveSpec standard = train_path(make_curve(CurveKind::Bezier2, w1, w2), ds, cfg);
    PGDConfig pgd;
    pgd.epsilon = 0.0;
    CurveSpec robust = train_path_robust(make_curve(CurveKind::Bezier2, w1, w2), ds, pgd, cfg);
    CHECK(robust.theta.data == standard.theta.data);
}

TEST_CASE("sampling a path isolates evaluator failures per point") {
    ModelSpec spec = mlp_spec({1, 6, 6}, 4, 2);
    Model w1 = init_model(spec, 7);
    Model w2 = init_model(spec, 8);
    CurveSpec curve = make_curve(CurveKind::Bezier2, w1, w2);

    std::vector<double> midpoint = curve_point(curve, 0.5).data;
    std::vector<Evaluator> evals{
        {"ok", [](const Model&) { return 1.5; }},
        {"flaky", [midpoint](const Model& m) -> double {
             // fails only at the exact midpoint weights
             if (m.weights.data == midpoint) throw std::runtime_error("boom");
             return 2.0;
         }}};

    PathProfile profile = sample_path(curve, {0.0, 0.5, 1.0}, evals);
    CHECK(profile.value(0, "ok") == 1.5);
    CHECK(profile.value(1, "ok") == 1.5);  // other metrics survive the failure
    CHECK(profile.value(2, "flaky") == 2.0);
    CHECK_THROWS_AS(profile.value(1, "flaky"), std::invalid_argument);
    CHECK(profile.records[1].errors.size() == 1);
    CHECK_THROWS_AS(profile.value(3, "ok"), std::invalid_argument);
    CHECK_THROWS_AS(profile.value(0, "unknown-metric"), std::invalid_argument);
    CHECK_THROWS_AS(profile.column("flaky"), std::invalid_argument);
    CHECK(profile.column("ok") == std::vector<double>{1.5, 1.5, 1.5});
}
