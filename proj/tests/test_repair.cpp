#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "modeconn/attacks.hpp"
#include "modeconn/data.hpp"
#include "modeconn/model.hpp"
#include "modeconn/repair.hpp"
#include "modeconn/rng.hpp"
#include "modeconn/train.hpp"

using namespace modeconn;

namespace {

// Small poisoned training setup shared by the repair tests: 4-class glyphs,
// two independently trained MLPs, both backdoored toward class 0.
struct Workbench {
    LabeledDataset train, test, bonafide, heldout, triggered;
    Model w1, w2;

    Workbench() {
        train = gen_synthetic(4, 60, 12, 0.2, 11);
        test = gen_synthetic(4, 30, 12, 0.2, 12);
        TriggerSpec trig;
        TargetRule rule{TargetRule::SingleTarget, 0, 0};
        LabeledDataset poisoned = poison(train, 0.1, rule, trig, 21);
        TrainConfig cfg;
        cfg.epochs = 30;
        cfg.batch_size = 32;
        cfg.learning_rate = 0.05;
        ModelSpec spec = mlp_spec({1, 12, 12}, 24, 4);
        cfg.seed = 1;
        w1 = modeconn::train(init_model(spec, 1), poisoned, cfg);
        cfg.seed = 2;
        w2 = modeconn::train(init_model(spec, 2), poisoned, cfg);
        auto split = split_bonafide(test, 40, 31);
        bonafide = split.first;
        heldout = split.second;
        triggered = make_triggered(heldout, trig, rule);
    }
};

const Workbench& bench() {
    static Workbench w;
    return w;
}

TrainConfig small_cfg(std::uint64_t seed, int epochs = 40) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.02;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("gaussian noise models: count, determinism, and the degenerate pair") {
    const auto& wb = bench();
    auto models = gaussian_noise_models(wb.w1, wb.w2, 3, 77);
    REQUIRE(models.size() == 6);
    auto again = gaussian_noise_models(wb.w1, wb.w2, 3, 77);
    for (std::size_t i = 0; i < models.size(); ++i)
        CHECK(models[i].weights.data == again[i].weights.data);
    auto other = gaussian_noise_models(wb.w1, wb.w2, 3, 78);
    CHECK(models[0].weights.data != other[0].weights.data);

    // first n derive from w1, next n from w2: with per-coordinate std
    // |w1-w2| the copies stay closer to their own base in expectation
    double d1 = 0, d2 = 0;
    for (std::size_t i = 0; i < wb.w1.weights.data.size(); ++i) {
        d1 += std::abs(models[0].weights.data[i] - wb.w1.weights.data[i]);
        d2 += std::abs(models[3].weights.data[i] - wb.w2.weights.data[i]);
    }
    CHECK(d1 / static_cast<double>(wb.w1.weights.data.size()) < 1.0);
    CHECK(d2 / static_cast<double>(wb.w1.weights.data.size()) < 1.0);

    // identical endpoints mean zero std everywhere: exact copies
    auto copies = gaussian_noise_models(wb.w1, wb.w1, 2, 5);
    REQUIRE(copies.size() == 4);
    for (const auto& m : copies) CHECK(m.weights.data == wb.w1.weights.data);
}

TEST_CASE("prune mask zeroes the lowest-l1 units and never touches the classifier") {
    // hand-built 2-hidden-unit MLP where unit 0 has the smaller l1 norm
    ModelSpec spec = mlp_spec({1, 1, 2}, 2, 2);
    Model m = make_model(spec);
    // dense1: in=2 out=2, weights row-major [out][in] then bias
    // unit 0 weights (0.1, -0.1) l1=0.2; unit 1 weights (1.0, 1.0) l1=2.0
    const Segment& d1 = m.weights.layout[1];
    m.weights.data[d1.offset + 0] = 0.1;
    m.weights.data[d1.offset + 1] = -0.1;
    m.weights.data[d1.offset + 2] = 1.0;
    m.weights.data[d1.offset + 3] = 1.0;

    auto mask = prune_mask(m, 0.5);
    REQUIRE(mask.size() == m.weights.data.size());
    // unit 0 row and its bias are masked
    CHECK(mask[static_cast<std::size_t>(d1.offset + 0)] == 1);
    CHECK(mask[static_cast<std::size_t>(d1.offset + 1)] == 1);
    CHECK(mask[static_cast<std::size_t>(d1.offset + 4)] == 1);  // bias of unit 0
    // unit 1 row stays
    CHECK(mask[static_cast<std::size_t>(d1.offset + 2)] == 0);
    CHECK(mask[static_cast<std::size_t>(d1.offset + 3)] == 0);
    // final classifier layer is never pruned
    const Segment& d2 = m.weights.layout[3];
    for (std::int64_t i = 0; i < d2.length; ++i)
        CHECK(mask[static_cast<std::size_t>(d2.offset + i)] == 0);

    auto none = prune_mask(m, 0.0);
    CHECK(std::count(none.begin(), none.end(), 1) == 0);

    CHECK_THROWS_AS(prune_mask(m, 1.0), std::invalid_argument);
}

TEST_CASE("prune-and-retrain keeps masked coordinates at exactly zero") {
    const auto& wb = bench();
    Model pruned = prune_and_retrain(wb.w1, 0.5, wb.bonafide, small_cfg(91, 20));
    auto mask = prune_mask(wb.w1, 0.5);
    std::int64_t zeroed = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            CHECK(pruned.weights.data[i] == 0.0);
            ++zeroed;
        }
    CHECK(zeroed > 0);

    // fraction 0 with the same config is plain fine-tuning
    Model viaPrune = prune_and_retrain(wb.w1, 0.0, wb.bonafide, small_cfg(91, 20));
    Model viaTune = finetune(wb.w1, wb.bonafide, small_cfg(91, 20));
    CHECK(viaPrune.weights.data == viaTune.weights.data);
}

TEST_CASE("finetune and scratch leave the inputs alone and learn the bonafide set") {
    const auto& wb = bench();
    std::vector<double> before = wb.w1.weights.data;
    Model tuned = finetune(wb.w1, wb.bonafide, small_cfg(17));
    CHECK(wb.w1.weights.data == before);
    CHECK(tuned.weights.data != before);
    CHECK(accuracy(tuned, wb.bonafide) > 0.9);

    TrainConfig zero = small_cfg(17, 0);
    Model untouched = finetune(wb.w1, wb.bonafide, zero);
    CHECK(untouched.weights.data == before);

    Model fresh = train_scratch(wb.w1.spec, wb.bonafide, small_cfg(19));
    CHECK(accuracy(fresh, wb.bonafide) > 0.9);
    // scratch training never saw triggers, so attack success stays near chance
    CHECK(attack_success(fresh, wb.triggered) < 0.5);
}

TEST_CASE("repair by connection trains only the control point and profiles the grid") {
    const auto& wb = bench();
    PathTrainConfig pcfg;
    pcfg.epochs = 60;
    pcfg.batch_size = 16;
    pcfg.learning_rate = 0.02;
    pcfg.seed = 5;
    std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 1.0};
    auto evals = standard_evaluators(wb.heldout, &wb.triggered);
    RepairOutcome out =
        repair_by_connection(wb.w1, wb.w2, wb.bonafide, pcfg, grid, evals, CurveKind::Bezier2);

    CHECK(out.curve.w1.data == wb.w1.weights.data);
    CHECK(out.curve.w2.data == wb.w2.weights.data);
    REQUIRE(out.profile.t_grid == grid);
    // endpoints keep their backdoor; metric names follow the evaluator set
    CHECK(out.profile.value(0, "attack_success") ==
          doctest::Approx(attack_success(wb.w1, wb.triggered)).epsilon(1e-12));
    CHECK(out.profile.value(2, "clean_error") < 0.5);

    auto rerun =
        repair_by_connection(wb.w1, wb.w2, wb.bonafide, pcfg, grid, evals, CurveKind::Bezier2);
    CHECK(rerun.curve.theta.data == out.curve.theta.data);

    Model other = wb.w2;
    other.spec = mlp_spec({1, 12, 12}, 23, 4);
    CHECK_THROWS_AS(
        repair_by_connection(wb.w1, other, wb.bonafide, pcfg, grid, evals, CurveKind::Bezier2),
        std::invalid_argument);
}

TEST_CASE("single-model repair connects the model with its fine-tuned copy") {
    const auto& wb = bench();
    PathTrainConfig pcfg;
    pcfg.epochs = 30;
    pcfg.batch_size = 16;
    pcfg.learning_rate = 0.02;
    pcfg.seed = 7;
    std::vector<double> grid = {0.0, 0.5, 1.0};
    auto evals = standard_evaluators(wb.heldout);
    RepairOutcome out = repair_single_model(wb.w1, wb.bonafide, pcfg, small_cfg(23), grid, evals);
    CHECK(out.curve.w1.data == wb.w1.weights.data);
    CHECK(out.curve.w2.data != wb.w1.weights.data);
    CHECK(out.profile.value(2, "clean_error") <= 1.0);
}

TEST_CASE("select_t prefers the smallest qualifying interior t") {
    const auto& wb = bench();
    std::vector<double> grid = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    PathTrainConfig pcfg;
    pcfg.epochs = 0;  // folds evaluate the curve as-is
    pcfg.seed = 3;

    // flat path: every interior t matches endpoint accuracy, so the scan
    // stops at the first interior grid point
    CurveSpec flat = make_curve(CurveKind::Bezier2, wb.w1, wb.w1);
    TSelectConfig tcfg;
    TSelectResult flat_pick = select_t(flat, wb.bonafide, tcfg, pcfg, grid);
    CHECK(flat_pick.qualified);
    CHECK(flat_pick.t == 0.2);
    REQUIRE(flat_pick.grid.size() == grid.size());
    REQUIRE(flat_pick.mean_accuracy.size() == grid.size());
    CHECK(flat_pick.endpoint_accuracy == doctest::Approx(flat_pick.mean_accuracy[1]));

    TSelectResult again = select_t(flat, wb.bonafide, tcfg, pcfg, grid);
    CHECK(again.t == flat_pick.t);
    CHECK(again.mean_accuracy == flat_pick.mean_accuracy);

    TSelectConfig bad;
    bad.k = static_cast<int>(wb.bonafide.labels.size()) + 1;
    CHECK_THROWS_AS(select_t(flat, wb.bonafide, bad, pcfg, grid), std::invalid_argument);
}

TEST_CASE("select_t falls back to the best interior t when nothing qualifies") {
    const auto& wb = bench();
    // a curve between two good endpoints with a wrecked control point and no
    // fold training: interior accuracy collapses, nothing reaches the bar
    CurveSpec broken = make_curve(CurveKind::Bezier2, wb.w1, wb.w2);
    for (auto& v : broken.theta.data) v = 0.0;
    PathTrainConfig pcfg;
    pcfg.epochs = 0;
    pcfg.seed = 3;
    std::vector<double> grid = {0.0, 0.5, 1.0};
    TSelectConfig tcfg;
    tcfg.delta_a = 0.01;
    TSelectResult pick = select_t(broken, wb.bonafide, tcfg, pcfg, grid);
    CHECK_FALSE(pick.qualified);
    CHECK(pick.t == 0.5);  // only interior candidate
}

TEST_CASE("stability runs aggregate per-metric mean and stddev across seeds") {
    const auto& wb = bench();
    PathTrainConfig pcfg;
    pcfg.epochs = 8;
    pcfg.batch_size = 16;
    pcfg.learning_rate = 0.02;
    pcfg.seed = 40;
    std::vector<double> grid = {0.0, 0.5, 1.0};
    auto evals = standard_evaluators(wb.heldout);
    StabilityStats stats = stability_runs(wb.w1, wb.w2, wb.bonafide, pcfg, grid, evals, 3);
    CHECK(stats.runs == 3);
    REQUIRE(stats.grid == grid);
    REQUIRE(stats.metric_names.size() == evals.size());
    REQUIRE(stats.mean.size() == evals.size());
    REQUIRE(stats.stddev.size() == evals.size());
    for (std::size_t m = 0; m < stats.mean.size(); ++m) {
        REQUIRE(stats.mean[m].size() == grid.size());
        REQUIRE(stats.stddev[m].size() == grid.size());
        for (double s : stats.stddev[m]) {
            CHECK(std::isfinite(s));
            CHECK(s >= 0.0);
        }
    }
    // endpoints are fixed across seeds, so their spread is numerical dust
    for (std::size_t m = 0; m < stats.stddev.size(); ++m) {
        CHECK(stats.stddev[m].front() < 1e-12);
        CHECK(stats.stddev[m].back() < 1e-12);
    }
}
