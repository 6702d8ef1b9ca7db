#include "modeconn/scenario.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "modeconn/checkpoint.hpp"
#include "modeconn/net.hpp"
#include "modeconn/report.hpp"
#include "modeconn/rng.hpp"

namespace modeconn {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

TrainConfig parse_train(const json& j, TrainConfig def) {
    if (j.contains("epochs")) def.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) def.batch_size = j.at("batch_size").get<int>();
    if (j.contains("learning_rate")) def.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("momentum")) def.momentum = j.at("momentum").get<double>();
    if (j.contains("weight_decay")) def.weight_decay = j.at("weight_decay").get<double>();
    return def;
}

PathTrainConfig parse_path(const json& j, PathTrainConfig def) {
    if (j.contains("epochs")) def.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) def.batch_size = j.at("batch_size").get<int>();
    if (j.contains("learning_rate")) def.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("momentum")) def.momentum = j.at("momentum").get<double>();
    if (j.contains("weight_decay")) def.weight_decay = j.at("weight_decay").get<double>();
    return def;
}

PGDConfig parse_pgd(const json& j, PGDConfig def) {
    if (j.contains("epsilon")) def.epsilon = j.at("epsilon").get<double>();
    if (j.contains("steps")) def.steps = j.at("steps").get<int>();
    if (j.contains("step_size")) def.step_size = j.at("step_size").get<double>();
    if (j.contains("random_start")) def.random_start = j.at("random_start").get<bool>();
    return def;
}

json train_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay}};
}

json path_to_json(const PathTrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay}};
}

json pgd_to_json(const PGDConfig& c) {
    return {{"epsilon", c.epsilon},
            {"steps", c.steps},
            {"step_size", c.step_size},
            {"random_start", c.random_start}};
}

json config_to_json(const ScenarioConfig& c) {
    json j;
    j["type"] = c.type;
    j["name"] = c.name;
    j["seed"] = c.seed;
    if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
    j["dataset"] = {{"num_classes", c.num_classes},
                    {"image_size", c.image_size},
                    {"train_per_class", c.train_per_class},
                    {"test_per_class", c.test_per_class},
                    {"noise_level", c.noise_level}};
    j["model"] = {{"arch", c.arch}, {"hidden", c.hidden}, {"conv_blocks", c.conv_blocks}};
    j["endpoints"] = train_to_json(c.endpoints);
    if (c.type == "backdoor") {
        j["backdoor"] = {{"fraction", c.poison_fraction},
                         {"trigger",
                          {{"height", c.trigger.height},
                           {"width", c.trigger.width},
                           {"pixel_value", c.trigger.pixel_value}}},
                         {"rule",
                          c.rule.kind == TargetRule::SingleTarget
                              ? json{{"kind", "single"}, {"target", c.rule.target}}
                              : json{{"kind", "all"}, {"modulus", c.rule.modulus}}},
                         {"adaptive", c.adaptive},
                         {"adaptive_path", path_to_json(c.adaptive_path)}};
    }
    if (c.type == "inject") {
        j["injection"] = {{"num_targets", c.num_targets}, {"num_keep", c.num_keep},
                          {"keep_weight", c.keep_weight}, {"steps", c.inject_steps},
                          {"learning_rate", c.inject_lr},  {"adaptive", c.adaptive},
                          {"adaptive_path", path_to_json(c.adaptive_path)}};
    }
    if (c.type == "backdoor" || c.type == "inject") {
        j["repair"] = {{"bonafide_size", c.bonafide_size},
                       {"path", path_to_json(c.path)},
                       {"curve", curve_kind_name(c.curve_kind)},
                       {"robust", c.robust_path},
                       {"select_t",
                        {{"enabled", c.run_select_t}, {"k", c.tselect.k},
                         {"delta_a", c.tselect.delta_a}}},
                       {"baselines",
                        {{"enabled", c.run_baselines},
                         {"noise_models", c.noise_models},
                         {"prune_fraction", c.prune_fraction},
                         {"train", train_to_json(c.baseline_cfg)}}}};
    }
    if (c.type == "evasion-barrier") {
        j["evasion"] = {{"pairs", c.pairs},
                        {"adv_endpoints", train_to_json(c.adv_endpoints)},
                        {"train_pgd", pgd_to_json(c.train_pgd)},
                        {"path", path_to_json(c.path)},
                        {"curve", curve_kind_name(c.curve_kind)}};
    }
    j["analysis"] = {{"pgd", pgd_to_json(c.analysis_pgd)},
                     {"hessian",
                      {{"samples", c.hessian.samples},
                       {"rel_tol", c.hessian.rel_tol},
                       {"max_iter", c.hessian.max_iter}}},
                     {"similarity", {{"enabled", c.run_similarity},
                                     {"max_samples", c.similarity_samples}}},
                     {"eval_subset", c.eval_subset}};
    return j;
}

}  // namespace

void ScenarioConfig::validate() const {
    if (type != "backdoor" && type != "inject" && type != "evasion-barrier")
        throw std::invalid_argument("unknown scenario type: " + type);
    if (name.empty()) throw std::invalid_argument("scenario needs a name");
    if (arch != "mlp" && arch != "cnn") throw std::invalid_argument("unknown arch: " + arch);
    if (arch == "cnn" && conv_blocks < 2)
        throw std::invalid_argument("cnn needs at least two conv blocks");
    if (num_classes < 2 || image_size < 4) throw std::invalid_argument("bad dataset block");
    if (train_per_class < 1 || test_per_class < 1)
        throw std::invalid_argument("bad dataset sizes");
    endpoints.validate();
    path.validate();
    if (type == "backdoor") {
        if (poison_fraction < 0.0 || poison_fraction > 1.0)
            throw std::invalid_argument("poison fraction outside [0,1]");
        rule.validate(num_classes);
    }
    if (type == "inject") {
        if (num_targets < 1) throw std::invalid_argument("need at least one injection target");
        if (num_keep < 0) throw std::invalid_argument("negative keep count");
        if (num_targets + num_keep > num_classes * train_per_class)
            throw std::invalid_argument("injection sample demand exceeds training data");
    }
    if (type == "backdoor" || type == "inject") {
        if (bonafide_size < 1) throw std::invalid_argument("bonafide size must be positive");
        if (run_select_t && tselect.k > bonafide_size)
            throw std::invalid_argument("more t-selection folds than bonafide samples");
    }
    if (type == "evasion-barrier") {
        if (pairs.empty()) throw std::invalid_argument("no endpoint pairs requested");
        for (const auto& p : pairs)
            if (p != "reg-reg" && p != "reg-adv" && p != "adv-adv")
                throw std::invalid_argument("unknown pair: " + p);
        adv_endpoints.validate();
        train_pgd.validate();
    }
    analysis_pgd.validate();
}

ScenarioConfig parse_scenario(const json& j) {
    ScenarioConfig c;
    c.type = j.at("type").get<std::string>();
    c.name = j.at("name").get<std::string>();
    c.seed = j.value("seed", 0ULL);
    c.output_dir = j.value("output_dir", std::string{});

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        c.num_classes = d.value("num_classes", c.num_classes);
        c.image_size = d.value("image_size", c.image_size);
        c.train_per_class = d.value("train_per_class", c.train_per_class);
        c.test_per_class = d.value("test_per_class", c.test_per_class);
        c.noise_level = d.value("noise_level", c.noise_level);
    }
    if (j.contains("model")) {
        c.arch = j.at("model").value("arch", c.arch);
        c.hidden = j.at("model").value("hidden", c.hidden);
        c.conv_blocks = j.at("model").value("conv_blocks", c.conv_blocks);
    }
    if (j.contains("endpoints")) c.endpoints = parse_train(j.at("endpoints"), c.endpoints);

    if (j.contains("backdoor")) {
        const json& b = j.at("backdoor");
        c.poison_fraction = b.value("fraction", c.poison_fraction);
        if (b.contains("trigger")) {
            const json& t = b.at("trigger");
            c.trigger.height = t.value("height", c.trigger.height);
            c.trigger.width = t.value("width", c.trigger.width);
            c.trigger.pixel_value = t.value("pixel_value", c.trigger.pixel_value);
        }
        if (b.contains("rule")) {
            const json& r = b.at("rule");
            std::string kind = r.value("kind", std::string{"single"});
            if (kind == "single") {
                c.rule.kind = TargetRule::SingleTarget;
                c.rule.target = r.value("target", c.rule.target);
            } else if (kind == "all") {
                c.rule.kind = TargetRule::AllTargets;
                c.rule.modulus = r.value("modulus", c.rule.modulus);
            } else {
                throw std::invalid_argument("unknown rule kind: " + kind);
            }
        }
        c.adaptive = b.value("adaptive", c.adaptive);
        if (b.contains("adaptive_path"))
            c.adaptive_path = parse_path(b.at("adaptive_path"), c.adaptive_path);
    }
    if (j.contains("injection")) {
        const json& b = j.at("injection");
        c.num_targets = b.value("num_targets", c.num_targets);
        c.num_keep = b.value("num_keep", c.num_keep);
        c.keep_weight = b.value("keep_weight", c.keep_weight);
        c.inject_steps = b.value("steps", c.inject_steps);
        c.inject_lr = b.value("learning_rate", c.inject_lr);
        c.adaptive = b.value("adaptive", c.adaptive);
        if (b.contains("adaptive_path"))
            c.adaptive_path = parse_path(b.at("adaptive_path"), c.adaptive_path);
    }
    if (j.contains("repair")) {
        const json& r = j.at("repair");
        c.bonafide_size = r.value("bonafide_size", c.bonafide_size);
        if (r.contains("path")) c.path = parse_path(r.at("path"), c.path);
        if (r.contains("curve")) c.curve_kind = curve_kind_from(r.at("curve").get<std::string>());
        c.robust_path = r.value("robust", c.robust_path);
        if (r.contains("select_t")) {
            const json& s = r.at("select_t");
            c.run_select_t = s.value("enabled", c.run_select_t);
            c.tselect.k = s.value("k", c.tselect.k);
            c.tselect.delta_a = s.value("delta_a", c.tselect.delta_a);
        }
        if (r.contains("baselines")) {
            const json& b = r.at("baselines");
            c.run_baselines = b.value("enabled", c.run_baselines);
            c.noise_models = b.value("noise_models", c.noise_models);
            c.prune_fraction = b.value("prune_fraction", c.prune_fraction);
            if (b.contains("train")) c.baseline_cfg = parse_train(b.at("train"), c.baseline_cfg);
        }
    }
    if (j.contains("evasion")) {
        const json& e = j.at("evasion");
        if (e.contains("pairs")) c.pairs = e.at("pairs").get<std::vector<std::string>>();
        if (e.contains("adv_endpoints"))
            c.adv_endpoints = parse_train(e.at("adv_endpoints"), c.adv_endpoints);
        if (e.contains("train_pgd")) c.train_pgd = parse_pgd(e.at("train_pgd"), c.train_pgd);
        if (e.contains("path")) c.path = parse_path(e.at("path"), c.path);
        if (e.contains("curve")) c.curve_kind = curve_kind_from(e.at("curve").get<std::string>());
    }
    if (j.contains("analysis")) {
        const json& a = j.at("analysis");
        if (a.contains("pgd")) c.analysis_pgd = parse_pgd(a.at("pgd"), c.analysis_pgd);
        if (a.contains("hessian")) {
            const json& h = a.at("hessian");
            c.hessian.samples = h.value("samples", c.hessian.samples);
            c.hessian.rel_tol = h.value("rel_tol", c.hessian.rel_tol);
            c.hessian.max_iter = h.value("max_iter", c.hessian.max_iter);
        }
        if (a.contains("similarity")) {
            const json& s = a.at("similarity");
            c.run_similarity = s.value("enabled", c.run_similarity);
            c.similarity_samples = s.value("max_samples", c.similarity_samples);
        }
        c.eval_subset = a.value("eval_subset", c.eval_subset);
    }
    c.validate();
    return c;
}

ScenarioConfig load_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open scenario file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("bad scenario JSON in " + path + ": " + e.what());
    }
    return parse_scenario(j);
}

namespace {

const char* kBackdoorSingleTarget = R"JSON({
  "type": "backdoor",
  "name": "backdoor-single-target",
  "seed": 7,
  "dataset": {"num_classes": 10, "image_size": 16, "train_per_class": 500,
              "test_per_class": 200, "noise_level": 0.1},
  "model": {"arch": "mlp", "hidden": 48},
  "endpoints": {"epochs": 40, "batch_size": 32, "learning_rate": 0.05, "momentum": 0.9},
  "backdoor": {"fraction": 0.1,
               "trigger": {"height": 3, "width": 3, "pixel_value": 1.0},
               "rule": {"kind": "single", "target": 1}},
  "repair": {"bonafide_size": 500,
             "path": {"epochs": 80, "batch_size": 32, "learning_rate": 0.02, "momentum": 0.9},
             "curve": "bezier2",
             "select_t": {"enabled": true, "k": 5, "delta_a": 0.10},
             "baselines": {"enabled": true, "noise_models": 50, "prune_fraction": 0.6,
                           "train": {"epochs": 100, "batch_size": 32,
                                     "learning_rate": 0.01, "momentum": 0.9}}},
  "analysis": {"similarity": {"enabled": true, "max_samples": 32}}
})JSON";

const char* kErrorInjection = R"JSON({
  "type": "inject",
  "name": "error-injection",
  "seed": 9,
  "dataset": {"num_classes": 10, "image_size": 16, "train_per_class": 500,
              "test_per_class": 200, "noise_level": 0.1},
  "model": {"arch": "mlp", "hidden": 48},
  "endpoints": {"epochs": 40, "batch_size": 32, "learning_rate": 0.05, "momentum": 0.9},
  "injection": {"num_targets": 4, "num_keep": 996, "keep_weight": 1.0,
                "steps": 1500, "learning_rate": 0.05},
  "repair": {"bonafide_size": 500,
             "path": {"epochs": 80, "batch_size": 32, "learning_rate": 0.02, "momentum": 0.9},
             "curve": "bezier2",
             "select_t": {"enabled": false}}
})JSON";

const char* kEvasionBarrier = R"JSON({
  "type": "evasion-barrier",
  "name": "evasion-barrier",
  "seed": 11,
  "dataset": {"num_classes": 10, "image_size": 16, "train_per_class": 500,
              "test_per_class": 200, "noise_level": 0.1},
  "model": {"arch": "cnn"},
  "endpoints": {"epochs": 30, "batch_size": 32, "learning_rate": 0.05, "momentum": 0.9},
  "evasion": {"pairs": ["reg-reg", "reg-adv", "adv-adv"],
              "adv_endpoints": {"epochs": 20, "batch_size": 32,
                                "learning_rate": 0.05, "momentum": 0.9},
              "train_pgd": {"epsilon": 0.1, "steps": 5},
              "path": {"epochs": 30, "batch_size": 32, "learning_rate": 0.02, "momentum": 0.9},
              "curve": "bezier2"},
  "analysis": {"pgd": {"epsilon": 0.1, "steps": 10},
               "hessian": {"samples": 16, "rel_tol": 1e-4, "max_iter": 100},
               "eval_subset": 512}
})JSON";

const char* kAdaptiveBackdoor = R"JSON({
  "type": "backdoor",
  "name": "adaptive-backdoor",
  "seed": 13,
  "dataset": {"num_classes": 10, "image_size": 16, "train_per_class": 500,
              "test_per_class": 200, "noise_level": 0.1},
  "model": {"arch": "mlp", "hidden": 48},
  "endpoints": {"epochs": 40, "batch_size": 32, "learning_rate": 0.05, "momentum": 0.9},
  "backdoor": {"fraction": 0.1,
               "trigger": {"height": 3, "width": 3, "pixel_value": 1.0},
               "rule": {"kind": "single", "target": 1},
               "adaptive": true,
               "adaptive_path": {"epochs": 40, "batch_size": 32,
                                 "learning_rate": 0.02, "momentum": 0.9}},
  "repair": {"bonafide_size": 500,
             "path": {"epochs": 80, "batch_size": 32, "learning_rate": 0.02, "momentum": 0.9},
             "curve": "bezier2",
             "select_t": {"enabled": false}}
})JSON";

}  // namespace

std::vector<std::string> bundled_scenario_names() {
    return {"backdoor-single-target", "error-injection", "evasion-barrier", "adaptive-backdoor"};
}

json bundled_scenario(const std::string& name) {
    if (name == "backdoor-single-target") return json::parse(kBackdoorSingleTarget);
    if (name == "error-injection") return json::parse(kErrorInjection);
    if (name == "evasion-barrier") return json::parse(kEvasionBarrier);
    if (name == "adaptive-backdoor") return json::parse(kAdaptiveBackdoor);
    throw std::invalid_argument("unknown bundled scenario: " + name);
}

namespace {

// Shared pipeline state plus incremental manifest bookkeeping.
struct Pipeline {
    const ScenarioConfig& cfg;
    fs::path out;
    json manifest;
    ScenarioResult result;

    Pipeline(const ScenarioConfig& c, const std::string& override_dir) : cfg(c) {
        std::string dir = !override_dir.empty() ? override_dir
                          : !c.output_dir.empty() ? c.output_dir
                                                  : "out/" + c.name;
        fs::path p(dir);
        if (p.is_relative()) {
            if (const char* root = std::getenv("MODECONN_OUT")) p = fs::path(root) / p;
        }
        out = p;
        fs::create_directories(out);
        result.output_dir = out.string();
        manifest["name"] = c.name;
        manifest["type"] = c.type;
        manifest["seed"] = c.seed;
        manifest["config"] = config_to_json(c);
        manifest["format_versions"] = {{"checkpoint", 1}, {"csv", "modeconn-csv-v1"}};
        manifest["seeds"] = json::object();
        manifest["artifacts"] = json::array();
        manifest["stages_completed"] = json::array();
    }

    std::uint64_t seed_for(const std::string& purpose, std::uint64_t stream) {
        std::uint64_t s = mix_seed(cfg.seed, stream);
        manifest["seeds"][purpose] = s;
        return s;
    }

    std::string artifact(const std::string& filename) {
        std::string path = (out / filename).string();
        manifest["artifacts"].push_back(filename);
        result.artifacts.push_back(path);
        return path;
    }

    void flush_manifest() { write_json_atomic((out / "manifest.json").string(), manifest); }

    template <typename Fn>
    void stage(const std::string& name, Fn&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            manifest["failed_stage"] = name;
            flush_manifest();
            throw ScenarioError(name, e.what());
        }
        manifest["stages_completed"].push_back(name);
        flush_manifest();
    }

    ModelSpec model_spec() const {
        std::array<int, 3> in{1, cfg.image_size, cfg.image_size};
        return cfg.arch == "cnn" ? cnn_spec(in, cfg.num_classes, cfg.conv_blocks)
                                 : mlp_spec(in, cfg.hidden, cfg.num_classes);
    }
};

std::vector<int> head_indices(int n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

LabeledDataset eval_cap(const LabeledDataset& data, int cap) {
    if (data.size() <= cap) return data;
    return subset(data, head_indices(cap));
}

void run_backdoor(Pipeline& pl) {
    const ScenarioConfig& cfg = pl.cfg;
    LabeledDataset train_clean, test, train_used;
    Model w1, w2;
    LabeledDataset bonafide, heldout, triggered;

    pl.stage("gen-data", [&] {
        train_clean = gen_synthetic(cfg.num_classes, cfg.train_per_class, cfg.image_size,
                                    cfg.noise_level, pl.seed_for("train_data", 0x11));
        test = gen_synthetic(cfg.num_classes, cfg.test_per_class, cfg.image_size,
                             cfg.noise_level, pl.seed_for("test_data", 0x12));
    });
    pl.stage("attack", [&] {
        train_used = poison(train_clean, cfg.poison_fraction, cfg.rule, cfg.trigger,
                            pl.seed_for("poison", 0x13));
    });
    pl.stage("endpoints", [&] {
        ModelSpec spec = pl.model_spec();
        if (cfg.adaptive) {
            TrainConfig ecfg = cfg.endpoints;
            ecfg.seed = pl.seed_for("endpoint_train", 0x23);
            PathTrainConfig acfg = cfg.adaptive_path;
            acfg.seed = pl.seed_for("adaptive_path", 0x25);
            AdaptiveEndpoints ends = adaptive_backdoor_endpoints(spec, train_used, ecfg, acfg);
            w1 = std::move(ends.w1);
            w2 = std::move(ends.w2);
        } else {
            TrainConfig c1 = cfg.endpoints;
            c1.seed = pl.seed_for("w1_train", 0x23);
            TrainConfig c2 = cfg.endpoints;
            c2.seed = pl.seed_for("w2_train", 0x24);
            w1 = train(init_model(spec, pl.seed_for("w1_init", 0x21)), train_used, c1);
            w2 = train(init_model(spec, pl.seed_for("w2_init", 0x22)), train_used, c2);
        }
        save_model_checkpoint(pl.artifact("w1.ckpt"), w1, {cfg.seed});
        save_model_checkpoint(pl.artifact("w2.ckpt"), w2, {cfg.seed});
    });
    pl.stage("split", [&] {
        auto [bona, rest] = split_bonafide(test, cfg.bonafide_size, pl.seed_for("bonafide", 0x31));
        bonafide = std::move(bona);
        heldout = std::move(rest);
        triggered = make_triggered(heldout, cfg.trigger, cfg.rule);
        pl.result.w1_metrics = {accuracy(w1, heldout), attack_success(w1, triggered), 0};
        pl.result.w2_metrics = {accuracy(w2, heldout), attack_success(w2, triggered), 0};
    });

    auto repair_started = std::chrono::steady_clock::now();
    pl.stage("repair", [&] {
        std::vector<Evaluator> evals = standard_evaluators(heldout, &triggered);
        PathTrainConfig pcfg = cfg.path;
        pcfg.seed = pl.seed_for("path", 0x41);
        if (cfg.robust_path) {
            CurveSpec curve = make_curve(cfg.curve_kind, w1, w2);
            curve = train_path_robust(std::move(curve), bonafide, cfg.analysis_pgd, pcfg);
            pl.result.curve = std::move(curve);
            pl.result.profile = sample_path(pl.result.curve, default_grid(), evals);
        } else {
            RepairOutcome outcome = repair_by_connection(w1, w2, bonafide, pcfg, default_grid(),
                                                         evals, cfg.curve_kind);
            pl.result.curve = std::move(outcome.curve);
            pl.result.profile = std::move(outcome.profile);
        }
        save_curve_checkpoint(pl.artifact("curve.ckpt"), pl.result.curve, {cfg.seed});
        write_profile_csv(pl.artifact("profile.csv"), pl.result.profile);
    });

    if (cfg.run_select_t) {
        pl.stage("select-t", [&] {
            PathTrainConfig pcfg = cfg.path;
            pcfg.seed = pl.seed_for("path", 0x41);
            pl.result.tselect =
                select_t(pl.result.curve, bonafide, cfg.tselect, pcfg, default_grid());
            pl.result.tselect_ran = true;

            Model repaired = model_at(pl.result.curve, pl.result.tselect.t);
            RepairReport rep;
            rep.method = "path-connection";
            rep.bonafide_size = cfg.bonafide_size;
            rep.chosen_t = pl.result.tselect.t;
            rep.clean_accuracy = accuracy(repaired, heldout);
            rep.attack_success = attack_success(repaired, triggered);
            rep.runtime_seconds = seconds_since(repair_started);
            rep.seed = cfg.seed;
            pl.result.reports.push_back(rep);
        });
    }

    if (cfg.run_baselines) {
        pl.stage("baselines", [&] {
            ModelSpec spec = pl.model_spec();
            auto timed = [&](const std::string& method, auto&& fn) {
                auto start = std::chrono::steady_clock::now();
                auto [acc, atk] = fn();
                RepairReport rep;
                rep.method = method;
                rep.bonafide_size = cfg.bonafide_size;
                rep.clean_accuracy = acc;
                rep.attack_success = atk;
                rep.runtime_seconds = seconds_since(start);
                rep.seed = cfg.seed;
                pl.result.reports.push_back(rep);
            };
            timed("finetune", [&] {
                TrainConfig c = cfg.baseline_cfg;
                c.seed = pl.seed_for("finetune", 0x51);
                Model m = finetune(w1, bonafide, c);
                return std::pair{accuracy(m, heldout), attack_success(m, triggered)};
            });
            timed("scratch", [&] {
                TrainConfig c = cfg.baseline_cfg;
                c.seed = pl.seed_for("scratch", 0x52);
                Model m = train_scratch(spec, bonafide, c);
                return std::pair{accuracy(m, heldout), attack_success(m, triggered)};
            });
            timed("noise", [&] {
                auto models =
                    gaussian_noise_models(w1, w2, cfg.noise_models, pl.seed_for("noise", 0x53));
                double acc = 0.0, atk = 0.0;
                for (const Model& m : models) {
                    acc += accuracy(m, heldout);
                    atk += attack_success(m, triggered);
                }
                return std::pair{acc / models.size(), atk / models.size()};
            });
            timed("prune", [&] {
                TrainConfig c = cfg.baseline_cfg;
                c.seed = pl.seed_for("prune", 0x54);
                Model m = prune_and_retrain(w1, cfg.prune_fraction, bonafide, c);
                return std::pair{accuracy(m, heldout), attack_success(m, triggered)};
            });
        });
    }

    if (!pl.result.reports.empty()) {
        pl.stage("reports-csv", [&] {
            write_repair_reports_csv(pl.artifact("reports.csv"), pl.result.reports);
        });
    }

    if (cfg.run_similarity) {
        pl.stage("similarity", [&] {
            pl.result.similarity = input_grad_similarity(
                pl.result.curve, heldout, triggered, default_grid(), cfg.similarity_samples);
            std::string csv = "# modeconn-csv-v1\n";
            csv += "t,m_clean_to_w1,m_clean_to_w2,m_tampered_to_w1,m_tampered_to_w2,"
                   "skipped_clean,skipped_tampered\n";
            for (const auto& r : pl.result.similarity) {
                csv += format_double(r.t) + "," + format_double(r.m_clean_to_w1) + "," +
                       format_double(r.m_clean_to_w2) + "," + format_double(r.m_tampered_to_w1) +
                       "," + format_double(r.m_tampered_to_w2) + "," +
                       std::to_string(r.skipped_clean) + "," +
                       std::to_string(r.skipped_tampered) + "\n";
            }
            write_text_atomic(pl.artifact("similarity.csv"), csv);
        });
    }

    pl.stage("report", [&] {
        json rep;
        rep["endpoints"] = {
            {"w1",
             {{"clean_accuracy", pl.result.w1_metrics.clean_accuracy},
              {"attack_success", pl.result.w1_metrics.attack_success}}},
            {"w2",
             {{"clean_accuracy", pl.result.w2_metrics.clean_accuracy},
              {"attack_success", pl.result.w2_metrics.attack_success}}}};
        if (pl.result.tselect_ran) {
            rep["select_t"] = {{"t", pl.result.tselect.t},
                               {"qualified", pl.result.tselect.qualified},
                               {"endpoint_accuracy", pl.result.tselect.endpoint_accuracy},
                               {"grid", pl.result.tselect.grid},
                               {"mean_accuracy", pl.result.tselect.mean_accuracy}};
        }
        json method_reports = json::array();
        for (const auto& r : pl.result.reports) method_reports.push_back(repair_report_json(r));
        rep["methods"] = method_reports;
        rep["profile"] = profile_json(pl.result.profile);
        write_json_atomic(pl.artifact("report.json"), rep);
    });
}

void run_inject(Pipeline& pl) {
    const ScenarioConfig& cfg = pl.cfg;
    LabeledDataset train_clean, test;
    Model w1, w2;
    InjectionSpec injspec;
    LabeledDataset bonafide, heldout;

    pl.stage("gen-data", [&] {
        train_clean = gen_synthetic(cfg.num_classes, cfg.train_per_class, cfg.image_size,
                                    cfg.noise_level, pl.seed_for("train_data", 0x11));
        test = gen_synthetic(cfg.num_classes, cfg.test_per_class, cfg.image_size,
                             cfg.noise_level, pl.seed_for("test_data", 0x12));
    });

    pl.stage("attack", [&] {
        // Attacker picks targets and keeps from the training data.
        auto rng = make_rng(pl.seed_for("injection_pick", 0x61), 0x7A6);
        std::vector<int> order = head_indices(train_clean.size());
        std::shuffle(order.begin(), order.end(), rng);
        injspec.keep_weight = cfg.keep_weight;
        injspec.steps = cfg.inject_steps;
        injspec.learning_rate = cfg.inject_lr;
        std::uniform_int_distribution<int> shift(1, cfg.num_classes - 1);
        for (int k = 0; k < cfg.num_targets; ++k) {
            int idx = order[static_cast<std::size_t>(k)];
            injspec.target_indices.push_back(idx);
            int orig = train_clean.labels[static_cast<std::size_t>(idx)];
            injspec.target_labels.push_back((orig + shift(rng)) % cfg.num_classes);
        }
        for (int k = 0; k < cfg.num_keep; ++k)
            injspec.keep_indices.push_back(order[static_cast<std::size_t>(cfg.num_targets + k)]);

        ModelSpec spec = pl.model_spec();
        if (cfg.adaptive) {
            TrainConfig ecfg = cfg.endpoints;
            ecfg.seed = pl.seed_for("endpoint_train", 0x23);
            PathTrainConfig acfg = cfg.adaptive_path;
            acfg.seed = pl.seed_for("adaptive_path", 0x25);
            AdaptiveEndpoints ends =
                adaptive_injection_endpoints(spec, train_clean, injspec, ecfg, acfg);
            w1 = std::move(ends.w1);
            w2 = std::move(ends.w2);
        } else {
            TrainConfig c1 = cfg.endpoints;
            c1.seed = pl.seed_for("w1_train", 0x23);
            TrainConfig c2 = cfg.endpoints;
            c2.seed = pl.seed_for("w2_train", 0x24);
            Model clean1 = train(init_model(spec, pl.seed_for("w1_init", 0x21)), train_clean, c1);
            Model clean2 = train(init_model(spec, pl.seed_for("w2_init", 0x22)), train_clean, c2);
            InjectionResult r1 = inject_errors(clean1, train_clean, injspec);
            InjectionResult r2 = inject_errors(clean2, train_clean, injspec);
            w1 = std::move(r1.model);
            w2 = std::move(r2.model);
        }
        pl.result.num_targets = cfg.num_targets;
        pl.result.w1_metrics.injection_hits = injection_hits(w1, train_clean, injspec);
        pl.result.w2_metrics.injection_hits = injection_hits(w2, train_clean, injspec);
        save_model_checkpoint(pl.artifact("w1.ckpt"), w1, {cfg.seed});
        save_model_checkpoint(pl.artifact("w2.ckpt"), w2, {cfg.seed});
    });

    pl.stage("split", [&] {
        auto [bona, rest] = split_bonafide(test, cfg.bonafide_size, pl.seed_for("bonafide", 0x31));
        bonafide = std::move(bona);
        heldout = std::move(rest);
        pl.result.w1_metrics.clean_accuracy = accuracy(w1, heldout);
        pl.result.w2_metrics.clean_accuracy = accuracy(w2, heldout);
    });

    pl.stage("connect", [&] {
        std::vector<Evaluator> evals = standard_evaluators(heldout);
        evals.push_back({"targets_hit", [&](const Model& m) {
                             return static_cast<double>(injection_hits(m, train_clean, injspec));
                         }});
        PathTrainConfig pcfg = cfg.path;
        pcfg.seed = pl.seed_for("path", 0x41);
        RepairOutcome outcome =
            repair_by_connection(w1, w2, bonafide, pcfg, default_grid(), evals, cfg.curve_kind);
        pl.result.curve = std::move(outcome.curve);
        pl.result.profile = std::move(outcome.profile);
        for (double v : pl.result.profile.column("targets_hit"))
            pl.result.hits_per_grid_t.push_back(static_cast<int>(v));
        save_curve_checkpoint(pl.artifact("curve.ckpt"), pl.result.curve, {cfg.seed});
        write_profile_csv(pl.artifact("profile.csv"), pl.result.profile);
    });

    pl.stage("report", [&] {
        json rep;
        rep["endpoints"] = {
            {"w1",
             {{"clean_accuracy", pl.result.w1_metrics.clean_accuracy},
              {"injection_hits", pl.result.w1_metrics.injection_hits}}},
            {"w2",
             {{"clean_accuracy", pl.result.w2_metrics.clean_accuracy},
              {"injection_hits", pl.result.w2_metrics.injection_hits}}}};
        rep["num_targets"] = pl.result.num_targets;
        rep["hits_per_grid_t"] = pl.result.hits_per_grid_t;
        rep["profile"] = profile_json(pl.result.profile);
        write_json_atomic(pl.artifact("report.json"), rep);
    });
}

void run_evasion(Pipeline& pl) {
    const ScenarioConfig& cfg = pl.cfg;
    LabeledDataset train_clean, test, eval_sub;
    Model reg1, reg2, adv1, adv2;
    bool need_adv1 = false, need_adv2 = false;
    for (const auto& p : cfg.pairs) {
        if (p == "reg-adv" || p == "adv-adv") need_adv1 = true;
        if (p == "adv-adv") need_adv2 = true;
    }

    pl.stage("gen-data", [&] {
        train_clean = gen_synthetic(cfg.num_classes, cfg.train_per_class, cfg.image_size,
                                    cfg.noise_level, pl.seed_for("train_data", 0x11));
        test = gen_synthetic(cfg.num_classes, cfg.test_per_class, cfg.image_size,
                             cfg.noise_level, pl.seed_for("test_data", 0x12));
        eval_sub = eval_cap(test, cfg.eval_subset);
    });

    pl.stage("endpoints", [&] {
        ModelSpec spec = pl.model_spec();
        TrainConfig c1 = cfg.endpoints;
        c1.seed = pl.seed_for("reg1_train", 0x23);
        TrainConfig c2 = cfg.endpoints;
        c2.seed = pl.seed_for("reg2_train", 0x24);
        reg1 = train(init_model(spec, pl.seed_for("reg1_init", 0x21)), train_clean, c1);
        reg2 = train(init_model(spec, pl.seed_for("reg2_init", 0x22)), train_clean, c2);
        save_model_checkpoint(pl.artifact("reg1.ckpt"), reg1, {cfg.seed});
        save_model_checkpoint(pl.artifact("reg2.ckpt"), reg2, {cfg.seed});
        pl.result.w1_metrics.clean_accuracy = accuracy(reg1, test);
        pl.result.w2_metrics.clean_accuracy = accuracy(reg2, test);
        if (need_adv1) {
            TrainConfig ca = cfg.adv_endpoints;
            ca.seed = pl.seed_for("adv1_train", 0x26);
            adv1 = adv_train(init_model(spec, pl.seed_for("adv1_init", 0x25)), train_clean,
                             cfg.train_pgd, ca);
            save_model_checkpoint(pl.artifact("adv1.ckpt"), adv1, {cfg.seed});
        }
        if (need_adv2) {
            TrainConfig ca = cfg.adv_endpoints;
            ca.seed = pl.seed_for("adv2_train", 0x28);
            adv2 = adv_train(init_model(spec, pl.seed_for("adv2_init", 0x27)), train_clean,
                             cfg.train_pgd, ca);
            save_model_checkpoint(pl.artifact("adv2.ckpt"), adv2, {cfg.seed});
        }
    });

    int pair_idx = 0;
    for (const std::string& pair : cfg.pairs) {
        pl.stage("path-" + pair, [&] {
            const Model& a = pair == "adv-adv" ? adv1 : reg1;
            const Model& b = pair == "reg-reg" ? reg2 : (pair == "reg-adv" ? adv1 : adv2);
            PathTrainConfig pcfg = cfg.path;
            pcfg.seed = pl.seed_for("path_" + pair,
                                    0x41 + static_cast<std::uint64_t>(pair_idx));
            CurveSpec curve = make_curve(cfg.curve_kind, a, b);
            curve = train_path(std::move(curve), train_clean, pcfg);

            std::vector<Evaluator> evals{
                {"clean_loss", [&](const Model& m) { return mean_loss(m, test); }},
                {"clean_error", [&](const Model& m) { return 1.0 - accuracy(m, test); }},
                {"robustness_loss",
                 [&](const Model& m) { return robustness_loss(m, eval_sub, cfg.analysis_pgd); }},
                {"lambda_max",
                 [&](const Model& m) { return mean_lambda_max(m, eval_sub, cfg.hessian); }},
            };
            PathProfile profile = sample_path(curve, default_grid(), evals);

            PathSummary summary;
            summary.pair = pair;
            summary.robustness_barrier = barrier_height(profile, "robustness_loss");
            summary.standard_loss_barrier = barrier_height(profile, "clean_loss");
            summary.pcc =
                pearson(profile.column("lambda_max"), profile.column("robustness_loss"));
            summary.profile = std::move(profile);

            save_curve_checkpoint(pl.artifact("curve-" + pair + ".ckpt"), curve, {cfg.seed});
            write_profile_csv(pl.artifact("profile-" + pair + ".csv"), summary.profile);
            pl.result.paths.push_back(std::move(summary));
        });
        ++pair_idx;
    }

    pl.stage("report", [&] {
        json rep;
        rep["endpoints"] = {{"reg1_clean_accuracy", pl.result.w1_metrics.clean_accuracy},
                            {"reg2_clean_accuracy", pl.result.w2_metrics.clean_accuracy}};
        json paths = json::array();
        for (const auto& s : pl.result.paths) {
            paths.push_back({{"pair", s.pair},
                             {"robustness_barrier", s.robustness_barrier},
                             {"standard_loss_barrier", s.standard_loss_barrier},
                             {"pcc", s.pcc}});
        }
        rep["paths"] = paths;
        write_json_atomic(pl.artifact("report.json"), rep);
    });
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& config, const std::string& output_override) {
    config.validate();
    Pipeline pl(config, output_override);
    pl.flush_manifest();
    if (config.type == "backdoor")
        run_backdoor(pl);
    else if (config.type == "inject")
        run_inject(pl);
    else
        run_evasion(pl);
    return std::move(pl.result);
}

}  // namespace modeconn
