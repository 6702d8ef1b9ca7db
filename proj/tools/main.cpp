// Command-line front end. Every subcommand is a thin wrapper around the
// library: load inputs, run one operation, write artifacts, print a one-line
// summary. Exit codes: 0 success, 2 bad configuration or arguments, 3 a
// pipeline stage failed at runtime.
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "modeconn/adaptive.hpp"
#include "modeconn/attacks.hpp"
#include "modeconn/checkpoint.hpp"
#include "modeconn/curve.hpp"
#include "modeconn/data.hpp"
#include "modeconn/landscape.hpp"
#include "modeconn/net.hpp"
#include "modeconn/repair.hpp"
#include "modeconn/report.hpp"
#include "modeconn/rng.hpp"
#include "modeconn/scenario.hpp"
#include "modeconn/train.hpp"

namespace {

using namespace modeconn;
using nlohmann::json;

struct TrainFlags {
    TrainConfig cfg;
    void add(CLI::App* cmd, int epochs, double lr) {
        cfg.epochs = epochs;
        cfg.learning_rate = lr;
        cmd->add_option("--epochs", cfg.epochs, "training epochs");
        cmd->add_option("--batch", cfg.batch_size, "minibatch size");
        cmd->add_option("--lr", cfg.learning_rate, "learning rate");
        cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
        cmd->add_option("--weight-decay", cfg.weight_decay, "L2 coefficient");
        cmd->add_option("--seed", cfg.seed, "seed for shuffling and init");
    }
};

struct PathFlags {
    PathTrainConfig cfg;
    void add(CLI::App* cmd, int epochs = 80, double lr = 0.02) {
        cfg.epochs = epochs;
        cfg.learning_rate = lr;
        cmd->add_option("--epochs", cfg.epochs, "path-training epochs");
        cmd->add_option("--batch", cfg.batch_size, "minibatch size");
        cmd->add_option("--lr", cfg.learning_rate, "learning rate");
        cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
        cmd->add_option("--weight-decay", cfg.weight_decay, "L2 coefficient");
        cmd->add_option("--seed", cfg.seed, "seed for shuffling and t draws");
    }
};

struct PGDFlags {
    PGDConfig cfg;
    void add(CLI::App* cmd) {
        cmd->add_option("--epsilon", cfg.epsilon, "L-inf radius in pixel units");
        cmd->add_option("--pgd-steps", cfg.steps, "attack iterations");
        cmd->add_option("--pgd-step", cfg.step_size, "step size (default epsilon/4)");
        cmd->add_flag("--pgd-random-start", cfg.random_start, "start from a random point in the ball");
    }
};

ModelSpec spec_for(const std::string& arch, const LabeledDataset& data, int hidden) {
    std::array<int, 3> in{data.images.shape[1], data.images.shape[2], data.images.shape[3]};
    if (arch == "cnn") return cnn_spec(in, data.num_classes);
    if (arch == "mlp") return mlp_spec(in, hidden, data.num_classes);
    throw std::invalid_argument("unknown arch: " + arch);
}

std::vector<double> parse_grid(const std::string& text) {
    if (text.empty()) return default_grid();
    std::vector<double> grid;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) grid.push_back(std::stod(item));
    return grid;
}

// Dotted-path override for scenario JSON, e.g. repair.bonafide_size=250.
// The value is parsed as JSON when possible, otherwise taken as a string.
void apply_override(json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("override needs key=value: " + assignment);
    std::string key = assignment.substr(0, eq);
    std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &j;
    std::stringstream ss(key);
    std::string part, prev;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw std::invalid_argument("empty override key");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    (*node)[parts.back()] = value;
}

LabeledDataset load_adv_bundle(const Model& model, const LabeledDataset& data,
                               const PGDConfig& pgd, std::uint64_t seed) {
    LabeledDataset adv = data;
    auto rng = make_rng(seed, 0x5EED);
    const int batch = 256;
    for (int begin = 0; begin < data.size(); begin += batch) {
        int count = std::min(batch, data.size() - begin);
        std::vector<int> idx(static_cast<std::size_t>(count));
        std::iota(idx.begin(), idx.end(), begin);
        auto [x, y] = make_batch(data, idx, 0, count);
        Tensor x_adv = pgd_attack(model, x, y, pgd, &rng);
        std::size_t per = x_adv.data.size() / static_cast<std::size_t>(count);
        std::copy(x_adv.data.begin(), x_adv.data.end(),
                  adv.images.data.begin() + static_cast<std::size_t>(begin) * per);
    }
    return adv;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"desk-scale mode-connectivity laboratory"};
    app.require_subcommand(1);
    std::function<void()> action;

    // gen-data ------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("gen-data", "generate a synthetic dataset bundle or ingest IDX files");
        auto classes = std::make_shared<int>(10);
        auto per_class = std::make_shared<int>(500);
        auto size = std::make_shared<int>(16);
        auto noise = std::make_shared<double>(0.1);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>();
        auto from_images = std::make_shared<std::string>();
        auto from_labels = std::make_shared<std::string>();
        cmd->add_option("--classes", *classes, "number of classes");
        cmd->add_option("--per-class", *per_class, "samples per class");
        cmd->add_option("--size", *size, "square image side");
        cmd->add_option("--noise", *noise, "pixel noise level");
        cmd->add_option("--seed", *seed, "generator seed");
        cmd->add_option("--from-images", *from_images, "IDX image file to ingest instead");
        cmd->add_option("--from-labels", *from_labels, "IDX label file to ingest instead");
        cmd->add_option("--out", *out, "output bundle prefix")->required();
        cmd->callback([=, &action] {
            action = [=] {
                LabeledDataset ds;
                if (!from_images->empty() || !from_labels->empty()) {
                    if (from_images->empty() || from_labels->empty())
                        throw std::invalid_argument("--from-images and --from-labels go together");
                    ds = load_idx(*from_images, *from_labels);
                } else {
                    ds = gen_synthetic(*classes, *per_class, *size, *noise, *seed);
                }
                save_dataset(*out, ds);
                std::cout << "wrote " << ds.size() << " samples (" << ds.num_classes
                          << " classes) to " << *out << "-*\n";
            };
        });
    }

    // poison --------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("poison", "stamp a trigger onto a fraction of a dataset and relabel");
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto fraction = std::make_shared<double>(0.1);
        auto tsize = std::make_shared<int>(3);
        auto tvalue = std::make_shared<double>(1.0);
        auto rule_kind = std::make_shared<std::string>("single");
        auto target = std::make_shared<int>(1);
        auto modulus = std::make_shared<int>(9);
        auto seed = std::make_shared<std::uint64_t>(0);
        cmd->add_option("--data", *data, "input bundle prefix")->required();
        cmd->add_option("--out", *out, "output bundle prefix")->required();
        cmd->add_option("--fraction", *fraction, "poisoned fraction");
        cmd->add_option("--trigger-size", *tsize, "square trigger side");
        cmd->add_option("--trigger-value", *tvalue, "trigger pixel value");
        cmd->add_option("--rule", *rule_kind, "single or all")
            ->check(CLI::IsMember({"single", "all"}));
        cmd->add_option("--target", *target, "target class (single rule)");
        cmd->add_option("--modulus", *modulus, "label shift modulus (all rule)");
        cmd->add_option("--seed", *seed, "selection seed");
        cmd->callback([=, &action] {
            action = [=] {
                LabeledDataset ds = load_dataset(*data);
                TriggerSpec trig{*tsize, *tsize, *tvalue};
                TargetRule rule;
                if (*rule_kind == "single") {
                    rule.kind = TargetRule::SingleTarget;
                    rule.target = *target;
                } else {
                    rule.kind = TargetRule::AllTargets;
                    rule.modulus = *modulus;
                }
                LabeledDataset poisoned = poison(ds, *fraction, rule, trig, *seed);
                save_dataset(*out, poisoned);
                int n = 0;
                for (const auto& m : poisoned.meta) n += m.poisoned ? 1 : 0;
                std::cout << "poisoned " << n << " of " << poisoned.size() << " samples -> "
                          << *out << "-*\n";
            };
        });
    }

    // train / advtrain ------------------------------------------------------
    auto add_train_cmd = [&](const char* name, const char* desc, bool adversarial) {
        auto* cmd = app.add_subcommand(name, desc);
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto arch = std::make_shared<std::string>("mlp");
        auto hidden = std::make_shared<int>(48);
        auto resume = std::make_shared<std::string>();
        auto tf = std::make_shared<TrainFlags>();
        auto pgd = std::make_shared<PGDFlags>();
        cmd->add_option("--data", *data, "training bundle prefix")->required();
        cmd->add_option("--out", *out, "output checkpoint")->required();
        cmd->add_option("--arch", *arch, "mlp or cnn")->check(CLI::IsMember({"mlp", "cnn"}));
        cmd->add_option("--hidden", *hidden, "MLP hidden width");
        cmd->add_option("--from", *resume, "checkpoint to continue from (overrides --arch)");
        tf->add(cmd, 100, 0.01);
        if (adversarial) pgd->add(cmd);
        cmd->callback([=, &action] {
            action = [=] {
                LabeledDataset ds = load_dataset(*data);
                Model model = resume->empty()
                                  ? init_model(spec_for(*arch, ds, *hidden), tf->cfg.seed)
                                  : load_model_checkpoint(*resume);
                model = adversarial ? adv_train(std::move(model), ds, pgd->cfg, tf->cfg)
                                    : train(std::move(model), ds, tf->cfg);
                save_model_checkpoint(*out, model, {tf->cfg.seed});
                std::cout << "train accuracy " << accuracy(model, ds) << ", saved " << *out
                          << "\n";
            };
        });
    };
    add_train_cmd("train", "train a model with SGD", false);
    add_train_cmd("advtrain", "adversarial training: PGD-perturb each minibatch first", true);

    // inject ----------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("inject", "inject targeted misclassifications into a trained model");
        auto model_path = std::make_shared<std::string>();
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto report = std::make_shared<std::string>();
        auto targets = std::make_shared<int>(4);
        auto keeps = std::make_shared<int>(996);
        auto spec = std::make_shared<InjectionSpec>();
        auto seed = std::make_shared<std::uint64_t>(0);
        cmd->add_option("--model", *model_path, "input checkpoint")->required();
        cmd->add_option("--data", *data, "bundle to pick targets and keeps from")->required();
        cmd->add_option("--out", *out, "output checkpoint")->required();
        cmd->add_option("--report", *report, "optional JSON report path");
        cmd->add_option("--targets", *targets, "number of targeted samples");
        cmd->add_option("--keeps", *keeps, "number of keep samples");
        cmd->add_option("--keep-weight", spec->keep_weight, "keep-term weight");
        cmd->add_option("--steps", spec->steps, "max optimization steps");
        cmd->add_option("--lr", spec->learning_rate, "injection learning rate");
        cmd->add_option("--seed", *seed, "target selection seed");
        cmd->callback([=, &action] {
            action = [=] {
                LabeledDataset ds = load_dataset(*data);
                Model model = load_model_checkpoint(*model_path);
                if (*targets + *keeps > ds.size())
                    throw std::invalid_argument("dataset too small for targets+keeps");
                auto rng = make_rng(*seed, 0x7A6);
                std::vector<int> order(static_cast<std::size_t>(ds.size()));
                std::iota(order.begin(), order.end(), 0);
                std::shuffle(order.begin(), order.end(), rng);
                InjectionSpec inj = *spec;
                std::uniform_int_distribution<int> shift(1, ds.num_classes - 1);
                for (int k = 0; k < *targets; ++k) {
                    int idx = order[static_cast<std::size_t>(k)];
                    inj.target_indices.push_back(idx);
                    inj.target_labels.push_back(
                        (ds.labels[static_cast<std::size_t>(idx)] + shift(rng)) % ds.num_classes);
                }
                for (int k = 0; k < *keeps; ++k)
                    inj.keep_indices.push_back(order[static_cast<std::size_t>(*targets + k)]);
                InjectionResult res = inject_errors(model, ds, inj);
                save_model_checkpoint(*out, res.model, {*seed});
                std::cout << "hits " << res.targets_hit << "/" << *targets << " after "
                          << res.steps_used << " steps, saved " << *out << "\n";
                if (!report->empty()) {
                    json r = {{"targets_hit", res.targets_hit},
                              {"steps_used", res.steps_used},
                              {"success", res.success},
                              {"target_indices", inj.target_indices},
                              {"target_labels", inj.target_labels},
                              {"seed", *seed}};
                    write_json_atomic(*report, r);
                }
                if (!res.success) throw std::runtime_error("injection did not reach all targets");
            };
        });
    }

    // connect / connect-robust ------------------------------------------------
    auto add_connect_cmd = [&](const char* name, const char* desc, bool robust) {
        auto* cmd = app.add_subcommand(name, desc);
        auto w1p = std::make_shared<std::string>();
        auto w2p = std::make_shared<std::string>();
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto kind = std::make_shared<std::string>("bezier2");
        auto trainable = std::make_shared<bool>(false);
        auto pf = std::make_shared<PathFlags>();
        auto pgd = std::make_shared<PGDFlags>();
        cmd->add_option("--w1", *w1p, "first endpoint checkpoint")->required();
        cmd->add_option("--w2", *w2p, "second endpoint checkpoint")->required();
        cmd->add_option("--data", *data, "path-training bundle prefix")->required();
        cmd->add_option("--out", *out, "output curve checkpoint")->required();
        cmd->add_option("--curve", *kind, "bezier2 or polychain1")
            ->check(CLI::IsMember({"bezier2", "polychain1"}));
        cmd->add_flag("--trainable-endpoints", *trainable, "update w1/w2 along with theta");
        pf->add(cmd);
        if (robust) pgd->add(cmd);
        cmd->callback([=, &action] {
            action = [=] {
                LabeledDataset ds = load_dataset(*data);
                Model w1 = load_model_checkpoint(*w1p);
                Model w2 = load_model_checkpoint(*w2p);
                CurveSpec curve = make_curve(curve_kind_from(*kind), w1, w2, *trainable);
                curve = robust ? train_path_robust(std::move(curve), ds, pgd->cfg, pf->cfg)
                               : train_path(std::move(curve), ds, pf->cfg);
                save_curve_checkpoint(*out, curve, {pf->cfg.seed});
                std::cout << "midpoint accuracy " << accuracy(model_at(curve, 0.5), ds)
                          << ", saved " << *out << "\n";
            };
        });
    };
    add_connect_cmd("connect", "train a low-loss curve between two models", false);
    add_connect_cmd("connect-robust", "train a curve on PGD-perturbed minibatches", true);

    // attack-pgd ---------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("attack-pgd", "craft adversarial examples and report accuracy");
        auto model_path = std::make_shared<std::string>();
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto seed = std::make_shared<std::uint64_t>(0);
        auto pgd = std::make_shared<PGDFlags>();
        cmd->add_option("--model", *model_path, "checkpoint to attack")->required();
        cmd->add_option("--data", *data, "bundle prefix")->required();
        cmd->add_option("--out", *out, "optional adversarial bundle prefix");
        cmd->add_option("--seed", *seed, "random-start seed");
        pgd->add(cmd);
        cmd->callback([=, &action] {
            action = [=] {
                LabeledDataset ds = load_dataset(*data);
                Model model = load_model_checkpoint(*model_path);
                LabeledDataset adv = load_adv_bundle(model, ds, pgd->cfg, *seed);
                std::cout << "clean accuracy " << accuracy(model, ds) << ", adversarial accuracy "
                          << accuracy(model, adv) << "\n";
                if (!out->empty()) {
                    save_dataset(*out, adv);
                    std::cout << "wrote adversarial bundle " << *out << "-*\n";
                }
            };
        });
    }

    // repair ---------------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("repair", "connect two tampered models through bonafide data and profile the path");
        auto w1p = std::make_shared<std::string>();
        auto w2p = std::make_shared<std::string>();
        auto bona = std::make_shared<std::string>();
        auto evalp = std::make_shared<std::string>();
        auto trig = std::make_shared<std::string>();
        auto outdir = std::make_shared<std::string>();
        auto kind = std::make_shared<std::string>("bezier2");
        auto grid_text = std::make_shared<std::string>();
        auto pf = std::make_shared<PathFlags>();
        cmd->add_option("--w1", *w1p, "first endpoint checkpoint")->required();
        cmd->add_option("--w2", *w2p, "second endpoint checkpoint")->required();
        cmd->add_option("--bonafide", *bona, "bonafide bundle prefix")->required();
        cmd->add_option("--eval", *evalp, "clean evaluation bundle prefix")->required();
        cmd->add_option("--triggered", *trig, "optional triggered bundle for attack-success");
        cmd->add_option("--out-dir", *outdir, "artifact directory")->required();
        cmd->add_option("--curve", *kind, "bezier2 or polychain1")
            ->check(CLI::IsMember({"bezier2", "polychain1"}));
        cmd->add_option("--grid", *grid_text, "comma-separated t grid");
        pf->add(cmd);
        cmd->callback([=, &action] {
            action = [=] {
                LabeledDataset bonafide = load_dataset(*bona);
                LabeledDataset eval_set = load_dataset(*evalp);
                LabeledDataset triggered;
                if (!trig->empty()) triggered = load_dataset(*trig);
                Model w1 = load_model_checkpoint(*w1p);
                Model w2 = load_model_checkpoint(*w2p);
                std::vector<Evaluator> evals =
                    standard_evaluators(eval_set, trig->empty() ? nullptr : &triggered);
                RepairOutcome outcome =
                    repair_by_connection(w1, w2, bonafide, pf->cfg, parse_grid(*grid_text), evals,
                                         curve_kind_from(*kind));
                std::filesystem::create_directories(*outdir);
                std::filesystem::path dir(*outdir);
                save_curve_checkpoint((dir / "curve.ckpt").string(), outcome.curve,
                                      {pf->cfg.seed});
                write_profile_csv((dir / "profile.csv").string(), outcome.profile);
                std::cout << "wrote " << (dir / "curve.ckpt").string() << " and "
                          << (dir / "profile.csv").string() << "\n";
            };
        });
    }

    // baseline -------------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("baseline", "repair baselines for comparison");
        cmd->require_subcommand(1);
        auto add_common = [](CLI::App* sub, auto bona, auto evalp, auto trig, auto out) {
            sub->add_option("--bonafide", *bona, "bonafide bundle prefix")->required();
            sub->add_option("--eval", *evalp, "clean evaluation bundle prefix")->required();
            sub->add_option("--triggered", *trig, "optional triggered bundle");
            sub->add_option("--out", *out, "optional JSON report path");
        };
        auto report_out = [](const std::string& method, const Model& m,
                             const LabeledDataset& eval_set, const LabeledDataset* triggered,
                             const std::string& out, std::uint64_t seed, int bonafide_size) {
            RepairReport rep;
            rep.method = method;
            rep.bonafide_size = bonafide_size;
            rep.clean_accuracy = accuracy(m, eval_set);
            rep.attack_success = triggered ? attack_success(m, *triggered) : 0.0;
            rep.seed = seed;
            std::cout << method << ": clean accuracy " << rep.clean_accuracy
                      << ", attack success " << rep.attack_success << "\n";
            if (!out.empty()) write_json_atomic(out, repair_report_json(rep));
        };

        {  // finetune
            auto* sub = cmd->add_subcommand("finetune", "continue training on bonafide data");
            auto model_path = std::make_shared<std::string>();
            auto bona = std::make_shared<std::string>(), evalp = std::make_shared<std::string>(),
                 trig = std::make_shared<std::string>(), out = std::make_shared<std::string>();
            auto tf = std::make_shared<TrainFlags>();
            sub->add_option("--model", *model_path, "checkpoint to finetune")->required();
            add_common(sub, bona, evalp, trig, out);
            tf->add(sub, 100, 0.01);
            sub->callback([=, &action] {
                action = [=] {
                    LabeledDataset bonafide = load_dataset(*bona);
                    LabeledDataset eval_set = load_dataset(*evalp);
                    LabeledDataset triggered;
                    if (!trig->empty()) triggered = load_dataset(*trig);
                    Model m = finetune(load_model_checkpoint(*model_path), bonafide, tf->cfg);
                    report_out("finetune", m, eval_set, trig->empty() ? nullptr : &triggered,
                               *out, tf->cfg.seed, bonafide.size());
                };
            });
        }
        {  // scratch
            auto* sub = cmd->add_subcommand("scratch", "train a fresh model on bonafide data only");
            auto arch = std::make_shared<std::string>("mlp");
            auto hidden = std::make_shared<int>(48);
            auto bona = std::make_shared<std::string>(), evalp = std::make_shared<std::string>(),
                 trig = std::make_shared<std::string>(), out = std::make_shared<std::string>();
            auto tf = std::make_shared<TrainFlags>();
            sub->add_option("--arch", *arch, "mlp or cnn")->check(CLI::IsMember({"mlp", "cnn"}));
            sub->add_option("--hidden", *hidden, "MLP hidden width");
            add_common(sub, bona, evalp, trig, out);
            tf->add(sub, 100, 0.01);
            sub->callback([=, &action] {
                action = [=] {
                    LabeledDataset bonafide = load_dataset(*bona);
                    LabeledDataset eval_set = load_dataset(*evalp);
                    LabeledDataset triggered;
                    if (!trig->empty()) triggered = load_dataset(*trig);
                    Model m = train_scratch(spec_for(*arch, bonafide, *hidden), bonafide, tf->cfg);
                    report_out("scratch", m, eval_set, trig->empty() ? nullptr : &triggered, *out,
                               tf->cfg.seed, bonafide.size());
                };
            });
        }
        {  // noise
            auto* sub = cmd->add_subcommand("noise", "average metrics over coordinate-noise models");
            auto w1p = std::make_shared<std::string>(), w2p = std::make_shared<std::string>();
            auto n = std::make_shared<int>(50);
            auto seed = std::make_shared<std::uint64_t>(0);
            auto bona = std::make_shared<std::string>(), evalp = std::make_shared<std::string>(),
                 trig = std::make_shared<std::string>(), out = std::make_shared<std::string>();
            sub->add_option("--w1", *w1p, "first checkpoint")->required();
            sub->add_option("--w2", *w2p, "second checkpoint")->required();
            sub->add_option("--models", *n, "noise models per endpoint");
            sub->add_option("--seed", *seed, "noise seed");
            add_common(sub, bona, evalp, trig, out);
            sub->callback([=, &action] {
                action = [=] {
                    LabeledDataset eval_set = load_dataset(*evalp);
                    LabeledDataset triggered;
                    if (!trig->empty()) triggered = load_dataset(*trig);
                    auto models = gaussian_noise_models(load_model_checkpoint(*w1p),
                                                        load_model_checkpoint(*w2p), *n, *seed);
                    double acc = 0.0, atk = 0.0;
                    for (const Model& m : models) {
                        acc += accuracy(m, eval_set);
                        if (!trig->empty()) atk += attack_success(m, triggered);
                    }
                    RepairReport rep;
                    rep.method = "noise";
                    rep.bonafide_size = 0;
                    rep.clean_accuracy = acc / models.size();
                    rep.attack_success = atk / models.size();
                    rep.seed = *seed;
                    std::cout << "noise: clean accuracy " << rep.clean_accuracy
                              << ", attack success " << rep.attack_success << " over "
                              << models.size() << " models\n";
                    if (!out->empty()) write_json_atomic(*out, repair_report_json(rep));
                };
            });
        }
        {  // prune
            auto* sub = cmd->add_subcommand("prune", "mask low-magnitude units, then retrain");
            auto model_path = std::make_shared<std::string>();
            auto fraction = std::make_shared<double>(0.6);
            auto bona = std::make_shared<std::string>(), evalp = std::make_shared<std::string>(),
                 trig = std::make_shared<std::string>(), out = std::make_shared<std::string>();
            auto tf = std::make_shared<TrainFlags>();
            sub->add_option("--model", *model_path, "checkpoint to prune")->required();
            sub->add_option("--fraction", *fraction, "fraction of units pruned per layer");
            add_common(sub, bona, evalp, trig, out);
            tf->add(sub, 100, 0.01);
            sub->callback([=, &action] {
                action = [=] {
                    LabeledDataset bonafide = load_dataset(*bona);
                    LabeledDataset eval_set = load_dataset(*evalp);
                    LabeledDataset triggered;
                    if (!trig->empty()) triggered = load_dataset(*trig);
                    Model m = prune_and_retrain(load_model_checkpoint(*model_path), *fraction,
                                                bonafide, tf->cfg);
                    report_out("prune", m, eval_set, trig->empty() ? nullptr : &triggered, *out,
                               tf->cfg.seed, bonafide.size());
                };
            });
        }
    }

    // select-t ----------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("select-t", "pick a deployment t from bonafide data by k-fold retraining");
        auto curve_path = std::make_shared<std::string>();
        auto bona = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto grid_text = std::make_shared<std::string>();
        auto ts = std::make_shared<TSelectConfig>();
        auto pf = std::make_shared<PathFlags>();
        cmd->add_option("--curve", *curve_path, "curve checkpoint")->required();
        cmd->add_option("--bonafide", *bona, "bonafide bundle prefix")->required();
        cmd->add_option("--k", ts->k, "number of folds");
        cmd->add_option("--delta", ts->delta_a, "allowed accuracy drop from endpoints");
        cmd->add_option("--grid", *grid_text, "comma-separated t grid");
        cmd->add_option("--out", *out, "optional JSON report path");
        pf->add(cmd);
        cmd->callback([=, &action] {
            action = [=] {
                CurveSpec curve = load_curve_checkpoint(*curve_path);
                LabeledDataset bonafide = load_dataset(*bona);
                TSelectResult res =
                    select_t(curve, bonafide, *ts, pf->cfg, parse_grid(*grid_text));
                std::cout << "t = " << res.t << (res.qualified ? "" : " (fallback)")
                          << ", endpoint accuracy " << res.endpoint_accuracy << "\n";
                if (!out->empty()) {
                    json r = {{"t", res.t},
                              {"qualified", res.qualified},
                              {"endpoint_accuracy", res.endpoint_accuracy},
                              {"grid", res.grid},
                              {"mean_accuracy", res.mean_accuracy}};
                    write_json_atomic(*out, r);
                }
            };
        });
    }

    // profile ----------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("profile", "evaluate metrics along a trained curve");
        auto curve_path = std::make_shared<std::string>();
        auto evalp = std::make_shared<std::string>();
        auto trig = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto grid_text = std::make_shared<std::string>();
        auto robust = std::make_shared<bool>(false);
        auto lambda = std::make_shared<bool>(false);
        auto cap = std::make_shared<int>(0);
        auto pgd = std::make_shared<PGDFlags>();
        auto hess = std::make_shared<HessianConfig>();
        cmd->add_option("--curve", *curve_path, "curve checkpoint")->required();
        cmd->add_option("--eval", *evalp, "clean evaluation bundle prefix")->required();
        cmd->add_option("--triggered", *trig, "optional triggered bundle");
        cmd->add_option("--out", *out, "output CSV path")->required();
        cmd->add_option("--grid", *grid_text, "comma-separated t grid");
        cmd->add_flag("--robust", *robust, "add PGD robustness loss");
        cmd->add_flag("--lambda", *lambda, "add mean input-Hessian top eigenvalue");
        cmd->add_option("--subset", *cap, "cap samples for robust/lambda metrics (0 = all)");
        cmd->add_option("--hessian-samples", hess->samples, "samples for the eigenvalue mean");
        cmd->add_option("--hessian-seed", hess->seed, "subset/start-vector seed");
        pgd->add(cmd);
        cmd->callback([=, &action] {
            action = [=] {
                CurveSpec curve = load_curve_checkpoint(*curve_path);
                LabeledDataset eval_set = load_dataset(*evalp);
                LabeledDataset triggered;
                if (!trig->empty()) triggered = load_dataset(*trig);
                LabeledDataset capped = eval_set;
                if (*cap > 0 && *cap < eval_set.size()) {
                    std::vector<int> idx(static_cast<std::size_t>(*cap));
                    std::iota(idx.begin(), idx.end(), 0);
                    capped = subset(eval_set, idx);
                }
                std::vector<Evaluator> evals =
                    standard_evaluators(eval_set, trig->empty() ? nullptr : &triggered);
                if (*robust)
                    evals.push_back({"robustness_loss", [&, pgd](const Model& m) {
                                         return robustness_loss(m, capped, pgd->cfg);
                                     }});
                if (*lambda)
                    evals.push_back({"lambda_max", [&, hess](const Model& m) {
                                         return mean_lambda_max(m, capped, *hess);
                                     }});
                PathProfile profile = sample_path(curve, parse_grid(*grid_text), evals);
                write_profile_csv(*out, profile);
                std::cout << "wrote " << *out << "\n";
            };
        });
    }

    // hessian ------------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("hessian", "mean top input-Hessian eigenvalue of a model");
        auto model_path = std::make_shared<std::string>();
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto hess = std::make_shared<HessianConfig>();
        cmd->add_option("--model", *model_path, "checkpoint")->required();
        cmd->add_option("--data", *data, "bundle prefix")->required();
        cmd->add_option("--samples", hess->samples, "sample count");
        cmd->add_option("--rel-tol", hess->rel_tol, "power-iteration relative tolerance");
        cmd->add_option("--max-iter", hess->max_iter, "power-iteration cap");
        cmd->add_option("--seed", hess->seed, "subset/start-vector seed");
        cmd->add_option("--out", *out, "optional JSON report path");
        cmd->callback([=, &action] {
            action = [=] {
                Model model = load_model_checkpoint(*model_path);
                LabeledDataset ds = load_dataset(*data);
                double lam = mean_lambda_max(model, ds, *hess);
                std::cout << "mean lambda_max " << lam << " over "
                          << std::min(hess->samples, ds.size()) << " samples\n";
                if (!out->empty())
                    write_json_atomic(*out, json{{"mean_lambda_max", lam},
                                                 {"samples", std::min(hess->samples, ds.size())},
                                                 {"seed", hess->seed}});
            };
        });
    }

    // similarity -----------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("similarity", "input-gradient similarity of path models to the endpoints");
        auto curve_path = std::make_shared<std::string>();
        auto clean = std::make_shared<std::string>();
        auto tampered = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto grid_text = std::make_shared<std::string>();
        auto max_samples = std::make_shared<int>(64);
        cmd->add_option("--curve", *curve_path, "curve checkpoint")->required();
        cmd->add_option("--clean", *clean, "clean bundle prefix")->required();
        cmd->add_option("--tampered", *tampered, "triggered/tampered bundle prefix")->required();
        cmd->add_option("--out", *out, "output CSV path")->required();
        cmd->add_option("--grid", *grid_text, "comma-separated t grid");
        cmd->add_option("--max-samples", *max_samples, "samples per set");
        cmd->callback([=, &action] {
            action = [=] {
                CurveSpec curve = load_curve_checkpoint(*curve_path);
                LabeledDataset clean_ds = load_dataset(*clean);
                LabeledDataset tampered_ds = load_dataset(*tampered);
                auto records = input_grad_similarity(curve, clean_ds, tampered_ds,
                                                     parse_grid(*grid_text), *max_samples);
                std::string csv = "# modeconn-csv-v1\n";
                csv += "t,m_clean_to_w1,m_clean_to_w2,m_tampered_to_w1,m_tampered_to_w2,"
                       "skipped_clean,skipped_tampered\n";
                for (const auto& r : records) {
                    csv += format_double(r.t) + "," + format_double(r.m_clean_to_w1) + "," +
                           format_double(r.m_clean_to_w2) + "," +
                           format_double(r.m_tampered_to_w1) + "," +
                           format_double(r.m_tampered_to_w2) + "," +
                           std::to_string(r.skipped_clean) + "," +
                           std::to_string(r.skipped_tampered) + "\n";
                }
                write_text_atomic(*out, csv);
                std::cout << "wrote " << *out << "\n";
            };
        });
    }

    // scenario --------------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("scenario", "declarative end-to-end experiments");
        cmd->require_subcommand(1);
        auto* list = cmd->add_subcommand("list", "list bundled scenarios");
        list->callback([&action] {
            action = [] {
                for (const auto& name : bundled_scenario_names()) std::cout << name << "\n";
            };
        });
        auto* run = cmd->add_subcommand("run", "run a scenario from a file or a bundled name");
        auto config_path = std::make_shared<std::string>();
        auto bundled = std::make_shared<std::string>();
        auto outdir = std::make_shared<std::string>();
        auto overrides = std::make_shared<std::vector<std::string>>();
        run->add_option("--config", *config_path, "scenario JSON file");
        run->add_option("--name", *bundled, "bundled scenario name");
        run->add_option("--out-dir", *outdir, "output directory override");
        run->add_option("--set", *overrides, "dotted-path config override, e.g. repair.bonafide_size=250");
        run->callback([=, &action] {
            action = [=] {
                if (config_path->empty() == bundled->empty())
                    throw std::invalid_argument("give exactly one of --config or --name");
                json j;
                if (!config_path->empty()) {
                    std::ifstream in(*config_path);
                    if (!in)
                        throw std::invalid_argument("cannot open scenario file: " + *config_path);
                    try {
                        j = json::parse(in);
                    } catch (const json::parse_error& e) {
                        throw std::invalid_argument(std::string{"bad scenario JSON: "} + e.what());
                    }
                } else {
                    j = bundled_scenario(*bundled);
                }
                for (const auto& ov : *overrides) apply_override(j, ov);
                ScenarioConfig cfg = parse_scenario(j);
                ScenarioResult res = run_scenario(cfg, *outdir);
                std::cout << "scenario '" << cfg.name << "' finished, artifacts in "
                          << res.output_dir << "\n";
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (!action) return 0;  // help paths
    try {
        action();
    } catch (const ScenarioError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) { return run_cli(argc, argv); }
