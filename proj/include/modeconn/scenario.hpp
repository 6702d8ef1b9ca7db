#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "modeconn/adaptive.hpp"
#include "modeconn/landscape.hpp"
#include "modeconn/repair.hpp"

namespace modeconn {

// Declarative end-to-end experiment. Parsed from JSON; every stage derives
// its seeds from the top-level seed so a rerun is byte-identical.
struct ScenarioConfig {
    std::string type;  // backdoor | inject | evasion-barrier
    std::string name;
    std::uint64_t seed = 0;
    std::string output_dir;

    // dataset
    int num_classes = 10;
    int image_size = 16;
    int train_per_class = 500;
    int test_per_class = 200;
    double noise_level = 0.1;

    // model
    std::string arch = "mlp";  // mlp | cnn
    int hidden = 48;       // mlp only
    int conv_blocks = 3;   // cnn only

    TrainConfig endpoints;

    // backdoor
    double poison_fraction = 0.1;
    TriggerSpec trigger;
    TargetRule rule;
    bool adaptive = false;
    PathTrainConfig adaptive_path;  // attacker's path training

    // injection
    int num_targets = 4;
    int num_keep = 996;
    double keep_weight = 1.0;
    int inject_steps = 1500;
    double inject_lr = 0.05;

    // repair / connect
    int bonafide_size = 500;
    PathTrainConfig path;
    CurveKind curve_kind = CurveKind::Bezier2;
    bool robust_path = false;
    bool run_select_t = true;
    TSelectConfig tselect;
    bool run_baselines = false;
    int noise_models = 50;
    double prune_fraction = 0.6;
    TrainConfig baseline_cfg;  // finetune / scratch / prune training

    // analysis
    PGDConfig analysis_pgd;
    HessianConfig hessian;
    bool run_similarity = false;
    int similarity_samples = 32;
    int eval_subset = 512;  // cap for robustness/hessian evaluation data

    // evasion-barrier
    std::vector<std::string> pairs{"reg-reg", "reg-adv", "adv-adv"};
    TrainConfig adv_endpoints;
    PGDConfig train_pgd;  // inner maximization during adversarial training

    void validate() const;
};

ScenarioConfig parse_scenario(const nlohmann::json& j);
ScenarioConfig load_scenario_file(const std::string& path);

std::vector<std::string> bundled_scenario_names();
// Returns the embedded JSON for a bundled scenario; throws on unknown name.
nlohmann::json bundled_scenario(const std::string& name);

struct EndpointMetrics {
    double clean_accuracy = 0.0;
    double attack_success = 0.0;  // backdoor scenarios
    int injection_hits = 0;       // injection scenarios
};

struct PathSummary {
    std::string pair;  // e.g. "reg-reg"
    PathProfile profile;
    double robustness_barrier = 0.0;
    double standard_loss_barrier = 0.0;
    double pcc = 0.0;  // lambda_max vs robustness_loss
};

struct ScenarioResult {
    std::string output_dir;
    std::vector<std::string> artifacts;

    EndpointMetrics w1_metrics;
    EndpointMetrics w2_metrics;

    PathProfile profile;  // repair/connect profile (backdoor and inject)
    CurveSpec curve;
    std::vector<RepairReport> reports;
    bool tselect_ran = false;
    TSelectResult tselect;
    std::vector<SimilarityRecord> similarity;

    int num_targets = 0;                 // injection
    std::vector<int> hits_per_grid_t;    // injection, aligned with profile grid

    std::vector<PathSummary> paths;  // evasion-barrier
};

// Thrown when a pipeline stage fails; artifacts written so far remain.
struct ScenarioError : std::runtime_error {
    std::string stage;
    ScenarioError(const std::string& stage_name, const std::string& what)
        : std::runtime_error("stage '" + stage_name + "' failed: " + what), stage(stage_name) {}
};

ScenarioResult run_scenario(const ScenarioConfig& config, const std::string& output_override = "");

}  // namespace modeconn
