#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "modeconn/curve.hpp"
#include "modeconn/data.hpp"
#include "modeconn/train.hpp"

namespace modeconn {

struct RepairReport {
    std::string method;
    int bonafide_size = 0;
    double chosen_t = std::numeric_limits<double>::quiet_NaN();  // NaN when not path-based
    double clean_accuracy = 0.0;
    double attack_success = 0.0;
    double runtime_seconds = 0.0;
    std::uint64_t seed = 0;
};

struct RepairOutcome {
    CurveSpec curve;
    PathProfile profile;
};

// Clean-loss/error evaluators plus attack success when a triggered set is
// given; the shared metric set for path profiles and reports.
std::vector<Evaluator> standard_evaluators(const LabeledDataset& clean_test,
                                           const LabeledDataset* triggered = nullptr);

// Trains a path between the two (possibly tampered) models using only
// bonafide data, then profiles it on the supplied evaluators.
RepairOutcome repair_by_connection(const Model& w1, const Model& w2,
                                   const LabeledDataset& bonafide, const PathTrainConfig& cfg,
                                   const std::vector<double>& t_grid,
                                   const std::vector<Evaluator>& evaluators,
                                   CurveKind kind = CurveKind::Bezier2);

// Single-model variant: fine-tunes a copy on the bonafide data, then
// connects the original with the fine-tuned copy.
RepairOutcome repair_single_model(const Model& w, const LabeledDataset& bonafide,
                                  const PathTrainConfig& path_cfg, const TrainConfig& finetune_cfg,
                                  const std::vector<double>& t_grid,
                                  const std::vector<Evaluator>& evaluators,
                                  CurveKind kind = CurveKind::Bezier2);

Model finetune(const Model& model, const LabeledDataset& bonafide, const TrainConfig& cfg);

Model train_scratch(const ModelSpec& spec, const LabeledDataset& bonafide, const TrainConfig& cfg);

// 2n models: n noisy copies of w1 followed by n of w2. Each coordinate is
// perturbed by Normal(0, |w1_i - w2_i|).
std::vector<Model> gaussian_noise_models(const Model& w1, const Model& w2, int n,
                                         std::uint64_t seed);

// Coordinates zeroed by pruning: per prunable layer (conv filters and hidden
// dense units, final classifier excluded), the lowest-l1 fraction of units.
std::vector<std::uint8_t> prune_mask(const Model& model, double fraction);

// Masks the selected units to zero, then retrains with the mask held fixed.
Model prune_and_retrain(const Model& model, double fraction, const LabeledDataset& bonafide,
                        const TrainConfig& cfg);

struct TSelectConfig {
    int k = 5;
    double delta_a = 0.10;  // 0.06 with full test access, 0.10 under k-fold
};

struct TSelectResult {
    double t = std::numeric_limits<double>::quiet_NaN();
    bool qualified = false;  // some t met the accuracy threshold
    double endpoint_accuracy = 0.0;
    std::vector<double> grid;
    std::vector<double> mean_accuracy;  // fold-averaged, per grid t
};

// k-fold selection: per fold, retrain the path on the other folds and score
// clean accuracy on the held-out fold across the grid. Returns the smallest
// interior t whose mean accuracy reaches endpoint accuracy minus delta_a,
// or the best interior t with qualified=false.
TSelectResult select_t(const CurveSpec& curve, const LabeledDataset& bonafide,
                       const TSelectConfig& tcfg, const PathTrainConfig& path_cfg,
                       const std::vector<double>& grid);

struct StabilityStats {
    std::vector<double> grid;
    std::vector<std::string> metric_names;
    // [metric][grid index]
    std::vector<std::vector<double>> mean;
    std::vector<std::vector<double>> stddev;
    int runs = 0;
};

// Repeats path training across seeds and aggregates each metric per t.
StabilityStats stability_runs(const Model& w1, const Model& w2, const LabeledDataset& data,
                              const PathTrainConfig& cfg, const std::vector<double>& grid,
                              const std::vector<Evaluator>& evaluators, int runs = 10,
                              CurveKind kind = CurveKind::Bezier2);

}  // namespace modeconn
