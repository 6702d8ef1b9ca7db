#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "modeconn/attacks.hpp"
#include "modeconn/data.hpp"
#include "modeconn/model.hpp"

namespace modeconn {

enum class CurveKind { Bezier2, PolyChain1 };

std::string curve_kind_name(CurveKind kind);
CurveKind curve_kind_from(const std::string& name);

// Parametric curve in weight space between two models. Bezier2 follows
// (1-t)^2 w1 + 2t(1-t) theta + t^2 w2; PolyChain1 is the two-segment chain
// through theta with the bend at t=0.5. Endpoints are exact for any theta.
struct CurveSpec {
    CurveKind kind = CurveKind::Bezier2;
    ModelSpec spec;
    WeightVector w1;
    WeightVector w2;
    WeightVector theta;
    bool endpoints_trainable = false;

    void validate() const;
};

// theta starts at the segment midpoint (w1+w2)/2.
CurveSpec make_curve(CurveKind kind, const Model& w1, const Model& w2,
                     bool endpoints_trainable = false);

WeightVector curve_point(const CurveSpec& curve, double t);
Model model_at(const CurveSpec& curve, double t);

// d(curve)/d(theta) is this scalar times the identity.
double tangent_scale(CurveKind kind, double t);

// (d/dw1, d/dw2) scalars, used when endpoints are trainable.
std::pair<double, double> endpoint_scales(CurveKind kind, double t);

struct PathTrainConfig {
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    // t is drawn uniformly once per minibatch (Monte-Carlo estimate of the
    // uniform-t expected loss); no other sampling scheme is provided.

    void validate() const;
};

// Minimizes the expected loss over uniformly sampled curve points by SGD
// with momentum on theta (and the endpoints when marked trainable).
// Bit-identical per (curve, data, cfg).
CurveSpec train_path(CurveSpec curve, const LabeledDataset& data, const PathTrainConfig& cfg);

// Same loop, but each minibatch is PGD-perturbed at the sampled curve point
// before the gradient step. epsilon 0 reproduces train_path exactly.
CurveSpec train_path_robust(CurveSpec curve, const LabeledDataset& data, const PGDConfig& pgd,
                            const PathTrainConfig& cfg);

struct PathRecord {
    double t = 0.0;
    std::vector<std::pair<std::string, double>> values;
    std::vector<std::pair<std::string, std::string>> errors;  // evaluator name -> message
};

struct PathProfile {
    std::vector<double> t_grid;
    std::vector<std::string> metric_names;
    std::vector<PathRecord> records;

    double value(std::size_t record_idx, const std::string& metric) const;
    std::vector<double> column(const std::string& metric) const;
};

struct Evaluator {
    std::string name;
    std::function<double(const Model&)> fn;
};

// Instantiates the model at each grid t and applies every evaluator. An
// evaluator failure is recorded on that record; other t are unaffected.
PathProfile sample_path(const CurveSpec& curve, const std::vector<double>& t_grid,
                        const std::vector<Evaluator>& evaluators);

// {0, 0.1, ..., 1.0}
std::vector<double> default_grid();

}  // namespace modeconn
