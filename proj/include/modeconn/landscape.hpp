#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "modeconn/attacks.hpp"
#include "modeconn/curve.hpp"
#include "modeconn/data.hpp"
#include "modeconn/model.hpp"

namespace modeconn {

// Gradient of a scalar function with respect to its input tensor.
using GradFn = std::function<Tensor(const Tensor&)>;

struct HessianProbe {
    double lambda_max = 0.0;  // signed Rayleigh quotient of the converged direction
    Tensor eigvec;            // unit norm
    int iterations_used = 0;
    double alignment_c = 0.0;  // |grad . eigvec| / |grad|
    bool converged = false;
};

// Finite-difference Hessian-vector product (grad(x+h*v) - grad(x)) / h.
// Non-positive h selects 1e-4*(1+|x|)/|v|. Exact on quadratics.
Tensor hvp(const GradFn& grad, const Tensor& x, const Tensor& v, double h = -1.0);

// Power iteration on hvp from a seeded random unit start; stops when the
// relative eigenvalue change drops below rel_tol. Non-convergence is flagged
// and the last estimate returned.
HessianProbe power_lambda_max(const GradFn& grad, const Tensor& x, double rel_tol = 1e-4,
                              int max_iter = 100, std::uint64_t seed = 0);

// Input-Hessian probe of the cross-entropy loss at one sample.
HessianProbe input_lambda_max(const Model& model, const Tensor& image, int label,
                              double rel_tol = 1e-4, int max_iter = 100, std::uint64_t seed = 0);

struct HessianConfig {
    int samples = 64;  // seeded evaluation subset size (capped at dataset size)
    double rel_tol = 1e-4;
    int max_iter = 100;
    std::uint64_t seed = 0;
};

// Mean dominant eigenvalue over a seeded evaluation subset.
double mean_lambda_max(const Model& model, const LabeledDataset& data, const HessianConfig& cfg);

// Mean cross-entropy on PGD-perturbed inputs against true labels.
double robustness_loss(const Model& model, const LabeledDataset& data, const PGDConfig& pgd,
                       int batch_size = 256);

// NaN when either sequence has zero variance.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct CorrelationResult {
    PathProfile profile;  // robustness_loss, lambda_max, log_lambda_max per t
    double pcc = 0.0;     // between raw lambda_max and robustness loss
};

CorrelationResult correlation_profile(const CurveSpec& curve, const LabeledDataset& data,
                                      const PGDConfig& pgd, const std::vector<double>& grid,
                                      const HessianConfig& hessian);

// Closed-form family l(t,x) = c0 + g0*(v.x) + lambda(t)/2*(v.x)^2 with the
// gradient aligned to the top eigenvector and constant loss at x=0. The
// exact ball maximum is affine in lambda(t), so their correlation is 1.
struct Prop1Report {
    std::vector<double> t_grid;
    std::vector<double> lambda_exact;
    std::vector<double> lambda_power;  // via power iteration on the family
    std::vector<double> robust_max;    // exact max over the epsilon ball
    double pcc = 0.0;                  // robust_max vs lambda_power
    double alignment_min = 0.0;        // min alignment_c across t (1 by construction)
    double grad_norm_spread = 0.0;     // max-min of |grad| at x=0 across t
};

Prop1Report prop1_toy_validation(double epsilon, const std::vector<double>& grid);

struct SimilarityRecord {
    double t = 0.0;
    double m_clean_to_w1 = 0.0;
    double m_clean_to_w2 = 0.0;
    double m_tampered_to_w1 = 0.0;
    double m_tampered_to_w2 = 0.0;
    int skipped_clean = 0;  // zero-gradient samples
    int skipped_tampered = 0;
};

// Mean input-gradient distance m = |s-1|/2 (s = cosine similarity) between
// each path model and the endpoints, over the first max_samples of each set.
std::vector<SimilarityRecord> input_grad_similarity(const CurveSpec& curve,
                                                    const LabeledDataset& clean,
                                                    const LabeledDataset& tampered,
                                                    const std::vector<double>& grid,
                                                    int max_samples = 64);

// Max over interior grid points minus the larger endpoint value; positive
// means a barrier.
double barrier_height(const PathProfile& profile, const std::string& metric);

struct EnsembleReport {
    double clean_accuracy = 0.0;
    double transfer_attack_success = 0.0;  // adversarial samples fooling the ensemble
    double source_attack_success = 0.0;    // same samples on the model they were crafted on
};

// Averages softmax outputs of the path models at t_samples; adversarial
// examples are crafted once on attack_source.
EnsembleReport ensemble_eval(const CurveSpec& curve, const std::vector<double>& t_samples,
                             const LabeledDataset& data, const Model& attack_source,
                             const PGDConfig& pgd);

}  // namespace modeconn
