#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "scrf/losses.hpp"
#include "scrf/nn_core.hpp"
#include "scrf/pseudo_label.hpp"
#include "scrf/signal_sim.hpp"

namespace scrf::adapt {

enum class PriorMode { Known, Uniform, Estimate };

struct AdaptConfig {
    double lambda1 = 0.3;
    double lambda2 = 1.0;
    double lambda3 = 0.5;
    double tau = 0.1;
    double beta = 0.995;
    double gamma = -1.0; // < 0 resolves to 0.05 * N^t
    double lr = 0.0006;
    int epochs = 20;
    int batch_size = 64;
    PriorMode prior_mode = PriorMode::Uniform;
    std::optional<losses::PriorVector> known_prior;
    std::uint64_t seed = 0;

    double resolved_gamma(std::size_t n_target) const {
        return gamma >= 0.0 ? gamma : 0.05 * static_cast<double>(n_target);
    }
    void validate(std::size_t n_target, std::size_t num_classes) const;
};

// Which pieces of the objective are active. The defaults are full MS-SHOT;
// the other combinations cover the SHOT baseline and the ablation grid.
struct AdaptVariant {
    bool use_nn_l1 = true;
    bool use_soft_label = true;
    bool use_momentum = true;
    bool shot_hard = false; // epoch-level hard labels instead of MCSP

    static AdaptVariant ms_shot() { return {true, true, true, false}; }
    static AdaptVariant shot_baseline() { return {true, false, false, true}; }
    static AdaptVariant nn_l1_only() { return {true, false, false, false}; }
    static AdaptVariant soft_only() { return {false, true, false, false}; }
    static AdaptVariant nn_l1_soft() { return {true, true, false, false}; }
};

struct EpochReport {
    int epoch = 0;
    losses::LossBreakdown losses; // epoch mean over batches
    std::optional<double> accuracy; // held-out labeled target set, eval mode
    losses::PriorVector prior_snapshot;
    double center_drift = 0.0; // mean ||c_k(end) - c_k(start)|| over the epoch
};

struct BoundReport {
    double c1 = std::numeric_limits<double>::quiet_NaN();
    double vc_dim = 0.0;
    double n_target = 0.0;
    double rho = 0.0;
    double zeta = std::numeric_limits<double>::quiet_NaN();
    bool zeta_valid = false; // false when gamma >= 2 n_hat_min (estimate mode)
    double nuclear_norm = 0.0;
    double prior_l1_gap = 0.0;
    bool nn_feasible = false;
    bool l1_feasible = false;
    PriorMode mode = PriorMode::Known;
    // Theorem-2 style quantities have no estimator computable from data;
    // reported as unavailable rather than fabricated.
    bool eta_star_available = false;
    bool d_h_available = false;
};

struct SourceTrainConfig {
    int epochs = 7;
    double lr = 0.0006;
    int batch_size = 64;
    std::uint64_t seed = 0;
    nn::ArchDescriptor arch;
};

nn::ModelState train_source(const std::vector<sim::IQRecord>& dataset, const SourceTrainConfig& cfg);

struct AdaptResult {
    nn::ModelState model;
    std::vector<EpochReport> reports;
};

// Algorithm: copy the source model, freeze the classifier head, and per epoch
// recompute class centers from the full target set and resolve the prior;
// per batch run MCSP center/soft-label updates (or epoch hard labels for the
// SHOT baseline), evaluate the weighted objective, and take one Adam step on
// the feature extractor. Running BN statistics never move here, so a
// zero-weight objective leaves eval-mode predictions bit-identical.
AdaptResult adapt(const nn::ModelState& source_model, const std::vector<sim::IQRecord>& target,
                  const AdaptConfig& cfg, const AdaptVariant& variant = AdaptVariant::ms_shot(),
                  const std::vector<sim::IQRecord>* eval_set = nullptr);

losses::PriorVector resolve_prior(PriorMode mode, const std::optional<losses::PriorVector>& known,
                                  const Mat& probs_over_target, std::size_t n_target, std::size_t num_classes);

// zeta(alpha) = sum_k sqrt(n_k) for a known prior; for an estimated prior
// sum_k (sqrt(n_hat_k) - gamma / (2 sqrt(n_hat_min))), valid only while
// gamma < 2 n_hat_min.
double zeta(const losses::PriorVector& prior, double gamma, PriorMode mode);

// c1 = 2 sqrt((d (log(2N/d) + 1) + log(4/rho)) / N), natural logarithm.
double c1_bound(double vc_dim, double n_samples, double rho);

// Evaluates the one-hot feasibility identities: nuclear norm via sum sqrt(n_k),
// the l1 histogram gap, and the constraint flags for the given prior mode.
BoundReport feasibility_check(const std::vector<int>& hard_labels, int num_classes,
                              const losses::PriorVector& prior, double gamma, PriorMode mode);

BoundReport make_bound_report(const std::vector<int>& hard_labels, int num_classes,
                              const losses::PriorVector& prior, double gamma, PriorMode mode, double vc_dim,
                              double rho);

// Eval-mode utilities shared by the engine, harness and tests.
struct FullForward {
    Mat features; // N x d
    Mat probs;    // N x K
};
FullForward forward_dataset(nn::ModelState& model, const std::vector<sim::IQRecord>& records);
double evaluate_accuracy(nn::ModelState& model, const std::vector<sim::IQRecord>& records);
std::vector<int> hard_predictions(nn::ModelState& model, const std::vector<sim::IQRecord>& records);

}  // namespace scrf::adapt
