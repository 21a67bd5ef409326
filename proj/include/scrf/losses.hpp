#pragma once

#include <vector>

#include "scrf/common.hpp"
#include "scrf/nn_core.hpp"

namespace scrf::losses {

struct SoftLabelBatch {
    Mat labels; // B x K, rows on the probability simplex
};

struct PriorVector {
    std::vector<double> counts; // length K, nonnegative, sums to the population

    double sum() const {
        double s = 0.0;
        for (double c : counts) s += c;
        return s;
    }
};

struct LossWeights {
    double lambda1 = 0.3;
    double lambda2 = 1.0;
    double lambda3 = 0.5;
};

struct LossBreakdown {
    double ce = 0.0;
    double nn = 0.0;
    double l1 = 0.0;
    double total = 0.0;
    LossWeights weights;
};

struct LossValueGrad {
    double value = 0.0;
    Mat grad; // B x K
};

// -(1/B) sum_i sum_k labels[i,k] log(max(preds[i,k], 1e-12))
LossValueGrad soft_cross_entropy(const nn::PredictionMatrix& preds, const SoftLabelBatch& labels);

// Negative sum of singular values of the batch prediction matrix; gradient is
// -U V^T from the thin SVD.
LossValueGrad neg_nuclear_norm(const nn::PredictionMatrix& preds);

// sum_k |colsum_k(preds) - prior_k| with subgradient convention sign(0) = 0.
LossValueGrad l1_histogram(const nn::PredictionMatrix& preds, const PriorVector& prior);

LossBreakdown combine(double ce, double nn, double l1, const LossWeights& weights);

}  // namespace scrf::losses
