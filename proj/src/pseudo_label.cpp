#include "scrf/pseudo_label.hpp"

#include <cmath>

namespace scrf::pseudo {

namespace {

constexpr double kWeightEps = 1e-9;
constexpr double kNormEps = 1e-9;

double vec_norm(const double* v, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

// cosine similarity with the convention cos = 0 for degenerate vectors
double cosine(const double* a, const double* b, std::size_t n) {
    const double na = vec_norm(a, n), nb = vec_norm(b, n);
    if (na < kNormEps || nb < kNormEps) return 0.0;
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += a[i] * b[i];
    return dot / (na * nb);
}

int argmax_cosine(const Mat& features, std::size_t row, const ClassCenters& centers) {
    const std::size_t d = features.cols;
    int best = -1;
    double best_sim = 0.0;
    for (std::size_t k = 0; k < centers.num_classes(); ++k) {
        if (!centers.valid[k]) continue;
        const double sim = cosine(features.row(row), centers.centers.row(k), d);
        if (best < 0 || sim > best_sim) {
            best = static_cast<int>(k);
            best_sim = sim;
        }
    }
    if (best < 0) throw std::invalid_argument("no valid class centers");
    return best;
}

}  // namespace

ClassCenters init_centers(const Mat& features, const Mat& probs) {
    if (features.rows == 0) throw std::invalid_argument("init_centers: empty dataset");
    if (features.rows != probs.rows) throw std::invalid_argument("init_centers: row count mismatch");

    const std::size_t n = features.rows, d = features.cols, k_count = probs.cols;
    ClassCenters cc;
    cc.centers = Mat(k_count, d);
    cc.valid.assign(k_count, 0);
    for (std::size_t k = 0; k < k_count; ++k) {
        double weight = 0.0;
        double* center = cc.centers.row(k);
        for (std::size_t i = 0; i < n; ++i) {
            const double w = probs(i, k);
            weight += w;
            const double* f = features.row(i);
            for (std::size_t j = 0; j < d; ++j) center[j] += w * f[j];
        }
        if (weight < kWeightEps) {
            for (std::size_t j = 0; j < d; ++j) center[j] = 0.0;
            cc.valid[k] = 0;
        } else {
            for (std::size_t j = 0; j < d; ++j) center[j] /= weight;
            cc.valid[k] = 1;
        }
    }
    return cc;
}

ShotResult shot_two_pass(const Mat& features, const ClassCenters& centers) {
    const std::size_t n = features.rows, d = features.cols, k_count = centers.num_classes();
    if (n == 0) throw std::invalid_argument("shot_two_pass: empty feature set");
    if (centers.centers.cols != d) throw std::invalid_argument("shot_two_pass: feature dimension mismatch");

    std::vector<int> init_assign(n);
    for (std::size_t i = 0; i < n; ++i) init_assign[i] = argmax_cosine(features, i, centers);

    ShotResult res;
    res.refined_centers.centers = Mat(k_count, d);
    res.refined_centers.valid = centers.valid;
    res.refined_centers.batch_index = centers.batch_index;
    std::vector<std::size_t> member_count(k_count, 0);
    for (std::size_t i = 0; i < n; ++i) {
        ++member_count[static_cast<std::size_t>(init_assign[i])];
        const double* f = features.row(i);
        double* c = res.refined_centers.centers.row(static_cast<std::size_t>(init_assign[i]));
        for (std::size_t j = 0; j < d; ++j) c[j] += f[j];
    }
    for (std::size_t k = 0; k < k_count; ++k) {
        if (member_count[k] > 0) {
            double* c = res.refined_centers.centers.row(k);
            for (std::size_t j = 0; j < d; ++j) c[j] /= static_cast<double>(member_count[k]);
            res.refined_centers.valid[k] = 1;
        } else {
            // empty class keeps its pass-(i) center
            const double* src = centers.centers.row(k);
            double* c = res.refined_centers.centers.row(k);
            for (std::size_t j = 0; j < d; ++j) c[j] = src[j];
        }
    }

    res.assignment.hard.resize(n);
    res.assignment.soft.labels = Mat(n, k_count);
    for (std::size_t i = 0; i < n; ++i) {
        const int k = argmax_cosine(features, i, res.refined_centers);
        res.assignment.hard[i] = k;
        res.assignment.soft.labels(i, static_cast<std::size_t>(k)) = 1.0;
    }
    res.assignment.source = LabelSource::Shot;
    return res;
}

PseudoLabelAssignment shot_hard_labels(const Mat& features, const ClassCenters& centers) {
    return shot_two_pass(features, centers).assignment;
}

ClassCenters mcsp_update_centers(const ClassCenters& centers, const Mat& batch_features, const Mat& batch_probs,
                                 double beta) {
    if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("mcsp: beta must be in [0,1)");
    if (batch_features.rows == 0) throw std::invalid_argument("mcsp: empty batch");
    if (batch_features.rows != batch_probs.rows) throw std::invalid_argument("mcsp: row count mismatch");
    if (batch_probs.cols != centers.num_classes()) throw std::invalid_argument("mcsp: class count mismatch");
    if (batch_features.cols != centers.centers.cols) throw std::invalid_argument("mcsp: feature dim mismatch");

    const std::size_t b = batch_features.rows, d = batch_features.cols;
    ClassCenters next = centers;
    next.batch_index = centers.batch_index + 1;
    for (std::size_t k = 0; k < centers.num_classes(); ++k) {
        double weight = 0.0;
        std::vector<double> mean(d, 0.0);
        for (std::size_t i = 0; i < b; ++i) {
            const double w = batch_probs(i, k);
            weight += w;
            const double* f = batch_features.row(i);
            for (std::size_t j = 0; j < d; ++j) mean[j] += w * f[j];
        }
        if (weight < kWeightEps) continue; // class absent from the batch
        for (std::size_t j = 0; j < d; ++j) mean[j] /= weight;
        double* c = next.centers.row(k);
        if (!centers.valid[k]) {
            for (std::size_t j = 0; j < d; ++j) c[j] = mean[j];
        } else {
            for (std::size_t j = 0; j < d; ++j) c[j] = beta * c[j] + (1.0 - beta) * mean[j];
        }
        next.valid[k] = 1;
    }
    return next;
}

SoftLabelResult mcsp_soft_labels(const Mat& batch_features, const ClassCenters& centers, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("mcsp_soft_labels: tau must be positive");
    const std::size_t b = batch_features.rows, d = batch_features.cols, k_count = centers.num_classes();
    if (centers.centers.cols != d) throw std::invalid_argument("mcsp_soft_labels: feature dim mismatch");

    SoftLabelResult out;
    out.labels.labels = Mat(b, k_count);
    for (std::size_t i = 0; i < b; ++i) {
        const double* f = batch_features.row(i);
        if (vec_norm(f, d) < kNormEps) {
            for (std::size_t k = 0; k < k_count; ++k) out.labels.labels(i, k) = 1.0 / static_cast<double>(k_count);
            ++out.degenerate_rows;
            continue;
        }
        std::vector<double> logits(k_count, -1e300);
        double maxv = -1e300;
        for (std::size_t k = 0; k < k_count; ++k) {
            if (!centers.valid[k]) continue;
            logits[k] = cosine(f, centers.centers.row(k), d) / tau;
            maxv = std::max(maxv, logits[k]);
        }
        if (maxv == -1e300) throw std::invalid_argument("mcsp_soft_labels: no valid centers");
        double zsum = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) {
            const double e = logits[k] == -1e300 ? 0.0 : std::exp(logits[k] - maxv);
            out.labels.labels(i, k) = e;
            zsum += e;
        }
        for (std::size_t k = 0; k < k_count; ++k) out.labels.labels(i, k) /= zsum;
    }
    return out;
}

}  // namespace scrf::pseudo
