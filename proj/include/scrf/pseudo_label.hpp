#pragma once

#include <cstdint>
#include <vector>

#include "scrf/common.hpp"
#include "scrf/losses.hpp"
#include "scrf/nn_core.hpp"

namespace scrf::pseudo {

// Momentum-tracked per-class feature centroids. A row is valid once its class
// has carried weight at least once; invalid rows never enter similarity
// computations. Class indices are 0-based here (column k of a prediction
// matrix corresponds to record label k+1).
struct ClassCenters {
    Mat centers; // K x d
    std::vector<std::uint8_t> valid;
    std::int64_t batch_index = 0;

    std::size_t num_classes() const { return centers.rows; }
};

enum class LabelSource { Shot, Mcsp };

struct PseudoLabelAssignment {
    std::vector<int> hard; // 0-based class index per row
    losses::SoftLabelBatch soft;
    LabelSource source = LabelSource::Shot;
};

// Soft-weighted class means over the full target set: c_k = sum_i p[i,k] f_i
// / sum_i p[i,k]. Classes with total weight below 1e-9 are marked invalid.
ClassCenters init_centers(const Mat& features, const Mat& probs);

struct ShotResult {
    PseudoLabelAssignment assignment;
    ClassCenters refined_centers;
};

// Two-pass hard labeling: cosine assignment to the given centers, hard-mean
// recomputation (a class that loses all members keeps its previous center),
// then cosine re-assignment to the refined centers. Ties break to the lowest
// class index; zero-norm vectors compare with similarity 0.
ShotResult shot_two_pass(const Mat& features, const ClassCenters& centers);
PseudoLabelAssignment shot_hard_labels(const Mat& features, const ClassCenters& centers);

// c_k <- beta c_k + (1-beta) (soft-weighted batch mean); classes with batch
// weight below 1e-9 keep their previous center.
ClassCenters mcsp_update_centers(const ClassCenters& centers, const Mat& batch_features, const Mat& batch_probs,
                                 double beta);

struct SoftLabelResult {
    losses::SoftLabelBatch labels;
    int degenerate_rows = 0; // zero-norm features mapped to uniform rows
};

// Row i, entry k: softmax_k( cos(f_i, c_k) / tau ).
SoftLabelResult mcsp_soft_labels(const Mat& batch_features, const ClassCenters& centers, double tau);

}  // namespace scrf::pseudo
