#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scrf/common.hpp"
#include "scrf/signal_sim.hpp"

namespace scrf::nn {

// Layer plan: per conv block a 1-D conv (kernel 3, padding 1), batch norm,
// ReLU and average pooling with stride 2; then global average pooling and a
// dense layer down to feat_dim. The classifier is a dense feat_dim -> K map
// followed by row softmax.
struct ArchDescriptor {
    std::uint32_t input_len = 256;
    std::uint32_t in_channels = 2;
    std::vector<std::uint32_t> conv_channels = {8, 16, 32};
    std::uint32_t feat_dim = 64;
    std::uint32_t num_classes = 6;

    void validate() const;
    std::size_t feat_param_count() const;
    std::size_t cls_param_count() const;
    std::size_t bn_channel_count() const; // sum of conv channel widths
    bool operator==(const ArchDescriptor&) const = default;
};

struct AdamState {
    std::vector<double> feat_m, feat_v; // aligned with feat_params
    std::vector<double> cls_m, cls_v;
    std::uint64_t step = 0;
};

struct ModelState {
    ArchDescriptor arch;
    std::vector<double> feat_params; // conv/bn/dense weights, flat
    std::vector<double> cls_params;  // classifier weight matrix and bias
    std::vector<double> running_mean;
    std::vector<double> running_var;
    AdamState opt;
    bool classifier_frozen = false;

    std::uint64_t cls_hash() const { return fnv1a(cls_params); }
    // Parameter fingerprint; a tape is stale when this moved since forward.
    std::uint64_t param_hash() const { return fnv1a(cls_params, fnv1a(feat_params)); }
};

ModelState init_model(const ArchDescriptor& arch, std::uint64_t seed);

struct FeatureBatch {
    Mat features;                          // B x d
    std::vector<std::uint32_t> source_records; // indices into the originating dataset
};

struct PredictionMatrix {
    Mat probs; // B x K, row-stochastic
};

enum class Mode { Train, Eval };

struct BlockCache {
    std::vector<double> input; // B x C_in x L_in
    std::vector<double> xhat;  // B x C_out x L_in
    std::vector<double> inv_std;
    std::vector<std::uint8_t> relu_mask;
    std::uint32_t in_ch = 0, out_ch = 0, len = 0;
};

struct Tape {
    std::uint64_t model_version = 0;
    std::uint32_t batch = 0;
    std::vector<BlockCache> blocks;
    std::vector<double> gap_out;  // B x C_last
    Mat features;                 // B x d
    Mat probs;                    // B x K
    bool valid = false;
};

struct ForwardResult {
    FeatureBatch features;
    PredictionMatrix preds;
    Tape tape; // filled in Train mode only
};

// Train mode normalizes with batch statistics and records the activation
// tape; eval mode uses running statistics and is a pure function of
// (model, batch). Running statistics move only when update_running_stats is
// set (source training); adaptation leaves them untouched.
ForwardResult forward(ModelState& model, std::span<const sim::IQRecord> batch, Mode mode,
                      bool update_running_stats = false);

struct LossGrad {
    Mat wrt_probs;    // B x K, may be empty
    Mat wrt_features; // B x d, may be empty
};

struct Gradients {
    std::vector<double> feat; // aligned with feat_params
    std::vector<double> cls;  // zero-filled when the classifier is frozen
};

// Reverse pass over a train-mode tape. The classifier gradient is carried
// through the chain rule; it is returned only while the head is unfrozen.
Gradients backward(const ModelState& model, const Tape& tape, const LossGrad& upstream);

// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8). step_index is
// the 1-based update count used for the correction terms. Frozen classifier
// parameters are never touched.
void opt_step(ModelState& model, const Gradients& grad, double lr, std::uint64_t step_index);

void freeze_classifier(ModelState& model);

// Checkpoint container: magic "SCKP", version, arch descriptor, then flat
// little-endian f32 parameter / running-stat / moment vectors.
void save_checkpoint(const ModelState& model, const std::string& path);
ModelState load_checkpoint(const std::string& path);
std::vector<std::uint8_t> serialize_checkpoint(const ModelState& model);
ModelState parse_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace scrf::nn
