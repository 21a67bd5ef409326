#include "scrf/adapt_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scrf/rng.hpp"

namespace scrf::adapt {

namespace {

constexpr std::size_t kEvalChunk = 256;

std::vector<sim::IQRecord> gather(const std::vector<sim::IQRecord>& records, const std::vector<std::uint32_t>& idx) {
    std::vector<sim::IQRecord> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(records[i]);
    return out;
}

Mat one_hot_rows(const std::vector<int>& hard, const std::vector<std::uint32_t>& idx, std::size_t k_count) {
    Mat m(idx.size(), k_count);
    for (std::size_t r = 0; r < idx.size(); ++r) m(r, static_cast<std::size_t>(hard[idx[r]])) = 1.0;
    return m;
}

}  // namespace

void AdaptConfig::validate(std::size_t n_target, std::size_t num_classes) const {
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0) throw ConfigError("loss weights must be nonnegative");
    if (tau <= 0.0) throw ConfigError("tau must be positive");
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0,1)");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (static_cast<std::size_t>(batch_size) > n_target)
        throw ConfigError("batch_size exceeds the target dataset size");
    if (prior_mode == PriorMode::Known) {
        if (!known_prior) throw ConfigError("prior_mode=known requires known_prior");
        if (known_prior->counts.size() != num_classes) throw ConfigError("known_prior length != K");
        const double s = known_prior->sum();
        if (std::abs(s - static_cast<double>(n_target)) > 1e-6 * std::max(1.0, static_cast<double>(n_target)))
            throw ConfigError("known prior does not sum to N^t");
    }
}

FullForward forward_dataset(nn::ModelState& model, const std::vector<sim::IQRecord>& records) {
    if (records.empty()) throw std::invalid_argument("forward_dataset: empty dataset");
    FullForward out;
    out.features = Mat(records.size(), model.arch.feat_dim);
    out.probs = Mat(records.size(), model.arch.num_classes);
    for (std::size_t start = 0; start < records.size(); start += kEvalChunk) {
        const std::size_t n = std::min(kEvalChunk, records.size() - start);
        auto res = nn::forward(model, std::span<const sim::IQRecord>(records.data() + start, n), nn::Mode::Eval);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < out.features.cols; ++d)
                out.features(start + i, d) = res.features.features(i, d);
            for (std::size_t k = 0; k < out.probs.cols; ++k) out.probs(start + i, k) = res.preds.probs(i, k);
        }
    }
    return out;
}

std::vector<int> hard_predictions(nn::ModelState& model, const std::vector<sim::IQRecord>& records) {
    const FullForward full = forward_dataset(model, records);
    std::vector<int> hard(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        int best = 0;
        for (std::size_t k = 1; k < full.probs.cols; ++k)
            if (full.probs(i, k) > full.probs(i, static_cast<std::size_t>(best))) best = static_cast<int>(k);
        hard[i] = best;
    }
    return hard;
}

double evaluate_accuracy(nn::ModelState& model, const std::vector<sim::IQRecord>& records) {
    const std::vector<int> hard = hard_predictions(model, records);
    std::size_t correct = 0, labeled = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].labeled()) continue;
        ++labeled;
        if (hard[i] + 1 == static_cast<int>(records[i].label)) ++correct;
    }
    if (labeled == 0) throw std::invalid_argument("evaluate_accuracy: no labeled records");
    return static_cast<double>(correct) / static_cast<double>(labeled);
}

nn::ModelState train_source(const std::vector<sim::IQRecord>& dataset, const SourceTrainConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("train_source: empty dataset");
    for (const auto& r : dataset)
        if (!r.labeled()) throw std::invalid_argument("train_source: unlabeled records present");
    if (cfg.batch_size <= 0) throw ConfigError("batch_size must be positive");

    nn::ModelState model = nn::init_model(cfg.arch, cfg.seed);
    const std::size_t n = dataset.size();
    const std::size_t k_count = cfg.arch.num_classes;
    std::uint64_t step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::uint32_t> order(n);
        std::iota(order.begin(), order.end(), 0u);
        Rng rng(derive_stream(cfg.seed, 0x500000 + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);

        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t b = std::min(static_cast<std::size_t>(cfg.batch_size), n - start);
            std::vector<std::uint32_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(start + b));
            const std::vector<sim::IQRecord> batch = gather(dataset, idx);
            auto fwd = nn::forward(model, batch, nn::Mode::Train, /*update_running_stats=*/true);

            losses::SoftLabelBatch labels;
            labels.labels = Mat(b, k_count);
            for (std::size_t i = 0; i < b; ++i)
                labels.labels(i, static_cast<std::size_t>(batch[i].label - 1)) = 1.0;

            const auto ce = losses::soft_cross_entropy(fwd.preds, labels);
            nn::LossGrad upstream;
            upstream.wrt_probs = ce.grad;
            const auto grads = nn::backward(model, fwd.tape, upstream);
            nn::opt_step(model, grads, cfg.lr, ++step);
        }
    }
    return model;
}

losses::PriorVector resolve_prior(PriorMode mode, const std::optional<losses::PriorVector>& known,
                                  const Mat& probs_over_target, std::size_t n_target, std::size_t num_classes) {
    losses::PriorVector prior;
    switch (mode) {
        case PriorMode::Known: {
            if (!known) throw ConfigError("prior_mode=known requires known_prior");
            if (known->counts.size() != num_classes) throw ConfigError("known_prior length != K");
            const double s = known->sum();
            if (std::abs(s - static_cast<double>(n_target)) > 1e-6 * std::max(1.0, static_cast<double>(n_target)))
                throw ConfigError("known prior does not sum to N^t");
            prior = *known;
            break;
        }
        case PriorMode::Uniform:
            prior.counts.assign(num_classes, static_cast<double>(n_target) / static_cast<double>(num_classes));
            break;
        case PriorMode::Estimate: {
            if (probs_over_target.rows != n_target || probs_over_target.cols != num_classes)
                throw std::invalid_argument("resolve_prior: prediction matrix shape mismatch");
            prior.counts = col_sums(probs_over_target);
            break;
        }
    }
    return prior;
}

double zeta(const losses::PriorVector& prior, double gamma, PriorMode mode) {
    if (prior.counts.empty()) throw std::invalid_argument("zeta: empty prior");
    for (double c : prior.counts)
        if (c < 0.0 || !std::isfinite(c)) throw std::invalid_argument("zeta: prior counts must be finite and >= 0");

    if (mode == PriorMode::Estimate) {
        const double n_min = *std::min_element(prior.counts.begin(), prior.counts.end());
        if (gamma >= 2.0 * n_min)
            throw std::domain_error("zeta: gamma >= 2 * n_hat_min violates the prior-closeness assumption");
        double z = 0.0;
        for (double c : prior.counts) z += std::sqrt(c) - gamma / (2.0 * std::sqrt(n_min));
        return z;
    }
    double z = 0.0;
    for (double c : prior.counts) z += std::sqrt(c);
    return z;
}

double c1_bound(double vc_dim, double n_samples, double rho) {
    if (!(rho > 0.0 && rho < 1.0)) throw std::domain_error("c1_bound: rho must lie in (0,1)");
    if (!(vc_dim >= 1.0) || !(n_samples >= vc_dim)) throw std::domain_error("c1_bound: need N >= d >= 1");
    return 2.0 * std::sqrt((vc_dim * (std::log(2.0 * n_samples / vc_dim) + 1.0) + std::log(4.0 / rho)) / n_samples);
}

BoundReport feasibility_check(const std::vector<int>& hard_labels, int num_classes,
                              const losses::PriorVector& prior, double gamma, PriorMode mode) {
    if (num_classes <= 0) throw std::invalid_argument("feasibility_check: K must be positive");
    if (prior.counts.size() != static_cast<std::size_t>(num_classes))
        throw std::invalid_argument("feasibility_check: prior length != K");

    std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
    for (int lbl : hard_labels) {
        if (lbl < 0 || lbl >= num_classes) throw std::invalid_argument("feasibility_check: label out of range");
        counts[static_cast<std::size_t>(lbl)] += 1.0;
    }

    BoundReport rep;
    rep.mode = mode;
    rep.n_target = static_cast<double>(hard_labels.size());
    // one-hot matrix nuclear norm identity
    rep.nuclear_norm = 0.0;
    for (double c : counts) rep.nuclear_norm += std::sqrt(c);
    rep.prior_l1_gap = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) rep.prior_l1_gap += std::abs(counts[k] - prior.counts[k]);
    if (mode == PriorMode::Estimate &&
        gamma >= 2.0 * *std::min_element(prior.counts.begin(), prior.counts.end())) {
        // prior-closeness assumption violated: the 7b threshold is undefined
        rep.zeta = std::numeric_limits<double>::quiet_NaN();
        rep.zeta_valid = false;
        rep.nn_feasible = false;
    } else {
        rep.zeta = zeta(prior, gamma, mode == PriorMode::Estimate ? PriorMode::Estimate : PriorMode::Known);
        rep.zeta_valid = true;
        rep.nn_feasible = rep.nuclear_norm >= rep.zeta - 1e-9;
    }
    rep.l1_feasible = rep.prior_l1_gap <= gamma + 1e-9;
    return rep;
}

BoundReport make_bound_report(const std::vector<int>& hard_labels, int num_classes,
                              const losses::PriorVector& prior, double gamma, PriorMode mode, double vc_dim,
                              double rho) {
    BoundReport rep = feasibility_check(hard_labels, num_classes, prior, gamma, mode);
    rep.vc_dim = vc_dim;
    rep.rho = rho;
    rep.c1 = c1_bound(vc_dim, static_cast<double>(hard_labels.size()), rho);
    return rep;
}

AdaptResult adapt(const nn::ModelState& source_model, const std::vector<sim::IQRecord>& target,
                  const AdaptConfig& cfg, const AdaptVariant& variant,
                  const std::vector<sim::IQRecord>* eval_set) {
    if (target.empty()) throw std::invalid_argument("adapt: empty target dataset");
    const std::size_t n = target.size();
    const std::size_t k_count = source_model.arch.num_classes;
    cfg.validate(n, k_count);
    for (const auto& r : target)
        if (r.length != source_model.arch.input_len)
            throw std::invalid_argument("adapt: record length does not match source model architecture");

    AdaptResult res;
    res.model = source_model;
    nn::freeze_classifier(res.model);
    res.model.opt.feat_m.assign(res.model.feat_params.size(), 0.0);
    res.model.opt.feat_v.assign(res.model.feat_params.size(), 0.0);
    res.model.opt.cls_m.assign(res.model.cls_params.size(), 0.0);
    res.model.opt.cls_v.assign(res.model.cls_params.size(), 0.0);
    res.model.opt.step = 0;

    const bool use_ce = variant.shot_hard || variant.use_soft_label;
    losses::LossWeights weights;
    weights.lambda1 = use_ce ? cfg.lambda1 : 0.0;
    weights.lambda2 = variant.use_nn_l1 ? cfg.lambda2 : 0.0;
    weights.lambda3 = variant.use_nn_l1 ? cfg.lambda3 : 0.0;
    const double beta_eff = variant.use_momentum ? cfg.beta : 0.0;

    std::uint64_t step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // epoch head: f~ = current h^t over the whole target set (eval mode)
        FullForward full = forward_dataset(res.model, target);
        pseudo::ClassCenters centers = pseudo::init_centers(full.features, full.probs);
        pseudo::ShotResult shot = pseudo::shot_two_pass(full.features, centers);
        centers = shot.refined_centers;
        const pseudo::ClassCenters epoch_start_centers = centers;

        const losses::PriorVector prior =
            resolve_prior(cfg.prior_mode, cfg.known_prior, full.probs, n, k_count);

        std::vector<std::uint32_t> order(n);
        std::iota(order.begin(), order.end(), 0u);
        Rng rng(derive_stream(cfg.seed, 0xAD0000 + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);

        double sum_ce = 0.0, sum_nn = 0.0, sum_l1 = 0.0, sum_total = 0.0;
        std::size_t batch_count = 0;

        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t b = std::min(static_cast<std::size_t>(cfg.batch_size), n - start);
            std::vector<std::uint32_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(start + b));
            const std::vector<sim::IQRecord> batch = gather(target, idx);
            auto fwd = nn::forward(res.model, batch, nn::Mode::Train);

            losses::SoftLabelBatch labels;
            if (variant.shot_hard) {
                labels.labels = one_hot_rows(shot.assignment.hard, idx, k_count);
            } else if (variant.use_soft_label) {
                centers = pseudo::mcsp_update_centers(centers, fwd.features.features, fwd.preds.probs, beta_eff);
                labels = pseudo::mcsp_soft_labels(fwd.features.features, centers, cfg.tau).labels;
            }

            double ce_v = 0.0, nn_v = 0.0, l1_v = 0.0;
            Mat upstream(b, k_count);
            if (weights.lambda1 > 0.0) {
                const auto ce = losses::soft_cross_entropy(fwd.preds, labels);
                ce_v = ce.value;
                for (std::size_t i = 0; i < upstream.data.size(); ++i)
                    upstream.data[i] += weights.lambda1 * ce.grad.data[i];
            }
            if (weights.lambda2 > 0.0) {
                const auto nnl = losses::neg_nuclear_norm(fwd.preds);
                nn_v = nnl.value;
                for (std::size_t i = 0; i < upstream.data.size(); ++i)
                    upstream.data[i] += weights.lambda2 * nnl.grad.data[i];
            }
            if (weights.lambda3 > 0.0) {
                losses::PriorVector batch_prior;
                batch_prior.counts.resize(k_count);
                const double scale = static_cast<double>(b) / static_cast<double>(n);
                for (std::size_t k = 0; k < k_count; ++k) batch_prior.counts[k] = prior.counts[k] * scale;
                const auto l1 = losses::l1_histogram(fwd.preds, batch_prior);
                l1_v = l1.value;
                for (std::size_t i = 0; i < upstream.data.size(); ++i)
                    upstream.data[i] += weights.lambda3 * l1.grad.data[i];
            }

            const auto breakdown = losses::combine(ce_v, nn_v, l1_v, weights);
            sum_ce += breakdown.ce;
            sum_nn += breakdown.nn;
            sum_l1 += breakdown.l1;
            sum_total += breakdown.total;
            ++batch_count;

            nn::LossGrad up;
            up.wrt_probs = std::move(upstream);
            const auto grads = nn::backward(res.model, fwd.tape, up);
            nn::opt_step(res.model, grads, cfg.lr, ++step);
        }

        EpochReport rep;
        rep.epoch = epoch;
        rep.losses = losses::combine(sum_ce / static_cast<double>(batch_count), sum_nn / static_cast<double>(batch_count),
                                     sum_l1 / static_cast<double>(batch_count), weights);
        rep.prior_snapshot = prior;
        double drift = 0.0;
        std::size_t drift_terms = 0;
        for (std::size_t k = 0; k < k_count; ++k) {
            if (!centers.valid[k] || !epoch_start_centers.valid[k]) continue;
            double s = 0.0;
            for (std::size_t j = 0; j < centers.centers.cols; ++j) {
                const double d = centers.centers(k, j) - epoch_start_centers.centers(k, j);
                s += d * d;
            }
            drift += std::sqrt(s);
            ++drift_terms;
        }
        rep.center_drift = drift_terms > 0 ? drift / static_cast<double>(drift_terms) : 0.0;
        if (eval_set && !eval_set->empty()) rep.accuracy = evaluate_accuracy(res.model, *eval_set);
        res.reports.push_back(std::move(rep));
    }
    return res;
}

}  // namespace scrf::adapt
