#include "scrf/nn_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "scrf/rng.hpp"

namespace scrf::nn {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct BlockLayout {
    std::uint32_t in_ch, out_ch, len_in; // len_in = length entering the conv
    std::size_t w, b, gamma, beta;       // offsets into feat_params
    std::size_t stat; // offset into running_mean / running_var
};

struct Layout {
    std::vector<BlockLayout> blocks;
    std::size_t dense_w, dense_b;
    std::uint32_t last_ch, last_len; // after final pool
    std::size_t feat_total, stat_total;
};

Layout make_layout(const ArchDescriptor& a) {
    Layout lay;
    std::size_t off = 0, stat = 0;
    std::uint32_t ch = a.in_channels, len = a.input_len;
    for (std::uint32_t out : a.conv_channels) {
        BlockLayout bl;
        bl.in_ch = ch;
        bl.out_ch = out;
        bl.len_in = len;
        bl.w = off;
        off += static_cast<std::size_t>(out) * ch * 3;
        bl.b = off;
        off += out;
        bl.gamma = off;
        off += out;
        bl.beta = off;
        off += out;
        bl.stat = stat;
        stat += out;
        lay.blocks.push_back(bl);
        ch = out;
        len /= 2;
    }
    lay.dense_w = off;
    off += static_cast<std::size_t>(a.feat_dim) * ch;
    lay.dense_b = off;
    off += a.feat_dim;
    lay.last_ch = ch;
    lay.last_len = len;
    lay.feat_total = off;
    lay.stat_total = stat;
    return lay;
}

}  // namespace

void ArchDescriptor::validate() const {
    if (conv_channels.empty()) throw std::invalid_argument("architecture needs at least one conv block");
    if (in_channels == 0 || feat_dim == 0 || num_classes < 2)
        throw std::invalid_argument("architecture sizes must be positive (K >= 2)");
    std::uint32_t len = input_len;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
        if (conv_channels[i] == 0) throw std::invalid_argument("conv width must be positive");
        if (len % 2 != 0) throw std::invalid_argument("input_len must halve through every pooling stage");
        len /= 2;
    }
    if (len == 0) throw std::invalid_argument("input_len too short for the pooling depth");
}

std::size_t ArchDescriptor::feat_param_count() const { return make_layout(*this).feat_total; }
std::size_t ArchDescriptor::cls_param_count() const {
    return static_cast<std::size_t>(num_classes) * feat_dim + num_classes;
}
std::size_t ArchDescriptor::bn_channel_count() const { return make_layout(*this).stat_total; }

ModelState init_model(const ArchDescriptor& arch, std::uint64_t seed) {
    arch.validate();
    const Layout lay = make_layout(arch);
    ModelState m;
    m.arch = arch;
    m.feat_params.assign(lay.feat_total, 0.0);
    m.cls_params.assign(arch.cls_param_count(), 0.0);
    m.running_mean.assign(lay.stat_total, 0.0);
    m.running_var.assign(lay.stat_total, 1.0);
    m.opt.feat_m.assign(lay.feat_total, 0.0);
    m.opt.feat_v.assign(lay.feat_total, 0.0);
    m.opt.cls_m.assign(m.cls_params.size(), 0.0);
    m.opt.cls_v.assign(m.cls_params.size(), 0.0);

    Rng rng(derive_stream(seed, 0x1717));
    for (const auto& bl : lay.blocks) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(bl.in_ch) * 3.0);
        for (std::size_t i = 0; i < static_cast<std::size_t>(bl.out_ch) * bl.in_ch * 3; ++i)
            m.feat_params[bl.w + i] = rng.uniform(-bound, bound);
        for (std::uint32_t c = 0; c < bl.out_ch; ++c) m.feat_params[bl.gamma + c] = 1.0;
    }
    const double dense_bound = 1.0 / std::sqrt(static_cast<double>(lay.last_ch));
    for (std::size_t i = 0; i < static_cast<std::size_t>(arch.feat_dim) * lay.last_ch; ++i)
        m.feat_params[lay.dense_w + i] = rng.uniform(-dense_bound, dense_bound);
    const double cls_bound = 1.0 / std::sqrt(static_cast<double>(arch.feat_dim));
    for (std::size_t i = 0; i < static_cast<std::size_t>(arch.num_classes) * arch.feat_dim; ++i)
        m.cls_params[i] = rng.uniform(-cls_bound, cls_bound);
    return m;
}

ForwardResult forward(ModelState& model, std::span<const sim::IQRecord> batch, Mode mode,
                      bool update_running_stats) {
    model.arch.validate();
    if (batch.empty()) throw std::invalid_argument("empty batch");
    if (update_running_stats && mode != Mode::Train)
        throw std::invalid_argument("running statistics only move in train mode");
    const ArchDescriptor& arch = model.arch;
    const Layout lay = make_layout(arch);
    const std::size_t B = batch.size();

    for (const auto& rec : batch)
        if (rec.length != arch.input_len)
            throw std::invalid_argument("record length " + std::to_string(rec.length) +
                                        " does not match architecture input_len " + std::to_string(arch.input_len));

    ForwardResult out;
    Tape& tape = out.tape;
    const bool train = (mode == Mode::Train);

    // input tensor B x in_ch x L
    std::vector<double> cur(B * arch.in_channels * arch.input_len);
    for (std::size_t i = 0; i < B; ++i) {
        const auto& rec = batch[i];
        double* dst = cur.data() + i * arch.in_channels * arch.input_len;
        for (std::uint32_t n = 0; n < arch.input_len; ++n) dst[n] = rec.i_row[n];
        for (std::uint32_t n = 0; n < arch.input_len; ++n) dst[arch.input_len + n] = rec.q_row[n];
    }

    const double* P = model.feat_params.data();
    for (const auto& bl : lay.blocks) {
        const std::uint32_t L = bl.len_in, Cin = bl.in_ch, Cout = bl.out_ch;
        std::vector<double> z(B * Cout * L, 0.0);
        for (std::size_t i = 0; i < B; ++i) {
            const double* xin = cur.data() + i * Cin * L;
            double* zout = z.data() + i * Cout * L;
            for (std::uint32_t o = 0; o < Cout; ++o) {
                const double bias = P[bl.b + o];
                double* zrow = zout + o * L;
                for (std::uint32_t l = 0; l < L; ++l) zrow[l] = bias;
                for (std::uint32_t c = 0; c < Cin; ++c) {
                    const double w0 = P[bl.w + (o * Cin + c) * 3 + 0];
                    const double w1 = P[bl.w + (o * Cin + c) * 3 + 1];
                    const double w2 = P[bl.w + (o * Cin + c) * 3 + 2];
                    const double* xrow = xin + c * L;
                    for (std::uint32_t l = 0; l < L; ++l) {
                        double acc = w1 * xrow[l];
                        if (l > 0) acc += w0 * xrow[l - 1];
                        if (l + 1 < L) acc += w2 * xrow[l + 1];
                        zrow[l] += acc;
                    }
                }
            }
        }

        // batch norm
        const std::size_t n_per_ch = B * L;
        std::vector<double> mean(Cout), var(Cout), inv_std(Cout);
        if (train) {
            for (std::uint32_t o = 0; o < Cout; ++o) {
                double s = 0.0;
                for (std::size_t i = 0; i < B; ++i) {
                    const double* zrow = z.data() + (i * Cout + o) * L;
                    for (std::uint32_t l = 0; l < L; ++l) s += zrow[l];
                }
                mean[o] = s / static_cast<double>(n_per_ch);
                double sv = 0.0;
                for (std::size_t i = 0; i < B; ++i) {
                    const double* zrow = z.data() + (i * Cout + o) * L;
                    for (std::uint32_t l = 0; l < L; ++l) {
                        const double d = zrow[l] - mean[o];
                        sv += d * d;
                    }
                }
                var[o] = sv / static_cast<double>(n_per_ch);
            }
            if (update_running_stats) {
                for (std::uint32_t o = 0; o < Cout; ++o) {
                    model.running_mean[bl.stat + o] =
                        (1.0 - kBnMomentum) * model.running_mean[bl.stat + o] + kBnMomentum * mean[o];
                    model.running_var[bl.stat + o] =
                        (1.0 - kBnMomentum) * model.running_var[bl.stat + o] + kBnMomentum * var[o];
                }
            }
        } else {
            for (std::uint32_t o = 0; o < Cout; ++o) {
                mean[o] = model.running_mean[bl.stat + o];
                var[o] = model.running_var[bl.stat + o];
            }
        }
        for (std::uint32_t o = 0; o < Cout; ++o) inv_std[o] = 1.0 / std::sqrt(var[o] + kBnEps);

        std::vector<double> xhat(train ? z.size() : 0);
        std::vector<std::uint8_t> relu_mask(train ? z.size() : 0);
        std::vector<double> act(B * Cout * L);
        for (std::size_t i = 0; i < B; ++i) {
            for (std::uint32_t o = 0; o < Cout; ++o) {
                const double g = P[bl.gamma + o], be = P[bl.beta + o];
                const std::size_t base = (i * Cout + o) * L;
                for (std::uint32_t l = 0; l < L; ++l) {
                    const double xh = (z[base + l] - mean[o]) * inv_std[o];
                    const double y = g * xh + be;
                    const bool pos = y > 0.0;
                    act[base + l] = pos ? y : 0.0;
                    if (train) {
                        xhat[base + l] = xh;
                        relu_mask[base + l] = pos ? 1 : 0;
                    }
                }
            }
        }

        // average pool k=2 stride 2
        const std::uint32_t Lp = L / 2;
        std::vector<double> pooled(B * Cout * Lp);
        for (std::size_t i = 0; i < B; ++i)
            for (std::uint32_t o = 0; o < Cout; ++o) {
                const double* arow = act.data() + (i * Cout + o) * L;
                double* prow = pooled.data() + (i * Cout + o) * Lp;
                for (std::uint32_t l = 0; l < Lp; ++l) prow[l] = 0.5 * (arow[2 * l] + arow[2 * l + 1]);
            }

        if (train) {
            BlockCache cache;
            cache.input = std::move(cur);
            cache.xhat = std::move(xhat);
            cache.inv_std = std::move(inv_std);
            cache.relu_mask = std::move(relu_mask);
            cache.in_ch = Cin;
            cache.out_ch = Cout;
            cache.len = L;
            tape.blocks.push_back(std::move(cache));
        }
        cur = std::move(pooled);
    }

    // global average pool
    const std::uint32_t Cl = lay.last_ch, Ll = lay.last_len;
    std::vector<double> gap(B * Cl);
    for (std::size_t i = 0; i < B; ++i)
        for (std::uint32_t c = 0; c < Cl; ++c) {
            const double* row = cur.data() + (i * Cl + c) * Ll;
            double s = 0.0;
            for (std::uint32_t l = 0; l < Ll; ++l) s += row[l];
            gap[i * Cl + c] = s / static_cast<double>(Ll);
        }

    // dense to features
    Mat features(B, arch.feat_dim);
    for (std::size_t i = 0; i < B; ++i)
        for (std::uint32_t d = 0; d < arch.feat_dim; ++d) {
            double s = P[lay.dense_b + d];
            const double* wrow = P + lay.dense_w + static_cast<std::size_t>(d) * Cl;
            const double* grow = gap.data() + i * Cl;
            for (std::uint32_t c = 0; c < Cl; ++c) s += wrow[c] * grow[c];
            features(i, d) = s;
        }

    // classifier + softmax
    const std::uint32_t K = arch.num_classes;
    const double* W = model.cls_params.data();
    const double* bc = W + static_cast<std::size_t>(K) * arch.feat_dim;
    Mat probs(B, K);
    for (std::size_t i = 0; i < B; ++i) {
        double maxv = -1e300;
        std::vector<double> logits(K);
        for (std::uint32_t k = 0; k < K; ++k) {
            double s = bc[k];
            const double* wrow = W + static_cast<std::size_t>(k) * arch.feat_dim;
            for (std::uint32_t d = 0; d < arch.feat_dim; ++d) s += wrow[d] * features(i, d);
            logits[k] = s;
            maxv = std::max(maxv, s);
        }
        double zsum = 0.0;
        for (std::uint32_t k = 0; k < K; ++k) {
            probs(i, k) = std::exp(logits[k] - maxv);
            zsum += probs(i, k);
        }
        for (std::uint32_t k = 0; k < K; ++k) probs(i, k) /= zsum;
    }

    out.features.features = features;
    out.features.source_records.resize(B);
    for (std::size_t i = 0; i < B; ++i) out.features.source_records[i] = static_cast<std::uint32_t>(i);
    out.preds.probs = probs;

    if (train) {
        tape.model_version = model.param_hash();
        tape.batch = static_cast<std::uint32_t>(B);
        tape.gap_out = std::move(gap);
        tape.features = features;
        tape.probs = probs;
        tape.valid = true;
    }
    return out;
}

Gradients backward(const ModelState& model, const Tape& tape, const LossGrad& upstream) {
    if (!tape.valid) throw std::logic_error("backward needs a train-mode tape");
    if (tape.model_version != model.param_hash())
        throw std::logic_error("stale tape: model parameters changed since forward");

    const ArchDescriptor& arch = model.arch;
    const Layout lay = make_layout(arch);
    const std::size_t B = tape.batch;
    const std::uint32_t K = arch.num_classes, D = arch.feat_dim;

    if (!upstream.wrt_probs.data.empty() && !(upstream.wrt_probs.rows == B && upstream.wrt_probs.cols == K))
        throw std::invalid_argument("loss gradient wrt probs has wrong shape");
    if (!upstream.wrt_features.data.empty() && !(upstream.wrt_features.rows == B && upstream.wrt_features.cols == D))
        throw std::invalid_argument("loss gradient wrt features has wrong shape");

    Gradients g;
    g.feat.assign(model.feat_params.size(), 0.0);
    g.cls.assign(model.cls_params.size(), 0.0);

    // softmax jacobian: dlogit_k = p_k (g_k - sum_j g_j p_j)
    Mat dlogits(B, K);
    if (!upstream.wrt_probs.data.empty()) {
        for (std::size_t i = 0; i < B; ++i) {
            double dot = 0.0;
            for (std::uint32_t k = 0; k < K; ++k) dot += upstream.wrt_probs(i, k) * tape.probs(i, k);
            for (std::uint32_t k = 0; k < K; ++k)
                dlogits(i, k) = tape.probs(i, k) * (upstream.wrt_probs(i, k) - dot);
        }
    }

    const double* Wc = model.cls_params.data();
    Mat gfeat(B, D);
    for (std::size_t i = 0; i < B; ++i) {
        for (std::uint32_t k = 0; k < K; ++k) {
            const double dl = dlogits(i, k);
            if (dl != 0.0) {
                double* gw = g.cls.data() + static_cast<std::size_t>(k) * D;
                const double* wrow = Wc + static_cast<std::size_t>(k) * D;
                for (std::uint32_t d = 0; d < D; ++d) {
                    gw[d] += dl * tape.features(i, d);
                    gfeat(i, d) += dl * wrow[d];
                }
                g.cls[static_cast<std::size_t>(K) * D + k] += dl;
            }
        }
        if (!upstream.wrt_features.data.empty())
            for (std::uint32_t d = 0; d < D; ++d) gfeat(i, d) += upstream.wrt_features(i, d);
    }

    // dense backward
    const std::uint32_t Cl = lay.last_ch, Ll = lay.last_len;
    const double* P = model.feat_params.data();
    std::vector<double> ggap(B * Cl, 0.0);
    for (std::size_t i = 0; i < B; ++i)
        for (std::uint32_t d = 0; d < D; ++d) {
            const double gd = gfeat(i, d);
            if (gd == 0.0) continue;
            double* gw = g.feat.data() + lay.dense_w + static_cast<std::size_t>(d) * Cl;
            const double* wrow = P + lay.dense_w + static_cast<std::size_t>(d) * Cl;
            const double* grow = tape.gap_out.data() + i * Cl;
            double* ggrow = ggap.data() + i * Cl;
            for (std::uint32_t c = 0; c < Cl; ++c) {
                gw[c] += gd * grow[c];
                ggrow[c] += gd * wrow[c];
            }
            g.feat[lay.dense_b + d] += gd;
        }

    // GAP backward into the last pooled tensor
    std::vector<double> gcur(B * Cl * Ll);
    for (std::size_t i = 0; i < B; ++i)
        for (std::uint32_t c = 0; c < Cl; ++c) {
            const double v = ggap[i * Cl + c] / static_cast<double>(Ll);
            double* row = gcur.data() + (i * Cl + c) * Ll;
            for (std::uint32_t l = 0; l < Ll; ++l) row[l] = v;
        }

    for (std::size_t bi = lay.blocks.size(); bi-- > 0;) {
        const BlockLayout& bl = lay.blocks[bi];
        const BlockCache& cache = tape.blocks[bi];
        const std::uint32_t L = bl.len_in, Lp = L / 2, Cin = bl.in_ch, Cout = bl.out_ch;

        // pool backward: gcur is B x Cout x Lp -> gact B x Cout x L
        std::vector<double> gact(B * Cout * L);
        for (std::size_t i = 0; i < B; ++i)
            for (std::uint32_t o = 0; o < Cout; ++o) {
                const double* gp = gcur.data() + (i * Cout + o) * Lp;
                double* ga = gact.data() + (i * Cout + o) * L;
                for (std::uint32_t l = 0; l < Lp; ++l) {
                    const double v = 0.5 * gp[l];
                    ga[2 * l] = v;
                    ga[2 * l + 1] = v;
                }
            }

        // relu backward in place
        for (std::size_t idx = 0; idx < gact.size(); ++idx)
            if (!cache.relu_mask[idx]) gact[idx] = 0.0;

        // batch norm backward (batch statistics)
        const double n_per_ch = static_cast<double>(B) * L;
        std::vector<double> gz(B * Cout * L);
        for (std::uint32_t o = 0; o < Cout; ++o) {
            const double gamma = P[bl.gamma + o];
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (std::size_t i = 0; i < B; ++i) {
                const std::size_t base = (i * Cout + o) * L;
                for (std::uint32_t l = 0; l < L; ++l) {
                    sum_gy += gact[base + l];
                    sum_gy_xhat += gact[base + l] * cache.xhat[base + l];
                }
            }
            g.feat[bl.gamma + o] += sum_gy_xhat;
            g.feat[bl.beta + o] += sum_gy;
            const double inv_std = cache.inv_std[o];
            const double s1 = gamma * sum_gy, s2 = gamma * sum_gy_xhat;
            for (std::size_t i = 0; i < B; ++i) {
                const std::size_t base = (i * Cout + o) * L;
                for (std::uint32_t l = 0; l < L; ++l) {
                    const double gxh = gamma * gact[base + l];
                    gz[base + l] = inv_std * (gxh - (s1 + cache.xhat[base + l] * s2) / n_per_ch);
                }
            }
        }

        // conv backward
        std::vector<double> gin(B * Cin * L, 0.0);
        for (std::size_t i = 0; i < B; ++i) {
            const double* xin = cache.input.data() + i * Cin * L;
            const double* gzb = gz.data() + i * Cout * L;
            double* ginb = gin.data() + i * Cin * L;
            for (std::uint32_t o = 0; o < Cout; ++o) {
                const double* gzrow = gzb + o * L;
                double gb = 0.0;
                for (std::uint32_t l = 0; l < L; ++l) gb += gzrow[l];
                g.feat[bl.b + o] += gb;
                for (std::uint32_t c = 0; c < Cin; ++c) {
                    const double* xrow = xin + c * L;
                    double* ginrow = ginb + c * L;
                    double gw0 = 0.0, gw1 = 0.0, gw2 = 0.0;
                    const double w0 = P[bl.w + (o * Cin + c) * 3 + 0];
                    const double w1 = P[bl.w + (o * Cin + c) * 3 + 1];
                    const double w2 = P[bl.w + (o * Cin + c) * 3 + 2];
                    for (std::uint32_t l = 0; l < L; ++l) {
                        const double gzv = gzrow[l];
                        gw1 += gzv * xrow[l];
                        ginrow[l] += w1 * gzv;
                        if (l > 0) {
                            gw0 += gzv * xrow[l - 1];
                            ginrow[l - 1] += w0 * gzv;
                        }
                        if (l + 1 < L) {
                            gw2 += gzv * xrow[l + 1];
                            ginrow[l + 1] += w2 * gzv;
                        }
                    }
                    g.feat[bl.w + (o * Cin + c) * 3 + 0] += gw0;
                    g.feat[bl.w + (o * Cin + c) * 3 + 1] += gw1;
                    g.feat[bl.w + (o * Cin + c) * 3 + 2] += gw2;
                }
            }
        }
        gcur = std::move(gin);
    }

    if (model.classifier_frozen) std::fill(g.cls.begin(), g.cls.end(), 0.0);
    return g;
}

void opt_step(ModelState& model, const Gradients& grad, double lr, std::uint64_t step_index) {
    if (grad.feat.size() != model.feat_params.size()) throw std::invalid_argument("gradient not aligned with feat_params");
    if (step_index == 0) throw std::invalid_argument("step_index is 1-based");
    if (!all_finite(grad.feat) || !all_finite(grad.cls))
        throw std::invalid_argument("non-finite gradient entries");

    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step_index));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step_index));

    auto update = [&](std::vector<double>& theta, std::vector<double>& m, std::vector<double>& v,
                      const std::vector<double>& g) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
            v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    };

    update(model.feat_params, model.opt.feat_m, model.opt.feat_v, grad.feat);
    if (!model.classifier_frozen && grad.cls.size() == model.cls_params.size())
        update(model.cls_params, model.opt.cls_m, model.opt.cls_v, grad.cls);
    model.opt.step = step_index;
}

void freeze_classifier(ModelState& model) { model.classifier_frozen = true; }

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
void put_f32_vec(std::vector<std::uint8_t>& out, const std::vector<double>& v) {
    put_u64(out, v.size());
    for (double x : v) {
        const float f = static_cast<float>(x);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
}

struct Reader {
    const std::vector<std::uint8_t>& b;
    std::size_t pos = 0;
    void need(std::size_t n) const {
        if (pos + n > b.size()) throw FormatError("truncated checkpoint file");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(b[pos] | (b[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::vector<double> f32_vec(std::size_t expected) {
        const std::uint64_t n = u64();
        if (n != expected) throw FormatError("checkpoint vector length does not match architecture");
        std::vector<double> v(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::uint32_t bits = u32();
            float f;
            std::memcpy(&f, &bits, 4);
            v[i] = f;
        }
        return v;
    }
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelState& model) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'S', 'C', 'K', 'P'});
    put_u16(out, 1);
    put_u32(out, model.arch.input_len);
    put_u32(out, model.arch.in_channels);
    put_u16(out, static_cast<std::uint16_t>(model.arch.conv_channels.size()));
    for (auto c : model.arch.conv_channels) put_u32(out, c);
    put_u32(out, model.arch.feat_dim);
    put_u16(out, static_cast<std::uint16_t>(model.arch.num_classes));
    out.push_back(model.classifier_frozen ? 1 : 0);
    put_u64(out, model.opt.step);
    put_f32_vec(out, model.feat_params);
    put_f32_vec(out, model.cls_params);
    put_f32_vec(out, model.running_mean);
    put_f32_vec(out, model.running_var);
    put_f32_vec(out, model.opt.feat_m);
    put_f32_vec(out, model.opt.feat_v);
    put_f32_vec(out, model.opt.cls_m);
    put_f32_vec(out, model.opt.cls_v);
    return out;
}

ModelState parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), "SCKP", 4) != 0) throw FormatError("bad magic: not a checkpoint file");
    r.pos = 4;
    if (r.u16() != 1) throw FormatError("unsupported checkpoint version");
    ModelState m;
    m.arch.input_len = r.u32();
    m.arch.in_channels = r.u32();
    const std::uint16_t nblocks = r.u16();
    m.arch.conv_channels.resize(nblocks);
    for (auto& c : m.arch.conv_channels) c = r.u32();
    m.arch.feat_dim = r.u32();
    m.arch.num_classes = r.u16();
    m.arch.validate();
    m.classifier_frozen = false;
    r.need(1);
    const std::uint8_t frozen = bytes[r.pos++];
    m.classifier_frozen = frozen != 0;
    m.opt.step = r.u64();
    m.feat_params = r.f32_vec(m.arch.feat_param_count());
    m.cls_params = r.f32_vec(m.arch.cls_param_count());
    m.running_mean = r.f32_vec(m.arch.bn_channel_count());
    m.running_var = r.f32_vec(m.arch.bn_channel_count());
    m.opt.feat_m = r.f32_vec(m.arch.feat_param_count());
    m.opt.feat_v = r.f32_vec(m.arch.feat_param_count());
    m.opt.cls_m = r.f32_vec(m.arch.cls_param_count());
    m.opt.cls_v = r.f32_vec(m.arch.cls_param_count());
    if (r.pos != bytes.size()) throw FormatError("trailing bytes after checkpoint payload");
    return m;
}

void save_checkpoint(const ModelState& model, const std::string& path) {
    const auto bytes = serialize_checkpoint(model);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("short write: " + path);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for reading: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

}  // namespace scrf::nn
