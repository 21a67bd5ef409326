#include "scrf/losses.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

namespace scrf::losses {

namespace {
constexpr double kLogClamp = 1e-12;
}

LossValueGrad soft_cross_entropy(const nn::PredictionMatrix& preds, const SoftLabelBatch& labels) {
    const Mat& p = preds.probs;
    const Mat& y = labels.labels;
    if (!p.same_shape(y)) throw std::invalid_argument("soft_cross_entropy: shape mismatch");
    if (p.rows == 0) throw std::invalid_argument("soft_cross_entropy: empty batch");

    const double inv_b = 1.0 / static_cast<double>(p.rows);
    LossValueGrad out;
    out.grad = Mat(p.rows, p.cols);
    double value = 0.0;
    for (std::size_t i = 0; i < p.rows; ++i)
        for (std::size_t k = 0; k < p.cols; ++k) {
            const double pk = std::max(p(i, k), kLogClamp);
            value -= y(i, k) * std::log(pk);
            // below the clamp the loss is constant in p, so the gradient is 0
            out.grad(i, k) = p(i, k) > kLogClamp ? -inv_b * y(i, k) / pk : 0.0;
        }
    out.value = value * inv_b;
    return out;
}

LossValueGrad neg_nuclear_norm(const nn::PredictionMatrix& preds) {
    const Mat& p = preds.probs;
    if (p.rows == 0 || p.cols == 0) throw std::invalid_argument("neg_nuclear_norm: empty matrix");

    Eigen::MatrixXd q(p.rows, p.cols);
    for (std::size_t i = 0; i < p.rows; ++i)
        for (std::size_t j = 0; j < p.cols; ++j) q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = p(i, j);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(q, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw std::runtime_error("neg_nuclear_norm: SVD did not converge");

    LossValueGrad out;
    out.value = -svd.singularValues().sum();
    const Eigen::MatrixXd g = -(svd.matrixU() * svd.matrixV().transpose());
    out.grad = Mat(p.rows, p.cols);
    for (std::size_t i = 0; i < p.rows; ++i)
        for (std::size_t j = 0; j < p.cols; ++j)
            out.grad(i, j) = g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return out;
}

LossValueGrad l1_histogram(const nn::PredictionMatrix& preds, const PriorVector& prior) {
    const Mat& p = preds.probs;
    if (prior.counts.size() != p.cols) throw std::invalid_argument("l1_histogram: prior length != K");

    const std::vector<double> sums = col_sums(p);
    LossValueGrad out;
    out.grad = Mat(p.rows, p.cols);
    double value = 0.0;
    for (std::size_t k = 0; k < p.cols; ++k) {
        const double dev = sums[k] - prior.counts[k];
        value += std::abs(dev);
        const double s = dev > 0.0 ? 1.0 : (dev < 0.0 ? -1.0 : 0.0);
        for (std::size_t i = 0; i < p.rows; ++i) out.grad(i, k) = s;
    }
    out.value = value;
    return out;
}

LossBreakdown combine(double ce, double nn, double l1, const LossWeights& weights) {
    if (weights.lambda1 < 0.0 || weights.lambda2 < 0.0 || weights.lambda3 < 0.0)
        throw std::invalid_argument("combine: weights must be nonnegative");
    LossBreakdown b;
    b.ce = ce;
    b.nn = nn;
    b.l1 = l1;
    b.weights = weights;
    b.total = weights.lambda1 * ce + weights.lambda2 * nn + weights.lambda3 * l1;
    return b;
}

}  // namespace scrf::losses
