#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "scrf/losses.hpp"
#include "scrf/rng.hpp"
#include "test_util.hpp"

using namespace scrf;
using losses::PriorVector;
using losses::SoftLabelBatch;

namespace {

nn::PredictionMatrix preds_from(const Mat& m) { return nn::PredictionMatrix{m}; }

// central finite differences of a scalar loss with respect to every entry
Mat fd_grad_wrt_preds(const Mat& p, const std::function<double(const Mat&)>& loss, double h = 1e-6) {
    Mat g(p.rows, p.cols);
    Mat work = p;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double orig = work.data[i];
        work.data[i] = orig + h;
        const double up = loss(work);
        work.data[i] = orig - h;
        const double dn = loss(work);
        work.data[i] = orig;
        g.data[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

}  // namespace

TEST_CASE("soft cross entropy: perfect one-hot match gives zero") {
    Mat p(2, 3);
    p(0, 1) = 1.0;
    p(1, 2) = 1.0;
    SoftLabelBatch y{p};
    const auto res = losses::soft_cross_entropy(preds_from(p), y);
    CHECK(res.value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("soft cross entropy: uniform labels and preds, K=4 -> log 4") {
    Mat p(3, 4, 0.25);
    SoftLabelBatch y{Mat(3, 4, 0.25)};
    const auto res = losses::soft_cross_entropy(preds_from(p), y);
    CHECK(res.value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(res.value == doctest::Approx(1.3862944).epsilon(1e-7));
}

TEST_CASE("soft cross entropy: gradient matches finite differences on random simplex points") {
    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t b = 3 + rng.below(4), k = 2 + rng.below(4);
        const Mat p = oracle::random_row_stochastic(b, k, rng);
        const Mat ylab = oracle::random_row_stochastic(b, k, rng);
        SoftLabelBatch y{ylab};
        const auto res = losses::soft_cross_entropy(preds_from(p), y);
        const Mat fd = fd_grad_wrt_preds(
            p, [&](const Mat& m) { return losses::soft_cross_entropy(preds_from(m), y).value; });
        CHECK(oracle::relative_gradient_error(res.grad.data, fd.data) <= 1e-5);
    }
}

TEST_CASE("soft cross entropy: shape mismatch rejected") {
    Mat p(2, 3, 0.5);
    SoftLabelBatch y{Mat(2, 2, 0.5)};
    CHECK_THROWS_AS(losses::soft_cross_entropy(preds_from(p), y), std::invalid_argument);
}

TEST_CASE("neg nuclear norm: identity matrix value is -K") {
    for (std::size_t k : {std::size_t{2}, std::size_t{4}, std::size_t{7}}) {
        Mat p(k, k);
        for (std::size_t i = 0; i < k; ++i) p(i, i) = 1.0;
        const auto res = losses::neg_nuclear_norm(preds_from(p));
        CHECK(res.value == doctest::Approx(-static_cast<double>(k)).epsilon(1e-12));
    }
}

TEST_CASE("neg nuclear norm: one-hot counts [3,1] give -(sqrt 3 + 1)") {
    Mat p(4, 2);
    p(0, 0) = p(1, 0) = p(2, 0) = 1.0;
    p(3, 1) = 1.0;
    const auto res = losses::neg_nuclear_norm(preds_from(p));
    CHECK(res.value == doctest::Approx(-(std::sqrt(3.0) + 1.0)).epsilon(1e-12));
}

TEST_CASE("neg nuclear norm: one-hot identity sum sqrt(n_k) as a property") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(40), k = 2 + rng.below(6);
        std::vector<std::size_t> counts;
        const Mat q = oracle::random_one_hot(n, k, rng, &counts);
        double expect = 0.0;
        for (auto c : counts) expect += std::sqrt(static_cast<double>(c));
        const auto res = losses::neg_nuclear_norm(preds_from(q));
        CHECK(std::abs(-res.value - expect) <= 1e-9);
    }
}

TEST_CASE("neg nuclear norm: matches Gram-eigenvalue oracle and finite differences") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat q = oracle::random_row_stochastic(6, 4, rng);
        const auto res = losses::neg_nuclear_norm(preds_from(q));
        CHECK(std::abs(-res.value - oracle::nuclear_norm_gram(q)) <= 1e-8);

        const Mat fd = fd_grad_wrt_preds(
            q, [&](const Mat& m) { return losses::neg_nuclear_norm(preds_from(m)).value; }, 1e-5);
        CHECK(oracle::relative_gradient_error(res.grad.data, fd.data) <= 1e-4);
    }
}

TEST_CASE("nuclear norm >= Frobenius norm for row-stochastic matrices") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t b = 2 + rng.below(30), k = 2 + rng.below(7);
        const Mat q = oracle::random_row_stochastic(b, k, rng);
        const auto res = losses::neg_nuclear_norm(preds_from(q));
        CHECK(-res.value >= oracle::frobenius_norm(q) - 1e-10);
    }
}

TEST_CASE("fixed column sums: one-hot configuration maximizes the nuclear norm on 3x2 instances") {
    // rows are [p_i, 1-p_i]; column sums fixed by sum p_i = 1; grid search
    const double target_colsum = 1.0;
    double best = -1.0;
    double best_p[3] = {0, 0, 0};
    const int steps = 40;
    for (int i = 0; i <= steps; ++i)
        for (int j = 0; j <= steps; ++j) {
            const double p1 = static_cast<double>(i) / steps;
            const double p2 = static_cast<double>(j) / steps;
            const double p3 = target_colsum - p1 - p2;
            if (p3 < 0.0 || p3 > 1.0) continue;
            Mat q(3, 2);
            q(0, 0) = p1;
            q(0, 1) = 1 - p1;
            q(1, 0) = p2;
            q(1, 1) = 1 - p2;
            q(2, 0) = p3;
            q(2, 1) = 1 - p3;
            const double nn = -losses::neg_nuclear_norm(preds_from(q)).value;
            if (nn > best) {
                best = nn;
                best_p[0] = p1;
                best_p[1] = p2;
                best_p[2] = p3;
            }
        }
    // optimum is a one-hot labeling with counts [1,2]: nuclear norm 1 + sqrt 2
    CHECK(best == doctest::Approx(1.0 + std::sqrt(2.0)).epsilon(1e-9));
    for (double p : best_p) CHECK((p == doctest::Approx(0.0) || p == doctest::Approx(1.0)));
}

TEST_CASE("l1 histogram: exact prior match gives zero") {
    Mat p(4, 2);
    p(0, 0) = p(1, 0) = 1.0;
    p(2, 1) = p(3, 1) = 1.0;
    PriorVector prior{{2.0, 2.0}};
    const auto res = losses::l1_histogram(preds_from(p), prior);
    CHECK(res.value == doctest::Approx(0.0));
}

TEST_CASE("l1 histogram: hand-countable deviation") {
    Mat p(2, 2);
    p(0, 0) = 1.0;
    p(1, 0) = 1.0;
    PriorVector prior{{1.0, 1.0}};
    const auto res = losses::l1_histogram(preds_from(p), prior);
    CHECK(res.value == doctest::Approx(2.0));
}

TEST_CASE("l1 histogram: prior length mismatch rejected") {
    Mat p(2, 3, 1.0 / 3.0);
    PriorVector prior{{1.0, 1.0}};
    CHECK_THROWS_AS(losses::l1_histogram(preds_from(p), prior), std::invalid_argument);
}

TEST_CASE("l1 histogram: subgradient matches finite differences away from kinks") {
    Rng rng(17);
    int tested = 0;
    while (tested < 10) {
        const std::size_t b = 3 + rng.below(5), k = 2 + rng.below(4);
        const Mat p = oracle::random_row_stochastic(b, k, rng);
        PriorVector prior;
        prior.counts.resize(k);
        for (std::size_t j = 0; j < k; ++j) prior.counts[j] = rng.uniform(0.0, static_cast<double>(b));
        const auto sums = col_sums(p);
        bool away = true;
        for (std::size_t j = 0; j < k; ++j) away = away && std::abs(sums[j] - prior.counts[j]) > 1e-3;
        if (!away) continue;
        ++tested;
        const auto res = losses::l1_histogram(preds_from(p), prior);
        const Mat fd = fd_grad_wrt_preds(
            p, [&](const Mat& m) { return losses::l1_histogram(preds_from(m), prior).value; }, 1e-5);
        CHECK(oracle::relative_gradient_error(res.grad.data, fd.data) <= 1e-4);
    }
}

TEST_CASE("l1 histogram: sign(0) = 0 at an exact match") {
    Mat p(2, 2, 0.5);
    PriorVector prior{{1.0, 1.0}};
    const auto res = losses::l1_histogram(preds_from(p), prior);
    for (double g : res.grad.data) CHECK(g == 0.0);
}

TEST_CASE("combine: weighted sum identities") {
    const auto zero = losses::combine(1.0, 2.0, 3.0, {0.0, 0.0, 0.0});
    CHECK(zero.total == 0.0);
    const auto unit = losses::combine(1.0, 2.0, 3.0, {1.0, 1.0, 1.0});
    CHECK(unit.total == doctest::Approx(6.0));
    const losses::LossWeights defaults;
    CHECK(defaults.lambda1 == doctest::Approx(0.3));
    CHECK(defaults.lambda2 == doctest::Approx(1.0));
    CHECK(defaults.lambda3 == doctest::Approx(0.5));
    const auto mixed = losses::combine(0.7, -2.5, 1.2, defaults);
    CHECK(mixed.total == doctest::Approx(0.3 * 0.7 + 1.0 * (-2.5) + 0.5 * 1.2).epsilon(1e-12));
    CHECK_THROWS_AS(losses::combine(1, 1, 1, {-0.1, 0, 0}), std::invalid_argument);
}

TEST_CASE("combine: total reproduces the weighted breakdown exactly") {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const double ce = rng.uniform(-3, 3), nnv = rng.uniform(-3, 3), l1 = rng.uniform(0, 5);
        losses::LossWeights w{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
        const auto b = losses::combine(ce, nnv, l1, w);
        CHECK(std::abs(b.total - (w.lambda1 * b.ce + w.lambda2 * b.nn + w.lambda3 * b.l1)) <= 1e-9);
    }
}
