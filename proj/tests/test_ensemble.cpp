#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "udar/ensemble.hpp"
#include "udar/rng.hpp"

using udar::Array;
using udar::EnsembleState;
using udar::Rng;

TEST_CASE("one-step EMA with bias correction", "[ensemble]") {
    EnsembleState state(1, 2);
    udar::ensemble_update(state, Array({1, 2}, {1.0, 0.0}), 0.6);
    CHECK(state.accumulated.at(0, 0) == Catch::Approx(0.4).margin(1e-15));
    CHECK(state.accumulated.at(0, 1) == 0.0);
    const Array z = udar::ensemble_corrected(state, 0.6);
    CHECK(z.at(0, 0) == Catch::Approx(1.0).margin(1e-15));
    CHECK(z.at(0, 1) == 0.0);
}

TEST_CASE("constant input is an exact fixed point under bias correction", "[ensemble]") {
    const Array p({2, 3}, {0.2, 0.5, 0.3, 0.7, 0.1, 0.2});
    for (double alpha : {0.55, 0.60, 0.75}) {
        EnsembleState state(2, 3);
        for (int t = 1; t <= 128; ++t) {
            udar::ensemble_update(state, p, alpha);
            const Array z = udar::ensemble_corrected(state, alpha);
            for (std::size_t i = 0; i < p.size(); ++i) {
                REQUIRE(std::abs(z[i] - p[i]) <= 1e-12);
            }
        }
    }
}

TEST_CASE("alpha to zero limit tracks the latest prediction", "[ensemble]") {
    const double alpha = 1e-9;
    EnsembleState state(1, 2);
    udar::ensemble_update(state, Array({1, 2}, {0.9, 0.1}), alpha);
    udar::ensemble_update(state, Array({1, 2}, {0.2, 0.8}), alpha);
    const Array z = udar::ensemble_corrected(state, alpha);
    CHECK(std::abs(z.at(0, 0) - 0.2) <= 1e-6);
    CHECK(std::abs(z.at(0, 1) - 0.8) <= 1e-6);
}

TEST_CASE("bias-corrected rows stay probability vectors", "[ensemble]") {
    Rng rng(31);
    EnsembleState state(4, 3);
    for (int t = 0; t < 40; ++t) {
        Array p({4, 3});
        for (std::size_t i = 0; i < 4; ++i) {
            double row_sum = 0.0;
            for (std::size_t j = 0; j < 3; ++j) {
                p.at(i, j) = rng.uniform(0.01, 1.0);
                row_sum += p.at(i, j);
            }
            for (std::size_t j = 0; j < 3; ++j) p.at(i, j) /= row_sum;
        }
        udar::ensemble_update(state, p, 0.65);
        const Array z = udar::ensemble_corrected(state, 0.65);
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 3; ++j) {
                REQUIRE(z.at(i, j) >= 0.0);
                s += z.at(i, j);
            }
            REQUIRE(std::abs(s - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("pseudo labels, ties, and threshold mask", "[ensemble]") {
    EnsembleState state(3, 3);
    // craft rows via a single update (t=1, correction 1-alpha)
    Array p({3, 3}, {0.1, 0.7, 0.2,    // clear argmax 1
                     0.5, 0.5, 0.0,    // tie -> lowest id
                     0.3, 0.3, 0.4});  // max 0.4 below high threshold
    udar::ensemble_update(state, p, 0.6);

    const auto pl_low = udar::pseudo_labels(state, 0.6, 0.5);
    CHECK(pl_low.labels == std::vector<int>{1, 0, 2});
    CHECK(pl_low.mask[0] == 1);
    CHECK(pl_low.mask[1] == 1);
    CHECK(pl_low.mask[2] == 0);

    const auto pl_high = udar::pseudo_labels(state, 0.6, 0.9);
    CHECK(pl_high.mask[0] == 0);

    SECTION("no predictions yet rejected") {
        EnsembleState fresh(2, 2);
        CHECK_THROWS_AS(udar::pseudo_labels(fresh, 0.6, 0.0), udar::ContractViolation);
    }
}

TEST_CASE("argmax depends only on within-row ordering", "[ensemble]") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        EnsembleState state(1, 5);
        Array p({1, 5});
        double row = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
            p[j] = rng.uniform(0.01, 1.0);
            row += p[j];
        }
        for (std::size_t j = 0; j < 5; ++j) p[j] /= row;
        udar::ensemble_update(state, p, 0.6);
        const auto labels = udar::pseudo_labels(state, 0.6, 0.0).labels;

        // scaling a row by a positive constant must not change the argmax
        EnsembleState scaled(1, 5);
        Array q = p;
        for (std::size_t j = 0; j < 5; ++j) q[j] *= 3.7;
        scaled.accumulated = q;
        scaled.epoch = 1;
        CHECK(udar::pseudo_labels(scaled, 0.6, 0.0).labels == labels);
    }
}

TEST_CASE("entropy values", "[ensemble]") {
    CHECK(udar::entropy(Array({3}, {1.0, 0.0, 0.0})) == 0.0);
    CHECK(udar::entropy(Array({4}, {0.25, 0.25, 0.25, 0.25})) ==
          Catch::Approx(std::log(4.0)).margin(1e-12));
    CHECK(udar::entropy(Array({3}, {0.5, 0.25, 0.25})) == Catch::Approx(1.03972).margin(1e-5));

    SECTION("negative entries rejected") {
        CHECK_THROWS_AS(udar::entropy(Array({2}, {1.5, -0.5})), udar::ContractViolation);
    }
    SECTION("non-normalized rejected") {
        CHECK_THROWS_AS(udar::entropy(Array({2}, {0.6, 0.6})), udar::ContractViolation);
    }
}

TEST_CASE("higher alpha smooths oscillating inputs more", "[ensemble]") {
    // variance of successive corrected-estimate steps is non-increasing in alpha
    const std::vector<double> alphas = {0.55, 0.65, 0.75};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed * 57 + 3);
        // one oscillating prediction stream shared by all alphas
        std::vector<Array> stream;
        for (int t = 0; t < 60; ++t) {
            const double flip = (t % 2 == 0) ? 1.0 : 0.0;
            const double eps = rng.uniform(0.0, 0.1);
            const double a = 0.8 * flip + 0.1 + eps;
            stream.push_back(Array({1, 2}, {a, 1.0 - a}));
        }
        std::vector<double> variances;
        for (double alpha : alphas) {
            EnsembleState state(1, 2);
            std::vector<double> diffs;
            double prev = 0.5;
            for (const Array& p : stream) {
                udar::ensemble_update(state, p, alpha);
                const double z = udar::ensemble_corrected(state, alpha).at(0, 0);
                diffs.push_back(z - prev);
                prev = z;
            }
            double mean = 0.0;
            for (double d : diffs) mean += d;
            mean /= static_cast<double>(diffs.size());
            double var = 0.0;
            for (double d : diffs) var += (d - mean) * (d - mean);
            variances.push_back(var / static_cast<double>(diffs.size()));
        }
        CHECK(variances[0] >= variances[1]);
        CHECK(variances[1] >= variances[2]);
    }
}
