#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "udar/eval.hpp"
#include "udar/rng.hpp"

using udar::ConfusionMatrix;
using udar::Rng;

namespace {

// Independent recount oracle working straight off the label vectors.
double brute_macro_f1(const std::vector<int>& truth, const std::vector<int>& pred,
                      std::size_t num_classes) {
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::size_t support = 0, tp = 0, predicted = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const bool is_true = truth[i] == static_cast<int>(c);
            const bool is_pred = pred[i] == static_cast<int>(c);
            support += is_true;
            predicted += is_pred;
            tp += is_true && is_pred;
        }
        if (support == 0) continue;
        const double p = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
        const double r = static_cast<double>(tp) / support;
        sum += (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        ++used;
    }
    REQUIRE(used > 0);
    return sum / static_cast<double>(used);
}

}  // namespace

TEST_CASE("confusion counts", "[eval]") {
    SECTION("perfect predictions are diagonal") {
        const std::vector<int> y = {0, 1, 2, 1, 0};
        const auto cm = udar::confusion(y, y, 3);
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                CHECK(cm.at(i, j) == (i == j ? cm.support(i) : 0));
            }
        }
        CHECK(cm.total() == 5);
    }

    SECTION("hand-counted example") {
        const auto cm = udar::confusion({0, 0, 1}, {0, 1, 1}, 2);
        CHECK(cm.at(0, 0) == 1);
        CHECK(cm.at(0, 1) == 1);
        CHECK(cm.at(1, 0) == 0);
        CHECK(cm.at(1, 1) == 1);
    }

    SECTION("empty input gives a zero matrix") {
        const auto cm = udar::confusion({}, {}, 3);
        CHECK(cm.total() == 0);
    }

    SECTION("mismatched lengths rejected") {
        CHECK_THROWS_AS(udar::confusion({0, 1}, {0}, 2), udar::ContractViolation);
    }
}

TEST_CASE("macro_f1 worked example and degenerate rules", "[eval]") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 1;
    cm.at(0, 1) = 1;
    cm.at(1, 1) = 2;
    CHECK(udar::macro_f1(cm) == Catch::Approx(0.73333).margin(1e-5));
    // exact value: (2/3 + 4/5) / 2
    CHECK(udar::macro_f1(cm) == Catch::Approx((2.0 / 3.0 + 0.8) / 2.0).margin(1e-12));

    SECTION("perfect two-class") {
        ConfusionMatrix perfect(2);
        perfect.at(0, 0) = 3;
        perfect.at(1, 1) = 4;
        CHECK(udar::macro_f1(perfect) == Catch::Approx(1.0));
    }

    SECTION("zero-support class excluded") {
        ConfusionMatrix partial(3);
        partial.at(0, 0) = 2;
        partial.at(1, 1) = 2;
        // class 2 never appears as a truth
        CHECK(udar::macro_f1(partial) == Catch::Approx(1.0));
    }

    SECTION("all supports zero rejected") {
        ConfusionMatrix empty(3);
        CHECK_THROWS_AS(udar::macro_f1(empty), udar::ContractViolation);
    }
}

TEST_CASE("macro_f1 equals brute-force recount on random vectors", "[eval]") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t c = 2 + rng.uniform_index(5);
        const std::size_t n = 1 + rng.uniform_index(40);
        std::vector<int> truth(n), pred(n);
        for (std::size_t i = 0; i < n; ++i) {
            truth[i] = static_cast<int>(rng.uniform_index(c));
            pred[i] = static_cast<int>(rng.uniform_index(c));
        }
        const auto cm = udar::confusion(truth, pred, c);
        CHECK(udar::macro_f1(cm) == Catch::Approx(brute_macro_f1(truth, pred, c)).margin(1e-12));
    }
}

TEST_CASE("macro_f1 is invariant to duplicating the evaluation set", "[eval]") {
    Rng rng(7);
    std::vector<int> truth, pred;
    for (int i = 0; i < 30; ++i) {
        truth.push_back(static_cast<int>(rng.uniform_index(3)));
        pred.push_back(static_cast<int>(rng.uniform_index(3)));
    }
    std::vector<int> truth2 = truth, pred2 = pred;
    truth2.insert(truth2.end(), truth.begin(), truth.end());
    pred2.insert(pred2.end(), pred.begin(), pred.end());
    CHECK(udar::macro_f1(udar::confusion(truth, pred, 3)) ==
          Catch::Approx(udar::macro_f1(udar::confusion(truth2, pred2, 3))).margin(1e-12));
}

TEST_CASE("confusion is equivariant under class relabeling", "[eval]") {
    Rng rng(13);
    const std::size_t c = 4;
    std::vector<int> truth, pred;
    for (int i = 0; i < 50; ++i) {
        truth.push_back(static_cast<int>(rng.uniform_index(c)));
        pred.push_back(static_cast<int>(rng.uniform_index(c)));
    }
    const std::vector<int> perm = {2, 0, 3, 1};
    std::vector<int> truth_p, pred_p;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        truth_p.push_back(perm[truth[i]]);
        pred_p.push_back(perm[pred[i]]);
    }
    const auto cm = udar::confusion(truth, pred, c);
    const auto cm_p = udar::confusion(truth_p, pred_p, c);
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            CHECK(cm.at(i, j) == cm_p.at(perm[i], perm[j]));
        }
    }
}

TEST_CASE("entropy plateau detection", "[eval]") {
    CHECK(udar::epochs_to_plateau({1.0, 0.5, 0.3, 0.3, 0.3}) == 2);
    CHECK(udar::epochs_to_plateau({1.0, 0.9, 0.8}) == 3);  // never settles
    CHECK(udar::epochs_to_plateau({0.4}) == 1);
    CHECK(udar::epochs_to_plateau({}) == 0);
}

TEST_CASE("alpha sweep plumbing", "[eval]") {
    auto factory = [](double alpha) {
        return std::vector<double>{1.0, 0.5 * alpha, 0.4 * alpha};
    };
    SECTION("singleton grid gives a single row") {
        const auto rows = udar::alpha_uncertainty_sweep(factory, {0.6});
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].alpha == 0.6);
        CHECK(rows[0].mean_final_entropy == Catch::Approx(0.24));
    }
    SECTION("identical alpha gives identical rows") {
        const auto a = udar::alpha_uncertainty_sweep(factory, {0.6, 0.6});
        CHECK(a[0].mean_final_entropy == a[1].mean_final_entropy);
        CHECK(a[0].epochs_to_plateau == a[1].epochs_to_plateau);
    }
    SECTION("empty grid rejected") {
        CHECK_THROWS_AS(udar::alpha_uncertainty_sweep(factory, {}), udar::ContractViolation);
    }
}
