#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fd_oracle.hpp"
#include "udar/losses.hpp"
#include "udar/rng.hpp"

using udar::Array;
using udar::KernelConfig;
using udar::Rng;
using udar::Tape;
using udar::Var;

namespace {

// Quadruple-loop brute-force reference for the regularized class-conditional
// MMD: explicit kernel matrices per class, +lambda diagonals, matrix means.
double brute_kcmmd(const Array& src, const std::vector<int>& src_labels, const Array& tgt,
                   const std::vector<int>& tgt_labels, const std::vector<char>& mask,
                   double gamma, double lambda, std::size_t min_count) {
    int max_label = -1;
    for (int l : src_labels) max_label = std::max(max_label, l);
    for (int l : tgt_labels) max_label = std::max(max_label, l);
    const std::size_t d = src.dim(1);
    auto kernel = [&](const Array& a, std::size_t i, const Array& b, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = a.at(i, k) - b.at(j, k);
            s += diff * diff;
        }
        return std::exp(-gamma * s);
    };
    double total = 0.0;
    std::size_t used = 0;
    for (int c = 0; c <= max_label; ++c) {
        std::vector<std::size_t> si, ti;
        for (std::size_t i = 0; i < src_labels.size(); ++i) {
            if (src_labels[i] == c) si.push_back(i);
        }
        for (std::size_t i = 0; i < tgt_labels.size(); ++i) {
            if (tgt_labels[i] == c && (mask.empty() || mask[i])) ti.push_back(i);
        }
        if (si.size() < min_count || ti.size() < min_count) continue;
        double mean_ss = 0.0, mean_tt = 0.0, mean_st = 0.0;
        for (std::size_t i = 0; i < si.size(); ++i) {
            for (std::size_t j = 0; j < si.size(); ++j) {
                mean_ss += kernel(src, si[i], src, si[j]) + (i == j ? lambda : 0.0);
            }
        }
        mean_ss /= static_cast<double>(si.size() * si.size());
        for (std::size_t i = 0; i < ti.size(); ++i) {
            for (std::size_t j = 0; j < ti.size(); ++j) {
                mean_tt += kernel(tgt, ti[i], tgt, ti[j]) + (i == j ? lambda : 0.0);
            }
        }
        mean_tt /= static_cast<double>(ti.size() * ti.size());
        for (std::size_t i = 0; i < si.size(); ++i) {
            for (std::size_t j = 0; j < ti.size(); ++j) {
                mean_st += kernel(src, si[i], tgt, ti[j]);
            }
        }
        mean_st /= static_cast<double>(si.size() * ti.size());
        total += mean_ss + mean_tt - 2.0 * mean_st;
        ++used;
    }
    return used > 0 ? total / static_cast<double>(used) : 0.0;
}

// Jacobi eigenvalue sweep for small symmetric matrices (test oracle).
std::vector<double> symmetric_eigenvalues(Array a) {
    const std::size_t n = a.dim(0);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
        }
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a.at(p, q)) < 1e-18) continue;
                const double theta = 0.5 * std::atan2(2.0 * a.at(p, q), a.at(q, q) - a.at(p, p));
                const double c = std::cos(theta), s = std::sin(theta);
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a.at(i, i);
    return ev;
}

Array random_points(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
    Array a({n, d});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-scale, scale);
    return a;
}

}  // namespace

TEST_CASE("cross entropy values and contracts", "[losses]") {
    Tape t;
    SECTION("perfect one-hot predictions give ~0") {
        Var p = t.leaf(Array({2, 3}, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0}));
        CHECK(t.value(udar::ce_loss(t, p, {0, 1})).scalar_value() <= 1e-11);
    }
    SECTION("uniform binary prediction gives ln 2") {
        Var p = t.leaf(Array({1, 2}, {0.5, 0.5}));
        CHECK(t.value(udar::ce_loss(t, p, {0})).scalar_value() ==
              Catch::Approx(std::log(2.0)).margin(1e-12));
    }
    SECTION("duplicating every sample leaves the mean unchanged") {
        Var p = t.leaf(Array({2, 2}, {0.7, 0.3, 0.4, 0.6}));
        Var p2 = t.leaf(Array({4, 2}, {0.7, 0.3, 0.4, 0.6, 0.7, 0.3, 0.4, 0.6}));
        CHECK(t.value(udar::ce_loss(t, p, {0, 1})).scalar_value() ==
              Catch::Approx(t.value(udar::ce_loss(t, p2, {0, 1, 0, 1})).scalar_value())
                  .margin(1e-15));
    }
    SECTION("empty batch and bad labels rejected") {
        Var p = t.leaf(Array({1, 2}, {0.5, 0.5}));
        CHECK_THROWS_AS(udar::ce_loss(t, p, {}), udar::ContractViolation);
        CHECK_THROWS_AS(udar::ce_loss(t, p, {2}), udar::ContractViolation);
    }
}

TEST_CASE("rbf kernel values and positive semidefiniteness", "[losses]") {
    SECTION("worked values") {
        const Array x({1, 1}, {0.0});
        const Array y({1, 1}, {1.0});
        CHECK(udar::rbf_kernel(x, x, 0.5).at(0, 0) == 1.0);
        CHECK(udar::rbf_kernel(x, y, 0.5).at(0, 0) == Catch::Approx(0.60653).margin(1e-5));
    }
    SECTION("entries always in (0, 1]") {
        Rng rng(3);
        const Array a = random_points(6, 4, rng, 3.0);
        const Array b = random_points(5, 4, rng, 3.0);
        const Array k = udar::rbf_kernel(a, b, 0.7);
        for (std::size_t i = 0; i < k.size(); ++i) {
            CHECK(k[i] > 0.0);
            CHECK(k[i] <= 1.0);
        }
    }
    SECTION("gram matrices are PSD") {
        Rng rng(11);
        for (int trial = 0; trial < 20; ++trial) {
            const Array pts = random_points(10, 3, rng, 2.0);
            const double gamma = rng.uniform(0.1, 2.0);
            const auto ev = symmetric_eigenvalues(udar::rbf_kernel(pts, pts, gamma));
            for (double v : ev) REQUIRE(v >= -1e-8);
        }
    }
}

TEST_CASE("median heuristic bandwidth", "[losses]") {
    SECTION("single pair") {
        const Array pts({2, 1}, {0.0, 2.0});  // squared distance 4
        CHECK(udar::median_heuristic_gamma(pts) == Catch::Approx(0.125).margin(1e-15));
    }
    SECTION("identical points fall back to 1") {
        const Array pts({3, 2}, {1.0, 1.0, 1.0, 1.0, 1.0, 1.0});
        CHECK(udar::median_heuristic_gamma(pts) == 1.0);
    }
    SECTION("scaling points by 2 divides gamma by 4") {
        Rng rng(5);
        const Array pts = random_points(7, 3, rng);
        Array scaled = pts;
        for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 2.0;
        CHECK(udar::median_heuristic_gamma(scaled) ==
              Catch::Approx(udar::median_heuristic_gamma(pts) / 4.0).margin(1e-12));
    }
    SECTION("fewer than two points rejected") {
        CHECK_THROWS_AS(udar::median_heuristic_gamma(Array({1, 2}, {0.0, 0.0})),
                        udar::ContractViolation);
    }
}

TEST_CASE("kcmmd analytic anchors", "[losses]") {
    KernelConfig cfg;
    cfg.fixed_gamma = 0.5;
    cfg.lambda = 0.0;

    SECTION("two-sample worked example") {
        Tape t;
        Var s = t.leaf(Array({2, 1}, {0.0, 0.0}));
        Var g = t.leaf(Array({2, 1}, {1.0, 1.0}));
        udar::KcmmdDiagnostics diag;
        Var loss = udar::kcmmd_loss(t, s, {0, 0}, g, {0, 0}, {}, cfg, &diag);
        CHECK(t.value(loss).scalar_value() == Catch::Approx(0.78694).margin(1e-5));
        CHECK(diag.gamma == 0.5);
        CHECK(diag.classes_used == std::vector<int>{0});
    }

    SECTION("identical samples with lambda 0 give 0") {
        Rng rng(9);
        Tape t;
        const Array pts = random_points(5, 3, rng);
        Var s = t.leaf(pts);
        Var g = t.leaf(pts);
        const std::vector<int> labels = {0, 0, 1, 1, 1};
        Var loss = udar::kcmmd_loss(t, s, labels, g, labels, {}, cfg);
        CHECK(std::abs(t.value(loss).scalar_value()) <= 1e-12);
    }

    SECTION("identical samples expose only the diagonal term lambda/n + lambda/m") {
        KernelConfig reg = cfg;
        reg.lambda = 0.1;
        Tape t;
        const Array pts({2, 2}, {0.3, -0.4, 1.2, 0.8});
        Var s = t.leaf(pts);
        Var g = t.leaf(pts);
        Var loss = udar::kcmmd_loss(t, s, {0, 0}, g, {0, 0}, {}, reg);
        CHECK(t.value(loss).scalar_value() == Catch::Approx(0.1).margin(1e-15));
    }
}

TEST_CASE("kcmmd equals the quadruple-loop brute force", "[losses]") {
    Rng rng(2024);
    const double lambdas[3] = {0.0, 0.18, 0.45};
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t n = 4 + rng.uniform_index(17);   // <= 20
        const std::size_t m = 4 + rng.uniform_index(17);
        const std::size_t d = 1 + rng.uniform_index(8);    // <= 8
        const std::size_t c = 1 + rng.uniform_index(4);    // <= 4
        const double lambda = lambdas[rng.uniform_index(3)];
        const double gamma = rng.uniform(0.2, 2.0);
        const Array src = random_points(n, d, rng);
        const Array tgt = random_points(m, d, rng);
        std::vector<int> sl(n), tl(m);
        for (auto& l : sl) l = static_cast<int>(rng.uniform_index(c));
        for (auto& l : tl) l = static_cast<int>(rng.uniform_index(c));
        std::vector<char> mask(m);
        for (auto& b : mask) b = rng.uniform() < 0.8 ? 1 : 0;

        KernelConfig cfg;
        cfg.fixed_gamma = gamma;
        cfg.lambda = lambda;
        Tape t;
        Var sv = t.leaf(src);
        Var tv = t.leaf(tgt);
        const double loss = t.value(udar::kcmmd_loss(t, sv, sl, tv, tl, mask, cfg)).scalar_value();
        const double ref = brute_kcmmd(src, sl, tgt, tl, mask, gamma, lambda, 2);
        REQUIRE(std::abs(loss - ref) <= 1e-9);
    }
}

TEST_CASE("kcmmd per-class discrepancy is symmetric under domain swap", "[losses]") {
    Rng rng(55);
    for (int trial = 0; trial < 30; ++trial) {
        const Array a = random_points(6, 3, rng);
        const Array b = random_points(6, 3, rng);
        const std::vector<int> labels = {0, 0, 0, 1, 1, 1};
        KernelConfig cfg;
        cfg.fixed_gamma = 0.8;
        cfg.lambda = 0.25;
        Tape t1, t2;
        const double fwd = t1.value(udar::kcmmd_loss(t1, t1.leaf(a), labels, t1.leaf(b), labels,
                                                     {}, cfg)).scalar_value();
        const double rev = t2.value(udar::kcmmd_loss(t2, t2.leaf(b), labels, t2.leaf(a), labels,
                                                     {}, cfg)).scalar_value();
        REQUIRE(std::abs(fwd - rev) <= 1e-12);
    }
}

TEST_CASE("kcmmd with lambda 0 is nonnegative per class", "[losses]") {
    Rng rng(77);
    KernelConfig cfg;
    cfg.fixed_gamma = 0.6;
    cfg.lambda = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const Array a = random_points(8, 2, rng);
        const Array b = random_points(7, 2, rng);
        std::vector<int> sl(8, 0), tl(7, 0);
        Tape t;
        udar::KcmmdDiagnostics diag;
        udar::kcmmd_loss(t, t.leaf(a), sl, t.leaf(b), tl, {}, cfg, &diag);
        for (double delta : diag.per_class_delta) REQUIRE(delta >= -1e-12);
    }
}

TEST_CASE("kcmmd skips sparse classes and reports diagnostics", "[losses]") {
    KernelConfig cfg;
    cfg.fixed_gamma = 1.0;
    Tape t;
    Var s = t.leaf(Array({3, 1}, {0.0, 0.1, 5.0}));
    Var g = t.leaf(Array({3, 1}, {0.2, 0.3, 5.0}));
    // class 1 has a single source sample; class 2 absent from target
    udar::KcmmdDiagnostics diag;
    Var loss = udar::kcmmd_loss(t, s, {0, 0, 1}, g, {0, 0, 0}, {}, cfg, &diag);
    CHECK(diag.classes_used == std::vector<int>{0});
    CHECK(diag.classes_skipped == std::vector<int>{1});
    CHECK(std::isfinite(t.value(loss).scalar_value()));

    SECTION("no qualifying class gives 0 with empty diagnostics") {
        Tape t2;
        Var s2 = t2.leaf(Array({1, 1}, {0.0}));
        Var g2 = t2.leaf(Array({1, 1}, {1.0}));
        udar::KcmmdDiagnostics d2;
        Var l2 = udar::kcmmd_loss(t2, s2, {0}, g2, {0}, {}, cfg, &d2);
        CHECK(t2.value(l2).scalar_value() == 0.0);
        CHECK(d2.classes_used.empty());
    }
}

TEST_CASE("class kernel blocks satisfy the matrix invariants", "[losses]") {
    Rng rng(31);
    const Array src = random_points(8, 3, rng);
    const Array tgt = random_points(6, 3, rng);
    const std::vector<int> sl = {0, 0, 0, 0, 1, 1, 1, 1};
    const std::vector<int> tl = {0, 0, 0, 1, 1, 1};
    const double lambda = 0.3;
    const auto blocks = udar::build_class_kernel_blocks(src, sl, tgt, tl, {}, 0.9, lambda);
    REQUIRE(blocks.size() == 2);
    for (const auto& blk : blocks) {
        for (std::size_t i = 0; i < blk.n_c; ++i) {
            CHECK(blk.k_ss.at(i, i) == Catch::Approx(1.0 + lambda).margin(1e-12));
            for (std::size_t j = 0; j < blk.n_c; ++j) {
                CHECK(blk.k_ss.at(i, j) == Catch::Approx(blk.k_ss.at(j, i)).margin(1e-12));
                if (i != j) {
                    CHECK(blk.k_ss.at(i, j) > 0.0);
                    CHECK(blk.k_ss.at(i, j) <= 1.0);
                }
            }
        }
        for (std::size_t i = 0; i < blk.m_c; ++i) {
            CHECK(blk.k_tt.at(i, i) == Catch::Approx(1.0 + lambda).margin(1e-12));
        }
        for (std::size_t i = 0; i < blk.n_c; ++i) {
            for (std::size_t j = 0; j < blk.m_c; ++j) {
                CHECK(blk.k_st.at(i, j) > 0.0);
                CHECK(blk.k_st.at(i, j) <= 1.0);
            }
        }
    }
}

TEST_CASE("unbiased estimator agrees with the regularized form in the limit", "[losses]") {
    // with lambda = 0 and large balanced classes the two estimators converge;
    // here we only pin the hand-computable two-point case
    const Array s({2, 1}, {0.0, 0.0});
    const Array g({2, 1}, {1.0, 1.0});
    // per class: 1/(2*1) * 2*k(0,0)=1, same for target, cross 2/(4)*4*e^-0.5
    const double expected = 1.0 + 1.0 - 2.0 * std::exp(-0.5);
    CHECK(udar::kcmmd_unbiased(s, {0, 0}, g, {0, 0}, {}, 0.5) ==
          Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("consistency loss values and stop gradient", "[losses]") {
    SECTION("identical distributions give 0") {
        Tape t;
        const Array p({2, 2}, {0.3, 0.7, 0.6, 0.4});
        Var pa = t.leaf(p);
        CHECK(std::abs(t.value(udar::consistency_loss(t, p, pa)).scalar_value()) <= 1e-12);
    }
    SECTION("worked example") {
        Tape t;
        const Array po({1, 2}, {0.5, 0.5});
        Var pa = t.leaf(Array({1, 2}, {0.25, 0.75}));
        CHECK(t.value(udar::consistency_loss(t, po, pa)).scalar_value() ==
              Catch::Approx(0.14384).margin(1e-5));
    }
    SECTION("Gibbs inequality: loss nonnegative") {
        Rng rng(13);
        for (int trial = 0; trial < 200; ++trial) {
            Tape t;
            Array po({1, 4}), pa({1, 4});
            double so = 0.0, sa = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                po[j] = rng.uniform(0.01, 1.0);
                pa[j] = rng.uniform(0.01, 1.0);
                so += po[j];
                sa += pa[j];
            }
            for (std::size_t j = 0; j < 4; ++j) {
                po[j] /= so;
                pa[j] /= sa;
            }
            Var v = t.leaf(pa);
            REQUIRE(t.value(udar::consistency_loss(t, po, v)).scalar_value() >= -1e-12);
        }
    }
    SECTION("gradient flows only through the augmented side") {
        Tape t;
        const Array po({1, 2}, {0.8, 0.2});
        Var pa = t.leaf(Array({1, 2}, {0.5, 0.5}));
        Var loss = udar::consistency_loss(t, po, pa);
        const auto g = t.gradients(loss, {pa});
        // d/d pa of -(1/B) sum po log pa = -po / pa
        CHECK(g[0][0] == Catch::Approx(-0.8 / 0.5).margin(1e-12));
        CHECK(g[0][1] == Catch::Approx(-0.2 / 0.5).margin(1e-12));
    }
}

TEST_CASE("overall loss combination", "[losses]") {
    udar::LossWeights w;
    SECTION("weighted sum with unit betas") {
        CHECK(udar::overall_loss_value(1.0, 0.5, 0.25, w, 3) == Catch::Approx(1.75));
    }
    SECTION("zero betas leave the supervised term") {
        udar::LossWeights z;
        z.beta0 = 0.0;
        z.beta1 = 0.0;
        CHECK(udar::overall_loss_value(1.0, 123.0, 456.0, z, 0) == Catch::Approx(1.0));
    }
    SECTION("linear beta0 ramp") {
        udar::LossWeights r;
        r.beta0_ramp_epochs = 10;
        CHECK(r.effective_beta0(5) == Catch::Approx(0.5));
        CHECK(r.effective_beta0(20) == Catch::Approx(1.0));
        CHECK(udar::overall_loss_value(0.0, 1.0, 0.0, r, 5) == Catch::Approx(0.5));
    }
    SECTION("taped combination matches the scalar form") {
        Tape t;
        Var a = t.leaf(Array::scalar(1.0));
        Var b = t.leaf(Array::scalar(0.5));
        Var c = t.leaf(Array::scalar(0.25));
        Var total = udar::overall_loss(t, a, b, c, w, 0);
        CHECK(t.value(total).scalar_value() == Catch::Approx(1.75));
    }
}

TEST_CASE("loss gradients match finite differences on raw embeddings", "[losses]") {
    Rng rng(2025);

    SECTION("kcmmd") {
        const Array src = random_points(6, 3, rng);
        const Array tgt = random_points(5, 3, rng);
        const std::vector<int> sl = {0, 0, 0, 1, 1, 1};
        const std::vector<int> tl = {0, 0, 1, 1, 1};
        KernelConfig cfg;
        cfg.fixed_gamma = 0.7;
        cfg.lambda = 0.2;
        auto f = [&](const std::vector<Array>& params) {
            Tape t;
            Var s = t.leaf(params[0]);
            Var g = t.leaf(params[1]);
            return t.value(udar::kcmmd_loss(t, s, sl, g, tl, {}, cfg)).scalar_value();
        };
        Tape t;
        Var s = t.leaf(src);
        Var g = t.leaf(tgt);
        Var loss = udar::kcmmd_loss(t, s, sl, g, tl, {}, cfg);
        const auto analytic = t.gradients(loss, {s, g});
        const auto numeric = fd::gradients(f, {src, tgt});
        CHECK(fd::max_rel_err_elementwise(analytic, numeric) <= 1e-4);
    }

    SECTION("cross entropy through softmax-like probabilities") {
        Array p({3, 3});
        for (std::size_t i = 0; i < 3; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 3; ++j) {
                p.at(i, j) = rng.uniform(0.05, 1.0);
                s += p.at(i, j);
            }
            for (std::size_t j = 0; j < 3; ++j) p.at(i, j) /= s;
        }
        const std::vector<int> y = {0, 2, 1};
        auto f = [&](const std::vector<Array>& params) {
            Tape t;
            return t.value(udar::ce_loss(t, t.leaf(params[0]), y)).scalar_value();
        };
        Tape t;
        Var pv = t.leaf(p);
        const auto analytic = t.gradients(udar::ce_loss(t, pv, y), {pv});
        const auto numeric = fd::gradients(f, {p});
        CHECK(fd::max_rel_err_elementwise(analytic, numeric) <= 1e-4);
    }
}
