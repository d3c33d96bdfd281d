#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "udar/array.hpp"
#include "udar/errors.hpp"
#include "udar/tape.hpp"

namespace udar {

struct KernelConfig {
    std::optional<double> fixed_gamma;  // empty selects the median heuristic
    double lambda = 0.30;               // paper range 0.18 - 0.45
    std::size_t min_class_count = 2;    // per domain, per batch

    void validate() const {
        if (fixed_gamma && !(*fixed_gamma > 0.0)) {
            throw ContractViolation("KernelConfig: fixed gamma must be positive");
        }
        if (lambda < 0.0) throw ContractViolation("KernelConfig: lambda must be >= 0");
        if (min_class_count < 2) {
            throw ContractViolation("KernelConfig: min_class_count must be >= 2");
        }
    }
};

struct LossWeights {
    double beta0 = 1.0;
    double beta1 = 1.0;
    std::size_t beta0_ramp_epochs = 0;  // 0 keeps beta0 constant

    void validate() const {
        if (beta0 < 0.0 || beta1 < 0.0) {
            throw ContractViolation("LossWeights: beta0/beta1 must be >= 0");
        }
    }

    double effective_beta0(std::size_t epoch) const {
        if (beta0_ramp_epochs == 0) return beta0;
        const double r = static_cast<double>(epoch) / static_cast<double>(beta0_ramp_epochs);
        return beta0 * std::min(1.0, r);
    }
};

// ---------------------------------------------------------------------------
// cross entropy

/// -(1/B) sum log p_i[y_i], probabilities clamped at 1e-12.
inline Var ce_loss(Tape& t, Var probabilities, const std::vector<int>& labels) {
    const Array& pv = t.value(probabilities);
    if (labels.empty()) throw ContractViolation("ce_loss: empty batch");
    if (pv.rank() != 2 || pv.dim(0) != labels.size()) {
        throw ContractViolation("ce_loss: probability shape " + pv.shape_str() + " for " +
                                std::to_string(labels.size()) + " labels");
    }
    std::vector<std::size_t> idx(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= pv.dim(1)) {
            throw ContractViolation("ce_loss: label " + std::to_string(labels[i]) +
                                    " outside [0, " + std::to_string(pv.dim(1)) + ")");
        }
        idx[i] = static_cast<std::size_t>(labels[i]);
    }
    Var picked = t.select_per_row(probabilities, idx);
    return t.mul_scalar(t.mean_all(t.log_clamped(picked)), -1.0);
}

// ---------------------------------------------------------------------------
// RBF kernel

/// K[i, j] = exp(-gamma * ||a_i - b_j||^2), plain (non-differentiable) form.
inline Array rbf_kernel(const Array& a, const Array& b, double gamma) {
    if (!(gamma > 0.0)) throw ContractViolation("rbf_kernel: gamma must be positive");
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw ContractViolation("rbf_kernel: incompatible shapes " + a.shape_str() + " vs " +
                                b.shape_str());
    }
    const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
    Array out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = a.at(i, k) - b.at(j, k);
                s += diff * diff;
            }
            out.at(i, j) = std::exp(-gamma * s);
        }
    }
    return out;
}

/// gamma = 1 / (2 * median of nonzero pairwise squared distances); 1 when all
/// points coincide. Even counts take the mean of the two middle values.
inline double median_heuristic_gamma(const Array& points) {
    if (points.rank() != 2 || points.dim(0) < 2) {
        throw ContractViolation("median_heuristic_gamma: need >= 2 points");
    }
    const std::size_t n = points.dim(0), d = points.dim(1);
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = points.at(i, k) - points.at(j, k);
                s += diff * diff;
            }
            if (s > 0.0) dists.push_back(s);
        }
    }
    if (dists.empty()) return 1.0;
    std::sort(dists.begin(), dists.end());
    const std::size_t mid = dists.size() / 2;
    const double median =
        dists.size() % 2 == 1 ? dists[mid] : 0.5 * (dists[mid - 1] + dists[mid]);
    return 1.0 / (2.0 * median);
}

// ---------------------------------------------------------------------------
// class-wise conditional MMD

struct ClassKernelBlock {
    int class_id = 0;
    std::size_t n_c = 0;  // source count
    std::size_t m_c = 0;  // target count
    Array k_ss;           // (n_c, n_c), +lambda on the diagonal
    Array k_tt;           // (m_c, m_c), +lambda on the diagonal
    Array k_st;           // (n_c, m_c), unregularized
};

struct KcmmdDiagnostics {
    double gamma = 0.0;
    std::vector<int> classes_used;
    std::vector<int> classes_skipped;
    std::vector<double> per_class_delta;  // aligned with classes_used
};

namespace detail {

inline std::vector<std::vector<std::size_t>> rows_by_class(const std::vector<int>& labels,
                                                           const std::vector<char>* mask,
                                                           std::size_t num_rows) {
    if (labels.size() != num_rows) {
        throw ContractViolation("kcmmd: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(num_rows) + " embedding rows");
    }
    int max_label = -1;
    for (int l : labels) max_label = std::max(max_label, l);
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) throw ContractViolation("kcmmd: negative class label");
        if (mask && !(*mask)[i]) continue;
        out[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    return out;
}

inline double resolve_gamma(const Array& src, const Array& tgt, const KernelConfig& cfg) {
    if (cfg.fixed_gamma) return *cfg.fixed_gamma;
    const std::size_t d = src.dim(1);
    Array pooled({src.dim(0) + tgt.dim(0), d});
    std::copy(src.values().begin(), src.values().end(), pooled.data());
    std::copy(tgt.values().begin(), tgt.values().end(), pooled.data() + src.size());
    return median_heuristic_gamma(pooled);
}

}  // namespace detail

/// Regularized class-conditional MMD training loss: per qualifying class,
/// delta_c = mean(K_ss + lambda I) + mean(K_tt + lambda I) - 2 mean(K_st),
/// averaged over the classes present. The diagonal regularizer contributes
/// exactly lambda/n_c + lambda/m_c to each class mean, so it is added in
/// closed form; the bandwidth is treated as a constant under differentiation.
inline Var kcmmd_loss(Tape& t, Var src_emb, const std::vector<int>& src_labels, Var tgt_emb,
                      const std::vector<int>& tgt_pseudo, const std::vector<char>& tgt_mask,
                      const KernelConfig& cfg, KcmmdDiagnostics* diag = nullptr) {
    cfg.validate();
    const Array& sv = t.value(src_emb);
    const Array& tv = t.value(tgt_emb);
    if (sv.rank() != 2 || tv.rank() != 2 || sv.dim(1) != tv.dim(1)) {
        throw ContractViolation("kcmmd_loss: embedding dims differ, " + sv.shape_str() + " vs " +
                                tv.shape_str());
    }
    if (!tgt_mask.empty() && tgt_mask.size() != tgt_pseudo.size()) {
        throw ContractViolation("kcmmd_loss: mask length does not match pseudo-labels");
    }
    const auto src_rows = detail::rows_by_class(src_labels, nullptr, sv.dim(0));
    const auto tgt_rows = detail::rows_by_class(tgt_pseudo, tgt_mask.empty() ? nullptr : &tgt_mask,
                                                tv.dim(0));
    const double gamma = detail::resolve_gamma(sv, tv, cfg);

    KcmmdDiagnostics local;
    KcmmdDiagnostics& d = diag ? *diag : local;
    d.gamma = gamma;
    d.classes_used.clear();
    d.classes_skipped.clear();
    d.per_class_delta.clear();

    const std::size_t num_classes = std::max(src_rows.size(), tgt_rows.size());
    std::optional<Var> total;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const std::size_t n_c = c < src_rows.size() ? src_rows[c].size() : 0;
        const std::size_t m_c = c < tgt_rows.size() ? tgt_rows[c].size() : 0;
        if (n_c < cfg.min_class_count || m_c < cfg.min_class_count) {
            if (n_c > 0 || m_c > 0) d.classes_skipped.push_back(static_cast<int>(c));
            continue;
        }
        Var s_c = t.gather_rows(src_emb, src_rows[c]);
        Var t_c = t.gather_rows(tgt_emb, tgt_rows[c]);
        Var mean_ss = t.mean_all(t.exp(t.mul_scalar(t.pairwise_sq_dists(s_c, s_c), -gamma)));
        Var mean_tt = t.mean_all(t.exp(t.mul_scalar(t.pairwise_sq_dists(t_c, t_c), -gamma)));
        Var mean_st = t.mean_all(t.exp(t.mul_scalar(t.pairwise_sq_dists(s_c, t_c), -gamma)));
        const double diag_term = cfg.lambda / static_cast<double>(n_c) +
                                 cfg.lambda / static_cast<double>(m_c);
        Var delta = t.add_scalar(
            t.sub(t.add(mean_ss, mean_tt), t.mul_scalar(mean_st, 2.0)), diag_term);
        d.classes_used.push_back(static_cast<int>(c));
        d.per_class_delta.push_back(t.value(delta).scalar_value());
        total = total ? t.add(*total, delta) : delta;
    }
    if (!total) {
        return t.constant(Array::scalar(0.0));
    }
    return t.mul_scalar(*total, 1.0 / static_cast<double>(d.classes_used.size()));
}

/// Explicit per-class kernel matrices (diagnostics / inspection form).
inline std::vector<ClassKernelBlock> build_class_kernel_blocks(
    const Array& src_emb, const std::vector<int>& src_labels, const Array& tgt_emb,
    const std::vector<int>& tgt_pseudo, const std::vector<char>& tgt_mask, double gamma,
    double lambda, std::size_t min_class_count = 2) {
    const auto src_rows = detail::rows_by_class(src_labels, nullptr, src_emb.dim(0));
    const auto tgt_rows = detail::rows_by_class(tgt_pseudo, tgt_mask.empty() ? nullptr : &tgt_mask,
                                                tgt_emb.dim(0));
    auto gather = [](const Array& emb, const std::vector<std::size_t>& rows) {
        Array out({rows.size(), emb.dim(1)});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t k = 0; k < emb.dim(1); ++k) out.at(i, k) = emb.at(rows[i], k);
        }
        return out;
    };
    std::vector<ClassKernelBlock> blocks;
    const std::size_t num_classes = std::max(src_rows.size(), tgt_rows.size());
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (c >= src_rows.size() || c >= tgt_rows.size()) continue;
        if (src_rows[c].size() < min_class_count || tgt_rows[c].size() < min_class_count) continue;
        ClassKernelBlock blk;
        blk.class_id = static_cast<int>(c);
        blk.n_c = src_rows[c].size();
        blk.m_c = tgt_rows[c].size();
        const Array s_c = gather(src_emb, src_rows[c]);
        const Array t_c = gather(tgt_emb, tgt_rows[c]);
        blk.k_ss = rbf_kernel(s_c, s_c, gamma);
        blk.k_tt = rbf_kernel(t_c, t_c, gamma);
        blk.k_st = rbf_kernel(s_c, t_c, gamma);
        for (std::size_t i = 0; i < blk.n_c; ++i) blk.k_ss.at(i, i) += lambda;
        for (std::size_t i = 0; i < blk.m_c; ++i) blk.k_tt.at(i, i) += lambda;
        blocks.push_back(std::move(blk));
    }
    return blocks;
}

/// Unbiased estimator in the summed-over-classes form (diagnostics only):
/// per class, off-diagonal intra-domain sums scaled by 1/(n(n-1)) minus twice
/// the cross mean; no diagonal regularizer.
inline double kcmmd_unbiased(const Array& src_emb, const std::vector<int>& src_labels,
                             const Array& tgt_emb, const std::vector<int>& tgt_pseudo,
                             const std::vector<char>& tgt_mask, double gamma) {
    const auto src_rows = detail::rows_by_class(src_labels, nullptr, src_emb.dim(0));
    const auto tgt_rows = detail::rows_by_class(tgt_pseudo, tgt_mask.empty() ? nullptr : &tgt_mask,
                                                tgt_emb.dim(0));
    auto sq = [](const Array& a, std::size_t i, const Array& b, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < a.dim(1); ++k) {
            const double diff = a.at(i, k) - b.at(j, k);
            s += diff * diff;
        }
        return s;
    };
    double total = 0.0;
    const std::size_t num_classes = std::max(src_rows.size(), tgt_rows.size());
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (c >= src_rows.size() || c >= tgt_rows.size()) continue;
        const auto& si = src_rows[c];
        const auto& ti = tgt_rows[c];
        if (si.size() < 2 || ti.size() < 2) continue;
        const double n = static_cast<double>(si.size());
        const double m = static_cast<double>(ti.size());
        double ss = 0.0, tt = 0.0, st = 0.0;
        for (std::size_t i = 0; i < si.size(); ++i) {
            for (std::size_t j = 0; j < si.size(); ++j) {
                if (i != j) ss += std::exp(-gamma * sq(src_emb, si[i], src_emb, si[j]));
            }
        }
        for (std::size_t i = 0; i < ti.size(); ++i) {
            for (std::size_t j = 0; j < ti.size(); ++j) {
                if (i != j) tt += std::exp(-gamma * sq(tgt_emb, ti[i], tgt_emb, ti[j]));
            }
        }
        for (std::size_t i = 0; i < si.size(); ++i) {
            for (std::size_t j = 0; j < ti.size(); ++j) {
                st += std::exp(-gamma * sq(src_emb, si[i], tgt_emb, ti[j]));
            }
        }
        total += ss / (n * (n - 1.0)) + tt / (m * (m - 1.0)) - 2.0 * st / (n * m);
    }
    return total;
}

// ---------------------------------------------------------------------------
// consistency (KL between predictions on original and augmented samples)

/// mean over rows of KL(p_orig || p_aug); p_orig is a fixed target (stop
/// gradient). Both sides are clamped at 1e-12 inside the logs.
inline Var consistency_loss(Tape& t, const Array& p_orig, Var p_aug) {
    const Array& pa = t.value(p_aug);
    check_same_shape(p_orig, pa, "consistency_loss");
    if (p_orig.rank() != 2) {
        throw ContractViolation("consistency_loss: want rank-2 rows, got " + p_orig.shape_str());
    }
    const std::size_t B = p_orig.dim(0);
    double const_term = 0.0;  // (1/B) sum p_o log p_o
    for (std::size_t i = 0; i < p_orig.size(); ++i) {
        const_term += p_orig[i] * std::log(std::max(p_orig[i], 1e-12));
    }
    const_term /= static_cast<double>(B);
    Var cross = t.sum_all(t.mul(t.constant(p_orig), t.log_clamped(p_aug)));
    return t.add_scalar(t.mul_scalar(cross, -1.0 / static_cast<double>(B)), const_term);
}

/// Variant without the stop gradient: both prediction paths receive gradient.
inline Var consistency_loss_coupled(Tape& t, Var p_orig, Var p_aug) {
    const Array& po = t.value(p_orig);
    check_same_shape(po, t.value(p_aug), "consistency_loss");
    const double inv_b = 1.0 / static_cast<double>(po.dim(0));
    Var diff = t.sub(t.log_clamped(p_orig), t.log_clamped(p_aug));
    return t.mul_scalar(t.sum_all(t.mul(p_orig, diff)), inv_b);
}

// ---------------------------------------------------------------------------
// joint objective

/// L = L_SL + beta0 * L_kCMMD + beta1 * L_C with optional linear beta0 ramp.
inline Var overall_loss(Tape& t, Var l_sl, std::optional<Var> l_kcmmd, std::optional<Var> l_c,
                        const LossWeights& w, std::size_t epoch) {
    w.validate();
    Var total = l_sl;
    if (l_kcmmd) total = t.add(total, t.mul_scalar(*l_kcmmd, w.effective_beta0(epoch)));
    if (l_c) total = t.add(total, t.mul_scalar(*l_c, w.beta1));
    return total;
}

inline double overall_loss_value(double l_sl, double l_kcmmd, double l_c, const LossWeights& w,
                                 std::size_t epoch) {
    w.validate();
    return l_sl + w.effective_beta0(epoch) * l_kcmmd + w.beta1 * l_c;
}

}  // namespace udar
