#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "udar/array.hpp"
#include "udar/data.hpp"
#include "udar/ensemble.hpp"
#include "udar/errors.hpp"
#include "udar/format.hpp"
#include "udar/model.hpp"

namespace udar {

/// Rows are true classes, columns predicted.
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(std::size_t c = 0) : num_classes(c), counts(c * c, 0) {}

    std::uint64_t& at(std::size_t truth, std::size_t pred) {
        return counts[truth * num_classes + pred];
    }
    std::uint64_t at(std::size_t truth, std::size_t pred) const {
        return counts[truth * num_classes + pred];
    }

    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto v : counts) s += v;
        return s;
    }

    std::uint64_t support(std::size_t truth) const {
        std::uint64_t s = 0;
        for (std::size_t j = 0; j < num_classes; ++j) s += at(truth, j);
        return s;
    }

    std::uint64_t predicted(std::size_t pred) const {
        std::uint64_t s = 0;
        for (std::size_t i = 0; i < num_classes; ++i) s += at(i, pred);
        return s;
    }
};

inline ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& pred,
                                 std::size_t num_classes) {
    if (truth.size() != pred.size()) {
        throw ContractViolation("confusion: " + std::to_string(truth.size()) + " truths vs " +
                                std::to_string(pred.size()) + " predictions");
    }
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || pred[i] < 0 || static_cast<std::size_t>(truth[i]) >= num_classes ||
            static_cast<std::size_t>(pred[i]) >= num_classes) {
            throw ContractViolation("confusion: class id outside [0, " +
                                    std::to_string(num_classes) + ")");
        }
        ++cm.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(pred[i]));
    }
    return cm;
}

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
};

inline ClassMetrics class_metrics(const ConfusionMatrix& cm, std::size_t c) {
    ClassMetrics m;
    const double tp = static_cast<double>(cm.at(c, c));
    const double pred = static_cast<double>(cm.predicted(c));
    const double sup = static_cast<double>(cm.support(c));
    m.support = cm.support(c);
    m.precision = pred > 0.0 ? tp / pred : 0.0;
    m.recall = sup > 0.0 ? tp / sup : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

/// Unweighted mean of per-class F1; zero-support classes are excluded.
inline double macro_f1(const ConfusionMatrix& cm) {
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < cm.num_classes; ++c) {
        if (cm.support(c) == 0) continue;
        sum += class_metrics(cm, c).f1;
        ++used;
    }
    if (used == 0) throw ContractViolation("macro_f1: all class supports are zero");
    return sum / static_cast<double>(used);
}

struct MetricReport {
    double macro_f1 = 0.0;
    std::vector<ClassMetrics> per_class;
    double mean_entropy = 0.0;
    bool has_labels = false;
};

inline MetricReport classification_report(const ConfusionMatrix& cm, double mean_pred_entropy) {
    MetricReport r;
    r.has_labels = true;
    r.macro_f1 = macro_f1(cm);
    r.mean_entropy = mean_pred_entropy;
    for (std::size_t c = 0; c < cm.num_classes; ++c) r.per_class.push_back(class_metrics(cm, c));
    return r;
}

// ---------------------------------------------------------------------------
// alpha-vs-uncertainty sweep

struct AlphaSweepRow {
    double alpha = 0.0;
    double mean_final_entropy = 0.0;
    std::size_t epochs_to_plateau = 0;
};

/// Entropy plateau: first epoch t >= 1 from which every successive change of
/// the per-epoch mean pseudo-label entropy stays within `tol` nats; the trace
/// length when the trace never settles.
inline std::size_t epochs_to_plateau(const std::vector<double>& entropy_trace, double tol = 1e-3) {
    const std::size_t T = entropy_trace.size();
    if (T <= 1) return T;
    std::size_t t = T;  // default: never settles
    for (std::size_t i = T; i-- > 1;) {
        if (std::abs(entropy_trace[i] - entropy_trace[i - 1]) > tol) break;
        t = i - 1;
    }
    return t;
}

/// Runs the factory once per alpha; the factory returns the per-epoch mean
/// pseudo-label entropy trace of a full training run.
inline std::vector<AlphaSweepRow> alpha_uncertainty_sweep(
    const std::function<std::vector<double>(double)>& run_factory,
    const std::vector<double>& alpha_grid) {
    if (alpha_grid.empty()) throw ContractViolation("alpha_uncertainty_sweep: empty grid");
    for (double a : alpha_grid) {
        if (!(a > 0.0 && a < 1.0)) {
            throw ContractViolation("alpha_uncertainty_sweep: alpha outside (0, 1)");
        }
    }
    std::vector<AlphaSweepRow> rows;
    for (double a : alpha_grid) {
        const std::vector<double> trace = run_factory(a);
        AlphaSweepRow row;
        row.alpha = a;
        row.mean_final_entropy = trace.empty() ? 0.0 : trace.back();
        row.epochs_to_plateau = epochs_to_plateau(trace);
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// embedding export

struct EmbeddingRow {
    std::size_t window_id = 0;
    std::vector<double> embedding;
    std::optional<int> label;
};

/// Eval-mode penultimate activations for every window, in dataset order.
inline std::vector<EmbeddingRow> export_embeddings(const ModelConfig& cfg, const Parameters& p,
                                                   const WindowedDataset& ds) {
    std::vector<EmbeddingRow> rows;
    if (ds.windows.empty()) return rows;
    const Array batch = windows_to_batch(ds, all_indices(ds));
    const ForwardOutput out = forward_eval(cfg, p, batch);
    for (std::size_t i = 0; i < ds.windows.size(); ++i) {
        EmbeddingRow row;
        row.window_id = i;
        row.embedding.assign(out.embedding.data() + i * cfg.embedding_dim(),
                             out.embedding.data() + (i + 1) * cfg.embedding_dim());
        row.label = ds.windows[i].label;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_embeddings_csv(const std::string& path, const std::vector<EmbeddingRow>& rows,
                                 std::size_t embedding_dim) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "window_id";
    for (std::size_t k = 0; k < embedding_dim; ++k) out << ",z_" << k;
    out << ",label\n";
    for (const auto& row : rows) {
        out << row.window_id;
        for (double v : row.embedding) out << "," << format_double(v);
        out << ",";
        if (row.label) out << *row.label;
        out << "\n";
    }
}

inline void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "true\\pred";
    for (std::size_t j = 0; j < cm.num_classes; ++j) out << "," << j;
    out << "\n";
    for (std::size_t i = 0; i < cm.num_classes; ++i) {
        out << i;
        for (std::size_t j = 0; j < cm.num_classes; ++j) out << "," << cm.at(i, j);
        out << "\n";
    }
}

inline void write_metric_report_csv(const std::string& path, const MetricReport& r) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "metric,value\n";
    if (r.has_labels) out << "macro_f1," << format_double(r.macro_f1) << "\n";
    out << "mean_entropy," << format_double(r.mean_entropy) << "\n";
    if (r.has_labels) {
        for (std::size_t c = 0; c < r.per_class.size(); ++c) {
            out << "precision_" << c << "," << format_double(r.per_class[c].precision) << "\n";
            out << "recall_" << c << "," << format_double(r.per_class[c].recall) << "\n";
            out << "f1_" << c << "," << format_double(r.per_class[c].f1) << "\n";
            out << "support_" << c << "," << r.per_class[c].support << "\n";
        }
    }
    out << "\n";
}

}  // namespace udar
