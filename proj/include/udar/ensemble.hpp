#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "udar/array.hpp"
#include "udar/errors.hpp"

namespace udar {

struct EnsembleConfig {
    double alpha = 0.60;
    double confidence_threshold = 0.0;  // 0 accepts every pseudo-label

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) {
            throw ContractViolation("EnsembleConfig: alpha must lie in (0, 1), got " +
                                    std::to_string(alpha));
        }
        if (confidence_threshold < 0.0 || confidence_threshold > 1.0) {
            throw ContractViolation("EnsembleConfig: confidence_threshold outside [0, 1]");
        }
    }
};

/// Exponential moving average of per-epoch prediction matrices. Row order is
/// bound to the target dataset's window order for the whole run.
struct EnsembleState {
    Array accumulated;      // (m, c), starts at zero
    std::uint64_t epoch = 0;  // completed updates

    EnsembleState() = default;
    EnsembleState(std::size_t num_samples, std::size_t num_classes)
        : accumulated({num_samples, num_classes}) {}

    std::size_t num_samples() const { return accumulated.dim(0); }
    std::size_t num_classes() const { return accumulated.dim(1); }
};

/// Z <- alpha * Z + (1 - alpha) * p; increments the epoch counter.
inline void ensemble_update(EnsembleState& state, const Array& epoch_predictions, double alpha) {
    check_same_shape(state.accumulated, epoch_predictions, "ensemble_update");
    check_finite(epoch_predictions, "ensemble_update");
    for (std::size_t i = 0; i < state.accumulated.size(); ++i) {
        state.accumulated[i] =
            alpha * state.accumulated[i] + (1.0 - alpha) * epoch_predictions[i];
    }
    state.epoch += 1;
}

/// Bias-corrected ensemble predictions Z / (1 - alpha^t).
inline Array ensemble_corrected(const EnsembleState& state, double alpha) {
    if (state.epoch == 0) {
        throw ContractViolation("ensemble_corrected: no predictions accumulated yet");
    }
    const double correction = 1.0 - std::pow(alpha, static_cast<double>(state.epoch));
    Array out = state.accumulated;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= correction;
    return out;
}

struct PseudoLabels {
    std::vector<int> labels;
    std::vector<char> mask;  // true where max corrected probability >= threshold
};

/// Argmax of the bias-corrected rows; ties break to the lowest class id.
inline PseudoLabels pseudo_labels(const EnsembleState& state, double alpha, double threshold) {
    const Array z = ensemble_corrected(state, alpha);
    const std::size_t m = z.dim(0), c = z.dim(1);
    PseudoLabels out;
    out.labels.resize(m);
    out.mask.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (z.at(i, j) > z.at(i, best)) best = j;
        }
        out.labels[i] = static_cast<int>(best);
        out.mask[i] = z.at(i, best) >= threshold ? 1 : 0;
    }
    return out;
}

/// Natural-log entropy with 0 * log 0 := 0.
inline double entropy(std::span<const double> p) {
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) {
            throw ContractViolation("entropy: negative probability " + std::to_string(v));
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw ContractViolation("entropy: probabilities sum to " + std::to_string(sum));
    }
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

inline double entropy(const Array& row) {
    return entropy(std::span<const double>(row.data(), row.size()));
}

/// Per-row entropies of a (m, c) probability matrix.
inline std::vector<double> row_entropies(const Array& probs) {
    std::vector<double> out(probs.dim(0));
    for (std::size_t i = 0; i < probs.dim(0); ++i) {
        out[i] = entropy(std::span<const double>(probs.data() + i * probs.dim(1), probs.dim(1)));
    }
    return out;
}

inline double mean_entropy(const Array& probs) {
    const auto h = row_entropies(probs);
    double s = 0.0;
    for (double v : h) s += v;
    return h.empty() ? 0.0 : s / static_cast<double>(h.size());
}

}  // namespace udar
