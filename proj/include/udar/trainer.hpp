#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "udar/augment.hpp"
#include "udar/data.hpp"
#include "udar/ensemble.hpp"
#include "udar/errors.hpp"
#include "udar/eval.hpp"
#include "udar/format.hpp"
#include "udar/losses.hpp"
#include "udar/model.hpp"
#include "udar/rng.hpp"
#include "udar/tape.hpp"

namespace udar {

struct OptimizerConfig {
    double learning_rate = 0.001;  // paper range 0.001 - 0.0003
    double lr_min = 0.0003;
    std::string lr_schedule = "cosine";  // cosine | constant
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 128;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ContractViolation("OptimizerConfig: learning_rate <= 0");
        if (batch_size < 2) throw ContractViolation("OptimizerConfig: batch_size must be >= 2");
        if (max_epochs == 0) throw ContractViolation("OptimizerConfig: max_epochs must be >= 1");
        if (lr_schedule != "cosine" && lr_schedule != "constant") {
            throw ContractViolation("OptimizerConfig: lr_schedule must be cosine|constant");
        }
    }

    double lr_at(std::size_t epoch) const {
        if (lr_schedule == "constant" || max_epochs <= 1) return learning_rate;
        const double t = static_cast<double>(epoch) / static_cast<double>(max_epochs - 1);
        return lr_min + 0.5 * (learning_rate - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
    }
};

struct AdamState {
    std::vector<Array> m;  // aligned with Parameters::trainable_indices()
    std::vector<Array> v;
    std::uint64_t step = 0;
};

inline AdamState make_adam_state(const Parameters& p) {
    AdamState s;
    for (std::size_t i : p.trainable_indices()) {
        s.m.push_back(Array(p.entries[i].value.shape()));
        s.v.push_back(Array(p.entries[i].value.shape()));
    }
    return s;
}

/// One Adam update over the trainable entries. Returns false and applies no
/// update at all when any gradient is non-finite.
inline bool adam_step(Parameters& p, const std::vector<Array>& grads, AdamState& state,
                      const OptimizerConfig& cfg, double lr) {
    const auto idx = p.trainable_indices();
    if (grads.size() != idx.size()) {
        throw ContractViolation("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(idx.size()) + " trainable parameters");
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (!grads[k].same_shape(p.entries[idx[k]].value)) {
            throw ContractViolation("adam_step: gradient shape " + grads[k].shape_str() +
                                    " does not match parameter " + p.entries[idx[k]].name + " " +
                                    p.entries[idx[k]].value.shape_str());
        }
        if (!grads[k].all_finite()) return false;
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        Array& theta = p.entries[idx[k]].value;
        Array& m = state.m[k];
        Array& v = state.v[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grads[k][i];
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
        }
    }
    return true;
}

// ---------------------------------------------------------------------------

enum class AblationMode { baseline, te, te_kcmmd, full };

inline std::string to_string(AblationMode m) {
    switch (m) {
        case AblationMode::baseline: return "baseline";
        case AblationMode::te: return "te";
        case AblationMode::te_kcmmd: return "te_kcmmd";
        default: return "full";
    }
}

inline AblationMode ablation_from_string(const std::string& s) {
    if (s == "baseline") return AblationMode::baseline;
    if (s == "te") return AblationMode::te;
    if (s == "te_kcmmd") return AblationMode::te_kcmmd;
    if (s == "full") return AblationMode::full;
    throw ContractViolation("unknown ablation mode '" + s + "' (want baseline|te|te_kcmmd|full)");
}

struct TrainConfig {
    ModelConfig model;  // num_classes/channels/window_len resolved from data when zero
    KernelConfig kernel;
    LossWeights weights;
    EnsembleConfig ensemble;
    AugmentConfig augment;
    OptimizerConfig optimizer;
    SplitSpec split;
    AblationMode ablation = AblationMode::full;
    std::size_t patience = 20;  // early stop on validation macro-F1
    std::uint64_t seed = 1;
    std::string ensemble_dump_csv;  // optional per-epoch z-hat/entropy dump
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss_sl = 0.0;
    double loss_kcmmd = std::numeric_limits<double>::quiet_NaN();
    double loss_c = std::numeric_limits<double>::quiet_NaN();
    double loss_total = 0.0;
    double val_macro_f1 = std::numeric_limits<double>::quiet_NaN();
    double target_macro_f1 = std::numeric_limits<double>::quiet_NaN();
    double mean_pseudo_entropy = std::numeric_limits<double>::quiet_NaN();
    double kcmmd_classes_used = std::numeric_limits<double>::quiet_NaN();
    std::string warning;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_macro_f1 = 0.0;
    double wall_clock_seconds = 0.0;  // manifest only, never in the CSV
    std::vector<std::string> warnings;
};

inline void write_train_report_csv(std::ostream& out, const TrainReport& r) {
    auto cell = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
    out << "epoch,loss_sl,loss_kcmmd,loss_c,loss_total,val_macro_f1,target_macro_f1,"
           "mean_pseudo_entropy,kcmmd_classes_used,warning\n";
    for (const EpochRecord& e : r.epochs) {
        out << e.epoch << "," << cell(e.loss_sl) << "," << cell(e.loss_kcmmd) << ","
            << cell(e.loss_c) << "," << cell(e.loss_total) << "," << cell(e.val_macro_f1) << ","
            << cell(e.target_macro_f1) << "," << cell(e.mean_pseudo_entropy) << ","
            << cell(e.kcmmd_classes_used) << "," << e.warning << "\n";
    }
}

inline void write_train_report_csv(const std::string& path, const TrainReport& r) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    write_train_report_csv(out, r);
}

struct TrainResult {
    Parameters params;
    EnsembleState ensemble;
    TrainReport report;
    ModelConfig model_config;  // resolved
};

namespace detail {

/// Eval-mode class probabilities over the given windows, chunked.
inline Array predict_probs(const ModelConfig& cfg, const Parameters& p, const WindowedDataset& ds,
                           const std::vector<std::size_t>& indices, std::size_t chunk = 256) {
    Array out({std::max<std::size_t>(indices.size(), 1), cfg.num_classes});
    for (std::size_t start = 0; start < indices.size(); start += chunk) {
        const std::size_t end = std::min(indices.size(), start + chunk);
        std::vector<std::size_t> slice(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                       indices.begin() + static_cast<std::ptrdiff_t>(end));
        const ForwardOutput f = forward_eval(cfg, p, windows_to_batch(ds, slice));
        for (std::size_t i = 0; i < slice.size(); ++i) {
            for (std::size_t c = 0; c < cfg.num_classes; ++c) {
                out.at(start + i, c) = f.probabilities.at(i, c);
            }
        }
    }
    return out;
}

inline std::vector<int> argmax_rows(const Array& probs) {
    std::vector<int> out(probs.dim(0));
    for (std::size_t i = 0; i < probs.dim(0); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < probs.dim(1); ++j) {
            if (probs.at(i, j) > probs.at(i, best)) best = j;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

inline std::vector<int> labels_of(const WindowedDataset& ds,
                                  const std::vector<std::size_t>& indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        if (!ds.windows[i].label) {
            throw ContractViolation("labels_of: window " + std::to_string(i) + " is unlabeled");
        }
        out.push_back(*ds.windows[i].label);
    }
    return out;
}

}  // namespace detail

/// Single-stage joint optimization: per epoch, paired source/target
/// mini-batches drive the supervised, alignment, and consistency terms; after
/// the epoch an eval-mode pass over the whole target set refreshes the
/// temporal ensemble, whose pseudo-labels feed the next epoch's kCMMD term.
inline TrainResult train(const WindowedDataset& source, const WindowedDataset& target,
                         TrainConfig cfg,
                         const std::vector<int>* target_hidden_labels = nullptr) {
    const auto t_start = std::chrono::steady_clock::now();
    cfg.optimizer.validate();
    cfg.kernel.validate();
    cfg.weights.validate();
    cfg.ensemble.validate();
    cfg.augment.validate();
    if (source.windows.empty()) throw ContractViolation("train: empty source dataset");
    for (const Window& w : source.windows) {
        if (!w.label) throw ContractViolation("train: source windows must be labeled");
    }
    const bool need_target = cfg.ablation != AblationMode::baseline;
    if (need_target && target.windows.empty()) {
        throw ContractViolation("train: target dataset required for mode " +
                                to_string(cfg.ablation));
    }
    if (!target.windows.empty()) {
        if (target.channel_count != source.channel_count ||
            target.window_len != source.window_len) {
            throw ContractViolation("train: source windows (" +
                                    std::to_string(source.channel_count) + ", " +
                                    std::to_string(source.window_len) + ") vs target (" +
                                    std::to_string(target.channel_count) + ", " +
                                    std::to_string(target.window_len) + ")");
        }
        for (const Window& w : target.windows) {
            if (w.label) throw ContractViolation("train: target windows must be unlabeled");
        }
    }
    if (target_hidden_labels && target_hidden_labels->size() != target.windows.size()) {
        throw ContractViolation("train: hidden label count does not match target windows");
    }

    // resolve model dims from the data
    ModelConfig model_cfg = cfg.model;
    if (model_cfg.num_classes == 0) model_cfg.num_classes = source.num_classes;
    if (model_cfg.channels == 0) model_cfg.channels = source.channel_count;
    if (model_cfg.window_len == 0) model_cfg.window_len = source.window_len;
    model_cfg.validate();

    // source split: honor pre-tagged windows, otherwise split here
    std::vector<std::size_t> train_idx = indices_with_split(source, Split::train);
    std::vector<std::size_t> val_idx = indices_with_split(source, Split::val);
    if (train_idx.empty()) {
        SplitSpec spec = cfg.split;
        spec.seed = cfg.seed;
        const SplitResult split = split_dataset(source, spec);
        train_idx = split.train;
        val_idx = split.val;
    }
    if (train_idx.empty()) throw ContractViolation("train: no training windows after split");
    const std::vector<int> val_labels =
        val_idx.empty() ? std::vector<int>{} : detail::labels_of(source, val_idx);

    TrainResult result;
    result.model_config = model_cfg;
    result.params = init_model(model_cfg, cfg.seed);
    result.ensemble = EnsembleState(std::max<std::size_t>(target.windows.size(), 1),
                                    model_cfg.num_classes);
    AdamState adam = make_adam_state(result.params);

    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
    Rng augment_rng(derive_seed(cfg.seed, "augment"));

    // zero-weight terms are skipped entirely so that, e.g., full mode with
    // beta0 = beta1 = 0 follows the exact parameter trajectory of baseline
    const bool use_ensemble = cfg.ablation != AblationMode::baseline && !target.windows.empty();
    const bool use_kcmmd =
        (cfg.ablation == AblationMode::te_kcmmd || cfg.ablation == AblationMode::full) &&
        cfg.weights.beta0 > 0.0;
    const bool use_consistency = cfg.ablation == AblationMode::full && cfg.weights.beta1 > 0.0;

    std::ofstream ensemble_dump;
    if (!cfg.ensemble_dump_csv.empty()) {
        ensemble_dump.open(cfg.ensemble_dump_csv);
        if (!ensemble_dump) throw IoError("cannot write " + cfg.ensemble_dump_csv);
        ensemble_dump << "epoch,window_id";
        for (std::size_t c = 0; c < model_cfg.num_classes; ++c) ensemble_dump << ",zhat_" << c;
        ensemble_dump << ",entropy\n";
    }

    const std::size_t B = cfg.optimizer.batch_size;
    std::vector<std::size_t> tgt_all = all_indices(target);
    PseudoLabels pseudo;  // refreshed post-epoch, consumed next epoch
    bool pseudo_ready = false;

    double best_val = -1.0;
    std::size_t best_epoch = 0;
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.optimizer.max_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        const double lr = cfg.optimizer.lr_at(epoch);

        std::vector<std::size_t> src_order = train_idx;
        shuffle_rng.shuffle(src_order);
        std::vector<std::size_t> tgt_order = tgt_all;
        shuffle_rng.shuffle(tgt_order);

        const bool kcmmd_active =
            use_kcmmd && pseudo_ready && cfg.weights.effective_beta0(epoch) > 0.0;
        const bool target_in_step = kcmmd_active || (use_consistency && !target.windows.empty());
        const std::size_t longest =
            target_in_step ? std::max(src_order.size(), tgt_order.size()) : src_order.size();
        const std::size_t steps = (longest + B - 1) / B;

        double sum_sl = 0.0, sum_kcmmd = 0.0, sum_c = 0.0, sum_total = 0.0;
        std::size_t kcmmd_batches = 0, kcmmd_classes = 0;
        std::size_t completed_steps = 0;

        for (std::size_t step = 0; step < steps; ++step) {
            std::vector<std::size_t> src_batch(B);
            for (std::size_t k = 0; k < B; ++k) {
                src_batch[k] = src_order[(step * B + k) % src_order.size()];
            }
            const Array src_x = windows_to_batch(source, src_batch);
            const std::vector<int> src_y = detail::labels_of(source, src_batch);

            Tape tape;
            ModelVars mv = register_model(tape, result.params);
            TapedForward src_fwd =
                model_forward(tape, model_cfg, result.params, mv, src_x, Mode::train, &dropout_rng);
            update_running_stats(result.params, model_cfg, src_fwd.bn_batch_means,
                                 src_fwd.bn_batch_vars);
            Var l_sl = ce_loss(tape, src_fwd.probabilities, src_y);

            std::optional<Var> l_kcmmd;
            std::optional<Var> l_c;
            std::optional<TapedForward> tgt_fwd;
            std::vector<std::size_t> tgt_batch;
            if (target_in_step) {
                tgt_batch.resize(B);
                for (std::size_t k = 0; k < B; ++k) {
                    tgt_batch[k] = tgt_order[(step * B + k) % tgt_order.size()];
                }
                const Array tgt_x = windows_to_batch(target, tgt_batch);
                tgt_fwd = model_forward(tape, model_cfg, result.params, mv, tgt_x, Mode::train,
                                        &dropout_rng);
                update_running_stats(result.params, model_cfg, tgt_fwd->bn_batch_means,
                                     tgt_fwd->bn_batch_vars);

                if (kcmmd_active) {
                    std::vector<int> batch_pseudo(B);
                    std::vector<char> batch_mask(B);
                    for (std::size_t k = 0; k < B; ++k) {
                        batch_pseudo[k] = pseudo.labels[tgt_batch[k]];
                        batch_mask[k] = pseudo.mask[tgt_batch[k]];
                    }
                    KcmmdDiagnostics diag;
                    l_kcmmd = kcmmd_loss(tape, src_fwd.embedding, src_y, tgt_fwd->embedding,
                                         batch_pseudo, batch_mask, cfg.kernel, &diag);
                    ++kcmmd_batches;
                    kcmmd_classes += diag.classes_used.size();
                }
                if (use_consistency) {
                    // prediction-space passes: eval-mode (running statistics,
                    // no dropout) so the fixed target distribution is the
                    // model's actual prediction, not a noise draw; gradient
                    // flows through the augmented side only
                    const Array src_aug_x = augment_batch(src_x, cfg.augment, augment_rng);
                    TapedForward src_orig =
                        model_forward(tape, model_cfg, result.params, mv, src_x, Mode::eval);
                    TapedForward src_aug =
                        model_forward(tape, model_cfg, result.params, mv, src_aug_x, Mode::eval);
                    const Array tgt_aug_x = augment_batch(tgt_x, cfg.augment, augment_rng);
                    TapedForward tgt_orig =
                        model_forward(tape, model_cfg, result.params, mv, tgt_x, Mode::eval);
                    TapedForward tgt_aug =
                        model_forward(tape, model_cfg, result.params, mv, tgt_aug_x, Mode::eval);
                    Var c_src = consistency_loss(tape, tape.value(src_orig.probabilities),
                                                 src_aug.probabilities);
                    Var c_tgt = consistency_loss(tape, tape.value(tgt_orig.probabilities),
                                                 tgt_aug.probabilities);
                    l_c = tape.add(c_src, c_tgt);
                }
            }

            Var total = overall_loss(tape, l_sl, l_kcmmd, l_c, cfg.weights, epoch);
            const std::vector<Array> grads = tape.gradients(total, mv.vars);
            if (!adam_step(result.params, grads, adam, cfg.optimizer, lr)) {
                rec.warning = "non-finite gradient; epoch aborted after " +
                              std::to_string(step) + " step(s)";
                result.report.warnings.push_back("epoch " + std::to_string(epoch) + ": " +
                                                 rec.warning);
                break;
            }
            sum_sl += tape.value(l_sl).scalar_value();
            if (l_kcmmd) sum_kcmmd += tape.value(*l_kcmmd).scalar_value();
            if (l_c) sum_c += tape.value(*l_c).scalar_value();
            sum_total += tape.value(total).scalar_value();
            ++completed_steps;
        }

        if (completed_steps > 0) {
            const double n = static_cast<double>(completed_steps);
            rec.loss_sl = sum_sl / n;
            rec.loss_total = sum_total / n;
            if (kcmmd_active) {
                rec.loss_kcmmd = sum_kcmmd / n;
                rec.kcmmd_classes_used =
                    kcmmd_batches > 0
                        ? static_cast<double>(kcmmd_classes) / static_cast<double>(kcmmd_batches)
                        : 0.0;
                if (kcmmd_batches > 0 && kcmmd_classes == 0) {
                    rec.warning += (rec.warning.empty() ? "" : "; ");
                    rec.warning += "kCMMD skipped every class this epoch";
                    result.report.warnings.push_back("epoch " + std::to_string(epoch) +
                                                     ": kCMMD skipped every class");
                }
            }
            if (use_consistency) rec.loss_c = sum_c / n;
        }

        // post-epoch: ensemble refresh on the full target set (eval mode)
        Array target_probs;
        if (!target.windows.empty() &&
            (use_ensemble || target_hidden_labels != nullptr)) {
            target_probs = detail::predict_probs(model_cfg, result.params, target, tgt_all);
        }
        if (use_ensemble) {
            ensemble_update(result.ensemble, target_probs, cfg.ensemble.alpha);
            pseudo = pseudo_labels(result.ensemble, cfg.ensemble.alpha,
                                   cfg.ensemble.confidence_threshold);
            pseudo_ready = true;
            const Array corrected = ensemble_corrected(result.ensemble, cfg.ensemble.alpha);
            rec.mean_pseudo_entropy = mean_entropy(corrected);
            if (ensemble_dump.is_open()) {
                const auto ent = row_entropies(corrected);
                for (std::size_t i = 0; i < corrected.dim(0); ++i) {
                    ensemble_dump << epoch << "," << i;
                    for (std::size_t c = 0; c < corrected.dim(1); ++c) {
                        ensemble_dump << "," << format_double(corrected.at(i, c));
                    }
                    ensemble_dump << "," << format_double(ent[i]) << "\n";
                }
            }
        }
        if (target_hidden_labels && !target.windows.empty()) {
            const auto preds = detail::argmax_rows(target_probs);
            rec.target_macro_f1 =
                macro_f1(confusion(*target_hidden_labels, preds, model_cfg.num_classes));
        }

        if (!val_idx.empty()) {
            const Array val_probs = detail::predict_probs(model_cfg, result.params, source, val_idx);
            const auto preds = detail::argmax_rows(val_probs);
            rec.val_macro_f1 = macro_f1(confusion(val_labels, preds, model_cfg.num_classes));
        }

        result.report.epochs.push_back(rec);

        if (!val_idx.empty()) {
            if (rec.val_macro_f1 > best_val + 1e-12) {
                best_val = rec.val_macro_f1;
                best_epoch = epoch;
                since_best = 0;
            } else {
                ++since_best;
                if (cfg.patience > 0 && since_best >= cfg.patience) break;
            }
        }
    }

    result.report.best_epoch = best_epoch;
    result.report.best_val_macro_f1 = std::max(best_val, 0.0);
    result.report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

// ---------------------------------------------------------------------------
// grid search

struct GridResult {
    TrainConfig config;
    double best_val_macro_f1 = 0.0;
    std::size_t best_epoch = 0;
    std::string key;  // canonical, for deterministic ranking
};

inline std::string grid_key(const TrainConfig& c) {
    std::vector<std::string> parts = {
        "alpha=" + format_double(c.ensemble.alpha),
        "lambda=" + format_double(c.kernel.lambda),
        "gamma=" + (c.kernel.fixed_gamma ? format_double(*c.kernel.fixed_gamma) : "median"),
        "eta=" + format_double(c.optimizer.learning_rate),
        "beta0=" + format_double(c.weights.beta0),
        "beta1=" + format_double(c.weights.beta1),
        "sigma=" + format_double(c.augment.jitter_sigma),
        "rot=" + format_double(c.augment.rotation_deg),
        "batch=" + std::to_string(c.optimizer.batch_size),
        "epochs=" + std::to_string(c.optimizer.max_epochs),
        "mode=" + to_string(c.ablation),
        "seed=" + std::to_string(c.seed)};
    return join(parts, ",");
}

/// Trains one run per config and ranks by best validation macro-F1; ties
/// break on the canonical key so the ranking is independent of enumeration
/// order. Test windows are never touched.
inline std::vector<GridResult> grid_search(const WindowedDataset& source,
                                           const WindowedDataset& target,
                                           const std::vector<TrainConfig>& grid) {
    if (grid.empty()) throw ContractViolation("grid_search: empty grid");
    std::vector<GridResult> results;
    for (const TrainConfig& cfg : grid) {
        TrainResult run = train(source, target, cfg);
        GridResult r;
        r.config = cfg;
        r.best_val_macro_f1 = run.report.best_val_macro_f1;
        r.best_epoch = run.report.best_epoch;
        r.key = grid_key(cfg);
        results.push_back(std::move(r));
    }
    std::sort(results.begin(), results.end(), [](const GridResult& a, const GridResult& b) {
        if (a.best_val_macro_f1 != b.best_val_macro_f1) {
            return a.best_val_macro_f1 > b.best_val_macro_f1;
        }
        return a.key < b.key;
    });
    return results;
}

}  // namespace udar
