#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "udar/array.hpp"
#include "udar/augment.hpp"
#include "udar/data.hpp"
#include "udar/errors.hpp"
#include "udar/rng.hpp"

namespace udar {

/// Synthetic paired-domain corpus with a controllable conditional shift:
/// class-indexed sinusoid motifs shared by both domains, plus a fixed
/// per-target-user 3-D rotation, amplitude scale, and extra noise.
struct ShiftConfig {
    std::size_t num_classes = 3;
    std::size_t channels = 3;  // must be a multiple of 3
    std::size_t window_len = 40;
    std::size_t samples_per_class = 40;  // per domain
    std::size_t users_per_domain = 2;
    double rotation_deg_min = 0.0;  // target-user rotation drawn from this range
    double rotation_deg_max = 0.0;
    double amplitude_scale_min = 1.0;  // target-user amplitude multiplier range
    double amplitude_scale_max = 1.0;
    double shift_noise_std = 0.0;  // extra additive noise, target domain only
    double base_noise_std = 0.05;  // measurement noise, both domains
    double sample_rate_hz = 25.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes < 2) throw ContractViolation("ShiftConfig: num_classes must be >= 2");
        if (channels == 0 || channels % 3 != 0) {
            throw ContractViolation("ShiftConfig: channels (" + std::to_string(channels) +
                                    ") must be a positive multiple of 3");
        }
        if (window_len < 2) throw ContractViolation("ShiftConfig: window_len must be >= 2");
        if (samples_per_class == 0 || users_per_domain == 0) {
            throw ContractViolation("ShiftConfig: samples_per_class and users_per_domain must be positive");
        }
        if (rotation_deg_min < 0.0 || rotation_deg_max > 180.0 ||
            rotation_deg_min > rotation_deg_max) {
            throw ContractViolation("ShiftConfig: bad rotation range");
        }
        if (!(amplitude_scale_min > 0.0) || amplitude_scale_min > amplitude_scale_max) {
            throw ContractViolation("ShiftConfig: bad amplitude scale range");
        }
        if (shift_noise_std < 0.0 || base_noise_std < 0.0) {
            throw ContractViolation("ShiftConfig: noise std must be >= 0");
        }
    }
};

struct SynthCorpus {
    WindowedDataset source;                 // labeled
    WindowedDataset target;                 // unlabeled
    std::vector<int> target_hidden_labels;  // evaluation only, aligned with target.windows
};

namespace detail {

/// Class motif on one tri-axial group: an orthogonal sin/cos pair at a
/// class-indexed frequency plus a DC-offset axis carrying a second harmonic.
inline void write_motif(Array& window, std::size_t group, std::size_t cls, double phase,
                        double amp_jitter, std::size_t W) {
    const double cycles = 1.0 + 2.0 * static_cast<double>(cls);
    const double amp = (1.0 + 0.4 * static_cast<double>(cls)) * amp_jitter;
    const double dc = 0.3 + 0.5 * static_cast<double>(cls);
    const double tau = 2.0 * 3.14159265358979323846;
    for (std::size_t t = 0; t < W; ++t) {
        const double arg = tau * cycles * static_cast<double>(t) / static_cast<double>(W) + phase;
        window.at(group, t) = amp * std::sin(arg);
        window.at(group + 1, t) = amp * std::cos(arg);
        window.at(group + 2, t) = dc + 0.3 * amp * std::sin(2.0 * arg);
    }
}

struct UserShift {
    Vec3 axis{0.0, 0.0, 1.0};
    double angle_rad = 0.0;
    double amp_scale = 1.0;
};

}  // namespace detail

inline SynthCorpus generate_corpus(const ShiftConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "synthgen"));
    SynthCorpus corpus;

    auto init_dataset = [&](WindowedDataset& ds) {
        ds.num_classes = cfg.num_classes;
        ds.channel_count = cfg.channels;
        ds.window_len = cfg.window_len;
    };
    init_dataset(corpus.source);
    init_dataset(corpus.target);

    for (int domain_idx = 0; domain_idx < 2; ++domain_idx) {
        const bool is_target = domain_idx == 1;
        const Domain dom = is_target ? Domain::target : Domain::source;

        // fixed per-user shift draws; source users keep the canonical frame
        std::vector<detail::UserShift> shifts(cfg.users_per_domain);
        for (auto& s : shifts) {
            if (is_target) {
                s.axis = random_unit_axis(rng);
                s.angle_rad = rng.uniform(cfg.rotation_deg_min, cfg.rotation_deg_max) *
                              (3.14159265358979323846 / 180.0);
                s.amp_scale = rng.uniform(cfg.amplitude_scale_min, cfg.amplitude_scale_max);
            }
        }

        for (std::size_t cls = 0; cls < cfg.num_classes; ++cls) {
            for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
                const std::size_t user = s % cfg.users_per_domain;
                Window w;
                w.domain = dom;
                w.subject_id = (is_target ? "t" : "s") + std::to_string(user);
                w.data = Array({cfg.channels, cfg.window_len});
                for (std::size_t g = 0; g < cfg.channels; g += 3) {
                    const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846) +
                                         0.7 * static_cast<double>(g / 3);
                    const double amp_jitter = rng.uniform(0.9, 1.1);
                    detail::write_motif(w.data, g, cls, phase, amp_jitter, cfg.window_len);
                }
                const detail::UserShift& shift = shifts[user];
                if (is_target) {
                    if (shift.angle_rad != 0.0) {
                        w.data = rotate_window(w.data, shift.axis, shift.angle_rad);
                    }
                    if (shift.amp_scale != 1.0) {
                        for (std::size_t i = 0; i < w.data.size(); ++i) {
                            w.data[i] *= shift.amp_scale;
                        }
                    }
                }
                const double noise_std =
                    cfg.base_noise_std + (is_target ? cfg.shift_noise_std : 0.0);
                if (noise_std > 0.0) {
                    for (std::size_t i = 0; i < w.data.size(); ++i) {
                        w.data[i] += rng.normal(0.0, noise_std);
                    }
                }
                if (is_target) {
                    corpus.target_hidden_labels.push_back(static_cast<int>(cls));
                    corpus.target.windows.push_back(std::move(w));
                } else {
                    w.label = static_cast<int>(cls);
                    corpus.source.windows.push_back(std::move(w));
                }
            }
        }
    }
    return corpus;
}

/// Each subject's recording is the concatenation of its windows, so
/// re-windowing at zero overlap reproduces the corpus exactly. Hidden target
/// labels are only emitted when `with_hidden_labels` is set (the
/// evaluation-only twin file).
inline std::vector<SensorRecording> corpus_to_recordings(const WindowedDataset& ds,
                                                         const std::vector<int>* hidden_labels,
                                                         double sample_rate_hz,
                                                         bool with_hidden_labels) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> per_subject;
    for (std::size_t i = 0; i < ds.windows.size(); ++i) {
        auto [it, fresh] = per_subject.try_emplace(ds.windows[i].subject_id);
        if (fresh) order.push_back(ds.windows[i].subject_id);
        it->second.push_back(i);
    }
    std::vector<SensorRecording> recs;
    const std::size_t C = ds.channel_count, W = ds.window_len;
    for (const std::string& subject : order) {
        const auto& idx = per_subject[subject];
        SensorRecording rec;
        rec.subject_id = subject;
        rec.domain = ds.windows[idx.front()].domain;
        rec.sample_rate_hz = sample_rate_hz;
        rec.channels = Array({C, idx.size() * W});
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const Window& w = ds.windows[idx[k]];
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t t = 0; t < W; ++t) {
                    rec.channels.at(c, k * W + t) = w.data.at(c, t);
                }
            }
            int label = -1;
            if (w.label) {
                label = *w.label;
            } else if (with_hidden_labels && hidden_labels) {
                label = (*hidden_labels)[idx[k]];
            }
            if (label >= 0) {
                for (std::size_t t = 0; t < W; ++t) rec.labels.push_back(label);
            }
        }
        recs.push_back(std::move(rec));
    }
    return recs;
}

}  // namespace udar
