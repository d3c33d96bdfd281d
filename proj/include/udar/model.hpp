#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "udar/array.hpp"
#include "udar/errors.hpp"
#include "udar/rng.hpp"
#include "udar/tape.hpp"

namespace udar {

struct ModelConfig {
    std::vector<std::size_t> conv_filters = {32, 128, 64};
    std::vector<std::size_t> kernel_sizes = {5, 5, 5};
    std::vector<std::size_t> pool_sizes = {2, 2, 2};
    std::vector<std::size_t> fc_widths = {8, 4};
    double dropout_rate = 0.3;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;
    std::size_t num_classes = 0;
    std::size_t channels = 0;
    std::size_t window_len = 0;

    std::size_t num_blocks() const { return conv_filters.size(); }

    /// Smallest window length the conv/pool stack accepts.
    std::size_t min_window_len() const {
        std::size_t len = 1;
        for (std::size_t i = num_blocks(); i-- > 0;) {
            len = len * pool_sizes[i] + kernel_sizes[i] - 1;
        }
        return len;
    }

    /// Sequence length after each conv+pool block for the configured W.
    std::vector<std::size_t> block_lengths() const {
        std::vector<std::size_t> lens;
        std::size_t len = window_len;
        for (std::size_t i = 0; i < num_blocks(); ++i) {
            if (len < kernel_sizes[i]) return {};
            len = (len - kernel_sizes[i] + 1) / pool_sizes[i];
            if (len == 0) return {};
            lens.push_back(len);
        }
        return lens;
    }

    std::size_t flatten_size() const {
        const auto lens = block_lengths();
        if (lens.empty()) return 0;
        return conv_filters.back() * lens.back();
    }

    std::size_t embedding_dim() const { return fc_widths.back(); }

    void validate() const {
        if (num_classes < 2) throw ContractViolation("ModelConfig: num_classes must be >= 2");
        if (channels == 0 || window_len == 0) {
            throw ContractViolation("ModelConfig: channels and window_len must be set");
        }
        if (conv_filters.empty() || conv_filters.size() != kernel_sizes.size() ||
            conv_filters.size() != pool_sizes.size()) {
            throw ContractViolation("ModelConfig: conv_filters/kernel_sizes/pool_sizes sizes differ");
        }
        if (fc_widths.empty()) throw ContractViolation("ModelConfig: fc_widths must be non-empty");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
            throw ContractViolation("ModelConfig: dropout_rate outside [0, 1)");
        }
        if (flatten_size() == 0) {
            throw ContractViolation("ModelConfig: window length " + std::to_string(window_len) +
                                    " too short for the conv stack; minimum is " +
                                    std::to_string(min_window_len()));
        }
    }
};

/// Flat named-array parameter store. Batchnorm running statistics live here
/// as non-trainable entries.
struct Parameters {
    struct Entry {
        std::string name;
        Array value;
        bool trainable = true;
    };
    std::vector<Entry> entries;

    std::size_t index(const std::string& name) const {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].name == name) return i;
        }
        throw ContractViolation("Parameters: no entry named '" + name + "'");
    }

    Array& get(const std::string& name) { return entries[index(name)].value; }
    const Array& get(const std::string& name) const { return entries[index(name)].value; }

    std::vector<std::size_t> trainable_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].trainable) out.push_back(i);
        }
        return out;
    }

    bool all_finite() const {
        for (const Entry& e : entries) {
            if (!e.value.all_finite()) return false;
        }
        return true;
    }
};

/// Fan-in-scaled uniform init for conv/fc weights; zero biases; batchnorm
/// scale 1, shift 0, running mean 0, running var 1.
inline Parameters init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "init"));
    Parameters p;
    auto uniform_fan_in = [&](std::vector<std::size_t> shape, std::size_t fan_in) {
        Array a(std::move(shape));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-bound, bound);
        return a;
    };
    std::size_t in_ch = cfg.channels;
    for (std::size_t i = 0; i < cfg.num_blocks(); ++i) {
        const std::size_t f = cfg.conv_filters[i], k = cfg.kernel_sizes[i];
        const std::string b = "conv" + std::to_string(i + 1);
        p.entries.push_back({b + ".weight", uniform_fan_in({f, in_ch, k}, in_ch * k), true});
        p.entries.push_back({b + ".bias", Array({f}), true});
        const std::string bn = "bn" + std::to_string(i + 1);
        p.entries.push_back({bn + ".scale", Array::full({f}, 1.0), true});
        p.entries.push_back({bn + ".shift", Array({f}), true});
        p.entries.push_back({bn + ".running_mean", Array({f}), false});
        p.entries.push_back({bn + ".running_var", Array::full({f}, 1.0), false});
        in_ch = f;
    }
    std::size_t in_w = cfg.flatten_size();
    for (std::size_t j = 0; j < cfg.fc_widths.size(); ++j) {
        const std::size_t out_w = cfg.fc_widths[j];
        const std::string fc = "fc" + std::to_string(j + 1);
        p.entries.push_back({fc + ".weight", uniform_fan_in({in_w, out_w}, in_w), true});
        p.entries.push_back({fc + ".bias", Array({out_w}), true});
        in_w = out_w;
    }
    p.entries.push_back({"head.weight", uniform_fan_in({in_w, cfg.num_classes}, in_w), true});
    p.entries.push_back({"head.bias", Array({cfg.num_classes}), true});
    return p;
}

enum class Mode { train, eval };

/// Trainable parameter leaves registered on a tape, aligned with
/// Parameters::trainable_indices().
struct ModelVars {
    std::vector<Var> vars;
    std::map<std::string, std::size_t> by_name;

    Var at(const std::string& name) const {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw ContractViolation("ModelVars: no trainable entry '" + name + "'");
        }
        return vars[it->second];
    }
};

inline ModelVars register_model(Tape& t, const Parameters& p) {
    ModelVars mv;
    for (std::size_t i : p.trainable_indices()) {
        mv.by_name[p.entries[i].name] = mv.vars.size();
        mv.vars.push_back(t.leaf(p.entries[i].value));
    }
    return mv;
}

struct TapedForward {
    Var embedding;
    Var logits;
    Var probabilities;
    std::vector<Array> bn_batch_means;  // per block, train mode only
    std::vector<Array> bn_batch_vars;
};

/// Three conv->batchnorm->relu->maxpool blocks, two fc layers with dropout
/// after each hidden activation, then a softmax head. The embedding is the
/// last fc activation before dropout. Train mode uses batch statistics and
/// inverted dropout driven by dropout_rng; eval mode uses running statistics
/// and no dropout.
inline TapedForward model_forward(Tape& t, const ModelConfig& cfg, const Parameters& p,
                                  const ModelVars& mv, const Array& batch, Mode mode,
                                  Rng* dropout_rng = nullptr) {
    cfg.validate();
    if (batch.rank() != 3 || batch.dim(1) != cfg.channels || batch.dim(2) != cfg.window_len) {
        throw ContractViolation("model_forward: batch shape " + batch.shape_str() +
                                " does not match config (B, " + std::to_string(cfg.channels) +
                                ", " + std::to_string(cfg.window_len) + ")");
    }
    const std::size_t B = batch.dim(0);
    if (mode == Mode::train && B < 2) {
        throw ContractViolation("model_forward: train mode needs batch size >= 2 for batchnorm");
    }
    if (mode == Mode::train && cfg.dropout_rate > 0.0 && dropout_rng == nullptr) {
        throw ContractViolation("model_forward: train mode needs a dropout rng");
    }

    TapedForward out;
    Var x = t.constant(batch);
    for (std::size_t i = 0; i < cfg.num_blocks(); ++i) {
        const std::string ci = "conv" + std::to_string(i + 1);
        const std::string bi = "bn" + std::to_string(i + 1);
        x = t.conv1d(x, mv.at(ci + ".weight"), mv.at(ci + ".bias"));
        if (mode == Mode::train) {
            Array mean, var;
            x = t.batchnorm_train(x, mv.at(bi + ".scale"), mv.at(bi + ".shift"), cfg.bn_epsilon,
                                  &mean, &var);
            out.bn_batch_means.push_back(std::move(mean));
            out.bn_batch_vars.push_back(std::move(var));
        } else {
            x = t.batchnorm_eval(x, mv.at(bi + ".scale"), mv.at(bi + ".shift"),
                                 p.get(bi + ".running_mean"), p.get(bi + ".running_var"),
                                 cfg.bn_epsilon);
        }
        x = t.relu(x);
        x = t.maxpool1d(x, cfg.pool_sizes[i]);
    }
    x = t.reshape(x, {B, cfg.flatten_size()});

    auto dropout = [&](Var h, std::size_t width) {
        if (mode != Mode::train || cfg.dropout_rate <= 0.0) return h;
        Array mask({B, width});
        const double keep = 1.0 - cfg.dropout_rate;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            mask[i] = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
        }
        return t.mul(h, t.constant(mask));
    };

    for (std::size_t j = 0; j < cfg.fc_widths.size(); ++j) {
        const std::string fc = "fc" + std::to_string(j + 1);
        x = t.relu(t.add_bias(t.matmul(x, mv.at(fc + ".weight")), mv.at(fc + ".bias")));
        if (j + 1 == cfg.fc_widths.size()) out.embedding = x;  // pre-dropout activation
        x = dropout(x, cfg.fc_widths[j]);
    }
    out.logits = t.add_bias(t.matmul(x, mv.at("head.weight")), mv.at("head.bias"));
    out.probabilities = t.softmax_rows(out.logits);
    return out;
}

/// running <- (1 - momentum) * running + momentum * batch_stat, per block.
inline void update_running_stats(Parameters& p, const ModelConfig& cfg,
                                 const std::vector<Array>& batch_means,
                                 const std::vector<Array>& batch_vars) {
    for (std::size_t i = 0; i < batch_means.size(); ++i) {
        const std::string bi = "bn" + std::to_string(i + 1);
        Array& rm = p.get(bi + ".running_mean");
        Array& rv = p.get(bi + ".running_var");
        for (std::size_t c = 0; c < rm.size(); ++c) {
            rm[c] = (1.0 - cfg.bn_momentum) * rm[c] + cfg.bn_momentum * batch_means[i][c];
            rv[c] = (1.0 - cfg.bn_momentum) * rv[c] + cfg.bn_momentum * batch_vars[i][c];
        }
    }
}

struct ForwardOutput {
    Array embedding;
    Array logits;
    Array probabilities;
};

/// Pure eval-mode forward pass (running statistics, no dropout).
inline ForwardOutput forward_eval(const ModelConfig& cfg, const Parameters& p,
                                  const Array& batch) {
    Tape t;
    ModelVars mv = register_model(t, p);
    TapedForward f = model_forward(t, cfg, p, mv, batch, Mode::eval);
    return {t.value(f.embedding), t.value(f.logits), t.value(f.probabilities)};
}

// ---------------------------------------------------------------------------
// checkpoint file (versioned named-array container)

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"conv_filters", cfg.conv_filters},
                          {"kernel_sizes", cfg.kernel_sizes},
                          {"pool_sizes", cfg.pool_sizes},
                          {"fc_widths", cfg.fc_widths},
                          {"dropout_rate", cfg.dropout_rate},
                          {"bn_momentum", cfg.bn_momentum},
                          {"bn_epsilon", cfg.bn_epsilon},
                          {"num_classes", cfg.num_classes},
                          {"channels", cfg.channels},
                          {"window_len", cfg.window_len}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
        cfg.conv_filters = j.at("conv_filters").get<std::vector<std::size_t>>();
        cfg.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
        cfg.pool_sizes = j.at("pool_sizes").get<std::vector<std::size_t>>();
        cfg.fc_widths = j.at("fc_widths").get<std::vector<std::size_t>>();
        cfg.dropout_rate = j.at("dropout_rate").get<double>();
        cfg.bn_momentum = j.at("bn_momentum").get<double>();
        cfg.bn_epsilon = j.at("bn_epsilon").get<double>();
        cfg.num_classes = j.at("num_classes").get<std::size_t>();
        cfg.channels = j.at("channels").get<std::size_t>();
        cfg.window_len = j.at("window_len").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("model config: ") + e.what());
    }
    return cfg;
}

struct Checkpoint {
    ModelConfig config;
    Parameters params;
    std::uint64_t seed = 0;
};

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const Parameters& p, std::uint64_t seed) {
    nlohmann::json j;
    j["format"] = "udar-checkpoint";
    j["version"] = 1;
    j["seed"] = seed;
    j["config"] = model_config_to_json(cfg);
    nlohmann::json arrays = nlohmann::json::object();
    for (const auto& e : p.entries) {
        arrays[e.name] = {{"shape", e.value.shape()},
                          {"trainable", e.trainable},
                          {"data", e.value.values()}};
    }
    j["arrays"] = std::move(arrays);
    j["order"] = [&] {
        std::vector<std::string> names;
        for (const auto& e : p.entries) names.push_back(e.name);
        return names;
    }();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump() << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": not a checkpoint file (" + e.what() + ")");
    }
    if (j.value("format", "") != "udar-checkpoint") {
        throw FormatError(path + ": not a udar-checkpoint file");
    }
    if (j.value("version", 0) != 1) {
        throw FormatError(path + ": unsupported checkpoint version " +
                          std::to_string(j.value("version", 0)));
    }
    Checkpoint ckpt;
    try {
        ckpt.seed = j.at("seed").get<std::uint64_t>();
        ckpt.config = model_config_from_json(j.at("config"));
        for (const auto& name : j.at("order").get<std::vector<std::string>>()) {
            const auto& a = j.at("arrays").at(name);
            Parameters::Entry e;
            e.name = name;
            e.trainable = a.at("trainable").get<bool>();
            e.value = Array(a.at("shape").get<std::vector<std::size_t>>(),
                            a.at("data").get<std::vector<double>>());
            ckpt.params.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": malformed checkpoint (" + e.what() + ")");
    }
    return ckpt;
}

}  // namespace udar
