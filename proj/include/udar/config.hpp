#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "udar/errors.hpp"
#include "udar/trainer.hpp"

namespace udar {

/// Defaults follow the paper's hyperparameter table: stated values where the
/// table pins one, range midpoints otherwise.
inline TrainConfig default_train_config() {
    TrainConfig cfg;
    cfg.model = ModelConfig{};            // filters 32/128/64, kernels 5, fc 8/4, dropout 0.3
    cfg.kernel.lambda = 0.30;
    cfg.kernel.min_class_count = 2;
    cfg.weights.beta0 = 1.0;
    cfg.weights.beta1 = 1.0;
    cfg.ensemble.alpha = 0.60;
    cfg.ensemble.confidence_threshold = 0.0;
    cfg.augment.jitter_sigma = 0.055;  // range 0.01 - 0.10
    cfg.augment.rotation_deg = 25.0;   // range 5 - 45 degrees
    cfg.optimizer.learning_rate = 0.001;
    cfg.optimizer.lr_min = 0.0003;
    cfg.optimizer.lr_schedule = "cosine";
    cfg.optimizer.batch_size = 64;
    cfg.optimizer.max_epochs = 128;
    cfg.ablation = AblationMode::full;
    cfg.patience = 20;
    cfg.seed = 1;
    return cfg;
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const std::string& section,
                                           const std::string& field) {
    if (!j.contains(field)) {
        throw SchemaError("config: missing field '" + section + "." + field + "'");
    }
    return j.at(field);
}

inline void reject_unknown(const nlohmann::json& j, const std::string& section,
                           const std::set<std::string>& known) {
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) {
            throw SchemaError("config: unknown field '" + section + "." + key + "'");
        }
    }
}

template <typename T>
T field_as(const nlohmann::json& j, const std::string& section, const std::string& field) {
    try {
        return require_field(j, section, field).get<T>();
    } catch (const SchemaError&) {
        throw;
    } catch (const nlohmann::json::exception&) {
        throw SchemaError("config: field '" + section + "." + field + "' has the wrong type");
    }
}

}  // namespace detail

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["model"] = {{"conv_filters", cfg.model.conv_filters},
                  {"kernel_sizes", cfg.model.kernel_sizes},
                  {"pool_sizes", cfg.model.pool_sizes},
                  {"fc_widths", cfg.model.fc_widths},
                  {"dropout_rate", cfg.model.dropout_rate},
                  {"bn_momentum", cfg.model.bn_momentum},
                  {"bn_epsilon", cfg.model.bn_epsilon}};
    j["kernel"] = {{"bandwidth", cfg.kernel.fixed_gamma
                                     ? nlohmann::json(*cfg.kernel.fixed_gamma)
                                     : nlohmann::json("median")},
                   {"lambda", cfg.kernel.lambda},
                   {"min_class_count", cfg.kernel.min_class_count}};
    j["weights"] = {{"beta0", cfg.weights.beta0},
                    {"beta1", cfg.weights.beta1},
                    {"beta0_ramp_epochs", cfg.weights.beta0_ramp_epochs}};
    j["ensemble"] = {{"alpha", cfg.ensemble.alpha},
                     {"confidence_threshold", cfg.ensemble.confidence_threshold}};
    j["augment"] = {{"jitter_sigma", cfg.augment.jitter_sigma},
                    {"rotation_deg", cfg.augment.rotation_deg}};
    j["optimizer"] = {{"learning_rate", cfg.optimizer.learning_rate},
                      {"lr_min", cfg.optimizer.lr_min},
                      {"lr_schedule", cfg.optimizer.lr_schedule},
                      {"adam_beta1", cfg.optimizer.adam_beta1},
                      {"adam_beta2", cfg.optimizer.adam_beta2},
                      {"adam_epsilon", cfg.optimizer.adam_epsilon},
                      {"batch_size", cfg.optimizer.batch_size},
                      {"max_epochs", cfg.optimizer.max_epochs}};
    j["train"] = {{"ablation", to_string(cfg.ablation)},
                  {"patience", cfg.patience},
                  {"seed", cfg.seed},
                  {"split_fractions",
                   std::vector<double>{cfg.split.train, cfg.split.val, cfg.split.test}}};
    return j;
}

/// Strict schema: every field of every section must be present and no unknown
/// fields are accepted. `udar train --emit-default-config` prints a complete
/// starting file.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    using detail::field_as;
    using detail::reject_unknown;
    reject_unknown(j, "", {"model", "kernel", "weights", "ensemble", "augment", "optimizer",
                           "train"});
    for (const char* section :
         {"model", "kernel", "weights", "ensemble", "augment", "optimizer", "train"}) {
        if (!j.contains(section)) {
            throw SchemaError("config: missing section '" + std::string(section) + "'");
        }
    }
    TrainConfig cfg;
    const auto& jm = j.at("model");
    reject_unknown(jm, "model",
                   {"conv_filters", "kernel_sizes", "pool_sizes", "fc_widths", "dropout_rate",
                    "bn_momentum", "bn_epsilon"});
    cfg.model.conv_filters = field_as<std::vector<std::size_t>>(jm, "model", "conv_filters");
    cfg.model.kernel_sizes = field_as<std::vector<std::size_t>>(jm, "model", "kernel_sizes");
    cfg.model.pool_sizes = field_as<std::vector<std::size_t>>(jm, "model", "pool_sizes");
    cfg.model.fc_widths = field_as<std::vector<std::size_t>>(jm, "model", "fc_widths");
    cfg.model.dropout_rate = field_as<double>(jm, "model", "dropout_rate");
    cfg.model.bn_momentum = field_as<double>(jm, "model", "bn_momentum");
    cfg.model.bn_epsilon = field_as<double>(jm, "model", "bn_epsilon");

    const auto& jk = j.at("kernel");
    reject_unknown(jk, "kernel", {"bandwidth", "lambda", "min_class_count"});
    const auto& bw = detail::require_field(jk, "kernel", "bandwidth");
    if (bw.is_string()) {
        if (bw.get<std::string>() != "median") {
            throw SchemaError("config: kernel.bandwidth must be \"median\" or a positive number");
        }
        cfg.kernel.fixed_gamma.reset();
    } else if (bw.is_number()) {
        cfg.kernel.fixed_gamma = bw.get<double>();
    } else {
        throw SchemaError("config: kernel.bandwidth must be \"median\" or a positive number");
    }
    cfg.kernel.lambda = field_as<double>(jk, "kernel", "lambda");
    cfg.kernel.min_class_count = field_as<std::size_t>(jk, "kernel", "min_class_count");

    const auto& jw = j.at("weights");
    reject_unknown(jw, "weights", {"beta0", "beta1", "beta0_ramp_epochs"});
    cfg.weights.beta0 = field_as<double>(jw, "weights", "beta0");
    cfg.weights.beta1 = field_as<double>(jw, "weights", "beta1");
    cfg.weights.beta0_ramp_epochs = field_as<std::size_t>(jw, "weights", "beta0_ramp_epochs");

    const auto& je = j.at("ensemble");
    reject_unknown(je, "ensemble", {"alpha", "confidence_threshold"});
    cfg.ensemble.alpha = field_as<double>(je, "ensemble", "alpha");
    cfg.ensemble.confidence_threshold = field_as<double>(je, "ensemble", "confidence_threshold");

    const auto& ja = j.at("augment");
    reject_unknown(ja, "augment", {"jitter_sigma", "rotation_deg"});
    cfg.augment.jitter_sigma = field_as<double>(ja, "augment", "jitter_sigma");
    cfg.augment.rotation_deg = field_as<double>(ja, "augment", "rotation_deg");

    const auto& jo = j.at("optimizer");
    reject_unknown(jo, "optimizer",
                   {"learning_rate", "lr_min", "lr_schedule", "adam_beta1", "adam_beta2",
                    "adam_epsilon", "batch_size", "max_epochs"});
    cfg.optimizer.learning_rate = field_as<double>(jo, "optimizer", "learning_rate");
    cfg.optimizer.lr_min = field_as<double>(jo, "optimizer", "lr_min");
    cfg.optimizer.lr_schedule = field_as<std::string>(jo, "optimizer", "lr_schedule");
    cfg.optimizer.adam_beta1 = field_as<double>(jo, "optimizer", "adam_beta1");
    cfg.optimizer.adam_beta2 = field_as<double>(jo, "optimizer", "adam_beta2");
    cfg.optimizer.adam_epsilon = field_as<double>(jo, "optimizer", "adam_epsilon");
    cfg.optimizer.batch_size = field_as<std::size_t>(jo, "optimizer", "batch_size");
    cfg.optimizer.max_epochs = field_as<std::size_t>(jo, "optimizer", "max_epochs");

    const auto& jt = j.at("train");
    reject_unknown(jt, "train", {"ablation", "patience", "seed", "split_fractions"});
    cfg.ablation = ablation_from_string(field_as<std::string>(jt, "train", "ablation"));
    cfg.patience = field_as<std::size_t>(jt, "train", "patience");
    cfg.seed = field_as<std::uint64_t>(jt, "train", "seed");
    const auto fracs = field_as<std::vector<double>>(jt, "train", "split_fractions");
    if (fracs.size() != 3) {
        throw SchemaError("config: train.split_fractions must have 3 entries");
    }
    cfg.split.train = fracs[0];
    cfg.split.val = fracs[1];
    cfg.split.test = fracs[2];
    return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path + ": invalid JSON (" + std::string(e.what()) + ")");
    }
    return train_config_from_json(j);
}

inline void save_train_config(const std::string& path, const TrainConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << train_config_to_json(cfg).dump(2) << "\n";
}

}  // namespace udar
