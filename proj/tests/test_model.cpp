#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "fd_oracle.hpp"
#include "udar/losses.hpp"
#include "udar/model.hpp"
#include "udar/rng.hpp"

using udar::Array;
using udar::Mode;
using udar::ModelConfig;
using udar::Parameters;
using udar::Rng;
using udar::Tape;

namespace {

ModelConfig tiny_config(std::size_t c = 3, std::size_t channels = 3, std::size_t W = 40) {
    ModelConfig cfg;
    cfg.conv_filters = {2, 3, 2};
    cfg.kernel_sizes = {5, 5, 5};
    cfg.pool_sizes = {2, 2, 2};
    cfg.fc_widths = {8, 4};
    cfg.num_classes = c;
    cfg.channels = channels;
    cfg.window_len = W;
    return cfg;
}

Array random_batch(std::size_t B, const ModelConfig& cfg, Rng& rng) {
    Array x({B, cfg.channels, cfg.window_len});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    return x;
}

}  // namespace

TEST_CASE("initialization is deterministic and structured", "[model]") {
    const auto cfg = tiny_config(5);
    const Parameters a = udar::init_model(cfg, 7);
    const Parameters b = udar::init_model(cfg, 7);
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        REQUIRE(a.entries[i].name == b.entries[i].name);
        for (std::size_t k = 0; k < a.entries[i].value.size(); ++k) {
            REQUIRE(a.entries[i].value[k] == b.entries[i].value[k]);
        }
    }

    SECTION("batchnorm scales start at one, shifts at zero") {
        for (const auto& e : a.entries) {
            if (e.name.find(".scale") != std::string::npos) {
                for (std::size_t k = 0; k < e.value.size(); ++k) CHECK(e.value[k] == 1.0);
            }
            if (e.name.find(".shift") != std::string::npos) {
                for (std::size_t k = 0; k < e.value.size(); ++k) CHECK(e.value[k] == 0.0);
            }
        }
    }

    SECTION("head weight shape follows the class count") {
        const Array& head = a.get("head.weight");
        CHECK(head.shape() == std::vector<std::size_t>{4, 5});
    }

    SECTION("different seeds change the weights") {
        const Parameters c = udar::init_model(cfg, 8);
        bool any = false;
        for (std::size_t k = 0; k < a.get("conv1.weight").size(); ++k) {
            any |= a.get("conv1.weight")[k] != c.get("conv1.weight")[k];
        }
        CHECK(any);
    }
}

TEST_CASE("window length shorter than the conv stack is rejected with the minimum", "[model]") {
    auto cfg = tiny_config();
    cfg.window_len = 25;  // three valid k=5 convs with pool 2 need at least 36
    try {
        udar::init_model(cfg, 1);
        FAIL("expected ContractViolation");
    } catch (const udar::ContractViolation& e) {
        const std::string msg = e.what();
        CHECK(msg.find("36") != std::string::npos);
    }
    CHECK(tiny_config().min_window_len() == 36);
}

TEST_CASE("forward output shapes and probability rows", "[model]") {
    const auto cfg = tiny_config(4, 6, 40);
    const Parameters p = udar::init_model(cfg, 3);
    Rng rng(1);
    const Array batch = random_batch(5, cfg, rng);
    const auto out = udar::forward_eval(cfg, p, batch);
    CHECK(out.logits.shape() == std::vector<std::size_t>{5, 4});
    CHECK(out.embedding.shape() == std::vector<std::size_t>{5, 4});
    CHECK(out.probabilities.shape() == std::vector<std::size_t>{5, 4});
    for (std::size_t i = 0; i < 5; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) s += out.probabilities.at(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-9);
    }
}

TEST_CASE("eval mode is deterministic and per-sample", "[model]") {
    const auto cfg = tiny_config();
    const Parameters p = udar::init_model(cfg, 11);
    Rng rng(2);
    const Array batch = random_batch(6, cfg, rng);

    const auto a = udar::forward_eval(cfg, p, batch);
    const auto b = udar::forward_eval(cfg, p, batch);
    for (std::size_t i = 0; i < a.logits.size(); ++i) REQUIRE(a.logits[i] == b.logits[i]);

    SECTION("permuting the batch permutes outputs identically") {
        const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
        Array permuted({6, cfg.channels, cfg.window_len});
        for (std::size_t i = 0; i < 6; ++i) {
            std::copy(batch.row3(perm[i], 0), batch.row3(perm[i], 0) + cfg.channels * cfg.window_len,
                      permuted.row3(i, 0));
        }
        const auto c = udar::forward_eval(cfg, p, permuted);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < cfg.num_classes; ++j) {
                REQUIRE(c.logits.at(i, j) == Catch::Approx(a.logits.at(perm[i], j)).margin(1e-12));
            }
        }
    }
}

TEST_CASE("train mode contracts", "[model]") {
    const auto cfg = tiny_config();
    const Parameters p = udar::init_model(cfg, 5);
    Rng rng(3);
    Rng dropout(4);

    SECTION("single-sample batch rejected") {
        Tape t;
        auto mv = udar::register_model(t, p);
        const Array one = random_batch(1, cfg, rng);
        CHECK_THROWS_AS(udar::model_forward(t, cfg, p, mv, one, Mode::train, &dropout),
                        udar::ContractViolation);
    }
    SECTION("missing dropout rng rejected") {
        Tape t;
        auto mv = udar::register_model(t, p);
        const Array batch = random_batch(4, cfg, rng);
        CHECK_THROWS_AS(udar::model_forward(t, cfg, p, mv, batch, Mode::train, nullptr),
                        udar::ContractViolation);
    }
    SECTION("shape mismatch rejected") {
        Tape t;
        auto mv = udar::register_model(t, p);
        Array bad({4, cfg.channels, cfg.window_len + 1});
        CHECK_THROWS_AS(udar::model_forward(t, cfg, p, mv, bad, Mode::eval), udar::ContractViolation);
    }
}

TEST_CASE("cross-entropy gradient through the full network matches finite differences",
          "[model]") {
    const auto cfg = tiny_config();
    Parameters p = udar::init_model(cfg, 21);
    Rng rng(6);
    // jitter every trainable entry so no unit sits exactly on a relu kink
    // (zero-initialized biases plus relu/maxpool zeros are kink points where
    // central differences are meaningless)
    for (auto i : p.trainable_indices()) {
        for (std::size_t k = 0; k < p.entries[i].value.size(); ++k) {
            p.entries[i].value[k] += rng.uniform(-0.05, 0.05);
        }
    }
    const Array batch = random_batch(4, cfg, rng);
    const std::vector<int> labels = {0, 1, 2, 1};

    // frozen dropout stream per evaluation keeps the loss a fixed function
    auto loss_with = [&](const Parameters& params) {
        Tape t;
        auto mv = udar::register_model(t, params);
        Rng dropout(123);
        auto fwd = udar::model_forward(t, cfg, params, mv, batch, Mode::train, &dropout);
        return t.value(udar::ce_loss(t, fwd.probabilities, labels)).scalar_value();
    };

    Tape t;
    auto mv = udar::register_model(t, p);
    Rng dropout(123);
    auto fwd = udar::model_forward(t, cfg, p, mv, batch, Mode::train, &dropout);
    auto loss = udar::ce_loss(t, fwd.probabilities, labels);
    const auto analytic = t.gradients(loss, mv.vars);

    // finite differences over every trainable entry
    const auto tidx = p.trainable_indices();
    std::vector<Array> values;
    for (auto i : tidx) values.push_back(p.entries[i].value);
    auto f = [&](const std::vector<Array>& vals) {
        Parameters q = p;
        const auto idx = q.trainable_indices();
        for (std::size_t k = 0; k < idx.size(); ++k) q.entries[idx[k]].value = vals[k];
        return loss_with(q);
    };
    const auto numeric = fd::gradients(f, values);
    CHECK(fd::max_rel_err_per_array(analytic, numeric) <= 1e-4);
}

TEST_CASE("inverted dropout is unbiased through the final linear head", "[model]") {
    const auto cfg = tiny_config();
    const Parameters p = udar::init_model(cfg, 31);
    Rng rng(7);
    const Array batch = random_batch(3, cfg, rng);
    const auto eval_out = udar::forward_eval(cfg, p, batch);

    const Array& w = p.get("head.weight");  // (4, c)
    const Array& b = p.get("head.bias");
    const std::size_t B = 3, D = 4, C = cfg.num_classes;
    const double keep = 1.0 - cfg.dropout_rate;

    Rng mask_rng(99);
    const int N = 2000;
    std::vector<double> sum(B * C, 0.0), sumsq(B * C, 0.0);
    for (int n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < B; ++i) {
            double dropped[4];
            for (std::size_t d = 0; d < D; ++d) {
                const bool keep_unit = mask_rng.uniform() < keep;
                dropped[d] = keep_unit ? eval_out.embedding.at(i, d) / keep : 0.0;
            }
            for (std::size_t c = 0; c < C; ++c) {
                double logit = b[c];
                for (std::size_t d = 0; d < D; ++d) logit += dropped[d] * w.at(d, c);
                sum[i * C + c] += logit;
                sumsq[i * C + c] += logit * logit;
            }
        }
    }
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t c = 0; c < C; ++c) {
            const double mean = sum[i * C + c] / N;
            const double var = sumsq[i * C + c] / N - mean * mean;
            const double sigma_mean = std::sqrt(std::max(var, 0.0) / N);
            const double expected = eval_out.logits.at(i, c);
            REQUIRE(std::abs(mean - expected) <= 3.0 * sigma_mean + 1e-9);
        }
    }
}

TEST_CASE("running statistics move toward batch statistics", "[model]") {
    const auto cfg = tiny_config();
    Parameters p = udar::init_model(cfg, 13);
    Rng rng(8);
    Rng dropout(9);
    const Array batch = random_batch(8, cfg, rng);
    // repeat the same batch; running stats converge to its batch stats
    Array last_mean, last_var;
    for (int it = 0; it < 200; ++it) {
        Tape t;
        auto mv = udar::register_model(t, p);
        auto fwd = udar::model_forward(t, cfg, p, mv, batch, Mode::train, &dropout);
        udar::update_running_stats(p, cfg, fwd.bn_batch_means, fwd.bn_batch_vars);
        last_mean = fwd.bn_batch_means[0];
        last_var = fwd.bn_batch_vars[0];
    }
    const Array& rm = p.get("bn1.running_mean");
    const Array& rv = p.get("bn1.running_var");
    for (std::size_t c = 0; c < rm.size(); ++c) {
        CHECK(rm[c] == Catch::Approx(last_mean[c]).margin(1e-6));
        CHECK(rv[c] == Catch::Approx(last_var[c]).margin(1e-6));
    }
}

TEST_CASE("checkpoint round trip and format errors", "[model]") {
    const auto cfg = tiny_config();
    const Parameters p = udar::init_model(cfg, 17);
    const std::string path = "/tmp/udar_model_ckpt.json";
    udar::save_checkpoint(path, cfg, p, 17);
    const auto ckpt = udar::load_checkpoint(path);
    CHECK(ckpt.seed == 17);
    CHECK(ckpt.config.num_classes == cfg.num_classes);
    REQUIRE(ckpt.params.entries.size() == p.entries.size());
    for (std::size_t i = 0; i < p.entries.size(); ++i) {
        REQUIRE(ckpt.params.entries[i].name == p.entries[i].name);
        REQUIRE(ckpt.params.entries[i].trainable == p.entries[i].trainable);
        for (std::size_t k = 0; k < p.entries[i].value.size(); ++k) {
            REQUIRE(ckpt.params.entries[i].value[k] == p.entries[i].value[k]);
        }
    }

    SECTION("eval forward identical through a checkpoint round trip") {
        Rng rng(10);
        const Array batch = random_batch(4, cfg, rng);
        const auto a = udar::forward_eval(cfg, p, batch);
        const auto b = udar::forward_eval(ckpt.config, ckpt.params, batch);
        for (std::size_t i = 0; i < a.logits.size(); ++i) REQUIRE(a.logits[i] == b.logits[i]);
    }

    SECTION("corrupted file raises a format error") {
        const std::string bad = "/tmp/udar_model_ckpt_bad.json";
        std::ofstream out(bad);
        out << "{\"format\": \"something-else\"}";
        out.close();
        CHECK_THROWS_AS(udar::load_checkpoint(bad), udar::FormatError);

        std::ofstream trash(bad);
        trash << "not json at all";
        trash.close();
        CHECK_THROWS_AS(udar::load_checkpoint(bad), udar::FormatError);
    }
}
