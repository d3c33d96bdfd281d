#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "udar/array.hpp"
#include "udar/errors.hpp"

namespace udar {

/// Handle to a value recorded on a Tape.
struct Var {
    std::uint32_t id = 0;
};

/// Reverse-mode differentiation tape. Operations append nodes in evaluation
/// order, so node ids are already a topological order and the backward pass
/// is a single reverse sweep. One tape records one loss evaluation.
class Tape {
public:
    Var leaf(Array value) {
        check_finite(value, "leaf");
        return push(std::move(value), nullptr);
    }

    /// Same as leaf; named for values that deliberately block gradient flow.
    Var constant(Array value) { return leaf(std::move(value)); }

    const Array& value(Var v) const { return nodes_[v.id].value; }

    std::size_t num_nodes() const { return nodes_.size(); }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        const Array& av = value(a);
        const Array& bv = value(b);
        check_same_shape(av, bv, "add");
        Array out = av;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
        return push(std::move(out), [a, b](const Array& up, Tape& t) {
            t.accum(a, up);
            t.accum(b, up);
        });
    }

    Var sub(Var a, Var b) {
        const Array& av = value(a);
        const Array& bv = value(b);
        check_same_shape(av, bv, "sub");
        Array out = av;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
        return push(std::move(out), [a, b](const Array& up, Tape& t) {
            t.accum(a, up);
            t.accum(b, up, -1.0);
        });
    }

    Var mul(Var a, Var b) {
        const Array& av = value(a);
        const Array& bv = value(b);
        check_same_shape(av, bv, "mul");
        Array out = av;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
        return push(std::move(out), [a, b](const Array& up, Tape& t) {
            const Array& avv = t.value(a);
            const Array& bvv = t.value(b);
            Array ga(avv.shape());
            Array gb(bvv.shape());
            for (std::size_t i = 0; i < up.size(); ++i) {
                ga[i] = up[i] * bvv[i];
                gb[i] = up[i] * avv[i];
            }
            t.accum(a, ga);
            t.accum(b, gb);
        });
    }

    Var add_scalar(Var a, double c) {
        Array out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
        return push(std::move(out), [a](const Array& up, Tape& t) { t.accum(a, up); });
    }

    Var mul_scalar(Var a, double c) {
        Array out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
        return push(std::move(out), [a, c](const Array& up, Tape& t) { t.accum(a, up, c); });
    }

    Var relu(Var a) {
        Array out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
        return push(std::move(out), [a](const Array& up, Tape& t) {
            const Array& av = t.value(a);
            Array g(av.shape());
            for (std::size_t i = 0; i < up.size(); ++i) g[i] = av[i] > 0.0 ? up[i] : 0.0;
            t.accum(a, g);
        });
    }

    Var exp(Var a) {
        Array out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
        if (!out.all_finite()) throw NumericDomainError("exp: overflow to non-finite value");
        Var r = push(std::move(out), nullptr);
        nodes_[r.id].backward = [a, r](const Array& up, Tape& t) {
            const Array& yv = t.value(r);
            Array g(yv.shape());
            for (std::size_t i = 0; i < up.size(); ++i) g[i] = up[i] * yv[i];
            t.accum(a, g);
        };
        return r;
    }

    Var log(Var a) {
        const Array& av = value(a);
        Array out(av.shape());
        for (std::size_t i = 0; i < av.size(); ++i) {
            if (!(av[i] > 0.0)) {
                throw NumericDomainError("log: input " + std::to_string(av[i]) +
                                         " outside domain (0, inf)");
            }
            out[i] = std::log(av[i]);
        }
        return push(std::move(out), [a](const Array& up, Tape& t) {
            const Array& avv = t.value(a);
            Array g(avv.shape());
            for (std::size_t i = 0; i < up.size(); ++i) g[i] = up[i] / avv[i];
            t.accum(a, g);
        });
    }

    /// log(max(x, floor)); zero subgradient on the clamped region.
    Var log_clamped(Var a, double floor = 1e-12) {
        const Array& av = value(a);
        Array out(av.shape());
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::log(std::max(av[i], floor));
        return push(std::move(out), [a, floor](const Array& up, Tape& t) {
            const Array& avv = t.value(a);
            Array g(avv.shape());
            for (std::size_t i = 0; i < up.size(); ++i) {
                g[i] = avv[i] > floor ? up[i] / avv[i] : 0.0;
            }
            t.accum(a, g);
        });
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        double s = 0.0;
        for (double v : value(a).values()) s += v;
        return push(Array::scalar(s), [a](const Array& up, Tape& t) {
            t.accum(a, Array::full(t.value(a).shape(), up[0]));
        });
    }

    Var mean_all(Var a) {
        const std::size_t n = value(a).size();
        double s = 0.0;
        for (double v : value(a).values()) s += v;
        return push(Array::scalar(s / static_cast<double>(n)), [a, n](const Array& up, Tape& t) {
            t.accum(a, Array::full(t.value(a).shape(), up[0] / static_cast<double>(n)));
        });
    }

    // ---- shape ----

    Var reshape(Var a, std::vector<std::size_t> shape) {
        const Array& av = value(a);
        if (Array::count(shape) != av.size()) {
            throw ContractViolation("reshape: cannot view " + av.shape_str() + " as " +
                                    Array(shape).shape_str());
        }
        Array out(shape, av.values());
        return push(std::move(out), [a](const Array& up, Tape& t) {
            t.accum(a, Array(t.value(a).shape(), up.values()));
        });
    }

    Var gather_rows(Var a, std::vector<std::size_t> rows) {
        const Array& av = value(a);
        if (av.rank() != 2) throw ContractViolation("gather_rows: want rank-2, got " + av.shape_str());
        const std::size_t d = av.dim(1);
        Array out({rows.size(), d});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] >= av.dim(0)) throw ContractViolation("gather_rows: row index out of range");
            for (std::size_t j = 0; j < d; ++j) out.at(i, j) = av.at(rows[i], j);
        }
        return push(std::move(out), [a, rows = std::move(rows), d](const Array& up, Tape& t) {
            Array g(t.value(a).shape());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                for (std::size_t j = 0; j < d; ++j) g.at(rows[i], j) += up.at(i, j);
            }
            t.accum(a, g);
        });
    }

    /// out[i] = p[i, labels[i]]
    Var select_per_row(Var p, std::vector<std::size_t> labels) {
        const Array& pv = value(p);
        if (pv.rank() != 2) throw ContractViolation("select_per_row: want rank-2, got " + pv.shape_str());
        if (labels.size() != pv.dim(0)) {
            throw ContractViolation("select_per_row: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(pv.dim(0)) + " rows");
        }
        Array out({labels.size()});
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= pv.dim(1)) throw ContractViolation("select_per_row: label out of range");
            out[i] = pv.at(i, labels[i]);
        }
        return push(std::move(out), [p, labels = std::move(labels)](const Array& up, Tape& t) {
            Array g(t.value(p).shape());
            for (std::size_t i = 0; i < labels.size(); ++i) g.at(i, labels[i]) += up[i];
            t.accum(p, g);
        });
    }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        const Array& av = value(a);
        const Array& bv = value(b);
        if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
            throw ContractViolation("matmul: incompatible shapes " + av.shape_str() + " x " +
                                    bv.shape_str());
        }
        const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
        Array out({n, m});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t l = 0; l < k; ++l) {
                const double x = av.at(i, l);
                if (x == 0.0) continue;
                for (std::size_t j = 0; j < m; ++j) out.at(i, j) += x * bv.at(l, j);
            }
        }
        return push(std::move(out), [a, b, n, k, m](const Array& up, Tape& t) {
            const Array& avv = t.value(a);
            const Array& bvv = t.value(b);
            Array ga({n, k});
            Array gb({k, m});
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    const double u = up.at(i, j);
                    if (u == 0.0) continue;
                    for (std::size_t l = 0; l < k; ++l) {
                        ga.at(i, l) += u * bvv.at(l, j);
                        gb.at(l, j) += u * avv.at(i, l);
                    }
                }
            }
            t.accum(a, ga);
            t.accum(b, gb);
        });
    }

    /// x: (B, m) plus row-broadcast bias b: (m)
    Var add_bias(Var x, Var bias) {
        const Array& xv = value(x);
        const Array& bv = value(bias);
        if (xv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
            throw ContractViolation("add_bias: incompatible shapes " + xv.shape_str() + " + " +
                                    bv.shape_str());
        }
        Array out = xv;
        for (std::size_t i = 0; i < xv.dim(0); ++i) {
            for (std::size_t j = 0; j < xv.dim(1); ++j) out.at(i, j) += bv[j];
        }
        return push(std::move(out), [x, bias](const Array& up, Tape& t) {
            Array gb(t.value(bias).shape());
            for (std::size_t i = 0; i < up.dim(0); ++i) {
                for (std::size_t j = 0; j < up.dim(1); ++j) gb[j] += up.at(i, j);
            }
            t.accum(x, up);
            t.accum(bias, gb);
        });
    }

    /// Row-wise softmax with log-sum-exp stabilization. x: (B, c)
    Var softmax_rows(Var x) {
        const Array& xv = value(x);
        if (xv.rank() != 2) throw ContractViolation("softmax_rows: want rank-2, got " + xv.shape_str());
        const std::size_t B = xv.dim(0), c = xv.dim(1);
        Array out({B, c});
        for (std::size_t i = 0; i < B; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xv.at(i, j));
            double denom = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                out.at(i, j) = std::exp(xv.at(i, j) - mx);
                denom += out.at(i, j);
            }
            for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= denom;
        }
        Var r = push(std::move(out), nullptr);
        nodes_[r.id].backward = [x, r, B, c](const Array& up, Tape& t) {
            const Array& yv = t.value(r);
            Array g({B, c});
            for (std::size_t i = 0; i < B; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += up.at(i, j) * yv.at(i, j);
                for (std::size_t j = 0; j < c; ++j) {
                    g.at(i, j) = yv.at(i, j) * (up.at(i, j) - dot);
                }
            }
            t.accum(x, g);
        };
        return r;
    }

    // ---- convolution stack ----

    /// Valid 1-D cross-correlation, stride 1. x: (B, C, W), w: (F, C, K), bias: (F)
    Var conv1d(Var x, Var w, Var bias) {
        const Array& xv = value(x);
        const Array& wv = value(w);
        const Array& bv = value(bias);
        if (xv.rank() != 3 || wv.rank() != 3 || xv.dim(1) != wv.dim(1) || xv.dim(2) < wv.dim(2)) {
            throw ContractViolation("conv1d: incompatible shapes " + xv.shape_str() + " * " +
                                    wv.shape_str());
        }
        if (bv.rank() != 1 || bv.dim(0) != wv.dim(0)) {
            throw ContractViolation("conv1d: bias shape " + bv.shape_str() + " for " +
                                    std::to_string(wv.dim(0)) + " filters");
        }
        const std::size_t B = xv.dim(0), C = xv.dim(1), W = xv.dim(2);
        const std::size_t F = wv.dim(0), K = wv.dim(2);
        const std::size_t L = W - K + 1;
        Array out({B, F, L});
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t f = 0; f < F; ++f) {
                double* o = out.row3(b, f);
                for (std::size_t t = 0; t < L; ++t) o[t] = bv[f];
                for (std::size_t c = 0; c < C; ++c) {
                    const double* xs = xv.row3(b, c);
                    const double* ws = wv.row3(f, c);
                    for (std::size_t k = 0; k < K; ++k) {
                        const double wk = ws[k];
                        for (std::size_t t = 0; t < L; ++t) o[t] += wk * xs[t + k];
                    }
                }
            }
        }
        return push(std::move(out), [x, w, bias, B, C, W, F, K, L](const Array& up, Tape& t) {
            const Array& xvv = t.value(x);
            const Array& wvv = t.value(w);
            Array gx({B, C, W});
            Array gw({F, C, K});
            Array gb({F});
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t f = 0; f < F; ++f) {
                    const double* u = up.row3(b, f);
                    for (std::size_t tt = 0; tt < L; ++tt) gb[f] += u[tt];
                    for (std::size_t c = 0; c < C; ++c) {
                        const double* xs = xvv.row3(b, c);
                        const double* ws = wvv.row3(f, c);
                        double* gxs = gx.row3(b, c);
                        double* gws = gw.row3(f, c);
                        for (std::size_t k = 0; k < K; ++k) {
                            const double wk = ws[k];
                            double acc = 0.0;
                            for (std::size_t tt = 0; tt < L; ++tt) {
                                gxs[tt + k] += u[tt] * wk;
                                acc += u[tt] * xs[tt + k];
                            }
                            gws[k] += acc;
                        }
                    }
                }
            }
            t.accum(x, gx);
            t.accum(w, gw);
            t.accum(bias, gb);
        });
    }

    /// Non-overlapping max pooling, window == stride == p. x: (B, C, L)
    Var maxpool1d(Var x, std::size_t p) {
        const Array& xv = value(x);
        if (xv.rank() != 3) throw ContractViolation("maxpool1d: want rank-3, got " + xv.shape_str());
        if (p == 0 || xv.dim(2) < p) {
            throw ContractViolation("maxpool1d: window " + std::to_string(p) + " on length " +
                                    std::to_string(xv.dim(2)));
        }
        const std::size_t B = xv.dim(0), C = xv.dim(1), L = xv.dim(2);
        const std::size_t Lo = L / p;
        Array out({B, C, Lo});
        std::vector<std::size_t> argmax(B * C * Lo);
        std::size_t oi = 0;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                const double* xs = xv.row3(b, c);
                for (std::size_t t = 0; t < Lo; ++t, ++oi) {
                    std::size_t best = t * p;
                    for (std::size_t k = 1; k < p; ++k) {
                        if (xs[t * p + k] > xs[best]) best = t * p + k;
                    }
                    out[oi] = xs[best];
                    argmax[oi] = (b * C + c) * L + best;
                }
            }
        }
        return push(std::move(out), [x, argmax = std::move(argmax)](const Array& up, Tape& t) {
            Array g(t.value(x).shape());
            for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += up[i];
            t.accum(x, g);
        });
    }

    /// Train-mode batch normalization over (B, L) per channel. x: (B, C, L).
    /// Batch statistics (biased variance) are written to *batch_mean /
    /// *batch_var when given so the caller can maintain running statistics.
    Var batchnorm_train(Var x, Var scale, Var shift, double eps, Array* batch_mean = nullptr,
                        Array* batch_var = nullptr) {
        const Array& xv = value(x);
        const Array& sv = value(scale);
        const Array& tv = value(shift);
        if (xv.rank() != 3) throw ContractViolation("batchnorm: want rank-3, got " + xv.shape_str());
        const std::size_t B = xv.dim(0), C = xv.dim(1), L = xv.dim(2);
        if (sv.rank() != 1 || sv.dim(0) != C || !tv.same_shape(sv)) {
            throw ContractViolation("batchnorm: scale/shift shape " + sv.shape_str() + " for " +
                                    std::to_string(C) + " channels");
        }
        const std::size_t N = B * L;
        Array mean({C}), var({C}), istd({C});
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t t = 0; t < L; ++t) s += xv.at(b, c, t);
            }
            mean[c] = s / static_cast<double>(N);
            double v = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t t = 0; t < L; ++t) {
                    const double d = xv.at(b, c, t) - mean[c];
                    v += d * d;
                }
            }
            var[c] = v / static_cast<double>(N);
            istd[c] = 1.0 / std::sqrt(var[c] + eps);
        }
        Array xhat({B, C, L});
        Array out({B, C, L});
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t t = 0; t < L; ++t) {
                    const double xh = (xv.at(b, c, t) - mean[c]) * istd[c];
                    xhat.at(b, c, t) = xh;
                    out.at(b, c, t) = sv[c] * xh + tv[c];
                }
            }
        }
        if (batch_mean) *batch_mean = mean;
        if (batch_var) *batch_var = var;
        return push(std::move(out),
                    [x, scale, shift, xhat = std::move(xhat), istd = std::move(istd), B, C, L,
                     N](const Array& up, Tape& t) {
                        const Array& sv2 = t.value(scale);
                        Array gx({B, C, L});
                        Array gs({C});
                        Array gt({C});
                        for (std::size_t c = 0; c < C; ++c) {
                            double sum_up = 0.0, sum_up_xhat = 0.0;
                            for (std::size_t b = 0; b < B; ++b) {
                                for (std::size_t tt = 0; tt < L; ++tt) {
                                    sum_up += up.at(b, c, tt);
                                    sum_up_xhat += up.at(b, c, tt) * xhat.at(b, c, tt);
                                }
                            }
                            gs[c] = sum_up_xhat;
                            gt[c] = sum_up;
                            const double mean_up = sum_up / static_cast<double>(N);
                            const double mean_up_xhat = sum_up_xhat / static_cast<double>(N);
                            const double k = sv2[c] * istd[c];
                            for (std::size_t b = 0; b < B; ++b) {
                                for (std::size_t tt = 0; tt < L; ++tt) {
                                    gx.at(b, c, tt) = k * (up.at(b, c, tt) - mean_up -
                                                           xhat.at(b, c, tt) * mean_up_xhat);
                                }
                            }
                        }
                        t.accum(x, gx);
                        t.accum(scale, gs);
                        t.accum(shift, gt);
                    });
    }

    /// Eval-mode batch normalization with frozen statistics (constants).
    Var batchnorm_eval(Var x, Var scale, Var shift, const Array& running_mean,
                       const Array& running_var, double eps) {
        const Array& xv = value(x);
        const Array& sv = value(scale);
        const Array& tv = value(shift);
        if (xv.rank() != 3) throw ContractViolation("batchnorm: want rank-3, got " + xv.shape_str());
        const std::size_t B = xv.dim(0), C = xv.dim(1), L = xv.dim(2);
        if (sv.rank() != 1 || sv.dim(0) != C || !tv.same_shape(sv) ||
            running_mean.size() != C || running_var.size() != C) {
            throw ContractViolation("batchnorm: statistics shape mismatch for " +
                                    std::to_string(C) + " channels");
        }
        Array istd({C});
        for (std::size_t c = 0; c < C; ++c) istd[c] = 1.0 / std::sqrt(running_var[c] + eps);
        Array xhat({B, C, L});
        Array out({B, C, L});
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t t = 0; t < L; ++t) {
                    const double xh = (xv.at(b, c, t) - running_mean[c]) * istd[c];
                    xhat.at(b, c, t) = xh;
                    out.at(b, c, t) = sv[c] * xh + tv[c];
                }
            }
        }
        return push(std::move(out), [x, scale, shift, xhat = std::move(xhat),
                                     istd = std::move(istd), B, C, L](const Array& up, Tape& t) {
            const Array& sv2 = t.value(scale);
            Array gx({B, C, L});
            Array gs({C});
            Array gt({C});
            for (std::size_t c = 0; c < C; ++c) {
                const double k = sv2[c] * istd[c];
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t tt = 0; tt < L; ++tt) {
                        gx.at(b, c, tt) = k * up.at(b, c, tt);
                        gs[c] += up.at(b, c, tt) * xhat.at(b, c, tt);
                        gt[c] += up.at(b, c, tt);
                    }
                }
            }
            t.accum(x, gx);
            t.accum(scale, gs);
            t.accum(shift, gt);
        });
    }

    /// D[i, j] = ||a_i - b_j||^2. a: (n, d), b: (m, d)
    Var pairwise_sq_dists(Var a, Var b) {
        const Array& av = value(a);
        const Array& bv = value(b);
        if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
            throw ContractViolation("pairwise_sq_dists: incompatible shapes " + av.shape_str() +
                                    " vs " + bv.shape_str());
        }
        const std::size_t n = av.dim(0), m = bv.dim(0), d = av.dim(1);
        Array out({n, m});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = av.at(i, k) - bv.at(j, k);
                    s += diff * diff;
                }
                out.at(i, j) = s;
            }
        }
        return push(std::move(out), [a, b, n, m, d](const Array& up, Tape& t) {
            const Array& avv = t.value(a);
            const Array& bvv = t.value(b);
            Array ga({n, d});
            Array gb({m, d});
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    const double u = up.at(i, j);
                    if (u == 0.0) continue;
                    for (std::size_t k = 0; k < d; ++k) {
                        const double diff = avv.at(i, k) - bvv.at(j, k);
                        ga.at(i, k) += 2.0 * u * diff;
                        gb.at(j, k) -= 2.0 * u * diff;
                    }
                }
            }
            t.accum(a, ga);
            t.accum(b, gb);
        });
    }

    // ---- differentiation ----

    /// d(loss)/d(param) for each registered parameter, shapes matching.
    std::vector<Array> gradients(Var loss, const std::vector<Var>& params) {
        const Array& lv = value(loss);
        if (!lv.is_scalar()) {
            throw ContractViolation("gradients: loss must be scalar, got shape " + lv.shape_str());
        }
        grads_.assign(nodes_.size(), Array());
        grad_set_.assign(nodes_.size(), 0);
        grads_[loss.id] = Array::scalar(1.0);
        grad_set_[loss.id] = 1;
        for (std::size_t id = loss.id + 1; id-- > 0;) {
            if (!grad_set_[id] || !nodes_[id].backward) continue;
            nodes_[id].backward(grads_[id], *this);
        }
        std::vector<Array> out;
        out.reserve(params.size());
        for (Var p : params) {
            if (grad_set_[p.id]) {
                out.push_back(grads_[p.id]);
            } else {
                out.push_back(Array(nodes_[p.id].value.shape()));
            }
        }
        grads_.clear();
        grad_set_.clear();
        return out;
    }

    /// Adds scale * g into the gradient slot of v.
    void accum(Var v, const Array& g, double scale = 1.0) {
        if (!grad_set_[v.id]) {
            grads_[v.id] = Array(nodes_[v.id].value.shape());
            grad_set_[v.id] = 1;
        }
        Array& slot = grads_[v.id];
        for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += scale * g[i];
    }

private:
    struct Node {
        Array value;
        std::function<void(const Array&, Tape&)> backward;
    };

    Var push(Array value, std::function<void(const Array&, Tape&)> backward) {
        nodes_.push_back(Node{std::move(value), std::move(backward)});
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    std::vector<Node> nodes_;
    std::vector<Array> grads_;
    std::vector<char> grad_set_;
};

}  // namespace udar
