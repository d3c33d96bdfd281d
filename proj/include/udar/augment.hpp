#pragma once

#include <array>
#include <cmath>
#include <string>

#include "udar/array.hpp"
#include "udar/errors.hpp"
#include "udar/rng.hpp"

namespace udar {

struct AugmentConfig {
    double jitter_sigma = 0.055;     // paper range 0.01 - 0.10
    double rotation_deg = 25.0;      // max angle; draws are uniform in [-r, +r]
    std::uint64_t seed = 0;

    void validate() const {
        if (jitter_sigma < 0.0) throw ContractViolation("AugmentConfig: jitter_sigma < 0");
        if (rotation_deg < 0.0 || rotation_deg > 180.0) {
            throw ContractViolation("AugmentConfig: rotation_deg outside [0, 180]");
        }
    }
};

using Vec3 = std::array<double, 3>;

/// Rodrigues rotation matrix for a unit axis and angle in radians.
inline std::array<double, 9> rotation_matrix(const Vec3& axis, double angle_rad) {
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    if (!(n > 0.0)) throw ContractViolation("rotation_matrix: zero axis");
    const double kx = axis[0] / n, ky = axis[1] / n, kz = axis[2] / n;
    const double c = std::cos(angle_rad), s = std::sin(angle_rad), v = 1.0 - c;
    return {c + kx * kx * v,      kx * ky * v - kz * s, kx * kz * v + ky * s,
            ky * kx * v + kz * s, c + ky * ky * v,      ky * kz * v - kx * s,
            kz * kx * v - ky * s, kz * ky * v + kx * s, c + kz * kz * v};
}

/// Applies one rotation matrix to every timestep of every consecutive
/// tri-axial channel group of a (C, W) window.
inline Array rotate_window(const Array& window, const Vec3& axis, double angle_rad) {
    if (window.rank() != 2) {
        throw ContractViolation("rotate_window: want rank-2 (C, W), got " + window.shape_str());
    }
    const std::size_t C = window.dim(0), W = window.dim(1);
    if (C % 3 != 0) {
        throw ContractViolation("rotate_window: channel count " + std::to_string(C) +
                                " is not a multiple of 3");
    }
    const auto R = rotation_matrix(axis, angle_rad);
    Array out = window;
    for (std::size_t g = 0; g < C; g += 3) {
        for (std::size_t t = 0; t < W; ++t) {
            const double x = window.at(g, t), y = window.at(g + 1, t), z = window.at(g + 2, t);
            out.at(g, t) = R[0] * x + R[1] * y + R[2] * z;
            out.at(g + 1, t) = R[3] * x + R[4] * y + R[5] * z;
            out.at(g + 2, t) = R[6] * x + R[7] * y + R[8] * z;
        }
    }
    return out;
}

/// Adds i.i.d. zero-mean Gaussian noise of standard deviation sigma.
inline Array jitter_window(const Array& window, double sigma, Rng& rng) {
    if (sigma < 0.0) throw ContractViolation("jitter_window: sigma < 0");
    Array out = window;
    if (sigma == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += rng.normal(0.0, sigma);
    return out;
}

/// Uniform direction on the unit sphere (three normals, normalized).
inline Vec3 random_unit_axis(Rng& rng) {
    while (true) {
        Vec3 v{rng.normal(), rng.normal(), rng.normal()};
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n > 1e-12) return {v[0] / n, v[1] / n, v[2] / n};
    }
}

/// Per-sample draw order: axis (3 normals), angle (1 uniform), then jitter
/// noise (C*W normals). Rotation is skipped entirely when rotation_deg == 0,
/// which also lifts the tri-axial channel requirement.
inline Array augment_window(const Array& window, const AugmentConfig& cfg, Rng& rng) {
    Array out = window;
    if (cfg.rotation_deg > 0.0) {
        const Vec3 axis = random_unit_axis(rng);
        const double angle =
            rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) * (3.14159265358979323846 / 180.0);
        out = rotate_window(out, axis, angle);
    }
    return jitter_window(out, cfg.jitter_sigma, rng);
}

/// Rotate-then-jitter over a (B, C, W) batch with independent per-sample draws.
inline Array augment_batch(const Array& batch, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    if (batch.rank() != 3) {
        throw ContractViolation("augment_batch: want rank-3 (B, C, W), got " + batch.shape_str());
    }
    const std::size_t B = batch.dim(0), C = batch.dim(1), W = batch.dim(2);
    Array out({B, C, W});
    for (std::size_t b = 0; b < B; ++b) {
        Array window({C, W});
        std::copy(batch.row3(b, 0), batch.row3(b, 0) + C * W, window.data());
        Array aug = augment_window(window, cfg, rng);
        std::copy(aug.data(), aug.data() + C * W, out.row3(b, 0));
    }
    return out;
}

}  // namespace udar
