#pragma once

// A hand-made chart for macroscopic tests: Psi spans nu in [-0.1, 0.25] and
// E in [0.5, 8], and the per-cell volume and perimeter are smooth closed-form
// functions of (nu, E). No cell solves are involved.

#include "twoscale/splinechart.hpp"

namespace synthetic {

inline std::vector<twoscale::Anchor> anchors(double e_scale = 1.0) {
    return {{{0, 0}, {-0.1, 0.5 * e_scale}},
            {{1, 0}, {0.25, 0.5 * e_scale}},
            {{0, 1}, {-0.1, 8.0 * e_scale}},
            {{1, 1}, {0.25, 8.0 * e_scale}}};
}

/// Volume rises with E; the perimeter peaks at intermediate volume.
inline std::array<double, 2> vol_per(double nu, double E, double e_scale = 1.0) {
    const double t = (E / e_scale - 0.5) / 7.5;
    const double th = 0.1 + 0.8 * t - 0.2 * t * (1 - t);
    const double s = (nu + 0.1) / 0.35;
    return {th, 20.0 * 4.0 * th * (1.0 - th) * (1.0 + s)};
}

inline twoscale::SplineChart chart(double c_P_hat = 0.0, double e_scale = 1.0, double cost_scale = 1.0) {
    return twoscale::make_chart(
        anchors(e_scale), 1.0 / 8.0,
        [&](double nu, double E) {
            const auto vp = vol_per(nu, E, e_scale);
            return std::array<double, 2>{cost_scale * vp[0], cost_scale * vp[1]};
        },
        1.0, c_P_hat);
}

}  // namespace synthetic
