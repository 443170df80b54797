#pragma once
// Phase-field functionals on the unit cell (volume, Modica-Mortola perimeter,
// micro cost) and the manufacturability bridge masks.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <queue>
#include <string>
#include <vector>

#include "twoscale/errors.hpp"
#include "twoscale/grid_fem.hpp"
#include "twoscale/homogenize.hpp"

namespace twoscale {

enum class BridgeVariant { midfaces, corners, corners_and_midfaces, corners3d };

inline std::string to_string(BridgeVariant v) {
    switch (v) {
        case BridgeVariant::midfaces: return "midfaces";
        case BridgeVariant::corners: return "corners";
        case BridgeVariant::corners_and_midfaces: return "corners-and-midfaces";
        case BridgeVariant::corners3d: return "corners3d";
    }
    return "midfaces";
}

inline BridgeVariant bridge_variant_from_string(const std::string& s) {
    if (s == "midfaces") return BridgeVariant::midfaces;
    if (s == "corners") return BridgeVariant::corners;
    if (s == "corners-and-midfaces") return BridgeVariant::corners_and_midfaces;
    if (s == "corners3d") return BridgeVariant::corners3d;
    throw SpecError("unknown bridge variant '" + s + "'");
}

/// Fixed hard bridges are axis-aligned squares (cubes) of edge `width`
/// centred on cell corners and/or face midpoints; the rest of the cell
/// boundary outside the sigma-dilation of the bridges is soft.
struct BridgeSpec {
    BridgeVariant variant = BridgeVariant::midfaces;
    double width = 0.125;
    double sigma = 0.0;  // 0: use 2h of the grid
};

struct CostWeights {
    double c_V = 1.0;
    double c_P = 0.05;
    double c_P_hat = 0.05;
};

inline void check_weights(const CostWeights& w) {
    if (!(w.c_V >= 0.0)) throw DomainError("volume weight c_V must be nonnegative");
    if (!(w.c_P > 0.0)) throw DomainError("perimeter weight c_P must be positive");
    if (!(w.c_P_hat >= 0.0)) throw DomainError("macroscopic perimeter weight must be nonnegative");
}

/// Default interface width sigma = 2h.
inline double effective_sigma(const Grid& g, double sigma) { return sigma > 0.0 ? sigma : 2.0 * g.h; }

struct BridgeMasks {
    std::vector<char> hard;  // per node
    std::vector<char> soft;  // per node
};

namespace detail {
inline double periodic_gap(double a, double b) {
    double d = std::fabs(a - b);
    d -= std::floor(d);
    return std::min(d, 1.0 - d);
}

inline std::vector<std::array<double, 3>> bridge_centers(int dim, BridgeVariant v) {
    std::vector<std::array<double, 3>> out;
    const bool corners = v == BridgeVariant::corners || v == BridgeVariant::corners3d ||
                         v == BridgeVariant::corners_and_midfaces;
    const bool mids = v == BridgeVariant::midfaces || v == BridgeVariant::corners_and_midfaces;
    if (corners) out.push_back({0.0, 0.0, 0.0});
    if (mids)
        for (int k = 0; k < dim; ++k) {
            std::array<double, 3> c{0.5, 0.5, 0.5};
            c[k] = 0.0;
            out.push_back(c);
        }
    return out;
}

inline bool on_boundary(const Grid& g, int node) {
    auto i = g.node_multi(node);
    for (int k = 0; k < g.dim; ++k)
        if (i[k] == 0 || i[k] == g.cells[k]) return true;
    return false;
}
}  // namespace detail

inline BridgeMasks bridge_masks(const Grid& g, const BridgeSpec& spec) {
    const double sigma = effective_sigma(g, spec.sigma);
    if (!(spec.width > 0.0 && spec.width < 0.5)) throw DomainError("bridge width must lie in (0, 1/2)");
    if (sigma < g.h * (1.0 - 1e-12)) throw DomainError("interface width sigma must be at least the mesh size");
    if (spec.variant == BridgeVariant::corners3d && g.dim != 3)
        throw SpecError("variant corners3d requires a 3D grid");
    const auto centers = detail::bridge_centers(g.dim, spec.variant);
    const double half = 0.5 * spec.width + 1e-12;
    BridgeMasks m;
    m.hard.assign(g.node_count(), 0);
    m.soft.assign(g.node_count(), 0);
    std::vector<std::array<double, 3>> hard_pts;
    for (int node = 0; node < g.node_count(); ++node) {
        const auto y = g.node_coords(node);
        for (const auto& c : centers) {
            bool in = true;
            for (int k = 0; k < g.dim && in; ++k) in = detail::periodic_gap(y[k], c[k]) <= half;
            if (in) {
                m.hard[node] = 1;
                hard_pts.push_back(y);
                break;
            }
        }
    }
    for (int node = 0; node < g.node_count(); ++node) {
        if (m.hard[node] || !detail::on_boundary(g, node)) continue;
        const auto y = g.node_coords(node);
        double best = 1e300;
        for (const auto& p : hard_pts) {
            double d2 = 0.0;
            for (int k = 0; k < g.dim; ++k) {
                const double gk = detail::periodic_gap(y[k], p[k]);
                d2 += gk * gk;
            }
            best = std::min(best, d2);
        }
        if (std::sqrt(best) > sigma) m.soft[node] = 1;
    }
    for (int node = 0; node < g.node_count(); ++node)
        if (m.hard[node] && m.soft[node]) throw SpecError("hard and soft bridge masks overlap");
    return m;
}

/// Clip to [-1,1] and impose the bridge values.
inline void apply_masks(Eigen::VectorXd& v, const BridgeMasks& m) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) = std::clamp(v(i), -1.0, 1.0);
        if (m.hard[i]) v(i) = 1.0;
        if (m.soft[i]) v(i) = -1.0;
    }
}

inline double double_well(double v) {
    const double t = v * v - 1.0;
    return 9.0 / 16.0 * t * t;
}
inline double double_well_prime(double v) { return 9.0 / 4.0 * v * (v * v - 1.0); }

/// Simpson evaluation of the micro functionals and (optionally) their nodal
/// gradients. `volume` = int chi[v], `perimeter` = L^sigma[v].
struct MicroFunctionals {
    double volume = 0.0;
    double perimeter = 0.0;
    Eigen::VectorXd volume_grad;
    Eigen::VectorXd perimeter_grad;
};

inline MicroFunctionals micro_functionals(const Grid& g, const Eigen::VectorXd& v, double sigma, bool gradients) {
    if (v.size() != g.node_count()) throw StructureError("phase field does not match the grid");
    if (!(sigma > 0.0)) throw DomainError("interface width sigma must be positive");
    static thread_local std::vector<ReferenceElement> refs;
    if (refs.empty()) {
        refs.emplace_back(2);
        refs.emplace_back(3);
    }
    const ReferenceElement& ref = refs[g.dim - 2];
    const int nq = ref.quad_points(), nen = ref.nodes();
    MicroFunctionals out;
    if (gradients) {
        out.volume_grad.setZero(g.node_count());
        out.perimeter_grad.setZero(g.node_count());
    }
    Eigen::VectorXd ve(nen);
    int nodes[8];
    const double vol = g.cell_volume();
    for (int c = 0; c < g.cell_count(); ++c) {
        for (int a = 0; a < nen; ++a) {
            nodes[a] = g.cell_node(c, a);
            ve(a) = v(nodes[a]);
        }
        for (int q = 0; q < nq; ++q) {
            const double w = vol * ref.rule.weights[q];
            double vq = 0.0;
            Eigen::Vector3d grad = Eigen::Vector3d::Zero();
            for (int a = 0; a < nen; ++a) {
                vq += ref.values(q, a) * ve(a);
                for (int k = 0; k < g.dim; ++k) grad(k) += ref.gradients[q](a, k) / g.h * ve(a);
            }
            out.volume += w * chi(vq);
            out.perimeter += 0.5 * w * (sigma * grad.squaredNorm() + double_well(vq) / sigma);
            if (gradients) {
                const double dvol = w * chi_prime(vq);
                const double dwell = 0.5 * w * double_well_prime(vq) / sigma;
                for (int a = 0; a < nen; ++a) {
                    double gdot = 0.0;
                    for (int k = 0; k < g.dim; ++k) gdot += ref.gradients[q](a, k) / g.h * grad(k);
                    out.volume_grad(nodes[a]) += dvol * ref.values(q, a);
                    out.perimeter_grad(nodes[a]) += dwell * ref.values(q, a) + w * sigma * gdot;
                }
            }
        }
    }
    return out;
}

inline double volume_term(const Grid& g, const Eigen::VectorXd& v) {
    return micro_functionals(g, v, 1.0, false).volume;
}

inline double modica_mortola(const Grid& g, const Eigen::VectorXd& v, double sigma) {
    return micro_functionals(g, v, sigma, false).perimeter;
}

inline double j_micro(const Grid& g, const Eigen::VectorXd& v, const CostWeights& w, double sigma) {
    const auto f = micro_functionals(g, v, sigma, false);
    return w.c_V * f.volume + w.c_P * f.perimeter;
}

inline Eigen::VectorXd j_micro_grad(const Grid& g, const Eigen::VectorXd& v, const CostWeights& w, double sigma) {
    const auto f = micro_functionals(g, v, sigma, true);
    return w.c_V * f.volume_grad + w.c_P * f.perimeter_grad;
}

/// Hard phase {v > 0} on the (non-wrapped) node lattice of one cell is
/// connected iff all hard bridge components share one face-adjacency component.
inline bool connectivity_check(const Grid& g, const Eigen::VectorXd& v, const BridgeMasks& masks) {
    const int N = g.node_count();
    auto neighbours = [&](int node, auto&& fn) {
        auto i = g.node_multi(node);
        for (int k = 0; k < g.dim; ++k)
            for (int s : {-1, 1}) {
                auto j = i;
                j[k] += s;
                if (j[k] < 0 || j[k] > g.cells[k]) continue;
                fn(g.node_index(j));
            }
    };
    auto label = [&](auto&& member) {
        std::vector<int> comp(N, -1);
        int count = 0;
        for (int s = 0; s < N; ++s) {
            if (comp[s] >= 0 || !member(s)) continue;
            std::queue<int> q;
            q.push(s);
            comp[s] = count;
            while (!q.empty()) {
                const int u = q.front();
                q.pop();
                neighbours(u, [&](int w) {
                    if (comp[w] < 0 && member(w)) {
                        comp[w] = count;
                        q.push(w);
                    }
                });
            }
            ++count;
        }
        return comp;
    };
    const auto solid = label([&](int n) { return v(n) > 0.0 || masks.hard[n]; });
    int common = -1;
    for (int n = 0; n < N; ++n) {
        if (!masks.hard[n]) continue;
        if (common < 0) common = solid[n];
        else if (solid[n] != common) return false;
    }
    return true;
}

inline bool connectivity_check(const Grid& g, const Eigen::VectorXd& v, const BridgeSpec& spec) {
    return connectivity_check(g, v, bridge_masks(g, spec));
}

}  // namespace twoscale
