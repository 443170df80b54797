#pragma once
// Microcell optimization: minimize J_micro over periodic phase fields subject
// to C*[v] = target and the bridge box constraints.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "twoscale/errors.hpp"
#include "twoscale/homogenize.hpp"
#include "twoscale/nlp.hpp"
#include "twoscale/phasefield.hpp"

namespace twoscale {

enum class CellStatus { converged, infeasible, disconnected };

inline std::string to_string(CellStatus s) {
    switch (s) {
        case CellStatus::converged: return "converged";
        case CellStatus::infeasible: return "infeasible";
        case CellStatus::disconnected: return "disconnected";
    }
    return "infeasible";
}

inline CellStatus cell_status_from_string(const std::string& s) {
    if (s == "converged") return CellStatus::converged;
    if (s == "infeasible") return CellStatus::infeasible;
    if (s == "disconnected") return CellStatus::disconnected;
    throw FormatError("unknown sample status '" + s + "'");
}

struct CellProblem {
    Grid grid;
    MicroMaterial mat;
    ElasticityTensor target;
    CostWeights weights;
    BridgeSpec spec;
    double sigma = 0.0;  // 0: 2h
    NlpSettings nlp;
    std::uint64_t seed = 0;
    std::optional<double> fixed_theta;  // adds int chi[v] = theta as one more constraint
};

struct CellResult {
    PhaseField v_star;
    ElasticityTensor C_star;
    double volume = 0.0;
    double perimeter_mm = 0.0;
    double cost_j = 0.0;  // c_V volume + c_P_hat L^sigma
    CellStatus status = CellStatus::infeasible;
    double kkt_residual = 0.0;
    double constraint_residual = 0.0;
    int iterations = 0;
    std::vector<NlpOuterLog> history;
};

namespace detail {
inline std::vector<int> master_masks(const DofMap& map, const BridgeMasks& m, int& hard_count) {
    // -1 soft, +1 hard, 0 free per master
    std::vector<int> out(map.master_count, 0);
    hard_count = 0;
    for (size_t n = 0; n < map.node_to_master.size(); ++n) {
        if (m.hard[n]) out[map.node_to_master[n]] = 1;
        if (m.soft[n]) out[map.node_to_master[n]] = -1;
    }
    for (int s : out) hard_count += s == 1;
    return out;
}
}  // namespace detail

/// Uniform random nodal values in [-0.3, 0.3] (periodic), masks applied.
inline PhaseField random_init(const Grid& g, const BridgeSpec& spec, std::uint64_t seed) {
    const DofMap map = periodic_dof_map(g);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-0.3, 0.3);
    Eigen::VectorXd m(map.master_count);
    for (int i = 0; i < map.master_count; ++i) m(i) = U(rng);
    PhaseField v{g, expand(map, m)};
    apply_masks(v.values, bridge_masks(g, spec));
    return v;
}

inline CellResult evaluate_cell(const CellProblem& p, const Eigen::VectorXd& v) {
    CellResult r;
    const double sigma = effective_sigma(p.grid, p.sigma);
    r.v_star = {p.grid, v};
    r.C_star = homogenize(p.grid, v, p.mat);
    const auto f = micro_functionals(p.grid, v, sigma, false);
    r.volume = f.volume;
    r.perimeter_mm = f.perimeter;
    r.cost_j = p.weights.c_V * f.volume + p.weights.c_P_hat * f.perimeter;
    r.constraint_residual = constraint_residuals(r.C_star, p.target).lpNorm<Eigen::Infinity>();
    return r;
}

inline CellResult solve_cell(const CellProblem& p, const PhaseField& init) {
    if (p.target.dim != p.grid.dim) throw StructureError("target tensor dimension differs from the grid");
    if (init.values.size() != p.grid.node_count()) throw StructureError("initial field does not match the grid");
    check_weights(p.weights);
    const double sigma = effective_sigma(p.grid, p.sigma);
    const BridgeMasks masks = bridge_masks(p.grid, BridgeSpec{p.spec.variant, p.spec.width, sigma});
    Homogenizer hom(p.grid, p.mat);
    const DofMap& map = hom.dof_map();
    int hard_count = 0;
    const auto mm = detail::master_masks(map, masks, hard_count);

    const int nm = map.master_count;
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(nm, -1.0), hi = Eigen::VectorXd::Constant(nm, 1.0);
    for (int i = 0; i < nm; ++i)
        if (mm[i] != 0) lo(i) = hi(i) = mm[i];

    // periodic fields are represented by their master values; average
    // duplicated nodes in case the initial field is not exactly periodic
    Eigen::VectorXd x0 = accumulate(map, init.values);
    {
        Eigen::VectorXd mult = accumulate(map, Eigen::VectorXd::Ones(p.grid.node_count()));
        x0 = x0.cwiseQuotient(mult);
    }

    const int nc = voigt_upper_count(p.grid.dim) + (p.fixed_theta ? 1 : 0);
    const Eigen::VectorXd target_up = p.target.upper();
    NlpEvaluator eval = [&](const Eigen::VectorXd& x) {
        const Eigen::VectorXd v = expand(map, x);
        const auto cs = hom.solve_correctors(v);
        Eigen::MatrixXd G;
        const ElasticityTensor Cs = hom.effective_tensor(v, cs);
        G = hom.effective_tensor_gradient(v, cs);
        const auto f = micro_functionals(p.grid, v, sigma, true);
        NlpEvaluation ev;
        ev.f = p.weights.c_V * f.volume + p.weights.c_P * f.perimeter;
        ev.grad = accumulate(map, p.weights.c_V * f.volume_grad + p.weights.c_P * f.perimeter_grad);
        ev.c.resize(nc);
        ev.jac.resize(nc, nm);
        const int m6 = voigt_upper_count(p.grid.dim);
        ev.c.head(m6) = Cs.upper() - target_up;
        for (int k = 0; k < m6; ++k) ev.jac.row(k) = accumulate(map, G.col(k)).transpose();
        if (p.fixed_theta) {
            ev.c(m6) = f.volume - *p.fixed_theta;
            ev.jac.row(m6) = accumulate(map, f.volume_grad).transpose();
        }
        return ev;
    };

    // KKT measured on the gradient density (nodal gradient / h^d) so the
    // tolerance does not depend on the mesh
    NlpSettings s = p.nlp;
    s.stationarity_scale = 1.0 / p.grid.cell_volume();
    const NlpResult nr = minimize_augmented_lagrangian(eval, x0, lo, hi, s);

    CellResult r = evaluate_cell(p, expand(map, nr.x));
    r.kkt_residual = nr.kkt;
    r.iterations = nr.iterations;
    r.history = nr.history;
    const bool feasible = r.constraint_residual <= s.constraint_tol &&
                          (!p.fixed_theta || std::fabs(r.volume - *p.fixed_theta) <= s.constraint_tol);
    if (!nr.converged || !feasible) r.status = CellStatus::infeasible;
    else if (!connectivity_check(p.grid, r.v_star.values, masks)) r.status = CellStatus::disconnected;
    else r.status = CellStatus::converged;
    return r;
}

/// Weighted nodal average of neighbouring fields, clipped and re-masked.
inline PhaseField reinit_from_neighbors(const std::vector<std::pair<PhaseField, double>>& neighbors,
                                        const BridgeMasks& masks) {
    if (neighbors.empty()) throw DomainError("reinitialization needs at least one neighbour");
    const Grid& g = neighbors.front().first.grid;
    double wsum = 0.0;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(g.node_count());
    for (const auto& [f, w] : neighbors) {
        if (f.values.size() != g.node_count()) throw StructureError("neighbour fields live on different grids");
        if (!(w >= 0.0)) throw DomainError("neighbour weights must be nonnegative");
        acc += w * f.values;
        wsum += w;
    }
    if (!(std::fabs(wsum - 1.0) <= 1e-9)) throw DomainError("neighbour weights must sum to one");
    PhaseField out{g, acc};
    apply_masks(out.values, masks);
    return out;
}

inline PhaseField reinit_from_neighbors(const std::vector<std::pair<PhaseField, double>>& neighbors,
                                        const BridgeSpec& spec) {
    if (neighbors.empty()) throw DomainError("reinitialization needs at least one neighbour");
    return reinit_from_neighbors(neighbors, bridge_masks(neighbors.front().first.grid, spec));
}

}  // namespace twoscale
