#pragma once
// Macroscopic elasticity on a union of boxes cells, compliance / tracking
// functionals with adjoint gradients, and the restricted free material
// optimization over per-cell chart parameters q in [0,1]^2.

#include <Eigen/Dense>
#include <Eigen/SparseLU>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/grid_fem.hpp"
#include "twoscale/nlp.hpp"
#include "twoscale/splinechart.hpp"
#include "twoscale/tensorlab.hpp"

namespace twoscale {

struct DirichletBC {
    int axis = 0;
    int side = 0;                 // 0: min face, 1: max face of the bounding box
    std::vector<int> components;  // constrained displacement components
    std::vector<double> values;   // same length as components (default 0)
};

/// Region in physical coordinates; unbounded by default.
struct Region {
    std::array<double, 3> lo{-1e300, -1e300, -1e300};
    std::array<double, 3> hi{1e300, 1e300, 1e300};
};

struct NeumannBC {
    int axis = 0;
    int side = 1;
    Eigen::Vector3d traction = Eigen::Vector3d::Zero();
    Region region;  // restricts the loaded part of the face
};

struct BodyForce {
    Region region;
    Eigen::Vector3d force = Eigen::Vector3d::Zero();
};

enum class MacroFunctionalKind { compliance, tracking };
enum class Gauge { mean_u2, mean_u3, mean_curl1 };

struct TrackingCell {
    int cell = 0;  // box cell index
    Eigen::Vector3d U0 = Eigen::Vector3d::Zero();
};

struct MacroProblem {
    int dim = 2;
    double H = 0.125;
    std::array<int, 3> box{16, 8, 1};
    std::vector<char> active;  // per box cell; empty = all cells
    std::vector<DirichletBC> dirichlet;
    std::vector<NeumannBC> neumann;
    std::vector<BodyForce> body_force;
    MacroFunctionalKind functional = MacroFunctionalKind::compliance;
    std::vector<TrackingCell> tracking;
    std::vector<Gauge> gauges;
    std::optional<double> vol_h;
    std::optional<double> c_p_hat;

    Grid grid() const { return Grid::box(dim, box, H); }
    bool is_active(int cell) const { return active.empty() || active[cell]; }
    std::vector<int> active_cells() const {
        std::vector<int> out;
        const int n = grid().cell_count();
        for (int c = 0; c < n; ++c)
            if (is_active(c)) out.push_back(c);
        return out;
    }
};

/// One parameter pair per active cell, in active_cells() order.
struct MacroDesign {
    std::vector<std::array<double, 2>> q;
};

class MacroSystem;

struct MacroState {
    Eigen::VectorXd U;  // node-major full displacement vector
    double compliance = 0.0;
    double tracking = 0.0;
    double residual = 0.0;
    Eigen::VectorXd multipliers;  // gauge multipliers
    std::vector<ElasticityTensor> C;  // per active cell
    std::shared_ptr<const MacroSystem> system;
};

/// Parameters (nu, E) and tensor for chart value Psi(q).
inline ElasticityTensor macro_tensor(const SplineChart& chart, std::array<double, 2> q, int dim) {
    const Eigen::Vector2d p = eval_psi(chart.psi, q);
    return tensor_from_iso(iso_from_nu_e(p(0), p(1), dim));
}

namespace detail {
inline bool in_region(const Region& r, const std::array<double, 3>& x, int dim) {
    for (int k = 0; k < dim; ++k)
        if (x[k] < r.lo[k] - 1e-12 || x[k] > r.hi[k] + 1e-12) return false;
    return true;
}
inline double overlap_1d(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}
}  // namespace detail

/// Assembled and factorized macroscopic saddle-point system for one material
/// distribution. Fixed dofs (Dirichlet and nodes outside D) are eliminated,
/// gauges enter through Lagrange multipliers.
class MacroSystem {
public:
    MacroSystem(const MacroProblem& p, const std::vector<ElasticityTensor>& C_active)
        : p_(p), grid_(p.grid()), asmb_(grid_, identity_dof_map(grid_)) {
        const auto cells = p.active_cells();
        if (C_active.size() != cells.size()) throw StructureError("one tensor per active cell expected");
        if (cells.empty()) throw SetupError("macroscopic domain has no cells");
        const int d = p.dim, ndof = grid_.node_count() * d;
        C_cell_.assign(grid_.cell_count(), Eigen::MatrixXd::Zero(voigt_size(d), voigt_size(d)));
        for (size_t i = 0; i < cells.size(); ++i) {
            if (C_active[i].dim != d) throw StructureError("tensor dimension mismatch");
            C_cell_[cells[i]] = C_active[i].voigt;
        }
        K_ = asmb_.assemble([&](int c, int) -> const Eigen::MatrixXd& { return C_cell_[c]; });

        // fixed dofs
        fixed_.assign(ndof, 0);
        Ud_ = Eigen::VectorXd::Zero(ndof);
        std::vector<char> node_used(grid_.node_count(), 0);
        for (int c : cells)
            for (int a = 0; a < grid_.nodes_per_cell(); ++a) node_used[grid_.cell_node(c, a)] = 1;
        for (int n = 0; n < grid_.node_count(); ++n)
            if (!node_used[n])
                for (int k = 0; k < d; ++k) fixed_[n * d + k] = 1;
        for (const auto& bc : p.dirichlet) {
            if (bc.axis < 0 || bc.axis >= d || bc.side < 0 || bc.side > 1) throw DomainError("bad Dirichlet face");
            for (int n = 0; n < grid_.node_count(); ++n) {
                if (!node_used[n]) continue;
                const auto i = grid_.node_multi(n);
                if (i[bc.axis] != (bc.side ? grid_.cells[bc.axis] : 0)) continue;
                for (size_t m = 0; m < bc.components.size(); ++m) {
                    const int k = bc.components[m];
                    if (k < 0 || k >= d) throw DomainError("bad Dirichlet component");
                    fixed_[n * d + k] = 1;
                    Ud_(n * d + k) = m < bc.values.size() ? bc.values[m] : 0.0;
                }
            }
        }
        free_index_.assign(ndof, -1);
        for (int i = 0; i < ndof; ++i)
            if (!fixed_[i]) {
                free_index_[i] = static_cast<int>(free_.size());
                free_.push_back(i);
            }
        F_ = load_vector();
        G_ = gauge_rows();
        check_kernel();
        factorize();
    }

    const MacroProblem& problem() const { return p_; }
    const Grid& grid() const { return grid_; }
    const ElasticityAssembler& assembler() const { return asmb_; }
    const Eigen::VectorXd& load() const { return F_; }
    const std::vector<char>& fixed() const { return fixed_; }
    const SparseMatrix& stiffness() const { return K_; }
    const Eigen::MatrixXd& gauge_matrix() const { return G_; }

    /// Equilibrium displacement (full vector) and gauge multipliers.
    std::pair<Eigen::VectorXd, Eigen::VectorXd> equilibrium() const {
        const Eigen::VectorXd KUd = K_ * Ud_;
        Eigen::VectorXd rhs_free(free_.size());
        for (size_t i = 0; i < free_.size(); ++i) rhs_free(i) = F_(free_[i]) - KUd(free_[i]);
        const Eigen::VectorXd gauge_rhs = -(G_ * Ud_);
        return solve(rhs_free, gauge_rhs, Ud_);
    }

    /// Adjoint: solve the homogeneous-data system with load `j` (full vector,
    /// entries at fixed dofs ignored); the result vanishes on fixed dofs.
    Eigen::VectorXd adjoint(const Eigen::VectorXd& j) const {
        Eigen::VectorXd rhs_free(free_.size());
        for (size_t i = 0; i < free_.size(); ++i) rhs_free(i) = j(free_[i]);
        return solve(rhs_free, Eigen::VectorXd::Zero(G_.rows()), Eigen::VectorXd::Zero(Ud_.size())).first;
    }

    /// Relative residual of the free equilibrium equations for U.
    double equilibrium_residual(const Eigen::VectorXd& U, const Eigen::VectorXd& mult) const {
        Eigen::VectorXd r = K_ * U - F_;
        if (G_.rows()) r += G_.transpose() * mult;
        double num = 0.0, den = 0.0;
        for (int i : free_) {
            num += r(i) * r(i);
            den += F_(i) * F_(i);
        }
        const Eigen::VectorXd KUd = K_ * Ud_;
        for (int i : free_) den += KUd(i) * KUd(i);
        return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
    }

private:
    Eigen::VectorXd load_vector() const {
        const int d = p_.dim, ndof = grid_.node_count() * d;
        Eigen::VectorXd F = Eigen::VectorXd::Zero(ndof);
        const auto& ref = asmb_.reference();
        // body force by cell overlap fraction, consistent load int f N_a
        for (const auto& bf : p_.body_force)
            for (int c : p_.active_cells()) {
                const auto ci = grid_.cell_multi(c);
                double frac = 1.0;
                for (int k = 0; k < d; ++k) {
                    const double a0 = ci[k] * p_.H, a1 = a0 + p_.H;
                    frac *= detail::overlap_1d(a0, a1, bf.region.lo[k], bf.region.hi[k]) / p_.H;
                }
                if (frac <= 0.0) continue;
                for (int q = 0; q < ref.quad_points(); ++q) {
                    const double w = grid_.cell_volume() * ref.rule.weights[q] * frac;
                    for (int a = 0; a < ref.nodes(); ++a)
                        for (int k = 0; k < d; ++k) F(grid_.cell_node(c, a) * d + k) += w * ref.values(q, a) * bf.force(k);
                }
            }
        // tractions on exposed boundary facets lying on a box face
        for (const auto& nb : p_.neumann) {
            if (nb.axis < 0 || nb.axis >= d || nb.side < 0 || nb.side > 1) throw DomainError("bad Neumann face");
            for (int c : p_.active_cells()) {
                const auto ci = grid_.cell_multi(c);
                if (ci[nb.axis] != (nb.side ? grid_.cells[nb.axis] - 1 : 0)) continue;
                // Simpson on the facet: local vertices with bit `axis` == side
                const int nf = d == 2 ? 3 : 9;
                static constexpr double w1[3] = {1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0};
                static constexpr double x1[3] = {0.0, 0.5, 1.0};
                const double area = std::pow(p_.H, d - 1);
                for (int s = 0; s < nf; ++s) {
                    const int s0 = s % 3, s1 = s / 3;
                    std::array<double, 3> loc{0, 0, 0};
                    int t = 0;
                    double w = area;
                    for (int k = 0; k < d; ++k) {
                        if (k == nb.axis) {
                            loc[k] = nb.side;
                            continue;
                        }
                        const int idx = t++ == 0 ? s0 : s1;
                        loc[k] = x1[idx];
                        w *= w1[idx];
                    }
                    std::array<double, 3> x{0, 0, 0};
                    for (int k = 0; k < d; ++k) x[k] = (ci[k] + loc[k]) * p_.H;
                    if (!detail::in_region(nb.region, x, d)) continue;
                    for (int a = 0; a < grid_.nodes_per_cell(); ++a) {
                        double N = 1.0;
                        for (int k = 0; k < d; ++k) N *= ((a >> k) & 1) ? loc[k] : 1.0 - loc[k];
                        if (N == 0.0) continue;
                        for (int k = 0; k < d; ++k) F(grid_.cell_node(c, a) * d + k) += w * N * nb.traction(k);
                    }
                }
            }
        }
        return F;
    }

    Eigen::MatrixXd gauge_rows() const {
        const int d = p_.dim, ndof = grid_.node_count() * d;
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p_.gauges.size()), ndof);
        const auto& ref = asmb_.reference();
        for (size_t r = 0; r < p_.gauges.size(); ++r) {
            const Gauge g = p_.gauges[r];
            if ((g == Gauge::mean_u3 || g == Gauge::mean_curl1) && d != 3)
                throw DomainError("gauges mean_u3 and mean_curl1 need a 3D problem");
            for (int c : p_.active_cells())
                for (int q = 0; q < ref.quad_points(); ++q) {
                    const double w = grid_.cell_volume() * ref.rule.weights[q];
                    for (int a = 0; a < ref.nodes(); ++a) {
                        const int n = grid_.cell_node(c, a);
                        if (g == Gauge::mean_u2) G(r, n * d + 1) += w * ref.values(q, a);
                        else if (g == Gauge::mean_u3) G(r, n * d + 2) += w * ref.values(q, a);
                        else {
                            // (curl U)_1 = d_2 U_3 - d_3 U_2
                            G(r, n * d + 2) += w * ref.gradients[q](a, 1) / p_.H;
                            G(r, n * d + 1) -= w * ref.gradients[q](a, 2) / p_.H;
                        }
                    }
                }
        }
        return G;
    }

    /// Rigid motions that survive the Dirichlet elimination must be removed by gauges.
    void check_kernel() const {
        const int d = p_.dim, ndof = grid_.node_count() * d;
        const int nr = d == 2 ? 3 : 6;
        Eigen::MatrixXd R = Eigen::MatrixXd::Zero(ndof, nr);
        for (int n = 0; n < grid_.node_count(); ++n) {
            const auto x = grid_.node_coords(n);
            for (int k = 0; k < d; ++k) R(n * d + k, k) = 1.0;
            if (d == 2) {
                R(n * d + 0, 2) = -x[1];
                R(n * d + 1, 2) = x[0];
            } else {
                const int pairs[3][2] = {{1, 2}, {0, 2}, {0, 1}};
                for (int m = 0; m < 3; ++m) {
                    R(n * d + pairs[m][0], 3 + m) = -x[pairs[m][1]];
                    R(n * d + pairs[m][1], 3 + m) = x[pairs[m][0]];
                }
            }
        }
        // rigid modes that vanish on the constrained boundary dofs
        std::vector<int> bnd;
        std::vector<char> node_used(grid_.node_count(), 0);
        for (int c : p_.active_cells())
            for (int a = 0; a < grid_.nodes_per_cell(); ++a) node_used[grid_.cell_node(c, a)] = 1;
        for (int i = 0; i < ndof; ++i)
            if (fixed_[i] && node_used[i / d]) bnd.push_back(i);
        Eigen::MatrixXd RB(static_cast<Eigen::Index>(bnd.size()), nr);
        for (size_t i = 0; i < bnd.size(); ++i) RB.row(i) = R.row(bnd[i]);
        Eigen::MatrixXd N;
        if (bnd.empty()) N = Eigen::MatrixXd::Identity(nr, nr);
        else {
            Eigen::FullPivLU<Eigen::MatrixXd> lu(RB);
            lu.setThreshold(1e-10);
            N = lu.dimensionOfKernel() ? Eigen::MatrixXd(lu.kernel()) : Eigen::MatrixXd(nr, 0);
        }
        if (N.cols() == 0) return;
        const Eigen::MatrixXd modes = R * N;
        if (G_.rows() == 0) throw SetupError("boundary conditions leave " + std::to_string(N.cols()) + " rigid motion(s) free");
        Eigen::FullPivLU<Eigen::MatrixXd> lu(G_ * modes);
        lu.setThreshold(1e-10);
        if (lu.rank() < N.cols())
            throw SetupError("gauge constraints do not remove all rigid motions left by the boundary conditions");
    }

    void factorize() {
        const int nf = static_cast<int>(free_.size()), ng = static_cast<int>(G_.rows());
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(K_.nonZeros() + 2 * static_cast<size_t>(ng) * nf);
        for (int k = 0; k < K_.outerSize(); ++k)
            for (SparseMatrix::InnerIterator it(K_, k); it; ++it) {
                const int r = free_index_[it.row()], c = free_index_[it.col()];
                if (r >= 0 && c >= 0) trip.emplace_back(r, c, it.value());
            }
        for (int g = 0; g < ng; ++g)
            for (int i = 0; i < nf; ++i) {
                const double v = G_(g, free_[i]);
                if (v == 0.0) continue;
                trip.emplace_back(nf + g, i, v);
                trip.emplace_back(i, nf + g, v);
            }
        S_.resize(nf + ng, nf + ng);
        S_.setFromTriplets(trip.begin(), trip.end());
        S_.makeCompressed();
        lu_ = std::make_shared<Eigen::SparseLU<SparseMatrix>>();
        lu_->analyzePattern(S_);
        lu_->factorize(S_);
        if (lu_->info() != Eigen::Success) throw SetupError("macroscopic system is singular");
    }

    std::pair<Eigen::VectorXd, Eigen::VectorXd> solve(const Eigen::VectorXd& rhs_free, const Eigen::VectorXd& rhs_gauge,
                                                      const Eigen::VectorXd& fixed_values) const {
        const int nf = static_cast<int>(free_.size()), ng = static_cast<int>(G_.rows());
        Eigen::VectorXd rhs(nf + ng);
        rhs << rhs_free, rhs_gauge;
        Eigen::VectorXd x = lu_->solve(rhs);
        x += lu_->solve(rhs - S_ * x);  // one refinement step
        const double rn = rhs.norm();
        const double rel = rn > 0.0 ? (S_ * x - rhs).norm() / rn : (S_ * x).norm();
        if (!std::isfinite(rel) || rel > 1e-10) throw SetupError("macroscopic solve failed (relative residual " + std::to_string(rel) + ")");
        Eigen::VectorXd U = fixed_values;
        for (int i = 0; i < nf; ++i) U(free_[i]) = x(i);
        return {U, x.tail(ng)};
    }

    MacroProblem p_;
    Grid grid_;
    ElasticityAssembler asmb_;
    std::vector<Eigen::MatrixXd> C_cell_;
    SparseMatrix K_;
    std::vector<char> fixed_;
    Eigen::VectorXd Ud_;
    std::vector<int> free_, free_index_;
    Eigen::VectorXd F_;
    Eigen::MatrixXd G_;
    SparseMatrix S_;
    std::shared_ptr<Eigen::SparseLU<SparseMatrix>> lu_;
};

namespace detail {

/// Tracking functional and its derivative with respect to the full U.
inline double tracking_value(const MacroSystem& sys, const Eigen::VectorXd& U, Eigen::VectorXd* dJ) {
    const auto& p = sys.problem();
    const auto& g = sys.grid();
    const auto& ref = sys.assembler().reference();
    const int d = p.dim;
    if (dJ) dJ->setZero(U.size());
    double J = 0.0;
    for (const auto& tc : p.tracking) {
        if (tc.cell < 0 || tc.cell >= g.cell_count() || !p.is_active(tc.cell))
            throw DomainError("tracking cell outside the macroscopic domain");
        for (int q = 0; q < ref.quad_points(); ++q) {
            const double w = g.cell_volume() * ref.rule.weights[q];
            Eigen::Vector3d u = Eigen::Vector3d::Zero();
            for (int a = 0; a < ref.nodes(); ++a)
                for (int k = 0; k < d; ++k) u(k) += ref.values(q, a) * U(g.cell_node(tc.cell, a) * d + k);
            const Eigen::Vector3d diff = (u - tc.U0).head(3);
            for (int k = 0; k < d; ++k) J += w * diff(k) * diff(k);
            if (dJ)
                for (int a = 0; a < ref.nodes(); ++a)
                    for (int k = 0; k < d; ++k) (*dJ)(g.cell_node(tc.cell, a) * d + k) += 2.0 * w * ref.values(q, a) * diff(k);
        }
    }
    return J;
}

}  // namespace detail

inline MacroState macro_solve(const MacroProblem& p, const MacroDesign& design, const SplineChart& chart) {
    const auto cells = p.active_cells();
    if (design.q.size() != cells.size()) throw StructureError("design needs one q per active macro cell");
    MacroState st;
    for (const auto& q : design.q) {
        if (!(q[0] >= 0.0 && q[0] <= 1.0 && q[1] >= 0.0 && q[1] <= 1.0))
            throw DomainError("design parameters must lie in [0,1]^2");
        st.C.push_back(macro_tensor(chart, q, p.dim));
    }
    auto sys = std::make_shared<const MacroSystem>(p, st.C);
    auto [U, mult] = sys->equilibrium();
    st.U = std::move(U);
    st.multipliers = std::move(mult);
    st.residual = sys->equilibrium_residual(st.U, st.multipliers);
    st.compliance = sys->load().dot(st.U);
    st.tracking = p.tracking.empty() ? 0.0 : detail::tracking_value(*sys, st.U, nullptr);
    st.system = std::move(sys);
    return st;
}

struct MacroCost {
    double mechanical = 0.0;     // J_compl or J_track
    double cost_integral = 0.0;  // sum H^d j_ref(q)
    double volume_integral = 0.0;     // sum H^d (volume spline)
    double interface_integral = 0.0;  // sum H^d (perimeter spline)
    double objective = 0.0;           // mechanical (+ cost integral when no Vol_H constraint)
    double constraint = 0.0;          // cost integral - Vol_H, if set
};

inline MacroCost macro_cost(const MacroProblem& p, const MacroDesign& design, const SplineChart& chart,
                            const MacroState& st) {
    MacroCost c;
    c.mechanical = p.functional == MacroFunctionalKind::compliance ? st.compliance : st.tracking;
    const double w = std::pow(p.H, p.dim);
    for (const auto& q : design.q) {
        c.cost_integral += w * chart.cost(q);
        c.volume_integral += w * chart.volume_spline.eval(q)(0);
        c.interface_integral += w * chart.perimeter_spline.eval(q)(0);
    }
    if (p.vol_h) {
        c.objective = c.mechanical;
        c.constraint = c.cost_integral - *p.vol_h;
    } else {
        c.objective = c.mechanical + c.cost_integral;
    }
    return c;
}

struct MacroGradient {
    std::vector<Eigen::Vector2d> mechanical;  // d J_mech / d q_cell
    std::vector<Eigen::Vector2d> cost;        // d (sum H^d j_ref) / d q_cell
    std::vector<Eigen::Vector2d> objective;   // gradient of MacroCost::objective
};

inline MacroGradient macro_gradient(const MacroProblem& p, const MacroDesign& design, const SplineChart& chart,
                                    const MacroState& st) {
    const auto cells = p.active_cells();
    const MacroSystem& sys = *st.system;
    const int d = p.dim;
    Eigen::VectorXd j;
    if (p.functional == MacroFunctionalKind::compliance) j = sys.load();
    else detail::tracking_value(sys, st.U, &j);
    const Eigen::VectorXd P = sys.adjoint(j);
    const auto& asmb = sys.assembler();
    const auto& ref = asmb.reference();
    const double w = std::pow(p.H, d);
    MacroGradient g;
    for (size_t i = 0; i < cells.size(); ++i) {
        const int c = cells[i];
        const Eigen::Vector2d nuE = eval_psi(chart.psi, design.q[i]);
        const auto [dC_dnu, dC_dE] = tensor_derivatives_nu_e(nuE(0), nuE(1), d);
        const Eigen::VectorXd Ue = asmb.gather(c, st.U), Pe = asmb.gather(c, P);
        double dnu = 0.0, dE = 0.0;
        for (int q = 0; q < ref.quad_points(); ++q) {
            const double wq = sys.grid().cell_volume() * ref.rule.weights[q];
            const Eigen::VectorXd eu = asmb.strain_matrix(q) * Ue, ep = asmb.strain_matrix(q) * Pe;
            dnu -= wq * ep.dot(dC_dnu * eu);
            dE -= wq * ep.dot(dC_dE * eu);
        }
        const Eigen::Matrix2d J = eval_psi_jacobian(chart.psi, design.q[i]);
        const Eigen::Vector2d mech = J.transpose() * Eigen::Vector2d(dnu, dE);
        const Eigen::Vector2d cost = w * chart.cost_gradient(design.q[i]);
        g.mechanical.push_back(mech);
        g.cost.push_back(cost);
        g.objective.push_back(p.vol_h ? mech : Eigen::Vector2d(mech + cost));
    }
    return g;
}

/// Chart with the problem's perimeter weight applied (if it overrides the chart's).
inline SplineChart resolve_chart(const MacroProblem& p, const SplineChart& chart) {
    if (p.c_p_hat && *p.c_p_hat != chart.c_P_hat) return chart.with_perimeter_weight(*p.c_p_hat);
    return chart;
}

/// Range of sum H^d j_ref(q) over designs, from a dense sample of j_ref.
inline std::pair<double, double> attainable_cost_range(const MacroProblem& p, const SplineChart& chart,
                                                       std::array<double, 2>* qmin = nullptr,
                                                       std::array<double, 2>* qmax = nullptr) {
    double lo = 1e300, hi = -1e300;
    constexpr int S = 101;
    for (int i = 0; i < S; ++i)
        for (int k = 0; k < S; ++k) {
            const std::array<double, 2> q{i / (S - 1.0), k / (S - 1.0)};
            const double v = chart.cost(q);
            if (v < lo) {
                lo = v;
                if (qmin) *qmin = q;
            }
            if (v > hi) {
                hi = v;
                if (qmax) *qmax = q;
            }
        }
    const double w = std::pow(p.H, p.dim) * static_cast<double>(p.active_cells().size());
    return {w * lo, w * hi};
}

/// Uniform design meeting the cost constraint: q = (0.5, t) with t found by
/// bisection, falling back to the segment between the cheapest and the most
/// expensive chart parameters when that line does not bracket Vol_H.
inline MacroDesign default_design(const MacroProblem& p, const SplineChart& chart) {
    const size_t nc = p.active_cells().size();
    MacroDesign d;
    d.q.assign(nc, {0.5, 0.5});
    if (!p.vol_h) return d;
    std::array<double, 2> qmin{}, qmax{};
    const auto [lo, hi] = attainable_cost_range(p, chart, &qmin, &qmax);
    if (*p.vol_h < lo - 1e-12 || *p.vol_h > hi + 1e-12)
        throw InfeasibleError("cost budget Vol_H outside the attainable range", lo, hi);
    const double w = std::pow(p.H, p.dim) * static_cast<double>(nc);
    auto bisect = [&](auto&& path) -> std::optional<std::array<double, 2>> {
        double a = 0.0, b = 1.0;
        double fa = w * chart.cost(path(a)) - *p.vol_h, fb = w * chart.cost(path(b)) - *p.vol_h;
        if (fa * fb > 0.0) return std::nullopt;
        for (int it = 0; it < 200 && b - a > 1e-15; ++it) {
            const double m = 0.5 * (a + b), fm = w * chart.cost(path(m)) - *p.vol_h;
            if ((fm <= 0.0) == (fa <= 0.0)) {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        return path(0.5 * (a + b));
    };
    auto q = bisect([](double t) { return std::array<double, 2>{0.5, t}; });
    if (!q)
        q = bisect([&](double t) {
            return std::array<double, 2>{qmin[0] + t * (qmax[0] - qmin[0]), qmin[1] + t * (qmax[1] - qmin[1])};
        });
    d.q.assign(nc, *q);
    return d;
}

struct MacroHistoryEntry {
    int iteration = 0;
    double objective = 0.0;
    double constraint = 0.0;
    double kkt = 0.0;
};

struct MacroResult {
    MacroDesign design;
    MacroState state;
    MacroCost cost;
    std::vector<MacroHistoryEntry> history;
    bool converged = false;
    double kkt = 0.0;
    int iterations = 0;
};

inline NlpSettings default_macro_nlp(const MacroProblem& p) {
    NlpSettings s;
    s.constraint_tol = p.vol_h ? 1e-6 * std::fabs(*p.vol_h) : 1e-6;
    s.kkt_tol = 1e-6;
    s.inner_cap = 500;
    s.outer_cap = 30;
    s.initial_step = 0.05;
    return s;
}

inline MacroResult macro_optimize(const MacroProblem& p, const SplineChart& chart_in, const MacroDesign& init,
                                  const NlpSettings* settings = nullptr) {
    const SplineChart chart = resolve_chart(p, chart_in);
    const size_t nc = p.active_cells().size();
    if (init.q.size() != nc) throw StructureError("initial design needs one q per active macro cell");
    if (p.vol_h) {
        const auto [lo, hi] = attainable_cost_range(p, chart);
        if (*p.vol_h < lo - 1e-12 || *p.vol_h > hi + 1e-12)
            throw InfeasibleError("cost budget Vol_H outside the attainable range", lo, hi);
    }
    auto unpack = [&](const Eigen::VectorXd& x) {
        MacroDesign d;
        d.q.resize(nc);
        for (size_t i = 0; i < nc; ++i) d.q[i] = {x(2 * i), x(2 * i + 1)};
        return d;
    };
    NlpEvaluator eval = [&](const Eigen::VectorXd& x) {
        const MacroDesign d = unpack(x);
        const MacroState st = macro_solve(p, d, chart);
        const MacroCost c = macro_cost(p, d, chart, st);
        const MacroGradient g = macro_gradient(p, d, chart, st);
        NlpEvaluation ev;
        ev.f = c.objective;
        ev.grad.resize(2 * nc);
        for (size_t i = 0; i < nc; ++i) ev.grad.segment<2>(2 * i) = g.objective[i];
        if (p.vol_h) {
            ev.c = Eigen::VectorXd::Constant(1, c.constraint);
            ev.jac.resize(1, 2 * nc);
            for (size_t i = 0; i < nc; ++i) ev.jac.block<1, 2>(0, 2 * i) = g.cost[i].transpose();
        }
        return ev;
    };
    NlpSettings s = settings ? *settings : default_macro_nlp(p);
    s.stationarity_scale = 1.0 / std::pow(p.H, p.dim);
    Eigen::VectorXd x0(2 * nc);
    for (size_t i = 0; i < nc; ++i) x0.segment<2>(2 * i) << init.q[i][0], init.q[i][1];
    const NlpResult nr = minimize_augmented_lagrangian(eval, x0, Eigen::VectorXd::Zero(2 * nc),
                                                       Eigen::VectorXd::Ones(2 * nc), s);
    MacroResult r;
    r.design = unpack(nr.x);
    r.state = macro_solve(p, r.design, chart);
    r.cost = macro_cost(p, r.design, chart, r.state);
    r.converged = nr.converged;
    r.kkt = nr.kkt;
    r.iterations = nr.iterations;
    for (const auto& h : nr.history) r.history.push_back({h.outer, h.f, h.constraint_norm, h.kkt});
    return r;
}

// ------------------------------------------------------------------- I/O

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {
inline int face_axis(const std::string& f) {
    if (f.size() != 2 || (f[1] != '0' && f[1] != '1')) throw FormatError("bad face selector '" + f + "'");
    if (f[0] == 'x') return 0;
    if (f[0] == 'y') return 1;
    if (f[0] == 'z') return 2;
    throw FormatError("bad face selector '" + f + "'");
}
inline std::string face_name(int axis, int side) { return std::string(1, "xyz"[axis]) + char('0' + side); }
inline Eigen::Vector3d vec3(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.empty() || v.size() > 3) throw FormatError("vector with 1 to 3 entries expected");
    Eigen::Vector3d out = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < v.size(); ++i) out(i) = v[i];
    return out;
}
inline std::vector<double> vec_list(const Eigen::Vector3d& v, int dim) { return std::vector<double>(v.data(), v.data() + dim); }
inline Region region_from(const nlohmann::json& j) {
    Region r;
    if (j.contains("lo")) {
        const auto lo = j["lo"].get<std::vector<double>>();
        for (size_t k = 0; k < lo.size() && k < 3; ++k) r.lo[k] = lo[k];
    }
    if (j.contains("hi")) {
        const auto hi = j["hi"].get<std::vector<double>>();
        for (size_t k = 0; k < hi.size() && k < 3; ++k) r.hi[k] = hi[k];
    }
    return r;
}
inline void region_to(nlohmann::json& j, const Region& r, int dim) {
    std::vector<double> lo, hi;
    bool any = false;
    for (int k = 0; k < dim; ++k) {
        lo.push_back(r.lo[k]);
        hi.push_back(r.hi[k]);
        any = any || r.lo[k] > -1e299 || r.hi[k] < 1e299;
    }
    if (any) {
        j["lo"] = lo;
        j["hi"] = hi;
    }
}
inline std::string gauge_name(Gauge g) {
    return g == Gauge::mean_u2 ? "mean_u2" : g == Gauge::mean_u3 ? "mean_u3" : "mean_curl1";
}
}  // namespace detail

inline nlohmann::json problem_to_json(const MacroProblem& p) {
    using nlohmann::json;
    json j;
    j["dim"] = p.dim;
    j["H"] = p.H;
    j["box"] = std::vector<int>(p.box.begin(), p.box.begin() + p.dim);
    if (!p.active.empty()) {
        json holes = json::array();
        const Grid g = p.grid();
        for (int c = 0; c < g.cell_count(); ++c)
            if (!p.active[c]) {
                const auto m = g.cell_multi(c);
                holes.push_back(std::vector<int>(m.begin(), m.begin() + p.dim));
            }
        j["holes"] = holes;
    }
    j["dirichlet"] = json::array();
    for (const auto& d : p.dirichlet)
        j["dirichlet"].push_back({{"face", detail::face_name(d.axis, d.side)}, {"components", d.components}, {"value", d.values}});
    j["neumann"] = json::array();
    for (const auto& n : p.neumann) {
        json e = {{"face", detail::face_name(n.axis, n.side)}, {"traction", detail::vec_list(n.traction, p.dim)}};
        detail::region_to(e, n.region, p.dim);
        j["neumann"].push_back(e);
    }
    j["body_force"] = json::array();
    for (const auto& b : p.body_force) {
        json e = {{"force", detail::vec_list(b.force, p.dim)}};
        detail::region_to(e, b.region, p.dim);
        j["body_force"].push_back(e);
    }
    if (p.functional == MacroFunctionalKind::compliance) j["functional"] = {{"type", "compliance"}};
    else {
        json cells = json::array();
        const Grid g = p.grid();
        for (const auto& t : p.tracking) {
            const auto m = g.cell_multi(t.cell);
            cells.push_back({{"cell", std::vector<int>(m.begin(), m.begin() + p.dim)}, {"U0", detail::vec_list(t.U0, p.dim)}});
        }
        j["functional"] = {{"type", "tracking"}, {"cells", cells}};
    }
    j["gauges"] = json::array();
    for (auto g : p.gauges) j["gauges"].push_back(detail::gauge_name(g));
    if (p.vol_h) j["vol_h"] = *p.vol_h;
    if (p.c_p_hat) j["c_p_hat"] = *p.c_p_hat;
    return j;
}

inline MacroProblem problem_from_json(const nlohmann::json& j) {
    MacroProblem p;
    try {
        p.dim = j.at("dim").get<int>();
        check_dim(p.dim);
        p.H = j.at("H").get<double>();
        if (!(p.H > 0.0)) throw DomainError("macro mesh size H must be positive");
        const auto box = j.at("box").get<std::vector<int>>();
        if (static_cast<int>(box.size()) != p.dim) throw FormatError("box must have dim entries");
        for (int k = 0; k < 3; ++k) p.box[k] = k < p.dim ? box[k] : 1;
        const Grid g = p.grid();
        auto cell_of = [&](const nlohmann::json& m) {
            const auto v = m.get<std::vector<int>>();
            if (static_cast<int>(v.size()) != p.dim) throw FormatError("cell multi-index must have dim entries");
            std::array<int, 3> i{0, 0, 0};
            for (int k = 0; k < p.dim; ++k) {
                if (v[k] < 0 || v[k] >= p.box[k]) throw DomainError("cell index outside the box");
                i[k] = v[k];
            }
            return g.cell_index(i);
        };
        if (j.contains("cells")) {
            p.active.assign(g.cell_count(), 0);
            for (const auto& m : j["cells"]) p.active[cell_of(m)] = 1;
        }
        if (j.contains("holes")) {
            if (p.active.empty()) p.active.assign(g.cell_count(), 1);
            for (const auto& m : j["holes"]) p.active[cell_of(m)] = 0;
        }
        for (const auto& d : j.value("dirichlet", nlohmann::json::array())) {
            DirichletBC bc;
            const std::string f = d.at("face").get<std::string>();
            bc.axis = detail::face_axis(f);
            bc.side = f[1] - '0';
            bc.components = d.value("components", std::vector<int>{});
            if (bc.components.empty())
                for (int k = 0; k < p.dim; ++k) bc.components.push_back(k);
            bc.values = d.value("value", std::vector<double>(bc.components.size(), 0.0));
            p.dirichlet.push_back(bc);
        }
        for (const auto& n : j.value("neumann", nlohmann::json::array())) {
            NeumannBC bc;
            const std::string f = n.at("face").get<std::string>();
            bc.axis = detail::face_axis(f);
            bc.side = f[1] - '0';
            bc.traction = detail::vec3(n.at("traction"));
            bc.region = detail::region_from(n);
            p.neumann.push_back(bc);
        }
        for (const auto& b : j.value("body_force", nlohmann::json::array()))
            p.body_force.push_back({detail::region_from(b), detail::vec3(b.at("force"))});
        const auto fn = j.value("functional", nlohmann::json{{"type", "compliance"}});
        const std::string type = fn.value("type", std::string("compliance"));
        if (type == "compliance") p.functional = MacroFunctionalKind::compliance;
        else if (type == "tracking") {
            p.functional = MacroFunctionalKind::tracking;
            for (const auto& t : fn.at("cells")) p.tracking.push_back({cell_of(t.at("cell")), detail::vec3(t.at("U0"))});
        } else
            throw FormatError("unknown functional '" + type + "'");
        for (const auto& gname : j.value("gauges", nlohmann::json::array())) {
            const std::string s = gname.get<std::string>();
            if (s == "mean_u2") p.gauges.push_back(Gauge::mean_u2);
            else if (s == "mean_u3") p.gauges.push_back(Gauge::mean_u3);
            else if (s == "mean_curl1") p.gauges.push_back(Gauge::mean_curl1);
            else throw FormatError("unknown gauge '" + s + "'");
        }
        if (j.contains("vol_h")) p.vol_h = j["vol_h"].get<double>();
        if (j.contains("c_p_hat")) p.c_p_hat = j["c_p_hat"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed problem: ") + e.what());
    }
    return p;
}

inline std::uint64_t problem_hash(const MacroProblem& p) { return fnv1a64(problem_to_json(p).dump()); }

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 15];
    return s;
}

inline nlohmann::json design_to_json(const MacroProblem& p, const SplineChart& chart, const MacroResult& r) {
    using nlohmann::json;
    const SplineChart c = resolve_chart(p, chart);
    json j;
    j["problem_hash"] = hex64(problem_hash(p));
    j["problem"] = problem_to_json(p);
    j["dim"] = p.dim;
    j["H"] = p.H;
    const Grid g = p.grid();
    json cells = json::array();
    const auto active = p.active_cells();
    for (size_t i = 0; i < active.size(); ++i) {
        const auto m = g.cell_multi(active[i]);
        const auto q = r.design.q[i];
        const Eigen::Vector2d nuE = eval_psi(c.psi, q);
        cells.push_back({{"cell", std::vector<int>(m.begin(), m.begin() + p.dim)},
                         {"q", {q[0], q[1]}},
                         {"nu", nuE(0)},
                         {"E", nuE(1)},
                         {"cost", c.cost(q)}});
    }
    j["cells"] = cells;
    j["compliance"] = r.state.compliance;
    j["tracking"] = r.state.tracking;
    j["cost_integral"] = r.cost.cost_integral;
    j["interface_integral"] = r.cost.interface_integral;
    j["converged"] = r.converged;
    j["kkt_residual"] = r.kkt;
    json hist = json::array();
    for (const auto& h : r.history)
        hist.push_back({{"iteration", h.iteration}, {"objective", h.objective}, {"constraint", h.constraint}, {"kkt", h.kkt}});
    j["history"] = hist;
    return j;
}

/// Per-cell q (in active-cell order) read back from a design file.
inline MacroDesign design_from_json(const MacroProblem& p, const nlohmann::json& j) {
    MacroDesign d;
    try {
        if (j.contains("problem_hash") && j["problem_hash"].get<std::string>() != hex64(problem_hash(p)))
            throw FormatError("design was computed for a different problem");
        const auto active = p.active_cells();
        const auto& cells = j.at("cells");
        if (cells.size() != active.size()) throw FormatError("design cell count does not match the problem");
        for (const auto& c : cells) {
            const auto q = c.at("q").get<std::vector<double>>();
            if (q.size() != 2) throw FormatError("q must have two entries");
            d.q.push_back({q[0], q[1]});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed design: ") + e.what());
    }
    return d;
}

/// Cantilever on [0, 2] x [0, 1] (2D) clamped at x = 0 with a downward load
/// on [1.95, 2] x [0.45, 0.55]; H = 1/8 gives the 16 x 8 cell grid.
inline MacroProblem cantilever_problem(int nx = 16, int ny = 8, std::optional<double> vol_h = std::nullopt) {
    MacroProblem p;
    p.dim = 2;
    p.H = 2.0 / nx;
    p.box = {nx, ny, 1};
    p.dirichlet.push_back({0, 0, {0, 1}, {0.0, 0.0}});
    BodyForce f;
    f.region.lo = {1.95, 0.45, -1e300};
    f.region.hi = {2.0, 0.55, 1e300};
    f.force = Eigen::Vector3d(0.0, -10.0, 0.0);
    p.body_force.push_back(f);
    p.vol_h = vol_h;
    return p;
}

}  // namespace twoscale
