#pragma once
// Periodic corrector problems, effective tensors C*[v] and the homogenization
// constraint residuals with their phase-field gradients.

#include <Eigen/Dense>

#include <memory>
#include <vector>

#include "twoscale/grid_fem.hpp"
#include "twoscale/tensorlab.hpp"

namespace twoscale {

/// Hard phase C1 from `base`; soft phase C2 = delta * C1.
struct MicroMaterial {
    IsoParams base;
    double delta = 1e-4;

    ElasticityTensor hard() const { return tensor_from_iso(base); }
};

/// Phase indicator chi[v] = (1 + v)^4 / 16.
inline double chi(double v) {
    const double t = 1.0 + v;
    return t * t * t * t / 16.0;
}
inline double chi_prime(double v) {
    const double t = 1.0 + v;
    return t * t * t / 4.0;
}

/// C[v] = s(v) C1 with s(v) = chi + delta (1 - chi).
inline double stiffness_scale(double v, double delta) { return chi(v) + delta * (1.0 - chi(v)); }

inline ElasticityTensor material_at(double v, const MicroMaterial& mat) {
    const ElasticityTensor C1 = mat.hard();
    const double c = chi(v);
    return {C1.dim, c * C1.voigt + (1.0 - c) * (mat.delta * C1.voigt)};
}

/// One periodic, mean-zero corrector per Voigt index (3 in 2D, 6 in 3D).
struct CorrectorSet {
    Grid grid;
    int dim = 2;
    Eigen::MatrixXd master;                // (master dofs, voigt index)
    std::vector<Eigen::VectorXd> fields;   // expanded nodal vector fields
    double worst_residual = 0.0;
};

/// Reusable homogenization engine for one grid and material: keeps the
/// sparsity pattern, the scatter map and the symbolic factorization alive.
class Homogenizer {
public:
    Homogenizer(const Grid& grid, const MicroMaterial& mat, double tol = 1e-10)
        : grid_(grid),
          mat_(mat),
          C1_(mat.hard().voigt),
          tol_(tol),
          map_(periodic_dof_map(grid)),
          asmb_(grid, map_),
          solver_(pinned_dofs(grid.dim), translation_kernel(map_.master_count, grid.dim)) {
        check_material(mat);
    }

    const Grid& grid() const { return grid_; }
    const MicroMaterial& material() const { return mat_; }
    const DofMap& dof_map() const { return map_; }
    const ElasticityAssembler& assembler() const { return asmb_; }
    int components() const { return voigt_size(grid_.dim); }

    CorrectorSet solve_correctors(const Eigen::VectorXd& v) {
        check_field(v);
        const int nq = asmb_.reference().quad_points();
        const Eigen::VectorXd vq = values_at_quadrature(grid_, asmb_.reference(), v);
        std::vector<double> scale(vq.size());
        for (Eigen::Index i = 0; i < vq.size(); ++i) scale[i] = stiffness_scale(vq(i), mat_.delta);
        const SparseMatrix A = asmb_.assemble_scaled(C1_, scale);
        const int s = components();
        const Eigen::MatrixXd strains = Eigen::MatrixXd::Identity(s, s);
        auto C_at = [&](int c, int q) -> Eigen::MatrixXd { return scale[c * nq + q] * C1_; };
        const Eigen::MatrixXd R = asmb_.strain_loads(C_at, strains);
        solver_.factorize(A);
        CorrectorSet out;
        out.grid = grid_;
        out.dim = grid_.dim;
        out.master = solver_.solve(R, tol_, &out.worst_residual);
        for (int I = 0; I < s; ++I) out.fields.push_back(expand(map_, out.master.col(I), grid_.dim));
        return out;
    }

    /// Cell strains e_I + B u^I at every (cell, qp): one (s x s) block per point.
    std::vector<Eigen::MatrixXd> total_strains(const CorrectorSet& cs) const {
        const int nq = asmb_.reference().quad_points(), s = components();
        std::vector<Eigen::MatrixXd> out(static_cast<size_t>(grid_.cell_count()) * nq);
        Eigen::MatrixXd Ue(asmb_.reference().nodes() * grid_.dim, s);
        for (int c = 0; c < grid_.cell_count(); ++c) {
            const auto dofs = asmb_.element_dofs(c);
            for (size_t i = 0; i < dofs.size(); ++i) Ue.row(static_cast<Eigen::Index>(i)) = cs.master.row(dofs[i]);
            for (int q = 0; q < nq; ++q)
                out[static_cast<size_t>(c) * nq + q] = Eigen::MatrixXd::Identity(s, s) + asmb_.strain_matrix(q) * Ue;
        }
        return out;
    }

    ElasticityTensor effective_tensor(const Eigen::VectorXd& v, const CorrectorSet& cs) const {
        check_field(v);
        return integrate(v, cs, nullptr);
    }

    /// Gradient (nodes x upper count) of every C*_IJ with respect to nodal v,
    /// keeping the correctors frozen; the corrector sensitivities drop out
    /// because the correctors solve their cell problems.
    Eigen::MatrixXd effective_tensor_gradient(const Eigen::VectorXd& v, const CorrectorSet& cs) const {
        check_field(v);
        Eigen::MatrixXd grad;
        integrate(v, cs, &grad);
        return grad;
    }

private:
    static void check_material(const MicroMaterial& m) {
        if (!(m.delta >= 1e-12 && m.delta <= 1.0)) throw DomainError("soft-phase ratio delta must lie in [1e-12, 1]");
    }
    void check_field(const Eigen::VectorXd& v) const {
        if (v.size() != grid_.node_count()) throw StructureError("phase field does not match the grid");
    }
    static std::vector<int> pinned_dofs(int dim) {
        std::vector<int> p;
        for (int k = 0; k < dim; ++k) p.push_back(k);
        return p;
    }

    ElasticityTensor integrate(const Eigen::VectorXd& v, const CorrectorSet& cs, Eigen::MatrixXd* grad) const {
        const auto& ref = asmb_.reference();
        const int nq = ref.quad_points(), nen = ref.nodes(), s = components();
        const int m = voigt_upper_count(grid_.dim);
        const auto S = total_strains(cs);
        Eigen::MatrixXd Cs = Eigen::MatrixXd::Zero(s, s);
        if (grad) grad->setZero(grid_.node_count(), m);
        Eigen::VectorXd ve(nen);
        for (int c = 0; c < grid_.cell_count(); ++c) {
            for (int a = 0; a < nen; ++a) ve(a) = v(grid_.cell_node(c, a));
            const Eigen::VectorXd vq = ref.values * ve;
            for (int q = 0; q < nq; ++q) {
                const Eigen::MatrixXd& Sq = S[static_cast<size_t>(c) * nq + q];
                const Eigen::MatrixXd Q = Sq.transpose() * C1_ * Sq;
                const double w = grid_.cell_volume() * ref.rule.weights[q];
                Cs += (w * stiffness_scale(vq(q), mat_.delta)) * Q;
                if (grad) {
                    const double dscale = w * (1.0 - mat_.delta) * chi_prime(vq(q));
                    int k = 0;
                    for (int I = 0; I < s; ++I)
                        for (int J = I; J < s; ++J, ++k) {
                            const double val = dscale * 0.5 * (Q(I, J) + Q(J, I));
                            for (int a = 0; a < nen; ++a) (*grad)(grid_.cell_node(c, a), k) += val * ref.values(q, a);
                        }
                }
            }
        }
        // exact major symmetry
        for (int I = 0; I < s; ++I)
            for (int J = I + 1; J < s; ++J) Cs(J, I) = Cs(I, J) = 0.5 * (Cs(I, J) + Cs(J, I));
        return {grid_.dim, Cs};
    }

    Grid grid_;
    MicroMaterial mat_;
    Eigen::MatrixXd C1_;
    double tol_;
    DofMap map_;
    ElasticityAssembler asmb_;
    PinnedLdltSolver solver_;
};

// Free-function forms; each builds a fresh engine.

inline CorrectorSet solve_correctors(const Grid& grid, const PhaseField& v, const MicroMaterial& mat,
                                     double tol = 1e-10) {
    Homogenizer h(grid, mat, tol);
    return h.solve_correctors(v.values);
}

inline ElasticityTensor effective_tensor(const Grid& grid, const PhaseField& v, const MicroMaterial& mat,
                                         const CorrectorSet& cs) {
    Homogenizer h(grid, mat);
    return h.effective_tensor(v.values, cs);
}

/// g = C*[v] - target, one entry per upper-triangle Voigt component.
inline Eigen::VectorXd constraint_residuals(const ElasticityTensor& C_star, const ElasticityTensor& target) {
    if (C_star.dim != target.dim) throw StructureError("target tensor dimension mismatch");
    return C_star.upper() - target.upper();
}

inline Eigen::VectorXd constraint_residuals(const Grid& grid, const PhaseField& v, const MicroMaterial& mat,
                                            const CorrectorSet& cs, const ElasticityTensor& target) {
    return constraint_residuals(effective_tensor(grid, v, mat, cs), target);
}

/// Nodal gradients (nodes x constraints) of the residuals; the target is a
/// constant offset and does not enter.
inline Eigen::MatrixXd constraint_gradients(const Grid& grid, const PhaseField& v, const MicroMaterial& mat,
                                            const CorrectorSet& cs, const ElasticityTensor& target) {
    if (target.dim != grid.dim) throw StructureError("target tensor dimension mismatch");
    Homogenizer h(grid, mat);
    return h.effective_tensor_gradient(v.values, cs);
}

/// Solve the correctors and return C*[v] in one call.
inline ElasticityTensor homogenize(const Grid& grid, const Eigen::VectorXd& v, const MicroMaterial& mat,
                                   double tol = 1e-10) {
    Homogenizer h(grid, mat, tol);
    const auto cs = h.solve_correctors(v);
    return h.effective_tensor(v, cs);
}

}  // namespace twoscale
