#pragma once
// Uniform quadrilateral / hexahedral grids on axis-aligned boxes, multilinear
// shape functions, tensor-product Simpson quadrature, sparse elasticity
// assembly and the linear solvers used by the cell and macro problems.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "twoscale/errors.hpp"
#include "twoscale/tensorlab.hpp"

namespace twoscale {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Uniform grid of `cells[k]` cells of width h along each axis, origin at 0.
/// Nodes and cells are numbered with the x index fastest.
struct Grid {
    int dim = 2;
    std::array<int, 3> cells{1, 1, 1};
    double h = 1.0;

    static Grid box(int dim, std::array<int, 3> counts, double h) {
        check_dim(dim);
        Grid g;
        g.dim = dim;
        g.h = h;
        for (int k = 0; k < 3; ++k) g.cells[k] = k < dim ? counts[k] : 1;
        for (int k = 0; k < dim; ++k)
            if (g.cells[k] < 1) throw DomainError("grid needs at least one cell per axis");
        if (!(h > 0.0)) throw DomainError("mesh size must be positive");
        return g;
    }

    int nodes_along(int k) const { return k < dim ? cells[k] + 1 : 1; }
    int cells_along(int k) const { return k < dim ? cells[k] : 1; }
    int node_count() const { return nodes_along(0) * nodes_along(1) * nodes_along(2); }
    int cell_count() const { return cells_along(0) * cells_along(1) * cells_along(2); }
    int nodes_per_cell() const { return 1 << dim; }
    double cell_volume() const { return std::pow(h, dim); }

    int node_index(std::array<int, 3> i) const { return i[0] + nodes_along(0) * (i[1] + nodes_along(1) * i[2]); }
    std::array<int, 3> node_multi(int node) const {
        const int n0 = nodes_along(0), n1 = nodes_along(1);
        return {node % n0, (node / n0) % n1, node / (n0 * n1)};
    }
    int cell_index(std::array<int, 3> i) const { return i[0] + cells_along(0) * (i[1] + cells_along(1) * i[2]); }
    std::array<int, 3> cell_multi(int cell) const {
        const int c0 = cells_along(0), c1 = cells_along(1);
        return {cell % c0, (cell / c0) % c1, cell / (c0 * c1)};
    }
    std::array<double, 3> node_coords(int node) const {
        auto i = node_multi(node);
        return {i[0] * h, i[1] * h, i[2] * h};
    }
    /// Global node of local vertex a (bit k of a selects the upper node along axis k).
    int cell_node(int cell, int a) const {
        auto c = cell_multi(cell);
        std::array<int, 3> i{c[0] + (a & 1), c[1] + ((a >> 1) & 1), c[2] + ((a >> 2) & 1)};
        for (int k = dim; k < 3; ++k) i[k] = 0;
        return node_index(i);
    }
};

/// Unit cell [0,1]^dim with n cells per axis.
inline Grid build_grid(int dim, int n) {
    check_dim(dim);
    if (n < 2) throw DomainError("unit-cell grid needs n >= 2 cells per axis");
    return Grid::box(dim, {n, n, n}, 1.0 / n);
}

/// Tensor-product Simpson rule on the reference cell [0,1]^dim.
struct QuadratureRule {
    std::vector<std::array<double, 3>> points;
    std::vector<double> weights;
    int size() const { return static_cast<int>(weights.size()); }
};

inline QuadratureRule simpson_rule(int dim) {
    static constexpr double x[3] = {0.0, 0.5, 1.0};
    static constexpr double w[3] = {1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0};
    QuadratureRule q;
    const int nz = dim == 3 ? 3 : 1;
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < 3; ++j)
            for (int i = 0; i < 3; ++i) {
                q.points.push_back({x[i], x[j], dim == 3 ? x[k] : 0.0});
                q.weights.push_back(w[i] * w[j] * (dim == 3 ? w[k] : 1.0));
            }
    return q;
}

/// Multilinear shape functions evaluated at the quadrature points.
struct ReferenceElement {
    int dim = 2;
    QuadratureRule rule;
    Eigen::MatrixXd values;                  // (qp, local node)
    std::vector<Eigen::MatrixXd> gradients;  // per qp: (local node, axis), reference coordinates

    explicit ReferenceElement(int d) : dim(d), rule(simpson_rule(d)) {
        const int nen = 1 << d, nq = rule.size();
        values.resize(nq, nen);
        gradients.assign(nq, Eigen::MatrixXd::Zero(nen, d));
        for (int q = 0; q < nq; ++q) {
            const auto& p = rule.points[q];
            for (int a = 0; a < nen; ++a) {
                double f[3], df[3];
                for (int k = 0; k < d; ++k) {
                    const bool up = (a >> k) & 1;
                    f[k] = up ? p[k] : 1.0 - p[k];
                    df[k] = up ? 1.0 : -1.0;
                }
                double val = 1.0;
                for (int k = 0; k < d; ++k) val *= f[k];
                values(q, a) = val;
                for (int k = 0; k < d; ++k) {
                    double g = df[k];
                    for (int m = 0; m < d; ++m)
                        if (m != k) g *= f[m];
                    gradients[q](a, k) = g;
                }
            }
        }
    }
    int nodes() const { return 1 << dim; }
    int quad_points() const { return rule.size(); }

    /// Strain-displacement matrix (engineering Voigt) at qp for mesh size h.
    /// Columns are ordered local node major, component minor.
    Eigen::MatrixXd strain_matrix(int q, double h) const {
        const int nen = nodes();
        Eigen::MatrixXd B = Eigen::MatrixXd::Zero(voigt_size(dim), nen * dim);
        for (int a = 0; a < nen; ++a) {
            auto g = [&](int k) { return gradients[q](a, k) / h; };
            for (int I = 0; I < voigt_size(dim); ++I) {
                auto [i, j] = voigt_pair(dim, I);
                // e_ij = (d_j u_i + d_i u_j) / 2; engineering shear doubles off-diagonals
                if (i == j) {
                    B(I, a * dim + i) += g(i);
                } else {
                    B(I, a * dim + i) += g(j);
                    B(I, a * dim + j) += g(i);
                }
            }
        }
        return B;
    }
};

/// Map from grid nodes to the unknowns ("masters") of a nodal field.
struct DofMap {
    std::vector<int> node_to_master;
    int master_count = 0;

    int dofs(int components) const { return master_count * components; }
};

inline DofMap identity_dof_map(const Grid& g) {
    DofMap m;
    m.master_count = g.node_count();
    m.node_to_master.resize(m.master_count);
    for (int i = 0; i < m.master_count; ++i) m.node_to_master[i] = i;
    return m;
}

/// Opposite faces share nodes; masters are numbered on the n^dim lattice.
inline DofMap periodic_dof_map(const Grid& g) {
    DofMap m;
    const int c0 = g.cells_along(0), c1 = g.cells_along(1);
    m.master_count = g.cell_count();
    m.node_to_master.resize(g.node_count());
    for (int node = 0; node < g.node_count(); ++node) {
        auto i = g.node_multi(node);
        for (int k = 0; k < g.dim; ++k) i[k] %= g.cells[k];
        m.node_to_master[node] = i[0] + c0 * (i[1] + c1 * i[2]);
    }
    return m;
}

/// Nodal values from master values (components interleaved per node).
inline Eigen::VectorXd expand(const DofMap& m, const Eigen::VectorXd& master, int components = 1) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(m.node_to_master.size()) * components);
    for (size_t n = 0; n < m.node_to_master.size(); ++n)
        for (int c = 0; c < components; ++c) out(n * components + c) = master(m.node_to_master[n] * components + c);
    return out;
}

/// Adjoint of `expand`: sums nodal entries onto their masters.
inline Eigen::VectorXd accumulate(const DofMap& m, const Eigen::VectorXd& nodal, int components = 1) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(m.dofs(components));
    for (size_t n = 0; n < m.node_to_master.size(); ++n)
        for (int c = 0; c < components; ++c) out(m.node_to_master[n] * components + c) += nodal(n * components + c);
    return out;
}

/// First node of every master (representative); useful for restricting nodal fields.
inline Eigen::VectorXd restrict_to_masters(const DofMap& m, const Eigen::VectorXd& nodal, int components = 1) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(m.dofs(components));
    std::vector<char> seen(m.master_count, 0);
    for (size_t n = 0; n < m.node_to_master.size(); ++n) {
        const int ms = m.node_to_master[n];
        if (seen[ms]) continue;
        seen[ms] = 1;
        for (int c = 0; c < components; ++c) out(ms * components + c) = nodal(n * components + c);
    }
    return out;
}

/// Nodal field on a grid; `components` values per node, interleaved.
struct NodalField {
    Grid grid;
    int components = 1;
    Eigen::VectorXd values;
};

/// Scalar nodal phase field on the unit cell.
struct PhaseField {
    Grid grid;
    Eigen::VectorXd values;
};

/// Values of a scalar nodal field at every (cell, quadrature point), cell major.
inline Eigen::VectorXd values_at_quadrature(const Grid& g, const ReferenceElement& ref, const Eigen::VectorXd& v) {
    const int nq = ref.quad_points(), nen = ref.nodes();
    Eigen::VectorXd out(static_cast<Eigen::Index>(g.cell_count()) * nq);
    for (int c = 0; c < g.cell_count(); ++c) {
        Eigen::VectorXd ve(nen);
        for (int a = 0; a < nen; ++a) ve(a) = v(g.cell_node(c, a));
        out.segment(static_cast<Eigen::Index>(c) * nq, nq) = ref.values * ve;
    }
    return out;
}

/// Stiffness assembly with a fixed sparsity pattern and a precomputed scatter
/// map, so repeated assemblies (optimizer iterations) only rewrite values.
class ElasticityAssembler {
public:
    ElasticityAssembler(const Grid& grid, DofMap map)
        : grid_(grid), map_(std::move(map)), ref_(grid.dim) {
        if (static_cast<int>(map_.node_to_master.size()) != grid.node_count())
            throw StructureError("dof map does not match the grid node count");
        const int d = grid.dim, nen = ref_.nodes(), ne = nen * d, n = map_.dofs(d);
        for (int mst : map_.node_to_master)
            if (mst < 0 || mst >= map_.master_count) throw StructureError("dof map references an invalid master");
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<size_t>(grid.cell_count()) * ne * ne);
        for (int c = 0; c < grid.cell_count(); ++c) {
            auto dofs = element_dofs(c);
            for (int i = 0; i < ne; ++i)
                for (int j = 0; j < ne; ++j) trip.emplace_back(dofs[i], dofs[j], 1.0);
        }
        pattern_.resize(n, n);
        pattern_.setFromTriplets(trip.begin(), trip.end());
        pattern_.makeCompressed();
        scatter_.resize(static_cast<size_t>(grid.cell_count()) * ne * ne);
        const int* outer = pattern_.outerIndexPtr();
        const int* inner = pattern_.innerIndexPtr();
        for (int c = 0; c < grid.cell_count(); ++c) {
            auto dofs = element_dofs(c);
            for (int j = 0; j < ne; ++j) {
                const int col = dofs[j];
                for (int i = 0; i < ne; ++i) {
                    const int* pos = std::lower_bound(inner + outer[col], inner + outer[col + 1], dofs[i]);
                    scatter_[(static_cast<size_t>(c) * ne + j) * ne + i] = static_cast<int>(pos - inner);
                }
            }
        }
        B_.reserve(ref_.quad_points());
        for (int q = 0; q < ref_.quad_points(); ++q) B_.push_back(ref_.strain_matrix(q, grid.h));
    }

    const Grid& grid() const { return grid_; }
    const DofMap& dof_map() const { return map_; }
    const ReferenceElement& reference() const { return ref_; }
    const Eigen::MatrixXd& strain_matrix(int q) const { return B_[q]; }
    int dofs() const { return map_.dofs(grid_.dim); }

    std::vector<int> element_dofs(int cell) const {
        const int d = grid_.dim, nen = 1 << d;
        std::vector<int> out(nen * d);
        for (int a = 0; a < nen; ++a)
            for (int k = 0; k < d; ++k) out[a * d + k] = map_.node_to_master[grid_.cell_node(cell, a)] * d + k;
        return out;
    }

    /// Element matrix sum_q |K| w_q B_q^T C_q B_q, mirrored from its upper triangle.
    template <class Sampler>
    Eigen::MatrixXd element_matrix(int cell, Sampler&& C_at) const {
        const int ne = ref_.nodes() * grid_.dim;
        Eigen::MatrixXd Ke = Eigen::MatrixXd::Zero(ne, ne);
        for (int q = 0; q < ref_.quad_points(); ++q) {
            const double w = grid_.cell_volume() * ref_.rule.weights[q];
            const Eigen::MatrixXd CB = C_at(cell, q) * B_[q];
            Ke.noalias() += w * (B_[q].transpose() * CB);
        }
        symmetrize(Ke);
        return Ke;
    }

    /// Stiffness matrix for a tensor sampled at every (cell, quadrature point).
    template <class Sampler>
    SparseMatrix assemble(Sampler&& C_at) const {
        SparseMatrix A = pattern_;
        double* val = A.valuePtr();
        std::fill(val, val + A.nonZeros(), 0.0);
        for (int c = 0; c < grid_.cell_count(); ++c) scatter(c, element_matrix(c, C_at), val);
        return A;
    }

    /// Stiffness for C(cell, q) = scale[cell * nq + q] * C_ref, using cached
    /// per-quadrature-point element matrices.
    SparseMatrix assemble_scaled(const Eigen::MatrixXd& C_ref, std::span<const double> scale) const {
        const int nq = ref_.quad_points();
        if (static_cast<int>(scale.size()) != grid_.cell_count() * nq)
            throw StructureError("scale field has the wrong length");
        cache_reference(C_ref);
        SparseMatrix A = pattern_;
        double* val = A.valuePtr();
        std::fill(val, val + A.nonZeros(), 0.0);
        const int ne = ref_.nodes() * grid_.dim;
        Eigen::MatrixXd Ke(ne, ne);
        for (int c = 0; c < grid_.cell_count(); ++c) {
            Ke.setZero();
            for (int q = 0; q < nq; ++q) Ke.noalias() += scale[c * nq + q] * Kq_[q];
            scatter(c, Ke, val);
        }
        return A;
    }

    /// Element matrix with tensor C on every quadrature point of a cell.
    Eigen::MatrixXd element_matrix_const(const Eigen::MatrixXd& C) const {
        return element_matrix(0, [&](int, int) -> const Eigen::MatrixXd& { return C; });
    }

    /// Load vectors R = -sum |K| w B^T C e for each column e of `strains`.
    template <class Sampler>
    Eigen::MatrixXd strain_loads(Sampler&& C_at, const Eigen::MatrixXd& strains) const {
        Eigen::MatrixXd R = Eigen::MatrixXd::Zero(dofs(), strains.cols());
        for (int c = 0; c < grid_.cell_count(); ++c) {
            auto dofs_e = element_dofs(c);
            Eigen::MatrixXd Re = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dofs_e.size()), strains.cols());
            for (int q = 0; q < ref_.quad_points(); ++q) {
                const double w = grid_.cell_volume() * ref_.rule.weights[q];
                Re.noalias() -= w * (B_[q].transpose() * (C_at(c, q) * strains));
            }
            for (size_t i = 0; i < dofs_e.size(); ++i) R.row(dofs_e[i]) += Re.row(static_cast<Eigen::Index>(i));
        }
        return R;
    }

    /// Scatter an element vector into a global vector.
    void add_element_vector(int cell, const Eigen::VectorXd& fe, Eigen::VectorXd& f) const {
        auto dofs_e = element_dofs(cell);
        for (size_t i = 0; i < dofs_e.size(); ++i) f(dofs_e[i]) += fe(static_cast<Eigen::Index>(i));
    }
    Eigen::VectorXd gather(int cell, const Eigen::VectorXd& u) const {
        auto dofs_e = element_dofs(cell);
        Eigen::VectorXd ue(static_cast<Eigen::Index>(dofs_e.size()));
        for (size_t i = 0; i < dofs_e.size(); ++i) ue(static_cast<Eigen::Index>(i)) = u(dofs_e[i]);
        return ue;
    }

private:
    static void symmetrize(Eigen::MatrixXd& K) {
        for (Eigen::Index j = 0; j < K.cols(); ++j)
            for (Eigen::Index i = j + 1; i < K.rows(); ++i) K(i, j) = K(j, i);
    }

    void scatter(int cell, const Eigen::MatrixXd& Ke, double* val) const {
        const int ne = static_cast<int>(Ke.rows());
        const int* s = &scatter_[static_cast<size_t>(cell) * ne * ne];
        for (int j = 0; j < ne; ++j)
            for (int i = 0; i < ne; ++i) val[s[j * ne + i]] += Ke(i, j);
    }

    void cache_reference(const Eigen::MatrixXd& C_ref) const {
        if (Kq_.size() == static_cast<size_t>(ref_.quad_points()) && Kq_ref_.size() == C_ref.size() &&
            Kq_ref_ == C_ref)
            return;
        Kq_.clear();
        for (int q = 0; q < ref_.quad_points(); ++q) {
            const double w = grid_.cell_volume() * ref_.rule.weights[q];
            Eigen::MatrixXd K = w * (B_[q].transpose() * (C_ref * B_[q]));
            symmetrize(K);
            Kq_.push_back(std::move(K));
        }
        Kq_ref_ = C_ref;
    }

    Grid grid_;
    DofMap map_;
    ReferenceElement ref_;
    std::vector<Eigen::MatrixXd> B_;
    SparseMatrix pattern_;
    std::vector<int> scatter_;
    mutable std::vector<Eigen::MatrixXd> Kq_;
    mutable Eigen::MatrixXd Kq_ref_;
};

struct AssembledSystem {
    SparseMatrix matrix;
    Eigen::MatrixXd rhs;  // one column per requested strain; empty when none requested
};

/// Stiffness over mapped dofs plus the corrector loads for the given strains.
template <class Sampler>
AssembledSystem assemble_elasticity(const Grid& grid, Sampler&& C_at, const DofMap& map,
                                    const Eigen::MatrixXd* rhs_strains = nullptr) {
    ElasticityAssembler asmb(grid, map);
    AssembledSystem out{asmb.assemble(C_at), {}};
    if (rhs_strains) out.rhs = asmb.strain_loads(C_at, *rhs_strains);
    return out;
}

// ---------------------------------------------------------------------------
// Linear solvers

struct SolveStats {
    int iterations = 0;
    double relative_residual = 0.0;
};

namespace detail {
/// Orthonormal basis (modified Gram-Schmidt) of the given kernel vectors.
inline std::vector<Eigen::VectorXd> orthonormalize(std::span<const Eigen::VectorXd> vs) {
    std::vector<Eigen::VectorXd> out;
    for (const auto& v : vs) {
        Eigen::VectorXd w = v;
        for (const auto& o : out) w -= o.dot(w) * o;
        const double nrm = w.norm();
        if (nrm > 1e-14 * std::max(1.0, v.norm())) out.push_back(w / nrm);
    }
    return out;
}
inline void project_out(Eigen::VectorXd& x, const std::vector<Eigen::VectorXd>& basis) {
    for (const auto& o : basis) x -= o.dot(x) * o;
}
}  // namespace detail

/// Default PCG iteration cap: 50 sqrt(n) + 1000.
inline int default_cg_cap(Eigen::Index n) { return static_cast<int>(50.0 * std::sqrt(static_cast<double>(n))) + 1000; }

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// semidefinite A whose kernel is spanned by `nullspace`. The right-hand side
/// and every iterate are projected onto the complement of the kernel.
inline Eigen::VectorXd solve_spd(const SparseMatrix& A, const Eigen::VectorXd& b,
                                 std::span<const Eigen::VectorXd> nullspace, double tol, SolveStats* stats = nullptr,
                                 int max_iter = -1) {
    const Eigen::Index n = A.rows();
    if (A.cols() != n || b.size() != n) throw StructureError("solve_spd: size mismatch");
    const auto basis = detail::orthonormalize(nullspace);
    Eigen::VectorXd rhs = b;
    detail::project_out(rhs, basis);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    const double bnorm = rhs.norm();
    if (stats) *stats = {};
    if (bnorm == 0.0) return x;
    if (max_iter < 0) max_iter = default_cg_cap(n);
    Eigen::VectorXd inv_diag = A.diagonal();
    for (Eigen::Index i = 0; i < n; ++i) inv_diag(i) = inv_diag(i) > 0.0 ? 1.0 / inv_diag(i) : 1.0;
    Eigen::VectorXd r = rhs;
    Eigen::VectorXd z = inv_diag.cwiseProduct(r);
    detail::project_out(z, basis);
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    double rel = 1.0;
    int it = 0;
    for (; it < max_iter; ++it) {
        Eigen::VectorXd Ap = A * p;
        const double alpha = rz / p.dot(Ap);
        x += alpha * p;
        r -= alpha * Ap;
        rel = r.norm() / bnorm;
        if (rel <= tol) {
            ++it;
            break;
        }
        z = inv_diag.cwiseProduct(r);
        detail::project_out(z, basis);
        const double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
    }
    detail::project_out(x, basis);
    rel = (A * x - rhs).norm() / bnorm;
    if (stats) *stats = {it, rel};
    if (!(rel <= tol)) throw SolverError("conjugate gradients did not converge", rel);
    return x;
}

/// Sparse LDL^T for a semidefinite matrix whose kernel is removed by pinning a
/// few dofs; solutions are then projected onto the kernel complement. The
/// symbolic analysis is reused across factorizations with the same pattern.
class PinnedLdltSolver {
public:
    PinnedLdltSolver(std::vector<int> pinned, std::vector<Eigen::VectorXd> nullspace)
        : pinned_(std::move(pinned)), basis_(detail::orthonormalize(nullspace)) {}

    void factorize(const SparseMatrix& A) {
        A_ = A;
        SparseMatrix M = A;
        std::vector<char> pin(M.rows(), 0);
        for (int p : pinned_) pin[p] = 1;
        const double dscale = A.diagonal().cwiseAbs().mean();
        for (int k = 0; k < M.outerSize(); ++k)
            for (SparseMatrix::InnerIterator it(M, k); it; ++it)
                if (pin[it.row()] || pin[it.col()]) it.valueRef() = (it.row() == it.col()) ? dscale : 0.0;
        if (!analyzed_) {
            ldlt_.analyzePattern(M);
            analyzed_ = true;
        }
        ldlt_.factorize(M);
        if (ldlt_.info() != Eigen::Success) throw SolverError("sparse LDL^T factorization failed", 1.0);
        pin_mask_ = std::move(pin);
    }

    /// Solve for one or several right-hand sides; throws if any relative
    /// residual exceeds tol. Returns the worst relative residual in `worst`.
    Eigen::MatrixXd solve(const Eigen::MatrixXd& B, double tol, double* worst = nullptr) const {
        Eigen::MatrixXd X(B.rows(), B.cols());
        double w = 0.0;
        for (Eigen::Index c = 0; c < B.cols(); ++c) {
            Eigen::VectorXd b = B.col(c);
            detail::project_out(b, basis_);
            const double bn = b.norm();
            if (bn == 0.0) {
                X.col(c).setZero();
                continue;
            }
            Eigen::VectorXd bm = b;
            for (Eigen::Index i = 0; i < bm.size(); ++i)
                if (pin_mask_[i]) bm(i) = 0.0;
            Eigen::VectorXd x = ldlt_.solve(bm);
            detail::project_out(x, basis_);
            const double rel = (A_ * x - b).norm() / bn;
            w = std::max(w, rel);
            X.col(c) = x;
        }
        if (worst) *worst = w;
        if (!(w <= tol)) throw SolverError("direct solve residual above tolerance", w);
        return X;
    }

private:
    std::vector<int> pinned_;
    std::vector<Eigen::VectorXd> basis_;
    SparseMatrix A_;
    std::vector<char> pin_mask_;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
    bool analyzed_ = false;
};

/// Constant translations per component on the master dofs (kernel of the
/// periodic elasticity operator).
inline std::vector<Eigen::VectorXd> translation_kernel(int master_count, int dim) {
    std::vector<Eigen::VectorXd> out;
    for (int c = 0; c < dim; ++c) {
        Eigen::VectorXd t = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(master_count) * dim);
        for (int m = 0; m < master_count; ++m) t(m * dim + c) = 1.0;
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace twoscale
