#pragma once
// Isotropic parameter algebra, Voigt elasticity tensors and Hashin-Shtrikman
// upper bounds.
//
// Voigt convention: engineering shear strains, i.e. the strain vector is
// (e11, e22, 2 e12) in 2D and (e11, e22, e33, 2 e23, 2 e13, 2 e12) in 3D.
// The shear diagonal of an isotropic tensor then holds mu and C e : e is the
// plain dot product e^T C e.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "twoscale/errors.hpp"

namespace twoscale {

inline void check_dim(int dim) {
    if (dim != 2 && dim != 3) throw DomainError("dimension must be 2 or 3, got " + std::to_string(dim));
}

/// Number of independent strain components (3 in 2D, 6 in 3D).
inline int voigt_size(int dim) { return dim == 2 ? 3 : 6; }

/// Number of independent entries of a symmetric Voigt matrix (6 in 2D, 21 in 3D).
inline int voigt_upper_count(int dim) {
    const int s = voigt_size(dim);
    return s * (s + 1) / 2;
}

/// Tensor index pair (i, j) of Voigt index I.
inline std::pair<int, int> voigt_pair(int dim, int I) {
    static constexpr std::array<std::pair<int, int>, 3> p2{{{0, 0}, {1, 1}, {0, 1}}};
    static constexpr std::array<std::pair<int, int>, 6> p3{{{0, 0}, {1, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}}};
    return dim == 2 ? p2.at(I) : p3.at(I);
}

struct IsoParams {
    int dim = 2;
    double nu = 0.0;
    double E = 0.0;
    double kappa = 0.0;
    double mu = 0.0;
    double lambda = 0.0;  // kappa - 2 mu / dim
};

struct ElasticityTensor {
    int dim = 2;
    Eigen::MatrixXd voigt;

    ElasticityTensor() = default;
    ElasticityTensor(int d, Eigen::MatrixXd m) : dim(d), voigt(std::move(m)) {}
    static ElasticityTensor zero(int d) {
        check_dim(d);
        return {d, Eigen::MatrixXd::Zero(voigt_size(d), voigt_size(d))};
    }

    double operator()(int I, int J) const { return voigt(I, J); }

    /// Row-major upper triangle of the Voigt matrix.
    Eigen::VectorXd upper() const {
        const int s = voigt_size(dim);
        Eigen::VectorXd out(voigt_upper_count(dim));
        int k = 0;
        for (int I = 0; I < s; ++I)
            for (int J = I; J < s; ++J) out(k++) = voigt(I, J);
        return out;
    }

    static ElasticityTensor from_upper(int d, const Eigen::VectorXd& up) {
        check_dim(d);
        const int s = voigt_size(d);
        if (up.size() != voigt_upper_count(d)) throw DomainError("wrong number of Voigt components");
        Eigen::MatrixXd m(s, s);
        int k = 0;
        for (int I = 0; I < s; ++I)
            for (int J = I; J < s; ++J) m(I, J) = m(J, I) = up(k++);
        return {d, m};
    }
};

namespace detail {
inline double nu_upper(int dim) { return dim == 2 ? 1.0 : 0.5; }
}  // namespace detail

inline std::pair<double, double> nu_e_from_moduli(double kappa, double mu, int dim) {
    check_dim(dim);
    if (!(kappa > 0.0) || !(mu > 0.0)) throw DomainError("bulk and shear moduli must be positive");
    if (dim == 2) return {(kappa - mu) / (kappa + mu), 4.0 * kappa * mu / (kappa + mu)};
    return {(3.0 * kappa - 2.0 * mu) / (6.0 * kappa + 2.0 * mu), 9.0 * kappa * mu / (3.0 * kappa + mu)};
}

inline IsoParams iso_from_nu_e(double nu, double E, int dim) {
    check_dim(dim);
    if (!(nu > -1.0 && nu < detail::nu_upper(dim)))
        throw DomainError("Poisson's ratio " + std::to_string(nu) + " outside the admissible interval");
    if (!(E > 0.0)) throw DomainError("Young's modulus must be positive");
    IsoParams p;
    p.dim = dim;
    p.nu = nu;
    p.E = E;
    p.mu = E / (2.0 * (1.0 + nu));
    p.kappa = dim == 2 ? E / (2.0 * (1.0 - nu)) : E / (3.0 * (1.0 - 2.0 * nu));
    p.lambda = p.kappa - 2.0 * p.mu / dim;
    return p;
}

inline IsoParams iso_from_moduli(double kappa, double mu, int dim) {
    auto [nu, E] = nu_e_from_moduli(kappa, mu, dim);
    IsoParams p;
    p.dim = dim;
    p.nu = nu;
    p.E = E;
    p.kappa = kappa;
    p.mu = mu;
    p.lambda = kappa - 2.0 * mu / dim;
    return p;
}

/// Voigt pattern of kappa * (delta_ij delta_kl): ones on the normal block.
inline Eigen::MatrixXd bulk_pattern(int dim) {
    const int s = voigt_size(dim);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(s, s);
    a.topLeftCorner(dim, dim).setOnes();
    return a;
}

/// Voigt pattern of mu * (delta_ik delta_jl + delta_il delta_kj - 2/d delta_ij delta_kl).
inline Eigen::MatrixXd shear_pattern(int dim) {
    const int s = voigt_size(dim);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(s, s);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) b(i, j) = (i == j ? 2.0 : 0.0) - 2.0 / dim;
    for (int I = dim; I < s; ++I) b(I, I) = 1.0;
    return b;
}

/// Isotropic tensor built directly from (kappa, mu); mu = 0 is allowed here.
inline ElasticityTensor tensor_from_moduli(double kappa, double mu, int dim) {
    check_dim(dim);
    return {dim, kappa * bulk_pattern(dim) + mu * shear_pattern(dim)};
}

inline ElasticityTensor tensor_from_iso(const IsoParams& p) { return tensor_from_moduli(p.kappa, p.mu, p.dim); }

/// Derivatives of the isotropic tensor with respect to (nu, E).
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> tensor_derivatives_nu_e(double nu, double E, int dim) {
    const IsoParams p = iso_from_nu_e(nu, E, dim);
    const double dmu_dnu = -E / (2.0 * (1.0 + nu) * (1.0 + nu));
    const double dkappa_dnu =
        dim == 2 ? E / (2.0 * (1.0 - nu) * (1.0 - nu)) : 2.0 * E / (3.0 * (1.0 - 2.0 * nu) * (1.0 - 2.0 * nu));
    Eigen::MatrixXd d_nu = dkappa_dnu * bulk_pattern(dim) + dmu_dnu * shear_pattern(dim);
    Eigen::MatrixXd d_E = (p.kappa / E) * bulk_pattern(dim) + (p.mu / E) * shear_pattern(dim);
    return {d_nu, d_E};
}

/// Isotropic part of a (possibly anisotropic) Voigt tensor via Voigt averages;
/// exact for isotropic input.
inline std::pair<double, double> isotropic_moduli(const ElasticityTensor& C) {
    const auto& m = C.voigt;
    if (C.dim == 2) {
        const double kappa = (m(0, 0) + m(1, 1) + 2.0 * m(0, 1)) / 4.0;
        const double mu = (m(0, 0) + m(1, 1) - 2.0 * m(0, 1) + 4.0 * m(2, 2)) / 8.0;
        return {kappa, mu};
    }
    const double diag = m(0, 0) + m(1, 1) + m(2, 2);
    const double off = m(0, 1) + m(0, 2) + m(1, 2);
    const double shear = m(3, 3) + m(4, 4) + m(5, 5);
    return {(diag + 2.0 * off) / 9.0, (diag - off + 3.0 * shear) / 15.0};
}

/// (nu, E) of the isotropic part of C.
inline std::pair<double, double> nu_e_of(const ElasticityTensor& C) {
    auto [kappa, mu] = isotropic_moduli(C);
    return nu_e_from_moduli(kappa, mu, C.dim);
}

struct HSBounds {
    double kappa_u = 0.0;
    double mu_u = 0.0;
    std::array<std::array<double, 2>, 3> triangle{};  // (nu_min,0), (nu_max,0), (nu_top,E_top)
};

inline HSBounds hs_upper(double theta_s, const IsoParams& base, double delta) {
    check_dim(base.dim);
    if (!(theta_s >= 0.0 && theta_s <= 1.0)) throw DomainError("volume fraction must lie in [0,1]");
    if (!(delta >= 1e-12 && delta <= 1.0)) throw DomainError("soft-phase ratio delta must lie in [1e-12, 1]");
    const int d = base.dim;
    const double kappa = base.kappa, mu = base.mu;
    const double lam2mu = base.lambda + 2.0 * mu;
    HSBounds b;
    if (delta == 1.0) {
        b.kappa_u = kappa;
        b.mu_u = mu;
    } else if (theta_s == 0.0) {
        // the formula collapses to the soft phase; avoid the cancellation in kappa + (delta - 1) kappa
        b.kappa_u = delta * kappa;
        b.mu_u = delta * mu;
    } else {
        b.kappa_u = kappa + (1.0 - theta_s) / (1.0 / ((delta - 1.0) * kappa) + theta_s / lam2mu);
        b.mu_u = mu + (1.0 - theta_s) / (1.0 / ((delta - 1.0) * mu) +
                                         2.0 * theta_s * (d - 1) * (kappa + 2.0 * mu) /
                                             ((d * d + d - 2) * mu * lam2mu));
    }
    auto [nu_top, E_top] = nu_e_from_moduli(b.kappa_u, b.mu_u, d);
    b.triangle = {{{-1.0, 0.0}, {detail::nu_upper(d), 0.0}, {nu_top, E_top}}};
    return b;
}

/// Barycentric coordinates of (nu, E) with respect to the bound triangle.
inline std::array<double, 3> hs_barycentric(double nu, double E, const HSBounds& b) {
    const auto& t = b.triangle;
    const double x0 = t[0][0], y0 = t[0][1], x1 = t[1][0], y1 = t[1][1], x2 = t[2][0], y2 = t[2][1];
    const double det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2);
    const double l0 = ((y1 - y2) * (nu - x2) + (x2 - x1) * (E - y2)) / det;
    const double l1 = ((y2 - y0) * (nu - x2) + (x0 - x2) * (E - y2)) / det;
    return {l0, l1, 1.0 - l0 - l1};
}

inline bool hs_contains(double nu, double E, const HSBounds& b, double tol) {
    for (double l : hs_barycentric(nu, E, b))
        if (l < -tol - 1e-12) return false;  // rounding slack for exact boundary points
    return true;
}

}  // namespace twoscale
