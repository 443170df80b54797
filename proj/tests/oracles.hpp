#pragma once
// Independent reference computations used by the tests. Nothing here calls
// into the library's solvers; only plain data types are shared.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

/// 5-point Gauss-Legendre on [0,1].
inline const std::array<std::pair<double, double>, 5>& gauss5() {
    static const std::array<std::pair<double, double>, 5> r = [] {
        const double x[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640};
        const double w[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
                             0.2369268850561891};
        std::array<std::pair<double, double>, 5> out{};
        for (int i = 0; i < 5; ++i) out[i] = {0.5 * (x[i] + 1.0), 0.5 * w[i]};
        return out;
    }();
    return r;
}

/// Composite Gauss integral of f over [a,b] with `pieces` subintervals.
inline double integrate(const std::function<double(double)>& f, double a, double b, int pieces) {
    double s = 0.0;
    const double h = (b - a) / pieces;
    for (int p = 0; p < pieces; ++p)
        for (const auto& [x, w] : gauss5()) s += h * w * f(a + (p + x) * h);
    return s;
}

/// Isotropic Voigt matrix (engineering shear) from Lame parameters.
inline Eigen::MatrixXd iso_voigt(double lambda, double mu, int dim) {
    const int m = dim == 2 ? 3 : 6;
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) C(i, j) = lambda;
        C(i, i) = lambda + 2.0 * mu;
    }
    for (int i = dim; i < m; ++i) C(i, i) = mu;
    return C;
}

/// (lambda, mu) in 2D plane elasticity from (nu, E) with nu = (k-m)/(k+m),
/// E = 4km/(k+m) and lambda = k - m.
inline std::pair<double, double> lame_2d(double nu, double E) {
    const double mu = E / (2.0 * (1.0 + nu));
    const double kappa = E / (2.0 * (1.0 - nu));
    return {kappa - mu, mu};
}

/// Rank-1 laminate of a layered tensor field C(x1) in 2D Voigt order
/// (11, 22, 12), layers normal to x1. Uses the general lamination formula
///   C*_NN = <C_NN^-1>^-1,  C*_NT = C*_NN <C_NN^-1 C_NT>,
///   C*_TT = <C_TT - C_TN C_NN^-1 C_NT> + <C_TN C_NN^-1> C*_NN <C_NN^-1 C_NT>
/// with N = {11, 12} and T = {22}; averages by composite Gauss quadrature.
inline Eigen::Matrix3d laminate_2d(const std::function<Eigen::Matrix3d(double)>& C_of_x, int pieces) {
    const int N[2] = {0, 2}, T = 1;
    Eigen::Matrix2d avg_inv = Eigen::Matrix2d::Zero();
    Eigen::Vector2d avg_inv_nt = Eigen::Vector2d::Zero();
    double avg_schur = 0.0;
    for (int p = 0; p < pieces; ++p)
        for (const auto& [x, w] : gauss5()) {
            const double h = 1.0 / pieces;
            const Eigen::Matrix3d C = C_of_x((p + x) * h);
            Eigen::Matrix2d Cnn;
            Eigen::Vector2d Cnt;
            for (int a = 0; a < 2; ++a) {
                for (int b = 0; b < 2; ++b) Cnn(a, b) = C(N[a], N[b]);
                Cnt(a) = C(N[a], T);
            }
            const Eigen::Matrix2d inv = Cnn.inverse();
            avg_inv += h * w * inv;
            avg_inv_nt += h * w * (inv * Cnt);
            avg_schur += h * w * (C(T, T) - Cnt.dot(inv * Cnt));
        }
    const Eigen::Matrix2d Snn = avg_inv.inverse();
    const Eigen::Vector2d Snt = Snn * avg_inv_nt;
    const double Stt = avg_schur + avg_inv_nt.dot(Snn * avg_inv_nt);
    Eigen::Matrix3d out;
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) out(N[a], N[b]) = Snn(a, b);
        out(N[a], T) = out(T, N[a]) = Snt(a);
    }
    out(T, T) = Stt;
    return out;
}

/// Central difference of a scalar function along coordinate i.
inline double central(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x, int i,
                      double step) {
    Eigen::VectorXd p = x, m = x;
    p(i) += step;
    m(i) -= step;
    return (f(p) - f(m)) / (2.0 * step);
}

/// Relative error with a floor that keeps tiny components from dominating.
inline double rel_err(double approx, double exact, double floor) {
    return std::fabs(approx - exact) / std::max({std::fabs(exact), std::fabs(approx), floor});
}

/// Dense solution of min x^T H x subject to A x = b via the full KKT system.
inline Eigen::VectorXd kkt_solve(const Eigen::MatrixXd& H, const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    const int n = static_cast<int>(H.rows()), m = static_cast<int>(A.rows());
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m, n + m);
    K.topLeftCorner(n, n) = 2.0 * H;
    K.topRightCorner(n, m) = A.transpose();
    K.bottomLeftCorner(m, n) = A;
    Eigen::VectorXd r = Eigen::VectorXd::Zero(n + m);
    r.tail(m) = b;
    return K.fullPivLu().solve(r).head(n);
}

/// Uniform cubic B-spline (clamped, knots 0..1 with spacing tau) by the
/// Cox-de Boor recursion, independent of the library's evaluator.
inline double bspline(const std::vector<double>& knots, int i, int p, double x) {
    if (p == 0) {
        const bool last = x == knots.back() && knots[i + 1] == knots.back() && knots[i] < knots[i + 1];
        return (knots[i] <= x && x < knots[i + 1]) || last ? 1.0 : 0.0;
    }
    double a = 0.0, b = 0.0;
    const double d1 = knots[i + p] - knots[i], d2 = knots[i + p + 1] - knots[i + 1];
    if (d1 > 0.0) a = (x - knots[i]) / d1 * bspline(knots, i, p - 1, x);
    if (d2 > 0.0) b = (knots[i + p + 1] - x) / d2 * bspline(knots, i + 1, p - 1, x);
    return a + b;
}

inline std::vector<double> clamped_knots(double tau) {
    const int intervals = static_cast<int>(std::lround(1.0 / tau));
    std::vector<double> k(3, 0.0);
    for (int i = 0; i <= intervals; ++i) k.push_back(static_cast<double>(i) / intervals);
    for (int i = 0; i < 3; ++i) k.push_back(1.0);
    return k;
}

}  // namespace oracle
