#pragma once
// Clamped cubic tensor-product B-splines on [0,1]^2: the chart Psi into
// (nu, E) space fitted by constrained bending-energy minimization, and the
// cost spline j_ref interpolating resampled cell costs.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "twoscale/errors.hpp"

namespace twoscale {

/// Clamped uniform cubic knot vector with 1/tau intervals: M = 1/tau + 3 basis functions.
class CubicBasis {
public:
    explicit CubicBasis(double tau = 1.0 / 16.0) : tau_(tau) {
        const double m = 1.0 / tau;
        intervals_ = static_cast<int>(std::lround(m));
        if (!(tau > 0.0 && tau <= 1.0) || std::fabs(m - intervals_) > 1e-9)
            throw DomainError("knot spacing tau must be 1/k for a positive integer k");
        knots_.assign(4, 0.0);
        for (int i = 1; i < intervals_; ++i) knots_.push_back(i * tau_);
        knots_.insert(knots_.end(), 4, 1.0);
    }

    double tau() const { return tau_; }
    int intervals() const { return intervals_; }
    int size() const { return intervals_ + 3; }
    const std::vector<double>& knots() const { return knots_; }

    /// Index of the first of the four nonzero basis functions at x.
    int span(double x) const {
        const int s = static_cast<int>(std::floor(x / tau_));
        return std::clamp(s, 0, intervals_ - 1);
    }

    /// Values and derivatives up to `nd` (<= 3) of the four nonzero basis
    /// functions at x: out[k][r] = d^k/dx^k N_{span+r}(x).
    std::array<std::array<double, 4>, 4> local(double x, int nd) const {
        constexpr int p = 3;
        const int s = span(x) + p;  // knot index with t_s <= x < t_{s+1}
        const auto& U = knots_;
        double ndu[p + 1][p + 1], left[p + 1], right[p + 1];
        ndu[0][0] = 1.0;
        for (int j = 1; j <= p; ++j) {
            left[j] = x - U[s + 1 - j];
            right[j] = U[s + j] - x;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                ndu[j][r] = right[r + 1] + left[j - r];
                const double tmp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            ndu[j][j] = saved;
        }
        std::array<std::array<double, 4>, 4> ders{};
        for (int j = 0; j <= p; ++j) ders[0][j] = ndu[j][p];
        double a[2][p + 1];
        for (int r = 0; r <= p; ++r) {
            int s1 = 0, s2 = 1;
            a[0][0] = 1.0;
            for (int k = 1; k <= nd; ++k) {
                double d = 0.0;
                const int rk = r - k, pk = p - k;
                if (r >= k) {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                    d = a[s2][0] * ndu[rk][pk];
                }
                const int j1 = rk >= -1 ? 1 : -rk;
                const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
                for (int j = j1; j <= j2; ++j) {
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
                    d += a[s2][j] * ndu[rk + j][pk];
                }
                if (r <= pk) {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::swap(s1, s2);
            }
        }
        double f = p;
        for (int k = 1; k <= nd; ++k) {
            for (int j = 0; j <= p; ++j) ders[k][j] *= f;
            f *= (p - k);
        }
        return ders;
    }

    /// Dense row of the k-th derivative of all basis functions at x.
    Eigen::VectorXd row(double x, int k = 0) const {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(size());
        const auto d = local(x, k);
        const int s = span(x);
        for (int r = 0; r < 4; ++r) out(s + r) = d[k][r];
        return out;
    }

    /// Greville abscissae (interpolation sites with a nonsingular collocation matrix).
    std::vector<double> greville() const {
        std::vector<double> g(size());
        for (int i = 0; i < size(); ++i) g[i] = (knots_[i + 1] + knots_[i + 2] + knots_[i + 3]) / 3.0;
        return g;
    }

    /// Gram matrix of k-th derivatives, Gauss-Legendre with 15 points per knot interval.
    Eigen::MatrixXd gram(int k) const {
        static const auto gl = gauss_legendre_15();
        const int M = size();
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(M, M);
        for (int c = 0; c < intervals_; ++c) {
            const double a = c * tau_;
            for (const auto& [xi, w] : gl) {
                const double x = a + 0.5 * tau_ * (xi + 1.0);
                const auto d = local(x, k);
                const int s = span(x);
                for (int r = 0; r < 4; ++r)
                    for (int q = 0; q < 4; ++q) G(s + r, s + q) += 0.5 * tau_ * w * d[k][r] * d[k][q];
            }
        }
        return G;
    }

    /// Nodes and weights on [-1, 1] by Newton iteration on P_15.
    static std::vector<std::pair<double, double>> gauss_legendre_15() {
        constexpr int n = 15;
        std::vector<std::pair<double, double>> out;
        for (int i = 1; i <= n; ++i) {
            double x = std::cos(M_PI * (i - 0.25) / (n + 0.5)), dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= n; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::fabs(dx) < 1e-16) break;
            }
            out.push_back({x, 2.0 / ((1.0 - x * x) * dp * dp)});
        }
        return out;
    }

private:
    double tau_;
    int intervals_;
    std::vector<double> knots_;
};

/// Tensor-product spline with `components` outputs; coeffs[c](i, j) multiplies
/// N_i(q1) N_j(q2).
struct SplineSurface {
    double tau = 1.0 / 16.0;
    std::vector<Eigen::MatrixXd> coeffs;

    int components() const { return static_cast<int>(coeffs.size()); }
    CubicBasis basis() const { return CubicBasis(tau); }

    static bool clamp_param(std::array<double, 2>& q) {
        bool clamped = false;
        for (double& x : q) {
            if (!(x >= 0.0 && x <= 1.0)) {
                x = std::isnan(x) ? 0.0 : std::clamp(x, 0.0, 1.0);
                clamped = true;
            }
        }
        return clamped;
    }

    /// Value at q; parameters outside the unit square are clamped and flagged.
    Eigen::VectorXd eval(std::array<double, 2> q, bool* clamped = nullptr) const {
        const bool c = clamp_param(q);
        if (clamped) *clamped = c;
        const CubicBasis b = basis();
        const auto dx = b.local(q[0], 0), dy = b.local(q[1], 0);
        const int sx = b.span(q[0]), sy = b.span(q[1]);
        Eigen::VectorXd out = Eigen::VectorXd::Zero(components());
        for (int k = 0; k < components(); ++k)
            for (int r = 0; r < 4; ++r)
                for (int s = 0; s < 4; ++s) out(k) += coeffs[k](sx + r, sy + s) * dx[0][r] * dy[0][s];
        return out;
    }

    /// Analytic Jacobian (components x 2).
    Eigen::MatrixXd jacobian(std::array<double, 2> q, bool* clamped = nullptr) const {
        const bool c = clamp_param(q);
        if (clamped) *clamped = c;
        const CubicBasis b = basis();
        const auto dx = b.local(q[0], 1), dy = b.local(q[1], 1);
        const int sx = b.span(q[0]), sy = b.span(q[1]);
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(components(), 2);
        for (int k = 0; k < components(); ++k)
            for (int r = 0; r < 4; ++r)
                for (int s = 0; s < 4; ++s) {
                    J(k, 0) += coeffs[k](sx + r, sy + s) * dx[1][r] * dy[0][s];
                    J(k, 1) += coeffs[k](sx + r, sy + s) * dx[0][r] * dy[1][s];
                }
        return J;
    }

    /// Bending energy sum over components of int |D^2 f|^2, from the second
    /// derivatives at 15 x 15 Gauss points per knot cell. Going through the
    /// Gram matrices instead would leave a roundoff floor linear in the
    /// cancellation error of G2 C, far above 1e-12 for affine maps.
    double bending_energy() const {
        const CubicBasis b = basis();
        static const auto gl = CubicBasis::gauss_legendre_15();
        const int K = b.intervals();
        const double t = b.tau();
        std::vector<std::array<std::array<double, 4>, 4>> loc;
        std::vector<int> span;
        std::vector<double> wt;
        for (int c = 0; c < K; ++c)
            for (const auto& [xi, w] : gl) {
                const double x = (c + 0.5 * (xi + 1.0)) * t;
                loc.push_back(b.local(x, 2));
                span.push_back(b.span(x));
                wt.push_back(0.5 * t * w);
            }
        double e = 0.0;
        for (const auto& C : coeffs)
            for (size_t a = 0; a < loc.size(); ++a)
                for (size_t d = 0; d < loc.size(); ++d) {
                    double fxx = 0.0, fxy = 0.0, fyy = 0.0;
                    for (int r = 0; r < 4; ++r)
                        for (int s = 0; s < 4; ++s) {
                            const double c_rs = C(span[a] + r, span[d] + s);
                            fxx += c_rs * loc[a][2][r] * loc[d][0][s];
                            fxy += c_rs * loc[a][1][r] * loc[d][1][s];
                            fyy += c_rs * loc[a][0][r] * loc[d][2][s];
                        }
                    e += wt[a] * wt[d] * (fxx * fxx + 2.0 * fxy * fxy + fyy * fyy);
                }
        return e;
    }
};

struct Anchor {
    std::array<double, 2> q{};
    std::array<double, 2> p{};  // (nu, E)
};

/// Bending-energy Hessian H = G2 (x) G0 + 2 G1 (x) G1 + G0 (x) G2 on the
/// column-stacked coefficient vector (index i + M j).
inline Eigen::MatrixXd bending_matrix(const CubicBasis& b) {
    const Eigen::MatrixXd G0 = b.gram(0), G1 = b.gram(1), G2 = b.gram(2);
    const int M = b.size();
    Eigen::MatrixXd H(M * M, M * M);
    for (int j = 0; j < M; ++j)
        for (int l = 0; l < M; ++l)
            H.block(j * M, l * M, M, M) = G2 * G0(j, l) + 2.0 * G1 * G1(j, l) + G0 * G2(j, l);
    return H;
}

/// Psi = argmin int |D^2 Psi|^2 subject to Psi(q_i) = p_i, by a dense KKT solve.
inline SplineSurface fit_psi(const std::vector<Anchor>& anchors, double tau) {
    const CubicBasis b(tau);
    const int M = b.size(), N = M * M, m = static_cast<int>(anchors.size());
    for (int i = 0; i < m; ++i) {
        for (double x : anchors[i].q)
            if (!(x >= 0.0 && x <= 1.0)) throw FitError("anchor " + std::to_string(i) + " lies outside the unit square");
        for (int j = 0; j < i; ++j)
            if (anchors[i].q == anchors[j].q)
                throw FitError("anchors " + std::to_string(j) + " and " + std::to_string(i) + " share a preimage");
    }
    {
        Eigen::MatrixXd aff(m, 3);
        for (int i = 0; i < m; ++i) aff.row(i) << anchors[i].q[0], anchors[i].q[1], 1.0;
        if (m < 3 || Eigen::FullPivLU<Eigen::MatrixXd>(aff).rank() < 3)
            throw FitError("under-determined chart: need at least 3 affinely independent anchors");
    }
    Eigen::MatrixXd A(m, N);
    for (int i = 0; i < m; ++i) {
        const Eigen::VectorXd rx = b.row(anchors[i].q[0]), ry = b.row(anchors[i].q[1]);
        for (int jy = 0; jy < M; ++jy) A.row(i).segment(jy * M, M) = (rx * ry(jy)).transpose();
    }
    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.transpose());
        if (qr.rank() < m) {
            std::string list;
            const auto perm = qr.colsPermutation().indices();
            for (int k = qr.rank(); k < m; ++k) list += (list.empty() ? "" : ", ") + std::to_string(perm(k));
            throw FitError("rank-deficient anchor constraints; dependent anchors: " + list);
        }
    }
    const Eigen::MatrixXd H = bending_matrix(b);
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(N + m, N + m);
    K.topLeftCorner(N, N) = H;
    K.topRightCorner(N, m) = A.transpose();
    K.bottomLeftCorner(m, N) = A;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(N + m, 2);
    for (int i = 0; i < m; ++i)
        for (int c = 0; c < 2; ++c) rhs(N + i, c) = anchors[i].p[c];
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
    Eigen::MatrixXd sol = lu.solve(rhs);
    // one step of iterative refinement keeps anchor residuals near round-off
    sol += lu.solve(rhs - K * sol);
    SplineSurface s;
    s.tau = tau;
    for (int c = 0; c < 2; ++c) s.coeffs.push_back(Eigen::Map<const Eigen::MatrixXd>(sol.col(c).data(), M, M));
    return s;
}

inline Eigen::Vector2d eval_psi(const SplineSurface& psi, std::array<double, 2> q, bool* clamped = nullptr) {
    return psi.eval(q, clamped);
}

inline Eigen::Matrix2d eval_psi_jacobian(const SplineSurface& psi, std::array<double, 2> q, bool* clamped = nullptr) {
    return psi.jacobian(q, clamped);
}

/// Control lattice q_kl: Greville points in each direction; index k + M l.
inline std::vector<std::array<double, 2>> control_lattice(double tau) {
    const auto g = CubicBasis(tau).greville();
    std::vector<std::array<double, 2>> out;
    for (double y : g)
        for (double x : g) out.push_back({x, y});
    return out;
}

/// Scalar spline interpolating `values` (index k + M l) at the control lattice.
inline SplineSurface fit_jref(const Eigen::VectorXd& values, double tau) {
    const CubicBasis b(tau);
    const int M = b.size();
    if (values.size() != M * M) throw FitError("lattice has " + std::to_string(values.size()) + " values, expected " +
                                               std::to_string(M * M));
    const auto g = b.greville();
    Eigen::MatrixXd A(M, M);
    for (int i = 0; i < M; ++i) A.row(i) = b.row(g[i]).transpose();
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    const Eigen::MatrixXd V = Eigen::Map<const Eigen::MatrixXd>(values.data(), M, M);
    // V = A C A^T
    Eigen::MatrixXd C = lu.solve(lu.solve(V).transpose()).transpose();
    const Eigen::MatrixXd R = V - A * C * A.transpose();
    C += lu.solve(lu.solve(R).transpose()).transpose();
    SplineSurface s;
    s.tau = tau;
    s.coeffs.push_back(C);
    return s;
}

struct CostSample {
    double volume = 0.0;
    double perimeter = 0.0;
    bool ok = false;
};

/// Cost oracle at a target (nu, E); `index` identifies the lattice point.
using CostOracle = std::function<CostSample(double nu, double E, int index)>;

struct CostLattice {
    double tau = 1.0 / 16.0;
    Eigen::VectorXd volume;
    Eigen::VectorXd perimeter;
    std::vector<char> ok;

    int failures() const { return static_cast<int>(std::count(ok.begin(), ok.end(), 0)); }
    /// Infeasible points are replaced by 10x the largest feasible value so the
    /// optimizer is pushed away from chart regions without realizations.
    void apply_sentinel() {
        double vmax = 0.0, pmax = 0.0;
        for (size_t i = 0; i < ok.size(); ++i)
            if (ok[i]) {
                vmax = std::max(vmax, volume(i));
                pmax = std::max(pmax, perimeter(i));
            }
        for (size_t i = 0; i < ok.size(); ++i)
            if (!ok[i]) {
                volume(i) = 10.0 * (vmax > 0.0 ? vmax : 1.0);
                perimeter(i) = 10.0 * (pmax > 0.0 ? pmax : 1.0);
            }
    }
    Eigen::VectorXd cost(double c_V, double c_P_hat) const { return c_V * volume + c_P_hat * perimeter; }
};

inline CostLattice resample_costs(const SplineSurface& psi, double tau, const CostOracle& oracle,
                                  const std::function<void(int, const std::function<void(int)>&)>& runner = {}) {
    const auto lattice = control_lattice(tau);
    const int L = static_cast<int>(lattice.size());
    CostLattice out;
    out.tau = tau;
    out.volume = Eigen::VectorXd::Zero(L);
    out.perimeter = Eigen::VectorXd::Zero(L);
    out.ok.assign(L, 0);
    auto body = [&](int i) {
        const Eigen::Vector2d p = eval_psi(psi, lattice[i]);
        CostSample s;
        try {
            s = oracle(p(0), p(1), i);
        } catch (const std::exception&) {
            s.ok = false;
        }
        out.volume(i) = s.volume;
        out.perimeter(i) = s.perimeter;
        out.ok[i] = s.ok;
    };
    if (runner) runner(L, body);
    else
        for (int i = 0; i < L; ++i) body(i);
    out.apply_sentinel();
    return out;
}

/// Psi with separately interpolated volume and perimeter lattices so the
/// perimeter weight can change without refitting.
struct SplineChart {
    double tau = 1.0 / 16.0;
    std::vector<Anchor> anchors;
    SplineSurface psi;
    CostLattice lattice;
    double c_V = 1.0;
    double c_P_hat = 0.05;
    SplineSurface jref;
    SplineSurface volume_spline;
    SplineSurface perimeter_spline;

    void refit_costs() {
        volume_spline = fit_jref(lattice.volume, tau);
        perimeter_spline = fit_jref(lattice.perimeter, tau);
        jref = fit_jref(lattice.cost(c_V, c_P_hat), tau);
    }
    SplineChart with_perimeter_weight(double c_P_hat_new) const {
        SplineChart c = *this;
        c.c_P_hat = c_P_hat_new;
        c.refit_costs();
        return c;
    }
    double cost(std::array<double, 2> q) const { return jref.eval(q)(0); }
    Eigen::Vector2d cost_gradient(std::array<double, 2> q) const { return jref.jacobian(q).row(0).transpose(); }
};

/// Sign of det D Psi on a 33 x 33 grid; false if it changes or vanishes.
inline bool psi_orientation_consistent(const SplineSurface& psi, int samples = 33) {
    int sign = 0;
    for (int i = 0; i < samples; ++i)
        for (int j = 0; j < samples; ++j) {
            const double d = eval_psi_jacobian(psi, {i / (samples - 1.0), j / (samples - 1.0)}).determinant();
            const int s = d > 0.0 ? 1 : (d < 0.0 ? -1 : 0);
            if (s == 0 || (sign != 0 && s != sign)) return false;
            sign = s;
        }
    return true;
}

// ------------------------------------------------------------------- I/O

inline std::vector<Anchor> anchors_from_json(const nlohmann::json& j) {
    const nlohmann::json& list = j.is_object() && j.contains("anchors") ? j["anchors"] : j;
    if (!list.is_array()) throw FormatError("anchor file must hold an array of {q, p} pairs");
    std::vector<Anchor> out;
    for (const auto& a : list) {
        if (!a.contains("q") || !a.contains("p")) throw FormatError("anchor entry without q or p");
        const auto q = a["q"].get<std::vector<double>>(), p = a["p"].get<std::vector<double>>();
        if (q.size() != 2 || p.size() != 2) throw FormatError("anchor q and p must have two entries");
        out.push_back({{q[0], q[1]}, {p[0], p[1]}});
    }
    return out;
}

inline nlohmann::json anchors_to_json(const std::vector<Anchor>& anchors) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : anchors) a.push_back({{"q", {x.q[0], x.q[1]}}, {"p", {x.p[0], x.p[1]}}});
    return a;
}

namespace detail {
inline nlohmann::json coeff_json(const Eigen::MatrixXd& C) {
    // row-major over (i, j)
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < C.rows(); ++i)
        for (Eigen::Index j = 0; j < C.cols(); ++j) a.push_back(C(i, j));
    return a;
}
inline Eigen::MatrixXd coeff_from_json(const nlohmann::json& a, int M, const std::string& what) {
    const auto v = a.get<std::vector<double>>();
    if (static_cast<int>(v.size()) != M * M) throw FormatError("chart: " + what + " has the wrong size");
    Eigen::MatrixXd C(M, M);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j) C(i, j) = v[i * M + j];
    return C;
}
inline Eigen::VectorXd vector_from_json(const nlohmann::json& a, int n, const std::string& what) {
    const auto v = a.get<std::vector<double>>();
    if (static_cast<int>(v.size()) != n) throw FormatError("chart: " + what + " has the wrong size");
    return Eigen::Map<const Eigen::VectorXd>(v.data(), n);
}
}  // namespace detail

inline nlohmann::json chart_to_json(const SplineChart& c) {
    nlohmann::json j;
    j["tau"] = c.tau;
    j["anchors"] = anchors_to_json(c.anchors);
    j["psi_coeffs"] = {detail::coeff_json(c.psi.coeffs[0]), detail::coeff_json(c.psi.coeffs[1])};
    j["c_V"] = c.c_V;
    j["c_P_hat"] = c.c_P_hat;
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    j["volume_values"] = vec(c.lattice.volume);
    j["perimeter_values"] = vec(c.lattice.perimeter);
    j["lattice_ok"] = std::vector<int>(c.lattice.ok.begin(), c.lattice.ok.end());
    j["jref_values"] = vec(c.lattice.cost(c.c_V, c.c_P_hat));
    j["jref_coeffs"] = detail::coeff_json(c.jref.coeffs[0]);
    return j;
}

inline SplineChart chart_from_json(const nlohmann::json& j) {
    SplineChart c;
    try {
        c.tau = j.at("tau").get<double>();
        const int M = CubicBasis(c.tau).size();
        c.anchors = anchors_from_json(j.at("anchors"));
        c.psi.tau = c.tau;
        for (int k = 0; k < 2; ++k) c.psi.coeffs.push_back(detail::coeff_from_json(j.at("psi_coeffs").at(k), M, "psi_coeffs"));
        c.c_V = j.at("c_V").get<double>();
        c.c_P_hat = j.at("c_P_hat").get<double>();
        c.lattice.tau = c.tau;
        c.lattice.volume = detail::vector_from_json(j.at("volume_values"), M * M, "volume_values");
        c.lattice.perimeter = detail::vector_from_json(j.at("perimeter_values"), M * M, "perimeter_values");
        const auto ok = j.at("lattice_ok").get<std::vector<int>>();
        if (static_cast<int>(ok.size()) != M * M) throw FormatError("chart: lattice_ok has the wrong size");
        c.lattice.ok.assign(ok.begin(), ok.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed chart: ") + e.what());
    }
    c.refit_costs();
    return c;
}

inline void write_chart(const SplineChart& c, const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw FormatError("cannot write " + p.string());
    out << chart_to_json(c).dump(2) << '\n';
}

inline SplineChart read_chart(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw FormatError("cannot open chart " + p.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed chart: ") + e.what());
    }
    return chart_from_json(j);
}

/// Chart with given Psi and constant-free cost lattices sampled from callables
/// (used for synthetic charts and tests).
inline SplineChart make_chart(const std::vector<Anchor>& anchors, double tau,
                              const std::function<std::array<double, 2>(double, double)>& vol_per, double c_V,
                              double c_P_hat) {
    SplineChart c;
    c.tau = tau;
    c.anchors = anchors;
    c.psi = fit_psi(anchors, tau);
    c.c_V = c_V;
    c.c_P_hat = c_P_hat;
    c.lattice = resample_costs(c.psi, tau, [&](double nu, double E, int) {
        const auto vp = vol_per(nu, E);
        return CostSample{vp[0], vp[1], true};
    });
    c.refit_costs();
    return c;
}

}  // namespace twoscale
