#pragma once
// Augmented-Lagrangian method for  min f(x)  s.t.  c(x) = 0,  lo <= x <= hi,
// with a projected L-BFGS inner solver for the bound-constrained subproblems.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <vector>

namespace twoscale {

struct NlpEvaluation {
    double f = 0.0;
    Eigen::VectorXd grad;  // n
    Eigen::VectorXd c;     // m
    Eigen::MatrixXd jac;   // m x n
};

using NlpEvaluator = std::function<NlpEvaluation(const Eigen::VectorXd&)>;

struct NlpSettings {
    double constraint_tol = 1e-6;  // max |c_i|, unscaled
    double kkt_tol = 1e-6;         // projected stationarity, infinity norm
    double inner_gtol = 1e-8;
    int outer_cap = 30;
    int inner_cap = 500;
    int memory = 10;
    double penalty0 = 10.0;
    double penalty_growth = 10.0;
    double required_shrink = 0.25;
    double max_penalty = 1e12;
    double initial_step = 0.1;  // infinity-norm length of the first steepest-descent step
    int polish_steps = 8;
    double stationarity_scale = 1.0;  // multiplies the Lagrangian gradient in the KKT measure
    Eigen::VectorXd constraint_scale;  // optional per-constraint weights used inside the merit
};

struct NlpOuterLog {
    int outer = 0;
    int inner_iterations = 0;
    double f = 0.0;
    double constraint_norm = 0.0;
    double kkt = 0.0;
    double penalty = 0.0;
    double merit_start = 0.0;  // merit at the start of the inner solve
    double merit_end = 0.0;    // merit at the accepted point, same multipliers/penalty
};

struct NlpResult {
    Eigen::VectorXd x;
    double f = 0.0;
    Eigen::VectorXd c;
    Eigen::VectorXd lambda;
    double constraint_norm = 0.0;  // infinity norm
    double stationarity = 0.0;
    double kkt = 0.0;  // stationarity + constraint norm
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    std::vector<NlpOuterLog> history;
};

namespace detail {

inline Eigen::VectorXd project_box(Eigen::VectorXd x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

/// ||P(x - g) - x||_inf, the usual first-order measure for bound constraints.
inline double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                                      const Eigen::VectorXd& hi) {
    return (project_box(x - g, lo, hi) - x).lpNorm<Eigen::Infinity>();
}

/// Variables pinned at a bound by the sign of the gradient (or by lo == hi).
inline std::vector<char> active_set(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                                    const Eigen::VectorXd& hi) {
    std::vector<char> act(x.size(), 0);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double tol = 1e-12 * std::max(1.0, std::fabs(hi(i) - lo(i)));
        if (hi(i) - lo(i) <= 0.0) act[i] = 1;
        else if (x(i) <= lo(i) + tol && g(i) > 0.0) act[i] = 1;
        else if (x(i) >= hi(i) - tol && g(i) < 0.0) act[i] = 1;
    }
    return act;
}

/// Least-squares multipliers minimizing ||(grad f + J^T lambda)|_free||.
inline Eigen::VectorXd least_squares_multipliers(const Eigen::VectorXd& grad, const Eigen::MatrixXd& jac,
                                                 const std::vector<char>& active) {
    const Eigen::Index m = jac.rows();
    if (m == 0) return Eigen::VectorXd();
    Eigen::MatrixXd Jf = jac;
    Eigen::VectorXd gf = grad;
    for (Eigen::Index i = 0; i < grad.size(); ++i)
        if (active[i]) {
            Jf.col(i).setZero();
            gf(i) = 0.0;
        }
    return Jf.transpose().completeOrthogonalDecomposition().solve(-gf);
}

}  // namespace detail

class AugmentedLagrangian {
public:
    AugmentedLagrangian(NlpEvaluator eval, Eigen::VectorXd lo, Eigen::VectorXd hi, NlpSettings s = {})
        : eval_(std::move(eval)), lo_(std::move(lo)), hi_(std::move(hi)), s_(std::move(s)) {}

    NlpResult solve(const Eigen::VectorXd& x0) {
        NlpResult res;
        Eigen::VectorXd x = detail::project_box(x0, lo_, hi_);
        NlpEvaluation ev = evaluate(x, res);
        const Eigen::Index m = ev.c.size();
        scale_ = s_.constraint_scale.size() == m ? s_.constraint_scale : Eigen::VectorXd::Ones(m);
        double rho = s_.penalty0;
        Eigen::VectorXd lambda = scaled_multipliers(x, ev);
        double prev_cnorm = scaled(ev.c).norm();

        for (int k = 0; k < s_.outer_cap && m > 0; ++k) {
            NlpOuterLog log;
            log.outer = k;
            log.penalty = rho;
            log.merit_start = merit(ev, lambda, rho);
            log.inner_iterations = inner(x, ev, lambda, rho, res);
            log.merit_end = merit(ev, lambda, rho);
            lambda += rho * scaled(ev.c);
            al_lambda_ = lambda.cwiseProduct(scale_);
            fill_diagnostics(x, ev, res);
            log.f = ev.f;
            log.constraint_norm = res.constraint_norm;
            log.kkt = res.kkt;
            res.history.push_back(log);
            if (done(res)) break;
            const double cnorm = scaled(ev.c).norm();
            if (res.constraint_norm > s_.constraint_tol && cnorm > s_.required_shrink * prev_cnorm) rho = std::min(rho * s_.penalty_growth, s_.max_penalty);
            prev_cnorm = cnorm;
        }
        if (m == 0) {
            NlpOuterLog log;
            log.merit_start = ev.f;
            log.inner_iterations = inner(x, ev, Eigen::VectorXd(), 0.0, res);
            log.merit_end = ev.f;
            fill_diagnostics(x, ev, res);
            log.f = ev.f;
            log.kkt = res.kkt;
            res.history.push_back(log);
        }
        if (!done(res) && m > 0) polish(x, ev, res);
        fill_diagnostics(x, ev, res);
        // fall back to the cheapest feasible point seen if it beats the final iterate
        if (has_best_ && best_ev_.f < ev.f && (res.constraint_norm > s_.constraint_tol || !done(res))) {
            x = best_x_;
            ev = best_ev_;
            fill_diagnostics(x, ev, res);
        }
        res.x = x;
        res.f = ev.f;
        res.c = ev.c;
        res.converged = done(res);
        return res;
    }

private:
    NlpEvaluation evaluate(const Eigen::VectorXd& x, NlpResult& res) {
        ++res.evaluations;
        NlpEvaluation ev = eval_(x);
        const bool feasible = ev.c.size() == 0 || ev.c.lpNorm<Eigen::Infinity>() <= s_.constraint_tol;
        if (feasible && std::isfinite(ev.f) && (!has_best_ || ev.f < best_ev_.f)) {
            best_x_ = x;
            best_ev_ = ev;
            has_best_ = true;
        }
        return ev;
    }
    Eigen::VectorXd scaled(const Eigen::VectorXd& c) const { return c.cwiseProduct(scale_); }
    double merit(const NlpEvaluation& ev, const Eigen::VectorXd& lambda, double rho) const {
        if (ev.c.size() == 0) return ev.f;
        const Eigen::VectorXd cs = scaled(ev.c);
        return ev.f + lambda.dot(cs) + 0.5 * rho * cs.squaredNorm();
    }
    Eigen::VectorXd merit_gradient(const NlpEvaluation& ev, const Eigen::VectorXd& lambda, double rho) const {
        if (ev.c.size() == 0) return ev.grad;
        const Eigen::VectorXd w = (lambda + rho * scaled(ev.c)).cwiseProduct(scale_);
        return ev.grad + ev.jac.transpose() * w;
    }
    Eigen::VectorXd scaled_multipliers(const Eigen::VectorXd& x, const NlpEvaluation& ev) const {
        const auto act = detail::active_set(x, ev.grad, lo_, hi_);
        Eigen::MatrixXd Js = scale_.asDiagonal() * ev.jac;
        return detail::least_squares_multipliers(ev.grad, Js, act);
    }
    bool done(const NlpResult& r) const {
        return r.constraint_norm <= s_.constraint_tol && r.stationarity <= s_.kkt_tol;
    }

    /// Stationarity uses the better of two multiplier estimates: the current
    /// first-order AL update and a least-squares fit on the free set that the
    /// AL estimate identifies.
    void fill_diagnostics(const Eigen::VectorXd& x, const NlpEvaluation& ev, NlpResult& r) const {
        const Eigen::Index m = ev.c.size();
        r.constraint_norm = m ? ev.c.lpNorm<Eigen::Infinity>() : 0.0;
        if (m == 0) {
            r.lambda.resize(0);
            r.stationarity = detail::projected_gradient_norm(x, s_.stationarity_scale * ev.grad, lo_, hi_);
            r.kkt = r.stationarity + r.constraint_norm;
            return;
        }
        auto stationarity = [&](const Eigen::VectorXd& lam) {
            const Eigen::VectorXd g = ev.grad + ev.jac.transpose() * lam;
            return detail::projected_gradient_norm(x, s_.stationarity_scale * g, lo_, hi_);
        };
        Eigen::VectorXd best = al_lambda_.size() == m ? al_lambda_ : Eigen::VectorXd::Zero(m);
        double best_s = stationarity(best);
        const Eigen::VectorXd g_al = ev.grad + ev.jac.transpose() * best;
        for (const auto& act : {detail::active_set(x, g_al, lo_, hi_), detail::active_set(x, ev.grad, lo_, hi_)}) {
            const Eigen::VectorXd lam = detail::least_squares_multipliers(ev.grad, ev.jac, act);
            const double st = stationarity(lam);
            if (st < best_s) {
                best_s = st;
                best = lam;
            }
        }
        r.lambda = best;
        r.stationarity = best_s;
        r.kkt = r.stationarity + r.constraint_norm;
    }

    /// Projected L-BFGS on the merit function. Updates x and ev in place and
    /// returns the number of accepted steps.
    int inner(Eigen::VectorXd& x, NlpEvaluation& ev, const Eigen::VectorXd& lambda, double rho, NlpResult& res) {
        std::deque<Eigen::VectorXd> S, Y;
        double phi = merit(ev, lambda, rho);
        Eigen::VectorXd g = merit_gradient(ev, lambda, rho);
        int accepted = 0;
        for (int it = 0; it < s_.inner_cap; ++it) {
            // same units as the outer stationarity measure
            if (detail::projected_gradient_norm(x, s_.stationarity_scale * g, lo_, hi_) <= s_.inner_gtol) break;
            const auto act = detail::active_set(x, g, lo_, hi_);
            Eigen::VectorXd d = direction(g, act, S, Y);
            double slope = g.dot(d);
            if (!(slope < 0.0)) {
                S.clear();
                Y.clear();
                d = direction(g, act, S, Y);
                slope = g.dot(d);
                if (!(slope < 0.0)) break;
            }
            // Armijo backtracking along the projected path
            double alpha = 1.0;
            bool ok = false;
            Eigen::VectorXd xn;
            NlpEvaluation en;
            double phin = 0.0;
            for (int ls = 0; ls < 40; ++ls) {
                xn = detail::project_box(x + alpha * d, lo_, hi_);
                const Eigen::VectorXd step = xn - x;
                if (step.lpNorm<Eigen::Infinity>() == 0.0) break;
                en = evaluate(xn, res);
                phin = merit(en, lambda, rho);
                if (std::isfinite(phin) && phin <= phi + 1e-4 * g.dot(step)) {
                    ok = true;
                    break;
                }
                // Close to a minimizer the merit differences drop below double
                // resolution, so fall back to the slope along the step
                // (approximate Wolfe conditions of Hager and Zhang).
                if (std::isfinite(phin) && phin <= phi + 1e-12 * std::fabs(phi)) {
                    const double d0 = g.dot(step), d1 = merit_gradient(en, lambda, rho).dot(step);
                    if (d1 >= 0.9 * d0 && d1 <= -0.8 * d0) {
                        ok = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if (!ok) {
                if (S.empty()) break;
                S.clear();
                Y.clear();
                continue;
            }
            const Eigen::VectorXd gn = merit_gradient(en, lambda, rho);
            Eigen::VectorXd s = xn - x, y = gn - g;
            if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
                S.push_back(std::move(s));
                Y.push_back(std::move(y));
                if (static_cast<int>(S.size()) > s_.memory) {
                    S.pop_front();
                    Y.pop_front();
                }
            }
            x = std::move(xn);
            ev = std::move(en);
            phi = phin;
            g = gn;
            ++accepted;
            ++res.iterations;
        }
        return accepted;
    }

    /// Two-loop recursion restricted to the free variables.
    Eigen::VectorXd direction(const Eigen::VectorXd& g, const std::vector<char>& act, const std::deque<Eigen::VectorXd>& S,
                              const std::deque<Eigen::VectorXd>& Y) const {
        auto mask = [&](Eigen::VectorXd v) {
            for (Eigen::Index i = 0; i < v.size(); ++i)
                if (act[i]) v(i) = 0.0;
            return v;
        };
        Eigen::VectorXd q = mask(g);
        if (S.empty()) {
            const double gmax = q.lpNorm<Eigen::Infinity>();
            return gmax > 0.0 ? Eigen::VectorXd(-q * (s_.initial_step / gmax)) : Eigen::VectorXd(-q);
        }
        const int k = static_cast<int>(S.size());
        std::vector<double> a(k), rhos(k);
        std::vector<Eigen::VectorXd> Sf(k), Yf(k);
        for (int i = 0; i < k; ++i) {
            Sf[i] = mask(S[i]);
            Yf[i] = mask(Y[i]);
        }
        for (int i = k - 1; i >= 0; --i) {
            const double sy = Sf[i].dot(Yf[i]);
            rhos[i] = sy > 0.0 ? 1.0 / sy : 0.0;
            a[i] = rhos[i] * Sf[i].dot(q);
            q -= a[i] * Yf[i];
        }
        const double yy = Yf[k - 1].squaredNorm();
        const double gamma = (yy > 0.0 && rhos[k - 1] > 0.0) ? 1.0 / (rhos[k - 1] * yy) : 1.0;
        q *= gamma;
        for (int i = 0; i < k; ++i) {
            const double b = rhos[i] * Yf[i].dot(q);
            q += (a[i] - b) * Sf[i];
        }
        return mask(-q);
    }

    /// Gauss-Newton feasibility restoration: minimum-norm corrections on the
    /// free variables, accepted only when the constraint norm decreases.
    void polish(Eigen::VectorXd& x, NlpEvaluation& ev, NlpResult& res) {
        for (int it = 0; it < s_.polish_steps; ++it) {
            const double c0 = ev.c.lpNorm<Eigen::Infinity>();
            if (c0 <= s_.constraint_tol) break;
            std::vector<char> free(x.size(), 1);
            for (Eigen::Index i = 0; i < x.size(); ++i)
                if (x(i) <= lo_(i) || x(i) >= hi_(i)) free[i] = 0;
            Eigen::MatrixXd J = ev.jac;
            for (Eigen::Index i = 0; i < x.size(); ++i)
                if (!free[i]) J.col(i).setZero();
            const Eigen::VectorXd dx = J.completeOrthogonalDecomposition().solve(-ev.c);
            bool improved = false;
            for (double alpha = 1.0; alpha > 1e-3; alpha *= 0.5) {
                const Eigen::VectorXd xn = detail::project_box(x + alpha * dx, lo_, hi_);
                NlpEvaluation en = evaluate(xn, res);
                if (en.c.lpNorm<Eigen::Infinity>() < c0) {
                    x = xn;
                    ev = std::move(en);
                    improved = true;
                    break;
                }
            }
            if (!improved) break;
        }
    }

    NlpEvaluator eval_;
    Eigen::VectorXd lo_, hi_;
    NlpSettings s_;
    Eigen::VectorXd scale_;
    Eigen::VectorXd al_lambda_;  // unscaled multipliers of the latest outer update
    bool has_best_ = false;
    Eigen::VectorXd best_x_;
    NlpEvaluation best_ev_;
};

inline NlpResult minimize_augmented_lagrangian(NlpEvaluator eval, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                                               const Eigen::VectorXd& hi, const NlpSettings& s = {}) {
    AugmentedLagrangian al(std::move(eval), lo, hi, s);
    return al.solve(x0);
}

}  // namespace twoscale
