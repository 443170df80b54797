#pragma once
// Command-line front end. run_cli() is kept in-process so tests can drive it;
// tools/main.cpp only forwards argv.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "twoscale/assemble.hpp"
#include "twoscale/cellopt.hpp"
#include "twoscale/dbase.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/homogenize.hpp"
#include "twoscale/macroopt.hpp"
#include "twoscale/splinechart.hpp"
#include "twoscale/tensorlab.hpp"

namespace twoscale {

inline constexpr const char* kToolkitVersion = "0.1.0";

// ------------------------------------------------------------ chart fitting

/// Four anchors with the roles used for the chart: q=(1,0) large nu,
/// q=(0,1) small nu, q=(1,1) large E, q=(0,0) intermediate nu and small E.
/// Each is snapped to a converged database sample.
inline std::vector<Anchor> default_anchors(const Database& db) {
    std::vector<std::array<double, 2>> pts;
    for (const auto& r : db.samples)
        if (r.status == CellStatus::converged) pts.push_back({r.target_nu, r.target_E});
    if (pts.size() < 4) throw FitError("default anchors need at least four converged database samples");
    double nu_lo = 1e300, nu_hi = -1e300, E_lo = 1e300, E_hi = -1e300;
    for (const auto& p : pts) {
        nu_lo = std::min(nu_lo, p[0]);
        nu_hi = std::max(nu_hi, p[0]);
        E_lo = std::min(E_lo, p[1]);
        E_hi = std::max(E_hi, p[1]);
    }
    const double sn = std::max(nu_hi - nu_lo, 1e-12), sE = std::max(E_hi - E_lo, 1e-12);
    auto pick = [&](auto&& score) {
        size_t best = 0;
        for (size_t i = 1; i < pts.size(); ++i)
            if (score(pts[i]) < score(pts[best])) best = i;
        return pts[best];
    };
    const double nu_mid = 0.5 * (nu_lo + nu_hi);
    // ties are broken by the secondary terms so the four picks differ
    const auto large_nu = pick([&](const auto& p) { return -(p[0] - nu_lo) / sn + 1e-3 * (p[1] - E_lo) / sE; });
    const auto small_nu = pick([&](const auto& p) { return (p[0] - nu_lo) / sn - 1e-3 * (p[1] - E_lo) / sE; });
    const auto large_E = pick([&](const auto& p) { return -(p[1] - E_lo) / sE; });
    const auto base = pick([&](const auto& p) { return (p[1] - E_lo) / sE + std::fabs(p[0] - nu_mid) / sn; });
    return {{{1.0, 0.0}, {large_nu[0], large_nu[1]}},
            {{0.0, 1.0}, {small_nu[0], small_nu[1]}},
            {{1.0, 1.0}, {large_E[0], large_E[1]}},
            {{0.0, 0.0}, {base[0], base[1]}}};
}

enum class OracleKind { cellopt, nearest };

/// Cost oracle backed by a database: either the nearest sample's stored
/// volume and interface energy, or a fresh cell solve warm-started from it.
inline CostOracle database_cost_oracle(const Database& db, OracleKind kind) {
    return [&db, kind](double nu, double E, int) -> CostSample {
        const int r = nearest_record(db, nu, E);
        const auto& rec = db.samples[r];
        if (kind == OracleKind::nearest)
            return {rec.volume, rec.mm_energy, rec.status == CellStatus::converged};
        try {
            SamplePlan plan = plan_for(db);
            const CellProblem p = detail::cell_problem_for(plan, nu, E);
            PhaseField init{p.grid, rec.values};
            if (rec.values.size() != p.grid.node_count()) init = random_init(p.grid, p.spec, db.seed);
            const CellResult res = solve_cell(p, init);
            return {res.volume, res.perimeter_mm, res.status == CellStatus::converged};
        } catch (const std::exception&) {
            return {0.0, 0.0, false};
        }
    };
}

inline SplineChart fit_chart_from_database(const Database& db, const std::vector<Anchor>& anchors, double tau,
                                           OracleKind kind, int jobs) {
    SplineChart c;
    c.tau = tau;
    c.anchors = anchors;
    c.psi = fit_psi(anchors, tau);
    c.c_V = db.weights.c_V;
    c.c_P_hat = db.weights.c_P_hat;
    c.lattice = resample_costs(c.psi, tau, database_cost_oracle(db, kind),
                               [jobs](int count, const std::function<void(int)>& body) {
                                   detail::parallel_for(count, jobs, body);
                               });
    c.refit_costs();
    return c;
}

// ---------------------------------------------------------------------- CLI

namespace cli_detail {

inline nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream is(p);
    if (!is) throw FormatError("cannot open '" + p.string() + "'");
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + p.string() + "' is not valid JSON: " + e.what());
    }
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
    std::ofstream os(p);
    if (!os) throw FormatError("cannot open '" + p.string() + "' for writing");
    os << j.dump(2) << '\n';
}

inline nlohmann::json matrix_json(const Eigen::MatrixXd& M) {
    nlohmann::json a = nlohmann::json::array();
    for (int i = 0; i < M.rows(); ++i) {
        std::vector<double> row(M.cols());
        for (int k = 0; k < M.cols(); ++k) row[k] = M(i, k);
        a.push_back(row);
    }
    return a;
}

struct Common {
    bool json = false;
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string log_level = "info";
};

}  // namespace cli_detail

/// Runs one subcommand; returns the process exit code (0 ok, 1 validation
/// error, 2 solver non-convergence).
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using nlohmann::json;
    using cli_detail::Common;
    CLI::App app{"Two-scale microstructure design toolkit"};
    app.require_subcommand(0, 1);
    app.failure_message(CLI::FailureMessage::help);
    Common com;
    bool show_version = false;
    app.add_flag("--version", show_version, "print toolkit and file format versions");
    auto add_common = [&](CLI::App* sc) {
        sc->add_flag("--json", com.json, "machine-readable JSON on stdout");
        sc->add_option("--log-level", com.log_level, "quiet | info")->check(CLI::IsMember({"quiet", "info"}));
    };

    // hs-triangle
    double nu = 0.25, E = 10.0, delta = 1e-4, theta = 1.0;
    int dim = 2, n = 32;
    auto* hs = app.add_subcommand("hs-triangle", "Hashin-Shtrikman upper bound triangle in the (nu, E) plane");
    hs->add_option("--nu", nu, "base Poisson ratio");
    hs->add_option("--E", E, "base Young modulus");
    hs->add_option("--delta", delta, "soft phase scale");
    hs->add_option("--theta", theta, "hard volume fraction");
    hs->add_option("--dim", dim, "2 or 3");
    add_common(hs);

    // homogenize
    std::string field_path;
    auto* ho = app.add_subcommand("homogenize", "effective tensor of a nodal phase field");
    ho->add_option("--field", field_path, "little-endian f64 nodal field, (n+1)^dim values")->required();
    ho->add_option("--dim", dim);
    ho->add_option("--n", n, "cells per axis");
    ho->add_option("--nu", nu);
    ho->add_option("--E", E);
    ho->add_option("--delta", delta);
    add_common(ho);

    // cell-opt
    double tnu = 0.25, tE = 3.0, width = 0.125, sigma = 0.0, cV = 1.0, cP = 0.05, cPhat = -1.0, kkt_tol = 1e-6;
    double fixed_theta = -1.0;
    int outer_cap = 30;
    std::string variant = "midfaces", init_path, out_field;
    auto* co = app.add_subcommand("cell-opt", "optimize one periodic microcell for a target (nu, E)");
    co->add_option("--dim", dim);
    co->add_option("--n", n);
    co->add_option("--nu", nu);
    co->add_option("--E", E);
    co->add_option("--delta", delta);
    co->add_option("--target-nu", tnu)->required();
    co->add_option("--target-E", tE)->required();
    co->add_option("--seed", com.seed);
    co->add_option("--variant", variant)->check(CLI::IsMember({"midfaces", "corners", "corners-and-midfaces", "corners3d"}));
    co->add_option("--width", width);
    co->add_option("--sigma", sigma, "interface width (0: 2h)");
    co->add_option("--cV", cV);
    co->add_option("--cP", cP);
    co->add_option("--cPhat", cPhat, "perimeter weight in the stored cost (default: cP)");
    co->add_option("--theta", fixed_theta, "fix the volume fraction");
    co->add_option("--kkt-tol", kkt_tol);
    co->add_option("--outer-cap", outer_cap);
    co->add_option("--init", init_path, "initial field (f64)");
    co->add_option("--out-field", out_field, "write the optimized field (f64)");
    add_common(co);

    // db-build / db-repair / db-verify
    std::string plan_path, out_dir, db_dir;
    int neighbours = 3;
    double verify_tol = 1e-6;
    std::optional<std::uint64_t> seed_override;
    auto* db = app.add_subcommand("db-build", "solve every target of a sampling plan");
    db->add_option("--plan", plan_path)->required();
    db->add_option("--out", out_dir)->required();
    db->add_option("--jobs", com.jobs)->check(CLI::PositiveNumber);
    db->add_option("--seed", seed_override, "override the plan seed");
    std::optional<double> db_theta;
    db->add_option("--fixed-theta", db_theta, "add the volume equality theta to every sample");
    add_common(db);
    auto* dr = app.add_subcommand("db-repair", "re-solve disconnected samples from neighbouring fields");
    dr->add_option("dir", db_dir)->required();
    dr->add_option("--neighbours", neighbours)->check(CLI::PositiveNumber);
    add_common(dr);
    auto* dv = app.add_subcommand("db-verify", "recompute every stored tensor from its field");
    dv->add_option("dir", db_dir)->required();
    dv->add_option("--tol", verify_tol);
    add_common(dv);

    // chart-fit
    std::string anchors_path, out_path, oracle = "cellopt";
    double tau = 1.0 / 16.0;
    auto* cf = app.add_subcommand("chart-fit", "fit the chart Psi and the cost spline j_ref");
    cf->add_option("--db", db_dir)->required();
    cf->add_option("--anchors", anchors_path, "anchor JSON (default: four snapped roles)");
    cf->add_option("--tau", tau, "knot spacing");
    cf->add_option("--out", out_path)->required();
    cf->add_option("--oracle", oracle, "cellopt | nearest")->check(CLI::IsMember({"cellopt", "nearest"}));
    cf->add_option("--jobs", com.jobs)->check(CLI::PositiveNumber);
    add_common(cf);

    // macro-opt
    std::string problem_path, chart_path, design_path;
    std::optional<double> cphat_override;
    auto* mo = app.add_subcommand("macro-opt", "restricted free material optimization on the macro grid");
    mo->add_option("--problem", problem_path)->required();
    mo->add_option("--chart", chart_path)->required();
    mo->add_option("--out", out_path)->required();
    mo->add_option("--init", design_path, "initial design JSON");
    mo->add_option("--c-p-hat", cphat_override, "override the perimeter weight");
    add_common(mo);

    // assemble / verify
    std::string format = "vtk";
    auto* as = app.add_subcommand("assemble", "tile database microcells into the fine-scale structure");
    as->add_option("--design", design_path)->required();
    as->add_option("--db", db_dir)->required();
    as->add_option("--chart", chart_path, "chart used for Psi(q) (default: nu/E stored in the design)");
    as->add_option("--format", format)->check(CLI::IsMember({"pgm", "vtk", "stl"}));
    as->add_option("--out", out_path)->required();
    add_common(as);
    auto* ve = app.add_subcommand("verify", "cost identity and bridge compatibility of a realized design");
    ve->add_option("--design", design_path)->required();
    ve->add_option("--db", db_dir)->required();
    ve->add_option("--chart", chart_path);
    add_common(ve);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    auto log = [&](const std::string& msg) {
        if (com.log_level != "quiet") {
            static std::mutex m;
            std::lock_guard<std::mutex> lock(m);
            err << msg << '\n';
        }
    };
    auto emit = [&](json j, const std::string& human) {
        j["seed"] = com.seed;
        if (com.json) out << j.dump(2) << '\n';
        else out << human;
    };

    try {
        if (show_version) {
            emit({{"toolkit", kToolkitVersion}, {"format_version", kFormatVersion}},
                 std::string("twoscale ") + kToolkitVersion + " (database and chart format " +
                     std::to_string(kFormatVersion) + ")\n");
            return 0;
        }
        if (app.get_subcommands().empty()) {
            out << app.help();
            return 1;
        }

        if (hs->parsed()) {
            const IsoParams base = iso_from_nu_e(nu, E, dim);
            if (!(delta > 0.0 && delta <= 1.0)) throw DomainError("delta must lie in (0, 1]");
            const HSBounds b = hs_upper(theta, base, delta);
            json tri = json::array();
            for (const auto& v : b.triangle) tri.push_back({v[0], v[1]});
            std::ostringstream h;
            h << "kappa_u = " << b.kappa_u << ", mu_u = " << b.mu_u << "\ntriangle:";
            for (const auto& v : b.triangle) h << " (" << v[0] << ", " << v[1] << ")";
            h << '\n';
            emit({{"kappa_u", b.kappa_u}, {"mu_u", b.mu_u}, {"triangle", tri}}, h.str());
            return 0;
        }

        if (ho->parsed()) {
            const Grid g = build_grid(dim, n);
            const MicroMaterial mat{iso_from_nu_e(nu, E, dim), delta};
            const Eigen::VectorXd v = detail::read_f64(field_path, g.node_count(), field_path);
            const ElasticityTensor C = homogenize(g, v, mat);
            json j = {{"voigt", cli_detail::matrix_json(C.voigt)}};
            std::ostringstream h;
            h << "C* (Voigt):\n" << C.voigt << '\n';
            try {
                const auto [nu_s, E_s] = nu_e_of(C);
                j["nu"] = nu_s;
                j["E"] = E_s;
                h << "isotropic fit: nu = " << nu_s << ", E = " << E_s << '\n';
            } catch (const DomainError&) {
            }
            emit(j, h.str());
            return 0;
        }

        if (co->parsed()) {
            CellProblem p;
            p.grid = build_grid(dim, n);
            if (!(delta > 0.0 && delta <= 1.0)) throw DomainError("delta must lie in (0, 1]");
            p.mat = {iso_from_nu_e(nu, E, dim), delta};
            p.target = tensor_from_iso(iso_from_nu_e(tnu, tE, dim));
            p.weights = {cV, cP, cPhat >= 0.0 ? cPhat : cP};
            p.spec = {bridge_variant_from_string(variant), width, sigma};
            p.sigma = sigma;
            p.seed = com.seed;
            if (!(kkt_tol > 0.0) || outer_cap < 1) throw DomainError("kkt tolerance and outer cap must be positive");
            p.nlp.kkt_tol = kkt_tol;
            p.nlp.outer_cap = outer_cap;
            if (fixed_theta >= 0.0) p.fixed_theta = fixed_theta;
            const PhaseField init = init_path.empty()
                                        ? random_init(p.grid, p.spec, com.seed)
                                        : PhaseField{p.grid, detail::read_f64(init_path, p.grid.node_count(), init_path)};
            const CellResult r = solve_cell(p, init);
            if (!out_field.empty()) detail::write_f64(out_field, r.v_star.values);
            const auto [anu, aE] = nu_e_of(r.C_star);
            json hist = json::array();
            for (const auto& hlog : r.history)
                hist.push_back({{"outer", hlog.outer}, {"f", hlog.f}, {"constraint", hlog.constraint_norm}, {"kkt", hlog.kkt}});
            std::ostringstream h;
            h << "status " << to_string(r.status) << ": nu = " << anu << ", E = " << aE << ", volume = " << r.volume
              << ", L = " << r.perimeter_mm << ", j = " << r.cost_j << ", kkt = " << r.kkt_residual << '\n';
            emit({{"status", to_string(r.status)},
                  {"nu", anu},
                  {"E", aE},
                  {"voigt", cli_detail::matrix_json(r.C_star.voigt)},
                  {"volume", r.volume},
                  {"mm_energy", r.perimeter_mm},
                  {"cost_j", r.cost_j},
                  {"kkt_residual", r.kkt_residual},
                  {"constraint_residual", r.constraint_residual},
                  {"iterations", r.iterations},
                  {"history", hist}},
                 h.str());
            return r.status == CellStatus::infeasible ? 2 : 0;
        }

        if (db->parsed()) {
            SamplePlan plan = plan_from_json(cli_detail::read_json(plan_path));
            if (seed_override) plan.seed = *seed_override;
            if (db_theta) {
                if (!(*db_theta > 0.0 && *db_theta < 1.0)) throw DomainError("--fixed-theta must lie in (0, 1)");
                plan.fixed_theta = *db_theta;
            }
            com.seed = plan.seed;
            if (plan.targets.empty()) throw DomainError("plan has no targets");
            const Database d = build_database(plan, com.jobs, log);
            write_database(d, out_dir);
            int conv = 0, disc = 0, inf = 0;
            for (const auto& s : d.samples) {
                conv += s.status == CellStatus::converged;
                disc += s.status == CellStatus::disconnected;
                inf += s.status == CellStatus::infeasible;
            }
            std::ostringstream h;
            h << d.samples.size() << " samples: " << conv << " converged, " << disc << " disconnected, " << inf
              << " infeasible -> " << out_dir << '\n';
            emit({{"samples", d.samples.size()}, {"converged", conv}, {"disconnected", disc}, {"infeasible", inf}, {"out", out_dir}},
                 h.str());
            return 0;
        }

        if (dr->parsed()) {
            Database d = read_database(db_dir);
            com.seed = d.seed;
            const RepairReport rep = repair_disconnected(d, plan_for(d), neighbours, log);
            write_database(d, db_dir);
            std::ostringstream h;
            h << "repair: " << rep.repaired << " of " << rep.attempted << " disconnected samples replaced\n";
            emit({{"attempted", rep.attempted}, {"repaired", rep.repaired}}, h.str());
            return 0;
        }

        if (dv->parsed()) {
            const Database d = read_database(db_dir);
            com.seed = d.seed;
            const VerifyReport rep = verify_database(d, verify_tol);
            std::ostringstream h;
            h << "verified " << rep.checked << " samples, max relative tensor error " << rep.max_error << ", "
              << rep.failures.size() << " failure(s)\n";
            emit({{"checked", rep.checked}, {"max_error", rep.max_error}, {"failures", rep.failures}, {"ok", rep.failures.empty()}},
                 h.str());
            return rep.failures.empty() ? 0 : 1;
        }

        if (cf->parsed()) {
            const Database d = read_database(db_dir);
            com.seed = d.seed;
            if (!(tau > 0.0 && tau <= 0.5)) throw DomainError("tau must lie in (0, 1/2]");
            const auto anchors = anchors_path.empty() ? default_anchors(d) : anchors_from_json(cli_detail::read_json(anchors_path));
            const SplineChart c =
                fit_chart_from_database(d, anchors, tau, oracle == "nearest" ? OracleKind::nearest : OracleKind::cellopt, com.jobs);
            write_chart(c, out_path);
            const bool oriented = psi_orientation_consistent(c.psi);
            if (!oriented) log("warning: det D Psi changes sign; the chart is not injective");
            std::ostringstream h;
            h << "chart with " << c.lattice.volume.size() << " lattice points (" << c.lattice.failures()
              << " infeasible) -> " << out_path << '\n';
            emit({{"lattice_points", c.lattice.volume.size()},
                  {"infeasible_points", c.lattice.failures()},
                  {"orientation_consistent", oriented},
                  {"out", out_path}},
                 h.str());
            return 0;
        }

        if (mo->parsed()) {
            MacroProblem p = problem_from_json(cli_detail::read_json(problem_path));
            if (cphat_override) p.c_p_hat = *cphat_override;
            const SplineChart chart = read_chart(chart_path);
            const MacroDesign init = design_path.empty() ? default_design(p, resolve_chart(p, chart))
                                                         : design_from_json(p, cli_detail::read_json(design_path));
            const MacroResult r = macro_optimize(p, chart, init);
            cli_detail::write_json(out_path, design_to_json(p, chart, r));
            std::ostringstream h;
            h << (r.converged ? "converged" : "not converged") << ": compliance = " << r.state.compliance
              << ", tracking = " << r.state.tracking << ", cost integral = " << r.cost.cost_integral
              << ", kkt = " << r.kkt << " -> " << out_path << '\n';
            emit({{"converged", r.converged},
                  {"compliance", r.state.compliance},
                  {"tracking", r.state.tracking},
                  {"cost_integral", r.cost.cost_integral},
                  {"interface_integral", r.cost.interface_integral},
                  {"constraint_residual", r.cost.constraint},
                  {"kkt_residual", r.kkt},
                  {"out", out_path}},
                 h.str());
            return r.converged ? 0 : 2;
        }

        if (as->parsed() || ve->parsed()) {
            const json dj = cli_detail::read_json(design_path);
            if (!dj.contains("problem")) throw FormatError("design file does not embed its problem");
            const MacroProblem p = problem_from_json(dj["problem"]);
            const MacroDesign design = design_from_json(p, dj);
            const Database d = read_database(db_dir);
            com.seed = d.seed;
            TwoScaleStructure s;
            if (!chart_path.empty()) s = realize(p, design, d, read_chart(chart_path));
            else {
                std::vector<std::array<double, 2>> nu_e;
                for (const auto& c : dj.at("cells")) nu_e.push_back({c.at("nu").get<double>(), c.at("E").get<double>()});
                s = realize_parameters(p, nu_e, d);
            }
            if (as->parsed()) {
                export_structure(s, export_format_from_string(format), out_path);
                const auto vx = s.voxels();
                std::ostringstream h;
                h << "wrote " << format << " with " << s.voxel_count() << " voxels -> " << out_path << '\n';
                emit({{"voxels", std::vector<int>(vx.begin(), vx.begin() + s.dim)},
                      {"format", format},
                      {"substitution_error", substitution_error(s, d)},
                      {"out", out_path}},
                     h.str());
                return 0;
            }
            const CostIdentityReport ci = cost_identity_check(s, d.weights, s.epsilon);
            const FaceScanReport fs = bridge_face_scan(s);
            const bool ok = ci.ok() && fs.ok();
            std::ostringstream h;
            h << "cost identity: " << ci.cell_sum << " vs " << ci.rhs << " (relative mismatch " << ci.rel_mismatch << ")\n"
              << "bridge faces: " << fs.faces_passed << " of " << fs.faces << " pass\n"
              << "substitution error (normalized): " << substitution_error(s, d) << '\n'
              << (ok ? "OK" : "FAILED") << '\n';
            emit({{"cost_identity", {{"cell_sum", ci.cell_sum},
                                     {"volume_term", ci.volume_term},
                                     {"perimeter_term", ci.perimeter_term},
                                     {"rel_mismatch", ci.rel_mismatch},
                                     {"sharp_perimeter", ci.sharp_perimeter}}},
                  {"faces", fs.faces},
                  {"faces_passed", fs.faces_passed},
                  {"face_failures", fs.failures},
                  {"substitution_error", substitution_error(s, d)},
                  {"ok", ok}},
                 h.str());
            return ok ? 0 : 1;
        }
    } catch (const SolverError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const InfeasibleError& e) {
        err << "error: " << e.what() << " (attainable [" << e.min_attainable << ", " << e.max_attainable << "])\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

}  // namespace twoscale
