#pragma once
// Offline microstructure database: target planning inside the HS triangle,
// parallel cell optimization, neighbour-based repair and bit-exact storage.

#include <Eigen/Dense>

#include <atomic>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "twoscale/cellopt.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/tensorlab.hpp"

namespace twoscale {

inline constexpr int kFormatVersion = 1;

struct SamplePlan {
    int dim = 2;
    int n = 16;
    double sigma = 0.0;  // 0: 2h
    double delta = 1e-4;
    IsoParams base = iso_from_nu_e(0.25, 10.0, 2);
    CostWeights weights;
    BridgeSpec spec;
    std::uint64_t seed = 0;
    std::optional<double> fixed_theta;
    std::vector<std::array<double, 2>> targets;  // (nu, E)
    NlpSettings nlp;
};

struct SampleRecord {
    int id = 0;
    double target_nu = 0.0;
    double target_E = 0.0;
    Eigen::VectorXd voigt;  // row-major upper triangle of C*
    double volume = 0.0;
    double mm_energy = 0.0;
    double cost_j = 0.0;
    CellStatus status = CellStatus::infeasible;
    std::uint64_t seed = 0;
    std::string field;  // path relative to the database directory
    double kkt_residual = 0.0;
    int iterations = 0;
    bool repair_attempted = false;
    Eigen::VectorXd values;  // nodal phase field, (n+1)^dim entries

    ElasticityTensor tensor(int dim) const { return ElasticityTensor::from_upper(dim, voigt); }
    std::array<double, 2> achieved(int dim) const {
        auto [nu, E] = nu_e_of(tensor(dim));
        return {nu, E};
    }
};

struct Database {
    int dim = 2;
    int n = 16;
    double sigma = 0.0;
    double delta = 1e-4;
    IsoParams base = iso_from_nu_e(0.25, 10.0, 2);
    CostWeights weights;
    BridgeSpec spec;
    std::uint64_t seed = 0;
    std::vector<SampleRecord> samples;

    Grid grid() const { return build_grid(dim, n); }
    MicroMaterial material() const { return {base, delta}; }
    double effective_sigma() const { return twoscale::effective_sigma(grid(), sigma); }
};

using ProgressFn = std::function<void(const std::string&)>;

/// Barycentric lattice with `resolution` points per side over the theta=1 HS
/// triangle, truncated to the part above E = 0.01 E_base (the sub-triangle
/// whose bottom edge lies on that line), ordered by row from the bottom.
inline SamplePlan plan_samples(const IsoParams& base, double delta, const BridgeSpec& spec, int resolution) {
    if (resolution < 2) throw DomainError("plan resolution must be at least 2");
    const HSBounds b = hs_upper(1.0, base, delta);
    const auto& t = b.triangle;
    const double E_cut = 0.01 * base.E;
    const double s = E_cut / t[2][1];
    auto lerp = [](const std::array<double, 2>& p, const std::array<double, 2>& q, double a) {
        return std::array<double, 2>{p[0] + a * (q[0] - p[0]), p[1] + a * (q[1] - p[1])};
    };
    const std::array<double, 2> A = lerp(t[0], t[2], s), B = lerp(t[1], t[2], s), C = t[2];
    SamplePlan plan;
    plan.dim = base.dim;
    plan.base = base;
    plan.delta = delta;
    plan.spec = spec;
    const int r = resolution - 1;
    for (int k = 0; k <= r; ++k)
        for (int j = 0; j <= r - k; ++j) {
            const int i = r - k - j;
            const double wi = double(i) / r, wj = double(j) / r, wk = double(k) / r;
            plan.targets.push_back({wi * A[0] + wj * B[0] + wk * C[0], wi * A[1] + wj * B[1] + wk * C[1]});
        }
    return plan;
}

namespace detail {

inline CellProblem cell_problem_for(const SamplePlan& plan, double nu, double E) {
    CellProblem p;
    p.grid = build_grid(plan.dim, plan.n);
    p.mat = {plan.base, plan.delta};
    p.target = tensor_from_iso(iso_from_nu_e(nu, E, plan.dim));
    p.weights = plan.weights;
    p.spec = plan.spec;
    p.sigma = plan.sigma;
    p.nlp = plan.nlp;
    p.fixed_theta = plan.fixed_theta;
    return p;
}

inline SampleRecord record_from(int id, double nu, double E, std::uint64_t seed, const CellResult& r) {
    SampleRecord s;
    s.id = id;
    s.target_nu = nu;
    s.target_E = E;
    s.voigt = r.C_star.upper();
    s.volume = r.volume;
    s.mm_energy = r.perimeter_mm;
    s.cost_j = r.cost_j;
    s.status = r.status;
    s.seed = seed;
    s.field = "fields/" + std::to_string(id) + ".f64";
    s.kkt_residual = r.kkt_residual;
    s.iterations = r.iterations;
    s.values = r.v_star.values;
    return s;
}

/// Solve one target; any exception is recorded as an infeasible sample that
/// keeps the initial field.
inline SampleRecord solve_sample(const SamplePlan& plan, int id, const PhaseField* warm = nullptr) {
    const auto [nu, E] = plan.targets.at(id);
    const std::uint64_t seed = plan.seed + static_cast<std::uint64_t>(id);
    const CellProblem p = cell_problem_for(plan, nu, E);
    const PhaseField init = warm ? *warm : random_init(p.grid, p.spec, seed);
    try {
        return record_from(id, nu, E, seed, solve_cell(p, init));
    } catch (const std::exception&) {
        CellResult r = evaluate_cell(p, init.values);
        r.status = CellStatus::infeasible;
        return record_from(id, nu, E, seed, r);
    }
}

/// Run `count` independent jobs on `jobs` workers pulling from a shared counter.
inline void parallel_for(int count, int jobs, const std::function<void(int)>& body) {
    jobs = std::max(1, std::min(jobs, count));
    if (jobs <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex m;
    for (int w = 0; w < jobs; ++w)
        pool.emplace_back([&] {
            for (int i = next++; i < count; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(m);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

inline Database empty_database_for(const SamplePlan& plan) {
    Database db;
    db.dim = plan.dim;
    db.n = plan.n;
    db.sigma = plan.sigma;
    db.delta = plan.delta;
    db.base = plan.base;
    db.weights = plan.weights;
    db.spec = plan.spec;
    db.seed = plan.seed;
    return db;
}

inline Database build_database(const SamplePlan& plan, int jobs, const ProgressFn& progress = {}) {
    if (plan.base.dim != plan.dim) throw StructureError("plan base material dimension differs from plan dim");
    for (const auto& [nu, E] : plan.targets)
        if (!hs_contains(nu, E, hs_upper(1.0, plan.base, plan.delta), 1e-9))
            throw DomainError("planned target outside the Hashin-Shtrikman triangle");
    Database db = empty_database_for(plan);
    const int count = static_cast<int>(plan.targets.size());
    db.samples.resize(count);
    std::mutex log_mutex;
    std::atomic<int> done{0};
    detail::parallel_for(count, jobs, [&](int id) {
        const auto t0 = std::chrono::steady_clock::now();
        db.samples[id] = detail::solve_sample(plan, id);
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (progress) {
            std::lock_guard<std::mutex> lock(log_mutex);
            const auto& s = db.samples[id];
            progress("sample " + std::to_string(id) + " (" + std::to_string(++done) + "/" + std::to_string(count) +
                     ") " + to_string(s.status) + " in " + std::to_string(dt) + " s");
        }
    });
    return db;
}

/// Scale-normalized (nu, E) distance: nu over the admissible interval, E over E_base.
inline double parameter_distance(const Database& db, double nu0, double E0, double nu1, double E1) {
    const double nu_range = db.dim == 2 ? 2.0 : 1.5;
    const double dn = (nu0 - nu1) / nu_range, dE = (E0 - E1) / db.base.E;
    return std::sqrt(dn * dn + dE * dE);
}

struct RepairReport {
    int attempted = 0;
    int repaired = 0;
};

/// Re-solve every disconnected record from an inverse-distance blend of its
/// nearest connected neighbours; keep the new result only if it converged
/// connected at no more than 5% extra cost.
inline RepairReport repair_disconnected(Database& db, const SamplePlan& plan, int neighbours = 3,
                                        const ProgressFn& progress = {}) {
    RepairReport rep;
    const int dim = db.dim;
    std::vector<int> good;
    for (size_t i = 0; i < db.samples.size(); ++i)
        if (db.samples[i].status == CellStatus::converged) good.push_back(static_cast<int>(i));
    const Grid g = db.grid();
    const BridgeSpec masks_spec{db.spec.variant, db.spec.width, db.effective_sigma()};
    for (auto& rec : db.samples) {
        if (rec.status != CellStatus::disconnected || good.empty()) continue;
        ++rep.attempted;
        rec.repair_attempted = true;
        std::vector<std::pair<double, int>> near;
        for (int j : good) {
            const auto a = db.samples[j].achieved(dim);
            near.push_back({parameter_distance(db, rec.target_nu, rec.target_E, a[0], a[1]), j});
        }
        std::sort(near.begin(), near.end());
        near.resize(std::min<size_t>(near.size(), static_cast<size_t>(neighbours)));
        std::vector<std::pair<PhaseField, double>> nb;
        if (near.front().first <= 1e-14) {
            nb.push_back({{g, db.samples[near.front().second].values}, 1.0});
        } else {
            double wsum = 0.0;
            for (auto [d, j] : near) wsum += 1.0 / d;
            for (auto [d, j] : near) nb.push_back({{g, db.samples[j].values}, (1.0 / d) / wsum});
        }
        const PhaseField init = reinit_from_neighbors(nb, masks_spec);
        SamplePlan single = plan;
        single.targets = {{rec.target_nu, rec.target_E}};
        single.seed = rec.seed;
        SampleRecord fresh = detail::solve_sample(single, 0, &init);
        const bool better = fresh.status == CellStatus::converged && fresh.cost_j <= 1.05 * rec.cost_j;
        if (progress)
            progress("repair sample " + std::to_string(rec.id) + ": " + to_string(fresh.status) +
                     (better ? " (replaced)" : " (kept original)"));
        if (better) {
            fresh.id = rec.id;
            fresh.seed = rec.seed;
            fresh.field = rec.field;
            fresh.repair_attempted = true;
            rec = std::move(fresh);
            ++rep.repaired;
        }
    }
    return rep;
}

struct VerifyReport {
    int checked = 0;
    double max_error = 0.0;
    std::vector<int> failures;
    bool ok() const { return failures.empty(); }
};

/// Re-homogenize every converged field and compare with the stored tensor.
inline VerifyReport verify_database(const Database& db, double tol = 1e-6) {
    VerifyReport rep;
    const Grid g = db.grid();
    Homogenizer hom(g, db.material());
    for (const auto& s : db.samples) {
        if (s.status != CellStatus::converged) continue;
        ++rep.checked;
        const auto cs = hom.solve_correctors(s.values);
        const double err = (hom.effective_tensor(s.values, cs).upper() - s.voigt).lpNorm<Eigen::Infinity>();
        rep.max_error = std::max(rep.max_error, err);
        if (!(err <= tol)) rep.failures.push_back(s.id);
    }
    return rep;
}

// ---------------------------------------------------------------- storage

namespace detail {

inline void write_f64(const std::filesystem::path& p, const Eigen::VectorXd& v) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw FormatError("cannot write " + p.string());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(v(i));
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        char buf[8];
        std::memcpy(buf, &bits, 8);
        out.write(buf, 8);
    }
    if (!out) throw FormatError("short write to " + p.string());
}

inline Eigen::VectorXd read_f64(const std::filesystem::path& p, Eigen::Index expected, const std::string& who) {
    std::ifstream in(p, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError(who + ": missing field file " + p.string());
    const auto bytes = static_cast<std::streamoff>(in.tellg());
    if (bytes != expected * 8)
        throw FormatError(who + ": field file " + p.string() + " holds " + std::to_string(bytes) + " bytes, expected " +
                          std::to_string(expected * 8));
    in.seekg(0);
    Eigen::VectorXd v(expected);
    for (Eigen::Index i = 0; i < expected; ++i) {
        char buf[8];
        in.read(buf, 8);
        std::uint64_t bits;
        std::memcpy(&bits, buf, 8);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        v(i) = std::bit_cast<double>(bits);
    }
    if (!in) throw FormatError(who + ": truncated field file " + p.string());
    return v;
}

inline nlohmann::json vec_json(const Eigen::VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

template <class T>
T get_key(const nlohmann::json& j, const char* key, const std::string& who) {
    if (!j.is_object() || !j.contains(key)) throw FormatError(who + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(who + ": bad value for '" + key + "': " + e.what());
    }
}

}  // namespace detail

inline Eigen::VectorXd read_field_file(const std::filesystem::path& p, Eigen::Index expected) {
    return detail::read_f64(p, expected, "field");
}
inline void write_field_file(const std::filesystem::path& p, const Eigen::VectorXd& v) { detail::write_f64(p, v); }

inline nlohmann::json manifest_json(const Database& db) {
    using nlohmann::json;
    json j;
    j["format_version"] = kFormatVersion;
    j["dim"] = db.dim;
    j["n"] = db.n;
    j["sigma"] = db.sigma;
    j["delta"] = db.delta;
    j["seed"] = db.seed;
    j["base"] = {{"nu", db.base.nu}, {"E", db.base.E}};
    j["weights"] = {{"c_V", db.weights.c_V}, {"c_P", db.weights.c_P}, {"c_P_hat", db.weights.c_P_hat}};
    j["bridge"] = {{"variant", to_string(db.spec.variant)}, {"width", db.spec.width}};
    j["samples"] = json::array();
    for (const auto& s : db.samples)
        j["samples"].push_back({{"id", s.id},
                                {"target_nu", s.target_nu},
                                {"target_E", s.target_E},
                                {"voigt", detail::vec_json(s.voigt)},
                                {"volume", s.volume},
                                {"mm_energy", s.mm_energy},
                                {"cost_j", s.cost_j},
                                {"status", to_string(s.status)},
                                {"seed", s.seed},
                                {"field", s.field},
                                {"kkt_residual", s.kkt_residual},
                                {"iterations", s.iterations},
                                {"repair_attempted", s.repair_attempted}});
    return j;
}

inline void write_database(const Database& db, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "fields");
    for (const auto& s : db.samples) detail::write_f64(dir / s.field, s.values);
    std::ofstream out(dir / "manifest.json");
    if (!out) throw FormatError("cannot write manifest in " + dir.string());
    out << manifest_json(db).dump(2) << '\n';
}

inline Database read_database(const std::filesystem::path& dir) {
    using nlohmann::json;
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("no manifest.json in " + dir.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
    const std::string who = "manifest";
    Database db;
    const int version = detail::get_key<int>(j, "format_version", who);
    if (version != kFormatVersion) throw FormatError("unsupported database format version " + std::to_string(version));
    db.dim = detail::get_key<int>(j, "dim", who);
    db.n = detail::get_key<int>(j, "n", who);
    check_dim(db.dim);
    if (db.n < 2) throw FormatError("manifest: grid size n must be at least 2");
    db.sigma = detail::get_key<double>(j, "sigma", who);
    db.delta = detail::get_key<double>(j, "delta", who);
    db.seed = detail::get_key<std::uint64_t>(j, "seed", who);
    const auto base = detail::get_key<json>(j, "base", who);
    try {
        db.base = iso_from_nu_e(detail::get_key<double>(base, "nu", "base"), detail::get_key<double>(base, "E", "base"),
                                db.dim);
    } catch (const DomainError& e) {
        throw FormatError(std::string("manifest: invalid base material: ") + e.what());
    }
    const auto w = detail::get_key<json>(j, "weights", who);
    db.weights = {detail::get_key<double>(w, "c_V", "weights"), detail::get_key<double>(w, "c_P", "weights"),
                  detail::get_key<double>(w, "c_P_hat", "weights")};
    const auto br = detail::get_key<json>(j, "bridge", who);
    try {
        db.spec.variant = bridge_variant_from_string(detail::get_key<std::string>(br, "variant", "bridge"));
    } catch (const SpecError& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    db.spec.width = detail::get_key<double>(br, "width", "bridge");
    db.spec.sigma = db.sigma;
    const Eigen::Index nodes = db.grid().node_count();
    const int nup = voigt_upper_count(db.dim);
    for (const auto& js : detail::get_key<json>(j, "samples", who)) {
        SampleRecord s;
        s.id = detail::get_key<int>(js, "id", "sample");
        const std::string rid = "record " + std::to_string(s.id);
        s.target_nu = detail::get_key<double>(js, "target_nu", rid);
        s.target_E = detail::get_key<double>(js, "target_E", rid);
        const auto vo = detail::get_key<std::vector<double>>(js, "voigt", rid);
        if (static_cast<int>(vo.size()) != nup) throw FormatError(rid + ": voigt has wrong length");
        s.voigt = Eigen::Map<const Eigen::VectorXd>(vo.data(), nup);
        s.volume = detail::get_key<double>(js, "volume", rid);
        s.mm_energy = detail::get_key<double>(js, "mm_energy", rid);
        s.cost_j = detail::get_key<double>(js, "cost_j", rid);
        try {
            s.status = cell_status_from_string(detail::get_key<std::string>(js, "status", rid));
        } catch (const FormatError& e) {
            throw FormatError(rid + ": " + e.what());
        }
        s.seed = detail::get_key<std::uint64_t>(js, "seed", rid);
        s.field = detail::get_key<std::string>(js, "field", rid);
        if (js.contains("kkt_residual")) s.kkt_residual = detail::get_key<double>(js, "kkt_residual", rid);
        if (js.contains("iterations")) s.iterations = detail::get_key<int>(js, "iterations", rid);
        if (js.contains("repair_attempted")) s.repair_attempted = detail::get_key<bool>(js, "repair_attempted", rid);
        s.values = detail::read_f64(dir / s.field, nodes, rid);
        db.samples.push_back(std::move(s));
    }
    return db;
}

// ------------------------------------------------------------- plan files

inline nlohmann::json plan_json(const SamplePlan& p) {
    nlohmann::json j;
    j["dim"] = p.dim;
    j["n"] = p.n;
    j["sigma"] = p.sigma;
    j["delta"] = p.delta;
    j["seed"] = p.seed;
    j["base"] = {{"nu", p.base.nu}, {"E", p.base.E}};
    j["weights"] = {{"c_V", p.weights.c_V}, {"c_P", p.weights.c_P}, {"c_P_hat", p.weights.c_P_hat}};
    j["bridge"] = {{"variant", to_string(p.spec.variant)}, {"width", p.spec.width}};
    if (p.fixed_theta) j["fixed_theta"] = *p.fixed_theta;
    j["solver"] = {{"kkt_tol", p.nlp.kkt_tol},
                   {"constraint_tol", p.nlp.constraint_tol},
                   {"outer_cap", p.nlp.outer_cap},
                   {"inner_cap", p.nlp.inner_cap}};
    j["targets"] = nlohmann::json::array();
    for (const auto& [nu, E] : p.targets) j["targets"].push_back({{"nu", nu}, {"E", E}});
    return j;
}

/// Plan file: the manifest header keys plus either an explicit `targets`
/// list or a `resolution` for the barycentric lattice.
inline SamplePlan plan_from_json(const nlohmann::json& j) {
    using nlohmann::json;
    const std::string who = "plan";
    SamplePlan p;
    p.dim = j.value("dim", 2);
    check_dim(p.dim);
    p.n = j.value("n", 16);
    if (p.n < 2) throw DomainError("plan: n must be at least 2");
    p.sigma = j.value("sigma", 0.0);
    p.delta = j.value("delta", 1e-4);
    p.seed = j.value("seed", std::uint64_t{0});
    const json base = j.value("base", json{{"nu", 0.25}, {"E", 10.0}});
    p.base = iso_from_nu_e(detail::get_key<double>(base, "nu", "plan base"), detail::get_key<double>(base, "E", "plan base"),
                           p.dim);
    if (j.contains("weights")) {
        const auto& w = j["weights"];
        p.weights = {w.value("c_V", 1.0), w.value("c_P", 0.05), w.value("c_P_hat", w.value("c_P", 0.05))};
    }
    check_weights(p.weights);
    if (j.contains("bridge")) {
        p.spec.variant = bridge_variant_from_string(j["bridge"].value("variant", std::string("midfaces")));
        p.spec.width = j["bridge"].value("width", 0.125);
    }
    p.spec.sigma = p.sigma;
    if (j.contains("fixed_theta")) p.fixed_theta = j["fixed_theta"].get<double>();
    if (j.contains("solver")) {
        const auto& sv = j["solver"];
        p.nlp.kkt_tol = sv.value("kkt_tol", p.nlp.kkt_tol);
        p.nlp.constraint_tol = sv.value("constraint_tol", p.nlp.constraint_tol);
        p.nlp.outer_cap = sv.value("outer_cap", p.nlp.outer_cap);
        p.nlp.inner_cap = sv.value("inner_cap", p.nlp.inner_cap);
        if (!(p.nlp.kkt_tol > 0.0 && p.nlp.constraint_tol > 0.0) || p.nlp.outer_cap < 1 || p.nlp.inner_cap < 1)
            throw DomainError("plan: solver tolerances and iteration caps must be positive");
    }
    if (j.contains("targets")) {
        for (const auto& t : j["targets"])
            p.targets.push_back({detail::get_key<double>(t, "nu", "target"), detail::get_key<double>(t, "E", "target")});
    } else if (j.contains("resolution")) {
        const SamplePlan lattice = plan_samples(p.base, p.delta, p.spec, j["resolution"].get<int>());
        p.targets = lattice.targets;
    }
    return p;
}

/// Plan that re-solves the targets of an existing database.
inline SamplePlan plan_for(const Database& db) {
    SamplePlan p;
    p.dim = db.dim;
    p.n = db.n;
    p.sigma = db.sigma;
    p.delta = db.delta;
    p.base = db.base;
    p.weights = db.weights;
    p.spec = db.spec;
    p.seed = db.seed;
    for (const auto& s : db.samples) p.targets.push_back({s.target_nu, s.target_E});
    return p;
}

}  // namespace twoscale
