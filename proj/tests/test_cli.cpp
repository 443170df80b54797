#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "twoscale/cli.hpp"

using namespace twoscale;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
    nlohmann::json json() const { return nlohmann::json::parse(out); }
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "twoscale");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("twoscale_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

/// Five masked crosses with tensors computed from their fields and hand-set
/// targets spread over a convex patch of the (nu, E) plane.
Database synthetic_db() {
    Database db;
    db.n = 16;
    db.seed = 7;
    const Grid g = db.grid();
    const auto masks = bridge_masks(g, db.spec);
    const std::array<std::array<double, 3>, 5> spec{{{0.10, 0.05, 1.0}, {0.18, 0.30, 2.0}, {0.14, -0.05, 2.0},
                                                     {0.30, 0.15, 6.0}, {0.22, 0.15, 3.0}}};
    for (int i = 0; i < 5; ++i) {
        Eigen::VectorXd v(g.node_count());
        for (int k = 0; k < g.node_count(); ++k) {
            const auto y = g.node_coords(k);
            const double d = std::min(std::fabs(y[0] - 0.5), std::fabs(y[1] - 0.5));
            v(k) = std::tanh((spec[i][0] - d) / (2.0 * g.h));
        }
        apply_masks(v, masks);
        SampleRecord r;
        r.id = i;
        r.target_nu = spec[i][1];
        r.target_E = spec[i][2];
        r.values = v;
        r.voigt = homogenize(g, v, db.material()).upper();
        const auto f = micro_functionals(g, v, db.effective_sigma(), false);
        r.volume = f.volume;
        r.mm_energy = f.perimeter;
        r.cost_j = db.weights.c_V * f.volume + db.weights.c_P_hat * f.perimeter;
        r.status = CellStatus::converged;
        r.seed = db.seed + i;
        r.field = "fields/" + std::to_string(i) + ".f64";
        db.samples.push_back(r);
    }
    return db;
}

}  // namespace

TEST(Cli, HsTriangleJson) {
    const auto r = cli({"hs-triangle", "--nu", "0.25", "--E", "10", "--delta", "1e-4", "--theta", "0.75", "--dim", "2",
                        "--json"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = r.json();
    const auto b = hs_upper(0.75, iso_from_nu_e(0.25, 10.0, 2), 1e-4);
    ASSERT_EQ(j["triangle"].size(), 3u);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 2; ++k) EXPECT_EQ(j["triangle"][i][k].get<double>(), b.triangle[i][k]);
    EXPECT_EQ(j["kappa_u"].get<double>(), b.kappa_u);
    EXPECT_TRUE(j.contains("seed"));
    const auto human = cli({"hs-triangle", "--theta", "0.5"});
    EXPECT_EQ(human.code, 0);
    EXPECT_NE(human.out.find("triangle:"), std::string::npos);
}

TEST(Cli, HomogenizeHardField) {
    const fs::path dir = scratch("homog");
    const Grid g = build_grid(2, 32);
    write_field_file(dir / "one.f64", Eigen::VectorXd::Ones(g.node_count()));
    const auto r = cli({"homogenize", "--field", (dir / "one.f64").string(), "--dim", "2", "--n", "32", "--nu", "0.25",
                        "--E", "10", "--delta", "1e-4", "--json"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = r.json();
    const auto C1 = tensor_from_iso(iso_from_nu_e(0.25, 10.0, 2));
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) EXPECT_NEAR(j["voigt"][a][b].get<double>(), C1.voigt(a, b), 1e-8 * C1.voigt.norm());
    EXPECT_NEAR(j["nu"].get<double>(), 0.25, 1e-9);
    EXPECT_NEAR(j["E"].get<double>(), 10.0, 1e-8);
    // Wrong size for the grid is a validation error.
    const auto bad = cli({"homogenize", "--field", (dir / "one.f64").string(), "--n", "16"});
    EXPECT_EQ(bad.code, 1);
    fs::remove_all(dir);
}

TEST(Cli, UsageErrors) {
    const auto unknown = cli({"hs-triangle", "--bogus", "1"});
    EXPECT_EQ(unknown.code, 1);
    EXPECT_FALSE((unknown.out + unknown.err).empty());
    EXPECT_EQ(cli({"no-such-command"}).code, 1);
    EXPECT_EQ(cli({}).code, 1);
    EXPECT_EQ(cli({"hs-triangle", "--delta", "2"}).code, 1);
    EXPECT_EQ(cli({"hs-triangle", "--json", "--log-level", "loud"}).code, 1);
    const auto v = cli({"--version"});
    EXPECT_EQ(v.code, 0);
    EXPECT_NE(v.out.find(kToolkitVersion), std::string::npos);
    EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, DbBuildVerifyAndDeterminism) {
    const fs::path dir = scratch("dbbuild");
    SamplePlan plan;
    plan.n = 16;
    plan.seed = 5;
    plan.targets = {{0.25, 3.0}};
    write_text(dir / "plan.json", plan_json(plan).dump());
    const auto a = cli({"db-build", "--plan", (dir / "plan.json").string(), "--out", (dir / "a").string(), "--json",
                        "--log-level", "quiet"});
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.json()["samples"].get<int>(), 1);
    EXPECT_EQ(a.json()["seed"].get<int>(), 5);
    const auto b = cli({"db-build", "--plan", (dir / "plan.json").string(), "--out", (dir / "b").string(), "--jobs", "2",
                        "--log-level", "quiet"});
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
    EXPECT_EQ(slurp(dir / "a" / "fields" / "0.f64"), slurp(dir / "b" / "fields" / "0.f64"));

    const auto v = cli({"db-verify", (dir / "a").string(), "--json"});
    EXPECT_EQ(v.code, 0) << v.out << v.err;
    EXPECT_TRUE(v.json()["ok"].get<bool>());

    // A tampered tensor makes verification fail.
    auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
    m["samples"][0]["voigt"][0] = m["samples"][0]["voigt"][0].get<double>() * 1.01;
    write_text(dir / "a" / "manifest.json", m.dump());
    EXPECT_EQ(cli({"db-verify", (dir / "a").string()}).code, 1);

    EXPECT_EQ(cli({"db-build", "--plan", (dir / "plan.json").string(), "--out", (dir / "c").string(), "--fixed-theta",
                   "1.5"})
                  .code,
              1);
    fs::remove_all(dir);
}

TEST(Cli, ChartMacroAssembleVerifyPipeline) {
    const fs::path dir = scratch("pipeline");
    write_database(synthetic_db(), dir / "db");
    ASSERT_EQ(cli({"db-verify", (dir / "db").string()}).code, 0);

    const auto cf = cli({"chart-fit", "--db", (dir / "db").string(), "--oracle", "nearest", "--tau", "0.125", "--out",
                         (dir / "chart.json").string(), "--json"});
    ASSERT_EQ(cf.code, 0) << cf.err;
    EXPECT_TRUE(cf.json()["orientation_consistent"].get<bool>());
    EXPECT_EQ(cf.json()["infeasible_points"].get<int>(), 0);
    const SplineChart chart = read_chart(dir / "chart.json");

    MacroProblem p = cantilever_problem(8, 4);
    const auto [lo, hi] = attainable_cost_range(p, chart);
    p.vol_h = 0.5 * (lo + hi);
    write_text(dir / "problem.json", problem_to_json(p).dump());

    for (const char* name : {"d1.json", "d2.json"}) {
        const auto mo = cli({"macro-opt", "--problem", (dir / "problem.json").string(), "--chart",
                             (dir / "chart.json").string(), "--out", (dir / name).string()});
        ASSERT_EQ(mo.code, 0) << mo.out << mo.err;
    }
    EXPECT_EQ(slurp(dir / "d1.json"), slurp(dir / "d2.json"));
    const auto design = nlohmann::json::parse(slurp(dir / "d1.json"));
    EXPECT_EQ(design["cells"].size(), 32u);
    EXPECT_EQ(design["problem_hash"].get<std::string>(), hex64(problem_hash(p)));

    const auto as = cli({"assemble", "--design", (dir / "d1.json").string(), "--db", (dir / "db").string(), "--chart",
                         (dir / "chart.json").string(), "--format", "pgm", "--out", (dir / "s.pgm").string(), "--json"});
    ASSERT_EQ(as.code, 0) << as.err;
    std::ifstream pgm(dir / "s.pgm");
    const auto im = read_pgm(pgm);
    EXPECT_EQ(im.size[0], 8 * 16);
    EXPECT_EQ(im.size[1], 4 * 16);
    EXPECT_EQ(cli({"assemble", "--design", (dir / "d1.json").string(), "--db", (dir / "db").string(), "--format", "stl",
                   "--out", (dir / "s.stl").string()})
                  .code,
              1);

    const auto ve = cli({"verify", "--design", (dir / "d1.json").string(), "--db", (dir / "db").string(), "--json"});
    EXPECT_EQ(ve.code, 0) << ve.out << ve.err;
    const auto vj = ve.json();
    EXPECT_TRUE(vj["ok"].get<bool>());
    EXPECT_LE(vj["cost_identity"]["rel_mismatch"].get<double>(), 1e-10);
    EXPECT_EQ(vj["faces_passed"], vj["faces"]);
    EXPECT_EQ(vj["seed"].get<int>(), 7);

    // Infeasible budget: validation error with the attainable range.
    p.vol_h = 10.0 * hi;
    write_text(dir / "bad.json", problem_to_json(p).dump());
    const auto inf = cli({"macro-opt", "--problem", (dir / "bad.json").string(), "--chart", (dir / "chart.json").string(),
                          "--out", (dir / "d3.json").string()});
    EXPECT_EQ(inf.code, 1);
    EXPECT_NE(inf.err.find("attainable"), std::string::npos);
    fs::remove_all(dir);
}
