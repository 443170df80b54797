#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "twoscale/dbase.hpp"

using namespace twoscale;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("twoscale_test_dbase_" + name);
    fs::remove_all(p);
    return p;
}

SamplePlan small_plan() {
    SamplePlan p;
    p.n = 16;
    p.seed = 5;
    p.targets = {{0.25, 3.0}, {0.2, 2.0}, {0.3, 4.0}};
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class BuiltDatabase : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        plan_ = new SamplePlan(small_plan());
        db_ = new Database(build_database(*plan_, 1));
    }
    static void TearDownTestSuite() {
        delete plan_;
        delete db_;
    }
    static SamplePlan* plan_;
    static Database* db_;
};
SamplePlan* BuiltDatabase::plan_ = nullptr;
Database* BuiltDatabase::db_ = nullptr;

}  // namespace

TEST(Dbase, PlanCounts) {
    const auto base = iso_from_nu_e(0.25, 10.0, 2);
    EXPECT_EQ(plan_samples(base, 1e-4, {}, 2).targets.size(), 3u);
    EXPECT_EQ(plan_samples(base, 1e-4, {}, 5).targets.size(), 15u);
    EXPECT_EQ(plan_samples(base, 1e-4, {}, 10).targets.size(), 55u);
    EXPECT_THROW(plan_samples(base, 1e-4, {}, 1), DomainError);
}

TEST(Dbase, PlanTargetsLieInsideTheTriangle) {
    for (int dim : {2, 3}) {
        const auto base = iso_from_nu_e(0.25, 10.0, dim);
        const auto plan = plan_samples(base, 1e-4, {}, 10);
        const auto b = hs_upper(1.0, base, 1e-4);
        for (const auto& [nu, E] : plan.targets) {
            EXPECT_TRUE(hs_contains(nu, E, b, 0.0)) << nu << " " << E;
            EXPECT_GE(E, 0.01 * base.E * (1.0 - 1e-12));
        }
        // Resolution 2 gives the three corners of the clipped triangle; the
        // apex is the theta = 1 bound, which is the base material itself.
        const auto corners = plan_samples(base, 1e-4, {}, 2).targets;
        EXPECT_NEAR(corners[2][0], base.nu, 1e-12);
        EXPECT_NEAR(corners[2][1], base.E, 1e-12);
        EXPECT_NEAR(corners[0][1], 0.1, 1e-12);
        EXPECT_NEAR(corners[1][1], 0.1, 1e-12);
    }
}

TEST(Dbase, PlanJsonRoundTrip) {
    SamplePlan p = small_plan();
    p.fixed_theta = 0.4;
    p.nlp.outer_cap = 12;
    const SamplePlan q = plan_from_json(plan_json(p));
    EXPECT_EQ(q.targets, p.targets);
    EXPECT_EQ(q.n, p.n);
    EXPECT_EQ(q.seed, p.seed);
    EXPECT_EQ(q.fixed_theta, p.fixed_theta);
    EXPECT_EQ(q.nlp.outer_cap, 12);
    nlohmann::json j = plan_json(p);
    j["solver"]["inner_cap"] = 0;
    EXPECT_THROW(plan_from_json(j), DomainError);
    nlohmann::json lattice = {{"n", 8}, {"resolution", 4}};
    EXPECT_EQ(plan_from_json(lattice).targets.size(), 10u);
}

TEST(Dbase, EmptyPlanGivesEmptyValidDatabase) {
    SamplePlan p = small_plan();
    p.targets.clear();
    const Database db = build_database(p, 2);
    EXPECT_TRUE(db.samples.empty());
    EXPECT_TRUE(verify_database(db).ok());
    const fs::path dir = scratch_dir("empty");
    write_database(db, dir);
    EXPECT_TRUE(read_database(dir).samples.empty());
    fs::remove_all(dir);
}

TEST(Dbase, RejectsTargetOutsideTriangle) {
    SamplePlan p = small_plan();
    p.targets = {{0.25, 11.0}};
    EXPECT_THROW(build_database(p, 1), DomainError);
}

TEST_F(BuiltDatabase, ReachableTargetsConverge) {
    ASSERT_EQ(db_->samples.size(), 3u);
    const auto b = hs_upper(1.0, db_->base, db_->delta);
    for (const auto& s : db_->samples) {
        EXPECT_EQ(s.status, CellStatus::converged) << "sample " << s.id;
        const auto a = s.achieved(2);
        EXPECT_NEAR(a[0], s.target_nu, 1e-5);
        EXPECT_NEAR(a[1], s.target_E, 1e-5);
        EXPECT_TRUE(hs_contains(a[0], a[1], b, 0.02));
        EXPECT_EQ(s.seed, plan_->seed + static_cast<std::uint64_t>(s.id));
    }
    const auto rep = verify_database(*db_);
    EXPECT_EQ(rep.checked, 3);
    EXPECT_TRUE(rep.ok()) << rep.max_error;
    EXPECT_LE(rep.max_error, 1e-6);
}

TEST_F(BuiltDatabase, ParallelBuildMatchesSerial) {
    const Database par = build_database(*plan_, 3);
    EXPECT_EQ(manifest_json(par).dump(), manifest_json(*db_).dump());
    for (size_t i = 0; i < par.samples.size(); ++i) EXPECT_EQ(par.samples[i].values, db_->samples[i].values);
}

TEST_F(BuiltDatabase, WriteReadRoundTripIsBitExact) {
    const fs::path dir = scratch_dir("roundtrip");
    write_database(*db_, dir);
    const Database back = read_database(dir);
    ASSERT_EQ(back.samples.size(), db_->samples.size());
    for (size_t i = 0; i < back.samples.size(); ++i) {
        const auto &a = back.samples[i], &b = db_->samples[i];
        EXPECT_EQ(a.values, b.values);
        EXPECT_EQ(a.voigt, b.voigt);
        EXPECT_EQ(a.volume, b.volume);
        EXPECT_EQ(a.mm_energy, b.mm_energy);
        EXPECT_EQ(a.cost_j, b.cost_j);
        EXPECT_EQ(a.target_nu, b.target_nu);
        EXPECT_EQ(a.target_E, b.target_E);
        EXPECT_EQ(a.status, b.status);
    }
    // Field files are raw little-endian doubles with no header.
    EXPECT_EQ(fs::file_size(dir / "fields" / "0.f64"), static_cast<std::uintmax_t>(17 * 17 * 8));
    const fs::path dir2 = scratch_dir("roundtrip2");
    write_database(back, dir2);
    EXPECT_EQ(slurp(dir / "manifest.json"), slurp(dir2 / "manifest.json"));
    EXPECT_EQ(slurp(dir / "fields" / "1.f64"), slurp(dir2 / "fields" / "1.f64"));
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_F(BuiltDatabase, ManifestKeys) {
    const auto j = manifest_json(*db_);
    for (const char* k : {"dim", "n", "sigma", "delta", "base", "weights", "bridge", "samples"})
        EXPECT_TRUE(j.contains(k)) << k;
    for (const char* k : {"id", "target_nu", "target_E", "voigt", "volume", "mm_energy", "cost_j", "status", "seed",
                          "field"})
        EXPECT_TRUE(j["samples"][0].contains(k)) << k;
    EXPECT_EQ(j["samples"][0]["voigt"].size(), 6u);
}

TEST_F(BuiltDatabase, CorruptionIsReportedWithRecordId) {
    const fs::path dir = scratch_dir("corrupt");
    write_database(*db_, dir);
    {
        std::ofstream trunc(dir / "fields" / "1.f64", std::ios::binary | std::ios::trunc);
        trunc.write("12345678", 8);
    }
    try {
        read_database(dir);
        FAIL() << "truncated field accepted";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos) << e.what();
    }
    write_database(*db_, dir);
    fs::remove(dir / "fields" / "2.f64");
    try {
        read_database(dir);
        FAIL() << "missing field accepted";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("record 2"), std::string::npos) << e.what();
    }
    write_database(*db_, dir);
    {
        std::ofstream bad(dir / "manifest.json", std::ios::trunc);
        bad << "{\"dim\": 2, \"n\": ";
    }
    EXPECT_THROW(read_database(dir), FormatError);
    EXPECT_THROW(read_database(dir / "nowhere"), FormatError);
    fs::remove_all(dir);
}

TEST_F(BuiltDatabase, VerifyDetectsTamperedTensor) {
    Database copy = *db_;
    copy.samples[1].voigt(0) += 1e-3;
    const auto rep = verify_database(copy);
    EXPECT_FALSE(rep.ok());
    ASSERT_EQ(rep.failures.size(), 1u);
    EXPECT_EQ(rep.failures[0], 1);
}

TEST_F(BuiltDatabase, RepairLeavesCleanDatabaseUnchanged) {
    Database copy = *db_;
    const auto rep = repair_disconnected(copy, *plan_);
    EXPECT_EQ(rep.attempted, 0);
    EXPECT_EQ(manifest_json(copy).dump(), manifest_json(*db_).dump());
}

TEST_F(BuiltDatabase, RepairsSyntheticDisconnectedRecord) {
    // A disconnected record whose target is the achieved tensor of a
    // connected neighbour: the neighbour's field is a feasible warm start.
    Database copy = *db_;
    SampleRecord bad = copy.samples[0];
    const auto a = bad.achieved(2);
    bad.id = 3;
    bad.field = "fields/3.f64";
    bad.target_nu = a[0];
    bad.target_E = a[1];
    bad.status = CellStatus::disconnected;
    bad.values = -Eigen::VectorXd::Ones(bad.values.size());
    const double old_cost = bad.cost_j;
    copy.samples.push_back(bad);
    SamplePlan plan = *plan_;
    plan.targets.push_back({a[0], a[1]});
    const auto rep = repair_disconnected(copy, plan);
    EXPECT_EQ(rep.attempted, 1);
    EXPECT_EQ(rep.repaired, 1);
    const auto& fixed = copy.samples[3];
    EXPECT_EQ(fixed.status, CellStatus::converged);
    EXPECT_TRUE(fixed.repair_attempted);
    EXPECT_EQ(fixed.id, 3);
    EXPECT_LE(fixed.cost_j, 1.05 * old_cost);
    for (size_t i = 0; i < 3; ++i) EXPECT_EQ(copy.samples[i].values, db_->samples[i].values);
    EXPECT_TRUE(verify_database(copy).ok());
}
