#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "twoscale/assemble.hpp"

using namespace twoscale;

namespace {

const BridgeSpec kSpec{BridgeVariant::midfaces, 0.125, 0.0};
const CostWeights kWeights{1.0, 0.05, 0.2};

/// Plus-shaped cross of half-width w with the bridge masks imposed.
Eigen::VectorXd cross(const Grid& g, double w) {
    Eigen::VectorXd v(g.node_count());
    for (int i = 0; i < g.node_count(); ++i) {
        const auto y = g.node_coords(i);
        const double d = std::min(std::fabs(y[0] - 0.5), std::fabs(y[1] - 0.5));
        v(i) = std::tanh((w - d) / (2.0 * g.h));
    }
    apply_masks(v, bridge_masks(g, kSpec));
    return v;
}

SampleRecord record(int id, const Grid& g, const Eigen::VectorXd& v, double nu, double E) {
    SampleRecord r;
    r.id = id;
    r.target_nu = nu;
    r.target_E = E;
    r.values = v;
    r.status = CellStatus::converged;
    const auto f = micro_functionals(g, v, effective_sigma(g, 0.0), false);
    r.volume = f.volume;
    r.mm_energy = f.perimeter;
    r.cost_j = kWeights.c_V * f.volume + kWeights.c_P_hat * f.perimeter;
    return r;
}

/// Hand-made database of three masked crosses; no cell solves involved.
Database synthetic_db() {
    Database db;
    db.n = 16;
    db.spec = kSpec;
    db.weights = kWeights;
    const Grid g = db.grid();
    db.samples.push_back(record(0, g, cross(g, 0.10), 0.10, 1.0));
    db.samples.push_back(record(1, g, cross(g, 0.20), 0.20, 3.0));
    db.samples.push_back(record(2, g, cross(g, 0.32), 0.25, 6.0));
    return db;
}

MacroProblem box_problem(int nx, int ny, double H) {
    MacroProblem p;
    p.dim = 2;
    p.H = H;
    p.box = {nx, ny, 1};
    return p;
}

std::uint8_t voxel(const TwoScaleStructure& s, int x, int y) { return s.occupancy[x + s.voxels()[0] * y]; }

}  // namespace

TEST(Assemble, SingleCellReproducesTheRecord) {
    const Database db = synthetic_db();
    const auto s = realize_parameters(box_problem(1, 1, 1.0), {{0.20, 3.0}}, db);
    ASSERT_EQ(s.record[0], 1);
    EXPECT_EQ(s.fields[0], db.samples[1].values);
    EXPECT_EQ(substitution_error(s, db), 0.0);
    const Grid g = db.grid();
    ASSERT_EQ(s.voxel_count(), 256u);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) EXPECT_EQ(voxel(s, x, y), db.samples[1].values(g.node_index({x, y, 0})) > 0.0);
}

TEST(Assemble, IdenticalCellsTileWithPeriodEpsilon) {
    const Database db = synthetic_db();
    const auto s = realize_parameters(box_problem(3, 2, 0.5), std::vector<std::array<double, 2>>(6, {0.1, 1.2}), db);
    const auto vx = s.voxels();
    ASSERT_EQ(vx[0], 48);
    ASSERT_EQ(vx[1], 32);
    for (int y = 0; y < vx[1]; ++y)
        for (int x = 0; x < vx[0]; ++x) {
            EXPECT_EQ(voxel(s, x, y), voxel(s, x % 16, y % 16));
        }
}

TEST(Assemble, SharedFaceBridgeNodesAgree) {
    const Database db = synthetic_db();
    const auto s = realize_parameters(box_problem(2, 1, 0.5), {{0.1, 1.0}, {0.25, 6.0}}, db);
    ASSERT_NE(s.record[0], s.record[1]);
    // Direct comparison: node (n, j) of the left cell sits on node (0, j) of
    // the right cell; on the midface bridge both must be hard.
    const Grid g = db.grid();
    const auto masks = bridge_masks(g, kSpec);
    int bridge = 0;
    for (int j = 0; j <= 16; ++j) {
        const int left = g.node_index({16, j, 0}), right = g.node_index({0, j, 0});
        if (!masks.hard[left]) continue;
        ++bridge;
        EXPECT_GT(s.fields[0](left), 0.0);
        EXPECT_GT(s.fields[1](right), 0.0);
        EXPECT_EQ(voxel(s, 16, j), 1);
    }
    EXPECT_GT(bridge, 0);
    const auto rep = bridge_face_scan(s);
    EXPECT_EQ(rep.faces, 1);
    EXPECT_TRUE(rep.ok());
    EXPECT_GT(rep.mask_nodes, 0);
    EXPECT_EQ(rep.mismatches, 0);
}

TEST(Assemble, FaceScanFlagsUnmaskedField) {
    Database db = synthetic_db();
    const Grid g = db.grid();
    // Hard only near the left edge: the x = 1 midface bridge is soft.
    Eigen::VectorXd v = -Eigen::VectorXd::Ones(g.node_count());
    for (int i = 0; i < g.node_count(); ++i)
        if (g.node_coords(i)[0] < 0.2) v(i) = 1.0;
    db.samples.push_back(record(3, g, v, 0.0, 0.5));
    const auto s = realize_parameters(box_problem(2, 2, 0.5), {{0.0, 0.5}, {0.25, 6.0}, {0.25, 6.0}, {0.25, 6.0}}, db);
    const auto rep = bridge_face_scan(s);
    EXPECT_EQ(rep.faces, 4);
    // Cell 0 breaks both its right (x = 1) and top (y = 1) midface bridges.
    EXPECT_EQ(rep.faces_passed, 2);
    ASSERT_EQ(rep.failures.size(), 2u);
    EXPECT_NE(rep.failures[0].find("cells 0 and 1"), std::string::npos) << rep.failures[0];
    EXPECT_NE(rep.failures[1].find("cells 0 and 2"), std::string::npos) << rep.failures[1];
}

TEST(Assemble, NearestRecordUsesNormalizedMetric) {
    const Database db = synthetic_db();
    // nu range 0.15, E range 5. For (0.17, 1.5) the raw Euclidean distance
    // picks record 0 (0.50 vs 1.50); normalized, record 1 wins (0.36 vs 0.48).
    EXPECT_EQ(nearest_record(db, 0.17, 1.5), 1);
    EXPECT_EQ(nearest_record(db, 0.11, 1.1), 0);
    EXPECT_EQ(nearest_record(db, 0.2, 2.9), 1);
    EXPECT_EQ(nearest_record(db, 0.3, 100.0), 2);
    Database dup = db;
    dup.samples.push_back(dup.samples[1]);
    EXPECT_EQ(nearest_record(dup, 0.2, 3.0), 1);

    Database empty = db;
    empty.samples.clear();
    EXPECT_THROW(nearest_record(empty, 0.2, 3.0), DomainError);
    EXPECT_THROW(realize_parameters(box_problem(1, 1, 1.0), {{0.2, 3.0}}, empty), DomainError);

    Database bad = db;
    bad.samples[2].status = CellStatus::infeasible;
    try {
        realize_parameters(box_problem(2, 1, 0.5), {{0.1, 1.0}, {0.25, 6.0}}, bad);
        FAIL() << "infeasible record accepted";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("(1,0)"), std::string::npos) << e.what();
    }
}

TEST(Assemble, RealizeFromDesignIsDeterministic) {
    const Database db = synthetic_db();
    const auto chart = make_chart({{{0, 0}, {0.1, 1.0}}, {{1, 0}, {0.25, 1.0}}, {{0, 1}, {0.1, 6.0}}, {{1, 1}, {0.25, 6.0}}},
                                  0.25, [](double, double E) { return std::array<double, 2>{E / 10.0, 1.0}; }, 1.0, 0.2);
    const MacroProblem p = box_problem(3, 2, 0.5);
    MacroDesign d;
    std::mt19937 rng(4);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int i = 0; i < 6; ++i) d.q.push_back({U(rng), U(rng)});
    const auto a = realize(p, d, db, chart), b = realize(p, d, db, chart);
    EXPECT_EQ(a.occupancy, b.occupancy);
    EXPECT_EQ(a.record, b.record);
    for (size_t c = 0; c < 6; ++c) {
        const auto v = eval_psi(chart.psi, d.q[c]);
        EXPECT_EQ(a.record[c], nearest_record(db, v(0), v(1)));
    }
    EXPECT_THROW(realize(p, MacroDesign{}, db, chart), StructureError);
}

TEST(Assemble, CostIdentityHoldsAndDetectsCorruption) {
    const Database db = synthetic_db();
    const auto s = realize_parameters(box_problem(3, 2, 0.5), {{0.1, 1}, {0.2, 3}, {0.25, 6}, {0.2, 3}, {0.1, 1}, {0.25, 6}},
                                      db);
    const auto rep = cost_identity_check(s, kWeights, s.epsilon);
    EXPECT_TRUE(rep.ok());
    EXPECT_LE(rep.rel_mismatch, 1e-10);
    EXPECT_GT(rep.volume_term, 0.0);
    EXPECT_GT(rep.perimeter_term, 0.0);
    EXPECT_GT(rep.sharp_perimeter, 0.0);

    TwoScaleStructure bad = s;
    for (int i = 0; i < bad.fields[4].size(); i += 7) bad.fields[4](i) = -bad.fields[4](i);
    const auto broken = cost_identity_check(bad, kWeights, bad.epsilon);
    EXPECT_GT(broken.rel_mismatch, 1e-8);
    EXPECT_FALSE(broken.ok());
}

TEST(Assemble, CostIdentityEpsilonScaling) {
    const Database db = synthetic_db();
    const auto s = realize_parameters(box_problem(2, 1, 0.5), {{0.1, 1}, {0.25, 6}}, db);
    const auto a = cost_identity_check(s, kWeights, 0.5), b = cost_identity_check(s, kWeights, 1.0);
    // In 2D: volumes scale with eps^2, the perimeter measure with eps, and
    // the weighted perimeter term c_P_hat eps |D chi| with eps^2.
    EXPECT_NEAR(b.volume_integral, 4.0 * a.volume_integral, 1e-14);
    EXPECT_NEAR(b.perimeter, 2.0 * a.perimeter, 1e-13);
    EXPECT_NEAR(b.perimeter_term, 4.0 * a.perimeter_term, 1e-13);
    EXPECT_NEAR(b.cell_sum, 4.0 * a.cell_sum, 1e-13);
    EXPECT_TRUE(b.ok());
    EXPECT_NEAR(b.sharp_perimeter, 2.0 * a.sharp_perimeter, 1e-13);
}

TEST(Assemble, PgmRoundTripAndLayout) {
    const Database db = synthetic_db();
    const auto s = realize_parameters(box_problem(2, 1, 0.5), {{0.1, 1}, {0.25, 6}}, db);
    std::stringstream ss;
    write_pgm(voxel_image(s), ss);
    std::string magic;
    int w, h, maxval, first;
    ss >> magic >> w >> h >> maxval >> first;
    EXPECT_EQ(magic, "P2");
    EXPECT_EQ(w, 32);
    EXPECT_EQ(h, 16);
    EXPECT_EQ(maxval, 255);
    // The first pixel is the top-left voxel (x = 0, y = 15).
    EXPECT_EQ(first, voxel(s, 0, 15) ? 255 : 0);
    ss.seekg(0);
    const auto back = read_pgm(ss);
    EXPECT_EQ(back.occupancy, s.occupancy);
    EXPECT_EQ(back.size, s.voxels());

    std::istringstream junk("P5\n1 1\n255\n0\n");
    EXPECT_THROW(read_pgm(junk), FormatError);
    std::istringstream mid("P2\n1 1\n255\n128\n");
    EXPECT_THROW(read_pgm(mid), FormatError);
}

TEST(Assemble, AllHardStructureIsWhite) {
    Database db = synthetic_db();
    db.samples = {record(0, db.grid(), Eigen::VectorXd::Ones(db.grid().node_count()), 0.25, 10.0)};
    const auto s = realize_parameters(box_problem(2, 2, 0.5), std::vector<std::array<double, 2>>(4, {0.25, 10.0}), db);
    std::stringstream ss;
    write_pgm(voxel_image(s), ss);
    std::string magic;
    int w, h, maxval;
    ss >> magic >> w >> h >> maxval;
    int px, count = 0;
    while (ss >> px) {
        EXPECT_EQ(px, 255);
        ++count;
    }
    EXPECT_EQ(count, 32 * 32);
}

TEST(Assemble, VtkRoundTrip) {
    const Database db = synthetic_db();
    const auto s = realize_parameters(box_problem(3, 2, 0.5), std::vector<std::array<double, 2>>(6, {0.2, 3.0}), db);
    std::stringstream ss;
    write_vtk(voxel_image(s), ss);
    EXPECT_NE(ss.str().find("POINT_DATA 1536"), std::string::npos);  // (3*16) * (2*16)
    EXPECT_NE(ss.str().find("SCALARS chi"), std::string::npos);
    const auto back = read_vtk(ss);
    EXPECT_EQ(back.occupancy, s.occupancy);
    EXPECT_EQ(back.dim, 2);

    VoxelImage im{3, {4, 3, 5}, 0.25, {}};
    std::mt19937 rng(2);
    for (int i = 0; i < 60; ++i) im.occupancy.push_back(rng() & 1);
    std::stringstream s3;
    write_vtk(im, s3);
    const auto b3 = read_vtk(s3);
    EXPECT_EQ(b3.dim, 3);
    EXPECT_EQ(b3.size, im.size);
    EXPECT_EQ(b3.occupancy, im.occupancy);
    EXPECT_EQ(b3.spacing, 0.25);
}

TEST(Assemble, StlCubeAndWatertightness) {
    std::stringstream one;
    write_stl(VoxelImage{3, {1, 1, 1}, 1.0, {1}}, one);
    EXPECT_EQ(stl_triangle_count(one), 12u);
    EXPECT_EQ(one.str().size(), 84u + 12u * 50u);

    // Random blob: every triangle edge must be shared by exactly two
    // triangles (watertight), and opposite orientations must pair up.
    VoxelImage im{3, {5, 4, 3}, 0.5, {}};
    std::mt19937 rng(8);
    for (int i = 0; i < 60; ++i) im.occupancy.push_back(rng() % 3 == 0);
    im.occupancy[0] = 1;
    std::stringstream ss;
    write_stl(im, ss);
    const std::string bytes = ss.str();
    std::uint32_t count;
    std::memcpy(&count, bytes.data() + 80, 4);
    ASSERT_EQ(bytes.size(), 84u + 50u * count);
    std::map<std::array<long, 6>, int> directed;
    for (std::uint32_t t = 0; t < count; ++t) {
        float f[12];
        std::memcpy(f, bytes.data() + 84 + 50 * t, 48);
        std::array<std::array<long, 3>, 3> v;
        for (int m = 0; m < 3; ++m)
            for (int k = 0; k < 3; ++k) v[m][k] = std::lround(f[3 + 3 * m + k] / 0.5);
        // The normal agrees with the right-hand rule.
        std::array<long, 3> e1, e2;
        for (int k = 0; k < 3; ++k) e1[k] = v[1][k] - v[0][k], e2[k] = v[2][k] - v[0][k];
        const std::array<long, 3> cr{e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]};
        for (int k = 0; k < 3; ++k) EXPECT_EQ(cr[k] > 0 ? 1 : cr[k] < 0 ? -1 : 0, static_cast<int>(f[k]));
        for (int m = 0; m < 3; ++m) {
            const auto& a = v[m];
            const auto& b = v[(m + 1) % 3];
            ++directed[{a[0], a[1], a[2], b[0], b[1], b[2]}];
        }
    }
    // Face diagonals and voxel edges both appear; a closed oriented surface
    // traverses every directed edge as often as its reverse. Edges shared by
    // two components touching along a line appear twice in each direction.
    for (const auto& [e, n] : directed) {
        const auto it = directed.find({e[3], e[4], e[5], e[0], e[1], e[2]});
        ASSERT_NE(it, directed.end());
        EXPECT_EQ(it->second, n);
    }

    std::stringstream flat;
    EXPECT_THROW(write_stl(VoxelImage{2, {2, 2, 1}, 1.0, {1, 1, 1, 1}}, flat), FormatError);
    EXPECT_THROW(export_format_from_string("obj"), FormatError);
    EXPECT_EQ(export_format_from_string("stl"), ExportFormat::stl);
}

TEST(Assemble, ExportWritesFiles) {
    const Database db = synthetic_db();
    const auto s = realize_parameters(box_problem(1, 1, 1.0), {{0.2, 3.0}}, db);
    const auto dir = std::filesystem::temp_directory_path() / "twoscale_test_assemble";
    std::filesystem::create_directories(dir);
    export_structure(s, ExportFormat::pgm, dir / "a.pgm");
    export_structure(s, ExportFormat::vtk, dir / "a.vtk");
    EXPECT_THROW(export_structure(s, ExportFormat::stl, dir / "a.stl"), FormatError);
    std::ifstream in(dir / "a.pgm");
    EXPECT_EQ(read_pgm(in).occupancy, s.occupancy);
    std::ifstream iv(dir / "a.vtk");
    EXPECT_EQ(read_vtk(iv).occupancy, s.occupancy);
    std::filesystem::remove_all(dir);
}
