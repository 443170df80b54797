#pragma once
// Fine-scale realization of a macro design: each macro cell receives the
// microstructure of the nearest database sample, tiled with period epsilon.
// Includes the cost bookkeeping check, the bridge face scan and voxel export.

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "twoscale/dbase.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/macroopt.hpp"
#include "twoscale/phasefield.hpp"
#include "twoscale/splinechart.hpp"

namespace twoscale {

struct TwoScaleStructure {
    int dim = 2;
    double epsilon = 1.0;
    int n = 16;                         // micro cells per macro cell and axis
    std::array<int, 3> cells{1, 1, 1};  // macro box
    BridgeSpec spec;
    double sigma = 0.0;  // effective micro interface width (unit-cell units)
    std::vector<int> record;                        // per box cell; -1 outside D
    std::vector<Eigen::VectorXd> fields;            // per box cell; nodal unit-cell field
    std::vector<double> cost_j;                     // per box cell, as stored in the database
    std::vector<std::array<double, 2>> requested;   // Psi(q) per box cell
    std::vector<std::array<double, 2>> substituted; // sampled (nu, E) of the chosen record
    std::vector<std::uint8_t> occupancy;            // voxels, x fastest

    std::array<int, 3> voxels() const {
        std::array<int, 3> v{1, 1, 1};
        for (int k = 0; k < dim; ++k) v[k] = cells[k] * n;
        return v;
    }
    std::size_t voxel_count() const {
        const auto v = voxels();
        return static_cast<std::size_t>(v[0]) * v[1] * v[2];
    }
    Grid macro_grid() const { return Grid::box(dim, cells, epsilon); }
    Grid micro_grid() const { return build_grid(dim, n); }
};

namespace detail {

/// Occupancy of every voxel from the per-cell fields. Voxel i of a macro
/// cell takes the value of unit-cell node i (its lower corner); with periodic
/// fields this is exactly the periodic extension.
inline void rebuild_occupancy(TwoScaleStructure& s) {
    const Grid macro = s.macro_grid(), micro = s.micro_grid();
    const auto vx = s.voxels();
    s.occupancy.assign(s.voxel_count(), 0);
    for (int c = 0; c < macro.cell_count(); ++c) {
        if (s.record[c] < 0) continue;
        const auto cm = macro.cell_multi(c);
        const Eigen::VectorXd& f = s.fields[c];
        for (int k2 = 0; k2 < (s.dim == 3 ? s.n : 1); ++k2)
            for (int k1 = 0; k1 < s.n; ++k1)
                for (int k0 = 0; k0 < s.n; ++k0) {
                    const int node = micro.node_index({k0, k1, k2});
                    const std::size_t gx = static_cast<std::size_t>(cm[0]) * s.n + k0;
                    const std::size_t gy = static_cast<std::size_t>(cm[1]) * s.n + k1;
                    const std::size_t gz = s.dim == 3 ? static_cast<std::size_t>(cm[2]) * s.n + k2 : 0;
                    s.occupancy[gx + vx[0] * (gy + vx[1] * gz)] = f(node) > 0.0 ? 1 : 0;
                }
    }
}

}  // namespace detail

/// Index of the record nearest to (nu, E) in the range-normalized metric.
inline int nearest_record(const Database& db, double nu, double E) {
    if (db.samples.empty()) throw DomainError("database is empty");
    double nu_lo = 1e300, nu_hi = -1e300, E_lo = 1e300, E_hi = -1e300;
    for (const auto& r : db.samples) {
        nu_lo = std::min(nu_lo, r.target_nu);
        nu_hi = std::max(nu_hi, r.target_nu);
        E_lo = std::min(E_lo, r.target_E);
        E_hi = std::max(E_hi, r.target_E);
    }
    const double sn = nu_hi > nu_lo ? nu_hi - nu_lo : 1.0, sE = E_hi > E_lo ? E_hi - E_lo : 1.0;
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < db.samples.size(); ++i) {
        const double a = (db.samples[i].target_nu - nu) / sn, b = (db.samples[i].target_E - E) / sE;
        const double dd = a * a + b * b;
        if (dd < bd) {  // strict: ties resolve to the lowest index
            bd = dd;
            best = static_cast<int>(i);
        }
    }
    return best;
}

/// Realization from per-cell target parameters (active-cell order).
inline TwoScaleStructure realize_parameters(const MacroProblem& p, const std::vector<std::array<double, 2>>& nu_e,
                                            const Database& db, std::optional<double> epsilon = std::nullopt) {
    if (db.samples.empty()) throw DomainError("database is empty");
    if (db.dim != p.dim) throw StructureError("database and macro problem differ in dimension");
    const auto active = p.active_cells();
    if (nu_e.size() != active.size()) throw StructureError("one (nu, E) pair per active macro cell expected");
    TwoScaleStructure s;
    s.dim = p.dim;
    s.epsilon = epsilon.value_or(p.H);
    if (!(s.epsilon > 0.0)) throw DomainError("epsilon must be positive");
    s.n = db.n;
    s.cells = p.box;
    s.spec = db.spec;
    s.sigma = db.effective_sigma();
    const Grid macro = s.macro_grid();
    const int nc = macro.cell_count();
    s.record.assign(nc, -1);
    s.fields.assign(nc, Eigen::VectorXd());
    s.cost_j.assign(nc, 0.0);
    s.requested.assign(nc, {0.0, 0.0});
    s.substituted.assign(nc, {0.0, 0.0});
    const int nodes = s.micro_grid().node_count();
    for (size_t i = 0; i < active.size(); ++i) {
        const int c = active[i];
        const int r = nearest_record(db, nu_e[i][0], nu_e[i][1]);
        const auto& rec = db.samples[r];
        if (rec.status == CellStatus::infeasible) {
            const auto m = macro.cell_multi(c);
            std::string where = std::to_string(m[0]);
            for (int k = 1; k < p.dim; ++k) where += "," + std::to_string(m[k]);
            throw DomainError("nearest database record " + std::to_string(rec.id) + " for macro cell (" + where +
                              ") is infeasible");
        }
        if (rec.values.size() != nodes) throw StructureError("record " + std::to_string(rec.id) + " has no field loaded");
        s.record[c] = r;
        s.fields[c] = rec.values;
        s.cost_j[c] = rec.cost_j;
        s.requested[c] = nu_e[i];
        s.substituted[c] = {rec.target_nu, rec.target_E};
    }
    detail::rebuild_occupancy(s);
    return s;
}

inline TwoScaleStructure realize(const MacroProblem& p, const MacroDesign& design, const Database& db,
                                 const SplineChart& chart, std::optional<double> epsilon = std::nullopt) {
    if (design.q.size() != p.active_cells().size()) throw StructureError("design needs one q per active macro cell");
    std::vector<std::array<double, 2>> nu_e;
    for (const auto& q : design.q) {
        const Eigen::Vector2d v = eval_psi(chart.psi, q);
        nu_e.push_back({v(0), v(1)});
    }
    return realize_parameters(p, nu_e, db, epsilon);
}

/// Largest normalized (nu, E) substitution error over the realized cells.
inline double substitution_error(const TwoScaleStructure& s, const Database& db) {
    double nu_lo = 1e300, nu_hi = -1e300, E_lo = 1e300, E_hi = -1e300;
    for (const auto& r : db.samples) {
        nu_lo = std::min(nu_lo, r.target_nu);
        nu_hi = std::max(nu_hi, r.target_nu);
        E_lo = std::min(E_lo, r.target_E);
        E_hi = std::max(E_hi, r.target_E);
    }
    const double sn = nu_hi > nu_lo ? nu_hi - nu_lo : 1.0, sE = E_hi > E_lo ? E_hi - E_lo : 1.0;
    double worst = 0.0;
    for (size_t c = 0; c < s.record.size(); ++c)
        if (s.record[c] >= 0)
            worst = std::max(worst, std::hypot((s.requested[c][0] - s.substituted[c][0]) / sn,
                                               (s.requested[c][1] - s.substituted[c][1]) / sE));
    return worst;
}

// ------------------------------------------------------------- bridge scan

struct FaceScanReport {
    int faces = 0;          // interior faces between two realized cells
    int faces_passed = 0;
    long mask_nodes = 0;    // bridge-mask node pairs compared
    long mismatches = 0;
    std::vector<std::string> failures;
    bool ok() const { return faces_passed == faces; }
};

/// Compares the thresholded traces of adjacent cells on every bridge-mask
/// node of every interior face.
inline FaceScanReport bridge_face_scan(const TwoScaleStructure& s) {
    FaceScanReport rep;
    const Grid macro = s.macro_grid(), micro = s.micro_grid();
    const BridgeMasks masks = bridge_masks(micro, BridgeSpec{s.spec.variant, s.spec.width, s.sigma});
    for (int c = 0; c < macro.cell_count(); ++c) {
        if (s.record[c] < 0) continue;
        const auto cm = macro.cell_multi(c);
        for (int axis = 0; axis < s.dim; ++axis) {
            if (cm[axis] + 1 >= s.cells[axis]) continue;
            auto nm = cm;
            ++nm[axis];
            const int nb = macro.cell_index(nm);
            if (s.record[nb] < 0) continue;
            ++rep.faces;
            long bad = 0;
            for (int node = 0; node < micro.node_count(); ++node) {
                const auto i = micro.node_multi(node);
                if (i[axis] != 0) continue;
                auto j = i;
                j[axis] = s.n;
                const int upper = micro.node_index(j);
                // node `upper` of the lower cell touches node `node` of the upper cell
                if (!(masks.hard[node] || masks.soft[node] || masks.hard[upper] || masks.soft[upper])) continue;
                ++rep.mask_nodes;
                if ((s.fields[c](upper) > 0.0) != (s.fields[nb](node) > 0.0)) ++bad;
            }
            rep.mismatches += bad;
            if (bad == 0) ++rep.faces_passed;
            else
                rep.failures.push_back("face between cells " + std::to_string(c) + " and " + std::to_string(nb) + ": " +
                                       std::to_string(bad) + " bridge node(s) disagree");
        }
    }
    return rep;
}

// ----------------------------------------------------------- cost identity

struct CostIdentityReport {
    double cell_sum = 0.0;          // sum eps^d cost_j(cell)
    double volume_integral = 0.0;   // int_D chi[v] over the realized structure
    double perimeter = 0.0;         // diffuse |D chi^macro|(D) = eps^(d-1) sum L^sigma(cell)
    double volume_term = 0.0;       // c_V volume_integral
    double perimeter_term = 0.0;    // c_P_hat eps perimeter
    double rhs = 0.0;
    double abs_mismatch = 0.0;
    double rel_mismatch = 0.0;
    double sharp_perimeter = 0.0;   // exposed voxel-face measure, for information
    bool ok(double tol = 1e-10) const { return rel_mismatch <= tol; }
};

/// Sharp perimeter of the hard voxels: exposed faces times the face measure.
inline double voxel_perimeter(const TwoScaleStructure& s) {
    const auto vx = s.voxels();
    const double a = std::pow(s.epsilon / s.n, s.dim - 1);
    auto occ = [&](long x, long y, long z) -> int {
        if (x < 0 || y < 0 || z < 0 || x >= vx[0] || y >= vx[1] || z >= vx[2]) return 0;
        return s.occupancy[x + vx[0] * (y + static_cast<std::size_t>(vx[1]) * z)];
    };
    long faces = 0;
    for (long z = 0; z < vx[2]; ++z)
        for (long y = 0; y < vx[1]; ++y)
            for (long x = 0; x < vx[0]; ++x) {
                if (!occ(x, y, z)) continue;
                faces += !occ(x - 1, y, z) + !occ(x + 1, y, z) + !occ(x, y - 1, z) + !occ(x, y + 1, z);
                if (s.dim == 3) faces += !occ(x, y, z - 1) + !occ(x, y, z + 1);
            }
    return faces * a;
}

inline CostIdentityReport cost_identity_check(const TwoScaleStructure& s, const CostWeights& w, double epsilon) {
    CostIdentityReport rep;
    const Grid macro = s.macro_grid(), micro = s.micro_grid();
    const double vol = std::pow(epsilon, s.dim), area = std::pow(epsilon, s.dim - 1);
    double L = 0.0;
    for (int c = 0; c < macro.cell_count(); ++c) {
        if (s.record[c] < 0) continue;
        rep.cell_sum += vol * s.cost_j[c];
        // the fine-scale field on eps(alpha + Q) is v(x/eps - alpha): volumes
        // pick up eps^d and the diffuse perimeter eps^(d-1)
        const MicroFunctionals f = micro_functionals(micro, s.fields[c], s.sigma, false);
        rep.volume_integral += vol * f.volume;
        L += area * f.perimeter;
    }
    rep.perimeter = L;
    rep.volume_term = w.c_V * rep.volume_integral;
    rep.perimeter_term = w.c_P_hat * epsilon * rep.perimeter;
    rep.rhs = rep.volume_term + rep.perimeter_term;
    rep.abs_mismatch = std::fabs(rep.cell_sum - rep.rhs);
    const double scale = std::max(std::fabs(rep.cell_sum), std::fabs(rep.rhs));
    rep.rel_mismatch = scale > 0.0 ? rep.abs_mismatch / scale : rep.abs_mismatch;
    TwoScaleStructure scaled = s;
    scaled.epsilon = epsilon;
    rep.sharp_perimeter = voxel_perimeter(scaled);
    return rep;
}

// ------------------------------------------------------------------ export

enum class ExportFormat { pgm, vtk, stl };

inline ExportFormat export_format_from_string(const std::string& s) {
    if (s == "pgm") return ExportFormat::pgm;
    if (s == "vtk") return ExportFormat::vtk;
    if (s == "stl") return ExportFormat::stl;
    throw FormatError("unknown export format '" + s + "'");
}

/// Plain occupancy image (voxels, x fastest) used by the readers.
struct VoxelImage {
    int dim = 2;
    std::array<int, 3> size{1, 1, 1};
    double spacing = 1.0;
    std::vector<std::uint8_t> occupancy;
};

inline VoxelImage voxel_image(const TwoScaleStructure& s) {
    return {s.dim, s.voxels(), s.epsilon / s.n, s.occupancy};
}

inline void write_pgm(const VoxelImage& im, std::ostream& os) {
    if (im.dim != 2) throw FormatError("PGM export needs a 2D structure");
    os << "P2\n" << im.size[0] << ' ' << im.size[1] << "\n255\n";
    for (int y = im.size[1] - 1; y >= 0; --y) {
        for (int x = 0; x < im.size[0]; ++x) {
            if (x) os << ' ';
            os << (im.occupancy[x + static_cast<std::size_t>(im.size[0]) * y] ? 255 : 0);
        }
        os << '\n';
    }
}

inline VoxelImage read_pgm(std::istream& is) {
    auto token = [&]() {
        std::string t;
        while (is >> t) {
            if (t[0] == '#') {
                std::string rest;
                std::getline(is, rest);
                continue;
            }
            return t;
        }
        throw FormatError("truncated PGM file");
    };
    if (token() != "P2") throw FormatError("only ASCII PGM (P2) is supported");
    VoxelImage im;
    im.dim = 2;
    try {
        im.size[0] = std::stoi(token());
        im.size[1] = std::stoi(token());
        const int maxval = std::stoi(token());
        if (im.size[0] < 1 || im.size[1] < 1 || maxval < 1) throw FormatError("bad PGM header");
        im.occupancy.assign(static_cast<std::size_t>(im.size[0]) * im.size[1], 0);
        for (int y = im.size[1] - 1; y >= 0; --y)
            for (int x = 0; x < im.size[0]; ++x) {
                const int v = std::stoi(token());
                if (v != 0 && v != maxval) throw FormatError("PGM pixel is neither 0 nor the maximum value");
                im.occupancy[x + static_cast<std::size_t>(im.size[0]) * y] = v == maxval;
            }
    } catch (const std::invalid_argument&) {
        throw FormatError("non-numeric PGM token");
    }
    return im;
}

inline void write_vtk(const VoxelImage& im, std::ostream& os) {
    os << "# vtk DataFile Version 3.0\nchi\nASCII\nDATASET STRUCTURED_POINTS\n";
    os << "DIMENSIONS " << im.size[0] << ' ' << im.size[1] << ' ' << im.size[2] << '\n';
    os.precision(17);
    const double h = im.spacing;
    os << "ORIGIN " << 0.5 * h << ' ' << 0.5 * h << ' ' << (im.dim == 3 ? 0.5 * h : 0.0) << '\n';
    os << "SPACING " << h << ' ' << h << ' ' << h << '\n';
    os << "POINT_DATA " << im.occupancy.size() << "\nSCALARS chi unsigned_char 1\nLOOKUP_TABLE default\n";
    for (size_t i = 0; i < im.occupancy.size(); ++i) os << int(im.occupancy[i]) << ((i + 1) % 32 ? ' ' : '\n');
    os << '\n';
}

inline VoxelImage read_vtk(std::istream& is) {
    VoxelImage im;
    std::string line, word;
    std::getline(is, line);
    if (line.rfind("# vtk DataFile", 0) != 0) throw FormatError("not a legacy VTK file");
    std::getline(is, line);  // title
    std::size_t count = 0;
    bool have_dims = false;
    while (is >> word) {
        if (word == "BINARY") throw FormatError("binary VTK is not supported");
        if (word == "DIMENSIONS") {
            is >> im.size[0] >> im.size[1] >> im.size[2];
            have_dims = true;
        } else if (word == "SPACING") {
            double a, b, c;
            is >> a >> b >> c;
            im.spacing = a;
        } else if (word == "ORIGIN") {
            double a, b, c;
            is >> a >> b >> c;
        } else if (word == "POINT_DATA") {
            is >> count;
        } else if (word == "LOOKUP_TABLE") {
            is >> word;
            break;
        }
    }
    if (!is || !have_dims) throw FormatError("malformed VTK header");
    im.dim = im.size[2] > 1 ? 3 : 2;
    if (count != static_cast<std::size_t>(im.size[0]) * im.size[1] * im.size[2])
        throw FormatError("VTK point count does not match its dimensions");
    im.occupancy.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        int v;
        if (!(is >> v) || (v != 0 && v != 1)) throw FormatError("VTK scalar must be 0 or 1");
        im.occupancy[i] = static_cast<std::uint8_t>(v);
    }
    return im;
}

/// Binary STL of the exposed faces of the hard voxels (two triangles each,
/// outward normals, counter-clockwise seen from outside).
inline void write_stl(const VoxelImage& im, std::ostream& os) {
    if (im.dim != 3) throw FormatError("STL export needs a 3D structure");
    const auto& n = im.size;
    auto occ = [&](long x, long y, long z) -> bool {
        if (x < 0 || y < 0 || z < 0 || x >= n[0] || y >= n[1] || z >= n[2]) return false;
        return im.occupancy[x + n[0] * (y + static_cast<std::size_t>(n[1]) * z)];
    };
    std::vector<std::array<float, 12>> tris;
    const double h = im.spacing;
    for (long z = 0; z < n[2]; ++z)
        for (long y = 0; y < n[1]; ++y)
            for (long x = 0; x < n[0]; ++x) {
                if (!occ(x, y, z)) continue;
                const long base[3] = {x, y, z};
                for (int axis = 0; axis < 3; ++axis)
                    for (int side = 0; side < 2; ++side) {
                        long nb[3] = {x, y, z};
                        nb[axis] += side ? 1 : -1;
                        if (occ(nb[0], nb[1], nb[2])) continue;
                        const int u = (axis + 1) % 3, v = (axis + 2) % 3;
                        // corners of the face in (u, v), ordered so that u x v = +axis
                        std::array<std::array<double, 3>, 4> c;
                        const int uv[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
                        for (int k = 0; k < 4; ++k) {
                            c[k][axis] = (base[axis] + side) * h;
                            c[k][u] = (base[u] + uv[k][0]) * h;
                            c[k][v] = (base[v] + uv[k][1]) * h;
                        }
                        if (!side) std::swap(c[1], c[3]);
                        std::array<float, 3> normal{0, 0, 0};
                        normal[axis] = side ? 1.0f : -1.0f;
                        for (const auto& t : {std::array<int, 3>{0, 1, 2}, std::array<int, 3>{0, 2, 3}}) {
                            std::array<float, 12> tri{};
                            for (int k = 0; k < 3; ++k) tri[k] = normal[k];
                            for (int m = 0; m < 3; ++m)
                                for (int k = 0; k < 3; ++k) tri[3 + 3 * m + k] = static_cast<float>(c[t[m]][k]);
                            tris.push_back(tri);
                        }
                    }
            }
    char header[80] = {};
    std::strncpy(header, "voxel surface", sizeof header - 1);
    os.write(header, 80);
    const std::uint32_t count = static_cast<std::uint32_t>(tris.size());
    static_assert(std::endian::native == std::endian::little, "little-endian host expected");
    os.write(reinterpret_cast<const char*>(&count), 4);
    const std::uint16_t attr = 0;
    for (const auto& t : tris) {
        os.write(reinterpret_cast<const char*>(t.data()), 48);
        os.write(reinterpret_cast<const char*>(&attr), 2);
    }
}

/// Number of triangles in a binary STL stream (header check only).
inline std::uint32_t stl_triangle_count(std::istream& is) {
    char header[80];
    std::uint32_t count = 0;
    if (!is.read(header, 80) || !is.read(reinterpret_cast<char*>(&count), 4)) throw FormatError("truncated STL file");
    return count;
}

inline void export_structure(const VoxelImage& im, ExportFormat f, const std::filesystem::path& path) {
    if (f == ExportFormat::stl && im.dim != 3) throw FormatError("STL export needs a 3D structure");
    if (f == ExportFormat::pgm && im.dim != 2) throw FormatError("PGM export needs a 2D structure");
    std::ofstream os(path, f == ExportFormat::stl ? std::ios::binary : std::ios::out);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    if (f == ExportFormat::pgm) write_pgm(im, os);
    else if (f == ExportFormat::vtk) write_vtk(im, os);
    else write_stl(im, os);
    if (!os) throw FormatError("write to '" + path.string() + "' failed");
}

inline void export_structure(const TwoScaleStructure& s, ExportFormat f, const std::filesystem::path& path) {
    export_structure(voxel_image(s), f, path);
}

}  // namespace twoscale
