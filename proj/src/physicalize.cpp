#include "landsar/physicalize.hpp"

#include "landsar/errors.hpp"

#include <Eigen/Geometry>
#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace landsar {

double SolidMesh::signed_volume() const {
    double v = 0.0;
    for (const auto& t : triangles) v += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]]));
    return v / 6.0;
}

double SolidMesh::top_area() const {
    double a = 0.0;
    for (std::size_t i = 0; i < top_triangles; ++i) {
        const auto& t = triangles[i];
        a += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
    }
    return a;
}

MeshCheck check_mesh(const SolidMesh& mesh) {
    MeshCheck out;
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
    for (const auto& t : mesh.triangles) {
        const auto& a = mesh.vertices[t[0]];
        const auto& b = mesh.vertices[t[1]];
        const auto& c = mesh.vertices[t[2]];
        if ((b - a).cross(c - a).norm() <= 1e-12) ++out.degenerate_triangles;
        for (int k = 0; k < 3; ++k) ++directed[{t[k], t[(k + 1) % 3]}];
    }
    for (const auto& [edge, n] : directed) {
        if (n > 1) out.misoriented_edges += 1;
        const auto [u, v] = edge;
        const auto reverse = directed.find({v, u});
        const int back = reverse == directed.end() ? 0 : reverse->second;
        if (u > v && reverse != directed.end()) continue;  // counted from the other side
        const int uses = n + back;
        if (uses == 1) ++out.boundary_edges;
        else if (uses > 2) ++out.nonmanifold_edges;
    }
    out.signed_volume = mesh.signed_volume();
    return out;
}

void FabricationConfig::validate() const {
    if (!(z_scale > 0)) throw std::invalid_argument("z scale must be positive");
    if (!(xy_scale > 0)) throw std::invalid_argument("xy scale must be positive");
    if (!(base_thickness > 0)) throw std::invalid_argument("base thickness must be positive");
    if (!(pillar_pitch >= 0) || !(pillar_radius > 0)) throw std::invalid_argument("pillar pitch and radius must be positive");
    if (!(shell_thickness >= 0)) throw std::invalid_argument("shell thickness must not be negative");
    if (tile_rows < 1 || tile_cols < 1) throw std::invalid_argument("tile rows and columns must be at least 1");
    if (!(envelope.array() > 0).all()) throw std::invalid_argument("printer envelope must be positive");
}

TerrainGrid exaggerate(const TerrainGrid& grid, double z_scale) {
    if (!(z_scale > 0) || !std::isfinite(z_scale)) throw std::invalid_argument("z scale must be positive");
    Raster r = grid.raster();
    for (double& h : r.values) h *= z_scale;
    return TerrainGrid(std::move(r));
}

namespace {

enum Level : std::uint8_t { kBottom = 0, kCeiling = 1, kTop = 2 };

class SolidBuilder {
public:
    SolidBuilder(const TerrainGrid& grid, const FabricationConfig& cfg, std::size_t c0, std::size_t c1, std::size_t r0,
                 std::size_t r1)
        : grid_(grid), cfg_(cfg), c0_(c0), r0_(r0), nc_(c1 - c0), nr_(r1 - r0), h_min_(grid.min_height()) {}

    SolidMesh build() {
        layout_cells();
        for (std::size_t j = 0; j < nr_; ++j)
            for (std::size_t i = 0; i < nc_; ++i) quad(i, j, kTop, true);
        mesh_.top_triangles = mesh_.triangles.size();

        for (std::size_t j = 0; j < nr_; ++j)
            for (std::size_t i = 0; i < nc_; ++i) quad(i, j, hollow(i, j) ? kCeiling : kBottom, false);

        for (std::size_t i = 0; i < nc_; ++i) {
            wall({i, 0}, {i + 1, 0}, kTop);
            wall({i + 1, nr_}, {i, nr_}, kTop);
        }
        for (std::size_t j = 0; j < nr_; ++j) {
            wall({nc_, j}, {nc_, j + 1}, kTop);
            wall({0, j + 1}, {0, j}, kTop);
        }
        // Cavity walls between solid and hollow neighbours.
        for (std::size_t j = 0; j < nr_; ++j)
            for (std::size_t i = 0; i < nc_; ++i) {
                if (i + 1 < nc_ && hollow(i, j) != hollow(i + 1, j)) {
                    if (hollow(i + 1, j)) wall({i + 1, j}, {i + 1, j + 1}, kCeiling);
                    else wall({i + 1, j + 1}, {i + 1, j}, kCeiling);
                }
                if (j + 1 < nr_ && hollow(i, j) != hollow(i, j + 1)) {
                    if (hollow(i, j + 1)) wall({i + 1, j + 1}, {i, j + 1}, kCeiling);
                    else wall({i, j + 1}, {i + 1, j + 1}, kCeiling);
                }
            }
        return std::move(mesh_);
    }

private:
    using Vtx = std::pair<std::size_t, std::size_t>;  // tile-local vertex (i, j)

    double cell_model() const { return grid_.spec().cell_size * cfg_.xy_scale; }
    double model_x(std::size_t i) const { return static_cast<double>(c0_ + i) * cell_model(); }
    double model_y(std::size_t j) const { return static_cast<double>(r0_ + j) * cell_model(); }
    double top_z(std::size_t i, std::size_t j) const {
        return cfg_.base_thickness + (grid_.height(c0_ + i, r0_ + j) - h_min_) * cfg_.xy_scale;
    }
    bool hollow(std::size_t i, std::size_t j) const { return hollow_[j * nc_ + i] != 0; }

    void layout_cells() {
        hollow_.assign(nc_ * nr_, 0);
        if (cfg_.shell_thickness <= 0) return;
        const auto rim = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg_.shell_thickness / cell_model() - 1e-9)));
        if (nc_ <= 2 * rim || nr_ <= 2 * rim) return;
        for (std::size_t j = rim; j < nr_ - rim; ++j)
            for (std::size_t i = rim; i < nc_ - rim; ++i) hollow_[j * nc_ + i] = 1;

        if (cfg_.pillar_pitch > 0) {
            const double pitch = cfg_.pillar_pitch, r = cfg_.pillar_radius, cm = cell_model();
            const auto k_lo = static_cast<long>(std::ceil(model_x(0) / pitch)), k_hi = static_cast<long>(std::floor(model_x(nc_) / pitch));
            const auto l_lo = static_cast<long>(std::ceil(model_y(0) / pitch)), l_hi = static_cast<long>(std::floor(model_y(nr_) / pitch));
            for (long l = std::max(1L, l_lo); l <= l_hi; ++l)
                for (long k = std::max(1L, k_lo); k <= k_hi; ++k) {
                    const double px = static_cast<double>(k) * pitch, py = static_cast<double>(l) * pitch;
                    const auto ci = static_cast<long>(std::floor((px - model_x(0)) / cm));
                    const auto cj = static_cast<long>(std::floor((py - model_y(0)) / cm));
                    if (ci < 0 || cj < 0 || ci >= static_cast<long>(nc_) || cj >= static_cast<long>(nr_)) continue;
                    if (!hollow(static_cast<std::size_t>(ci), static_cast<std::size_t>(cj))) continue;
                    for (std::size_t j = 0; j < nr_; ++j)
                        for (std::size_t i = 0; i < nc_; ++i) {
                            const double cx = model_x(i) + 0.5 * cm, cy = model_y(j) + 0.5 * cm;
                            const bool centre_cell = static_cast<long>(i) == ci && static_cast<long>(j) == cj;
                            if (centre_cell || (std::abs(cx - px) <= r && std::abs(cy - py) <= r)) hollow_[j * nc_ + i] = 0;
                        }
                    ++mesh_.pillars;
                }
        }
        // Fill cells meeting solid material only at a corner; such vertices
        // would leave a non-manifold cavity edge.
        for (bool changed = true; changed;) {
            changed = false;
            for (std::size_t j = 0; j + 1 < nr_; ++j)
                for (std::size_t i = 0; i + 1 < nc_; ++i) {
                    const bool a = hollow(i, j), b = hollow(i + 1, j), c = hollow(i + 1, j + 1), d = hollow(i, j + 1);
                    if (a == c && b == d && a != b) {
                        hollow_[j * nc_ + i] = hollow_[j * nc_ + i + 1] = 0;
                        hollow_[(j + 1) * nc_ + i] = hollow_[(j + 1) * nc_ + i + 1] = 0;
                        changed = true;
                    }
                }
        }
    }

    std::uint32_t vertex(Vtx v, Level level) {
        const std::size_t key = ((v.second * (nc_ + 1)) + v.first) * 3 + level;
        const auto it = index_.find(key);
        if (it != index_.end()) return it->second;
        double z = 0.0;
        if (level == kTop) z = top_z(v.first, v.second);
        else if (level == kCeiling) z = top_z(v.first, v.second) - cfg_.shell_thickness;
        const auto id = static_cast<std::uint32_t>(mesh_.vertices.size());
        mesh_.vertices.emplace_back(model_x(v.first), model_y(v.second), z);
        index_.emplace(key, id);
        return id;
    }

    void quad(std::size_t i, std::size_t j, Level level, bool up) {
        const auto a = vertex({i, j}, level), b = vertex({i + 1, j}, level);
        const auto c = vertex({i + 1, j + 1}, level), d = vertex({i, j + 1}, level);
        if (up) {
            mesh_.triangles.push_back({a, b, c});
            mesh_.triangles.push_back({a, c, d});
        } else {
            mesh_.triangles.push_back({a, c, b});
            mesh_.triangles.push_back({a, d, c});
        }
    }

    // Vertical quad from z = 0 up to `upper`; outward normal is (q - p) x z.
    void wall(Vtx p, Vtx q, Level upper) {
        const auto p0 = vertex(p, kBottom), q0 = vertex(q, kBottom);
        const auto p1 = vertex(p, upper), q1 = vertex(q, upper);
        mesh_.triangles.push_back({p0, q0, q1});
        mesh_.triangles.push_back({p0, q1, p1});
    }

    const TerrainGrid& grid_;
    const FabricationConfig& cfg_;
    std::size_t c0_, r0_, nc_, nr_;
    double h_min_;
    std::vector<std::uint8_t> hollow_;
    std::unordered_map<std::size_t, std::uint32_t> index_;
    SolidMesh mesh_;
};

void check_shell(const FabricationConfig& cfg) {
    if (cfg.shell_thickness > 0 && cfg.shell_thickness >= cfg.base_thickness)
        throw std::invalid_argument(fmt::format("shell thickness {} mm is not below the minimum model height {} mm",
                                                cfg.shell_thickness, cfg.base_thickness));
}

}  // namespace

SolidMesh solidify(const TerrainGrid& grid, const FabricationConfig& config) {
    config.validate();
    check_shell(config);
    const auto& s = grid.spec();
    return SolidBuilder(grid, config, 0, s.n_cols - 1, 0, s.n_rows - 1).build();
}

std::vector<SolidMesh> tile(const TerrainGrid& grid, const FabricationConfig& config, int rows, int cols) {
    config.validate();
    check_shell(config);
    if (rows < 1 || cols < 1) throw std::invalid_argument("tile rows and columns must be at least 1");
    const auto& s = grid.spec();
    const std::size_t cells_x = s.n_cols - 1, cells_y = s.n_rows - 1;
    if (static_cast<std::size_t>(cols) > cells_x || static_cast<std::size_t>(rows) > cells_y)
        throw std::invalid_argument(fmt::format("cannot split {}x{} cells into {}x{} tiles", cells_x, cells_y, cols, rows));
    auto split = [](std::size_t cells, int parts, int k) {
        return cells * static_cast<std::size_t>(k) / static_cast<std::size_t>(parts);
    };
    const double relief = config.base_thickness + (grid.max_height() - grid.min_height()) * config.xy_scale;
    std::vector<SolidMesh> tiles;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const std::size_t c0 = split(cells_x, cols, c), c1 = split(cells_x, cols, c + 1);
            const std::size_t r0 = split(cells_y, rows, r), r1 = split(cells_y, rows, r + 1);
            const double wx = static_cast<double>(c1 - c0) * s.cell_size * config.xy_scale;
            const double wy = static_cast<double>(r1 - r0) * s.cell_size * config.xy_scale;
            if (wx > config.envelope.x() || wy > config.envelope.y() || relief > config.envelope.z())
                throw std::invalid_argument(fmt::format(
                    "tile ({}, {}) measures {:.1f} x {:.1f} x {:.1f} mm and exceeds the {} x {} x {} mm envelope", r, c, wx,
                    wy, relief, config.envelope.x(), config.envelope.y(), config.envelope.z()));
            tiles.push_back(SolidBuilder(grid, config, c0, c1, r0, r1).build());
        }
    return tiles;
}

std::vector<SolidMesh> fabricate(const TerrainGrid& grid, const FabricationConfig& config) {
    return tile(exaggerate(grid, config.z_scale), config, config.tile_rows, config.tile_cols);
}

// ---------------------------------------------------------------------------
// STL

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace

void export_stl(const SolidMesh& mesh, const std::filesystem::path& path) {
    if (mesh.triangles.empty()) throw std::invalid_argument("empty mesh");
    std::string out;
    out.reserve(84 + 50 * mesh.triangles.size());
    std::string header = "landsar terrain solid";
    header.resize(80, ' ');
    out += header;
    put_u32(out, static_cast<std::uint32_t>(mesh.triangles.size()));
    for (const auto& t : mesh.triangles) {
        const auto& a = mesh.vertices[t[0]];
        const auto& b = mesh.vertices[t[1]];
        const auto& c = mesh.vertices[t[2]];
        Eigen::Vector3d n = (b - a).cross(c - a);
        if (n.norm() > 0) n.normalize();
        for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(n[k]));
        for (const auto* v : {&a, &b, &c})
            for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>((*v)[k]));
        out.push_back('\0');
        out.push_back('\0');
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error(fmt::format("failed writing '{}'", path.string()));
}

SolidMesh read_stl(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
    const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (data.size() < 84) throw ParseError("STL shorter than its header");
    const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
    const std::uint32_t n = get_u32(bytes + 80);
    if (data.size() != 84 + 50 * static_cast<std::size_t>(n))
        throw ParseError(fmt::format("STL declares {} triangles but holds {} bytes", n, data.size()));
    SolidMesh mesh;
    std::map<std::array<float, 3>, std::uint32_t> weld;
    for (std::uint32_t t = 0; t < n; ++t) {
        const unsigned char* rec = bytes + 84 + 50 * static_cast<std::size_t>(t);
        std::array<std::uint32_t, 3> tri{};
        for (int v = 0; v < 3; ++v) {
            const std::array<float, 3> p{get_f32(rec + 12 + 12 * v), get_f32(rec + 16 + 12 * v), get_f32(rec + 20 + 12 * v)};
            const auto [it, inserted] = weld.emplace(p, static_cast<std::uint32_t>(mesh.vertices.size()));
            if (inserted) mesh.vertices.emplace_back(p[0], p[1], p[2]);
            tri[v] = it->second;
        }
        mesh.triangles.push_back(tri);
    }
    return mesh;
}

}  // namespace landsar
