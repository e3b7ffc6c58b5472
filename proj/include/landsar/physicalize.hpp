#pragma once

#include "landsar/terrain.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace landsar {

/// Closed triangle mesh in model millimetres. Triangles wind counter-clockwise
/// seen from outside. The first `top_triangles` triangles form the terrain surface.
struct SolidMesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;
    std::size_t top_triangles = 0;
    std::size_t pillars = 0;

    double signed_volume() const;
    double top_area() const;
};

struct MeshCheck {
    std::size_t boundary_edges = 0;     // used by one triangle
    std::size_t nonmanifold_edges = 0;  // used by three or more
    std::size_t misoriented_edges = 0;  // traversed twice in the same direction
    std::size_t degenerate_triangles = 0;
    double signed_volume = 0.0;

    bool watertight() const {
        return boundary_edges == 0 && nonmanifold_edges == 0 && misoriented_edges == 0 && degenerate_triangles == 0 &&
               signed_volume > 0;
    }
};
MeshCheck check_mesh(const SolidMesh& mesh);

struct FabricationConfig {
    double z_scale = 1.5;          // vertical exaggeration
    double xy_scale = 1.0;         // model millimetres per world metre
    double base_thickness = 3.0;   // mm of solid below the lowest terrain point
    double pillar_pitch = 20.0;    // mm between pillar centres; 0 disables pillars
    double pillar_radius = 2.0;    // mm, half the side of the square pillar
    double shell_thickness = 0.0;  // mm; 0 gives a solid model without cavity
    int tile_rows = 1;
    int tile_cols = 1;
    Eigen::Vector3d envelope{250.0, 210.0, 210.0};  // printer build volume, mm

    void validate() const;
};

/// Heights multiplied by `z_scale` (about zero).
TerrainGrid exaggerate(const TerrainGrid& grid, double z_scale);

/// Watertight solid of the whole grid: triangulated top surface, side
/// walls, base, and (with a shell thickness) a cavity open at the bottom
/// with square pillars on the pillar lattice. Heights are used as given.
SolidMesh solidify(const TerrainGrid& grid, const FabricationConfig& config);

/// rows x cols solids over the grid. Tiles share their seam vertices exactly.
/// Throws if a tile does not fit the printer envelope.
std::vector<SolidMesh> tile(const TerrainGrid& grid, const FabricationConfig& config, int rows, int cols);

/// exaggerate + tile with the configured tiling.
std::vector<SolidMesh> fabricate(const TerrainGrid& grid, const FabricationConfig& config);

/// Binary STL, little-endian, 84 + 50 n bytes.
void export_stl(const SolidMesh& mesh, const std::filesystem::path& path);
/// Reads a binary STL, welding vertices with bit-equal float coordinates.
SolidMesh read_stl(const std::filesystem::path& path);

}  // namespace landsar
