#pragma once

#include "landsar/raster.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace landsar {

/// Georeferenced heightfield. Heights are samples on the lattice described
/// by `spec()`; between samples the surface is bilinear. Immutable once built.
class TerrainGrid {
public:
    /// Validates the invariants (at least 2x2, positive cell size, no NODATA).
    explicit TerrainGrid(Raster heights);

    const GridSpec& spec() const { return raster_.spec; }
    const std::vector<double>& heights() const { return raster_.values; }
    const Raster& raster() const { return raster_; }
    double nodata() const { return raster_.nodata; }
    double height(std::size_t col, std::size_t row) const { return raster_.at(col, row); }
    double min_height() const { return raster_.min(); }
    double max_height() const { return raster_.max(); }

private:
    Raster raster_;
};

struct SlopeField {
    GridSpec spec;
    std::vector<double> angle;            // radians, [0, pi/2)
    std::vector<Eigen::Vector3d> normal;  // unit, pointing up
};

/// Reads an ESRI ASCII grid and fills NODATA samples from the nearest valid
/// sample (breadth-first over 4-neighbours).
TerrainGrid load_dem(const std::filesystem::path& path);
TerrainGrid load_dem(std::istream& in);
void save_dem(const std::filesystem::path& path, const TerrainGrid& grid);

/// Breadth-first nearest-valid fill. Throws if every sample is NODATA.
Raster fill_nodata(Raster raster);

/// Bilinear resampling onto a lattice with `target_cell_size`, anchored at
/// the same origin. The new extent is the largest multiple of the target
/// spacing that fits in the old one.
TerrainGrid resample(const TerrainGrid& grid, double target_cell_size);

/// Slope angle from central differences (one-sided on the border).
SlopeField slope_field(const TerrainGrid& grid);

/// Bilinear height. Throws std::domain_error outside the grid extent.
double height_at(const TerrainGrid& grid, double x, double y);

/// Height and gradient (dh/dx, dh/dy) of the bilinear surface at a point
/// clamped into the extent. Used by the collider.
struct SurfaceSample {
    double height;
    double dhdx;
    double dhdy;
};
SurfaceSample sample_surface(const TerrainGrid& grid, double x, double y);

}  // namespace landsar
