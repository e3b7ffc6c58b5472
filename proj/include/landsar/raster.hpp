#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <vector>

namespace landsar {

/// Geometry of a regular lattice of samples. Sample (col, row) sits at
/// (origin_x + col * cell_size, origin_y + row * cell_size); row 0 is the
/// southernmost row.
struct GridSpec {
    std::size_t n_cols = 0;
    std::size_t n_rows = 0;
    double cell_size = 1.0;
    double origin_x = 0.0;
    double origin_y = 0.0;

    std::size_t size() const { return n_cols * n_rows; }
    std::size_t index(std::size_t col, std::size_t row) const { return row * n_cols + col; }
    double x_of(std::size_t col) const { return origin_x + static_cast<double>(col) * cell_size; }
    double y_of(std::size_t row) const { return origin_y + static_cast<double>(row) * cell_size; }
    double extent_x() const { return static_cast<double>(n_cols - 1) * cell_size; }
    double extent_y() const { return static_cast<double>(n_rows - 1) * cell_size; }
    double max_x() const { return origin_x + extent_x(); }
    double max_y() const { return origin_y + extent_y(); }
    bool contains(double x, double y) const;

    /// Nearest sample to (x, y), clamped to the lattice.
    std::size_t nearest_col(double x) const;
    std::size_t nearest_row(double y) const;
};

/// Same extent and cell size within `tol`.
bool aligned(const GridSpec& a, const GridSpec& b, double tol = 1e-9);

inline constexpr double kDefaultNodata = -9999.0;

/// Single-band scalar raster, row-major with row 0 at the south edge.
struct Raster {
    GridSpec spec;
    std::vector<double> values;
    double nodata = kDefaultNodata;

    Raster() = default;
    Raster(GridSpec s, double fill = 0.0) : spec(s), values(s.size(), fill) {}

    double& at(std::size_t col, std::size_t row) { return values[spec.index(col, row)]; }
    double at(std::size_t col, std::size_t row) const { return values[spec.index(col, row)]; }
    double min() const;
    double max() const;
};

/// ESRI ASCII grid. Header keys are case-insensitive and may come in any
/// order; the first data row is the northernmost. NODATA cells are returned
/// untouched (value == nodata).
Raster read_esri_ascii(std::istream& in);
Raster read_esri_ascii(const std::filesystem::path& path);
void write_esri_ascii(std::ostream& out, const Raster& raster);
void write_esri_ascii(const std::filesystem::path& path, const Raster& raster);

}  // namespace landsar
