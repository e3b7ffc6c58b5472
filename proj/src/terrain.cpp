#include "landsar/terrain.hpp"

#include "landsar/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <stdexcept>

namespace landsar {

TerrainGrid::TerrainGrid(Raster heights) : raster_(std::move(heights)) {
    const auto& s = raster_.spec;
    if (s.n_cols < 2 || s.n_rows < 2) throw std::invalid_argument("grid too small: need at least 2x2 samples");
    if (!(s.cell_size > 0)) throw std::invalid_argument("cell size must be positive");
    if (raster_.values.size() != s.size())
        throw std::invalid_argument(
            fmt::format("heights length {} does not match {}x{}", raster_.values.size(), s.n_cols, s.n_rows));
    for (double h : raster_.values)
        if (h == raster_.nodata || !std::isfinite(h)) throw std::invalid_argument("terrain contains NODATA samples");
}

Raster fill_nodata(Raster r) {
    const auto& s = r.spec;
    std::vector<char> valid(s.size());
    std::deque<std::size_t> frontier;
    for (std::size_t i = 0; i < s.size(); ++i) {
        valid[i] = r.values[i] != r.nodata;
        if (valid[i]) frontier.push_back(i);
    }
    if (frontier.empty()) throw std::invalid_argument("raster has no valid samples");
    while (!frontier.empty()) {
        const std::size_t i = frontier.front();
        frontier.pop_front();
        const std::size_t col = i % s.n_cols, row = i / s.n_cols;
        auto visit = [&](std::size_t c, std::size_t rw) {
            const std::size_t j = s.index(c, rw);
            if (valid[j]) return;
            valid[j] = 1;
            r.values[j] = r.values[i];
            frontier.push_back(j);
        };
        if (col > 0) visit(col - 1, row);
        if (col + 1 < s.n_cols) visit(col + 1, row);
        if (row > 0) visit(col, row - 1);
        if (row + 1 < s.n_rows) visit(col, row + 1);
    }
    return r;
}

TerrainGrid load_dem(std::istream& in) { return TerrainGrid(fill_nodata(read_esri_ascii(in))); }

TerrainGrid load_dem(const std::filesystem::path& path) {
    return TerrainGrid(fill_nodata(read_esri_ascii(path)));
}

void save_dem(const std::filesystem::path& path, const TerrainGrid& grid) { write_esri_ascii(path, grid.raster()); }

namespace {

// Cell-local coordinates of (x, y), clamped into the lattice.
struct CellCoord {
    std::size_t col, row;
    double fx, fy;
};

CellCoord locate(const GridSpec& s, double x, double y) {
    const double gx = std::clamp((x - s.origin_x) / s.cell_size, 0.0, static_cast<double>(s.n_cols - 1));
    const double gy = std::clamp((y - s.origin_y) / s.cell_size, 0.0, static_cast<double>(s.n_rows - 1));
    const auto col = std::min(static_cast<std::size_t>(gx), s.n_cols - 2);
    const auto row = std::min(static_cast<std::size_t>(gy), s.n_rows - 2);
    return {col, row, gx - static_cast<double>(col), gy - static_cast<double>(row)};
}

}  // namespace

SurfaceSample sample_surface(const TerrainGrid& grid, double x, double y) {
    const auto& s = grid.spec();
    const auto [col, row, fx, fy] = locate(s, x, y);
    const double h00 = grid.height(col, row), h10 = grid.height(col + 1, row);
    const double h01 = grid.height(col, row + 1), h11 = grid.height(col + 1, row + 1);
    const double h = (1 - fx) * (1 - fy) * h00 + fx * (1 - fy) * h10 + (1 - fx) * fy * h01 + fx * fy * h11;
    const double dx = ((1 - fy) * (h10 - h00) + fy * (h11 - h01)) / s.cell_size;
    const double dy = ((1 - fx) * (h01 - h00) + fx * (h11 - h10)) / s.cell_size;
    return {h, dx, dy};
}

double height_at(const TerrainGrid& grid, double x, double y) {
    if (!grid.spec().contains(x, y))
        throw std::domain_error(fmt::format("point ({}, {}) is outside the terrain extent", x, y));
    return sample_surface(grid, x, y).height;
}

TerrainGrid resample(const TerrainGrid& grid, double target_cell_size) {
    if (!(target_cell_size > 0)) throw std::invalid_argument("target cell size must be positive");
    const auto& s = grid.spec();
    if (target_cell_size > s.extent_x() || target_cell_size > s.extent_y())
        throw std::invalid_argument("target cell size is coarser than the grid extent");

    // Small slack so that exact multiples survive floating division.
    auto count = [&](double extent) {
        return static_cast<std::size_t>(std::floor(extent / target_cell_size + 1e-9)) + 1;
    };
    Raster out;
    out.spec = {count(s.extent_x()), count(s.extent_y()), target_cell_size, s.origin_x, s.origin_y};
    out.nodata = grid.nodata();
    out.values.resize(out.spec.size());
    for (std::size_t row = 0; row < out.spec.n_rows; ++row)
        for (std::size_t col = 0; col < out.spec.n_cols; ++col)
            out.at(col, row) = sample_surface(grid, out.spec.x_of(col), out.spec.y_of(row)).height;
    return TerrainGrid(std::move(out));
}

SlopeField slope_field(const TerrainGrid& grid) {
    const auto& s = grid.spec();
    SlopeField field{s, std::vector<double>(s.size()), std::vector<Eigen::Vector3d>(s.size())};
    auto derivative = [&](std::size_t i, std::size_t n, auto&& h_at) {
        if (i == 0) return (h_at(1) - h_at(0)) / s.cell_size;
        if (i == n - 1) return (h_at(n - 1) - h_at(n - 2)) / s.cell_size;
        return (h_at(i + 1) - h_at(i - 1)) / (2.0 * s.cell_size);
    };
    for (std::size_t row = 0; row < s.n_rows; ++row) {
        for (std::size_t col = 0; col < s.n_cols; ++col) {
            const double gx = derivative(col, s.n_cols, [&](std::size_t c) { return grid.height(c, row); });
            const double gy = derivative(row, s.n_rows, [&](std::size_t r) { return grid.height(col, r); });
            const std::size_t i = s.index(col, row);
            field.angle[i] = std::atan(std::hypot(gx, gy));
            field.normal[i] = Eigen::Vector3d(-gx, -gy, 1.0).normalized();
        }
    }
    return field;
}

}  // namespace landsar
