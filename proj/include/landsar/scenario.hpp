#pragma once

#include "landsar/colliders.hpp"
#include "landsar/engine.hpp"
#include "landsar/raster.hpp"
#include "landsar/terrain.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace landsar {

// ---------------------------------------------------------------------------
// Historical events

struct LandslideEvent {
    std::string id;
    std::chrono::year_month_day date;
    double x = 0.0;
    double y = 0.0;
    std::string scale;                   // as written: a volume in m^3 or a category
    std::optional<double> scale_m3;      // set when `scale` is numeric
    std::string description;

    bool operator==(const LandslideEvent&) const = default;
};

/// Minimal RFC-4180 reader: quoted fields, doubled quotes, embedded
/// newlines. Each record carries the line it started on.
struct CsvRecord {
    std::vector<std::string> fields;
    std::size_t line;
};
std::vector<CsvRecord> read_csv(std::istream& in);

std::chrono::year_month_day parse_iso_date(const std::string& text);
std::string format_iso_date(std::chrono::year_month_day date);

/// Events CSV with header `id,date,x,y,scale,description`.
std::vector<LandslideEvent> load_events(std::istream& in);
std::vector<LandslideEvent> load_events(const std::filesystem::path& path);
void save_events(std::ostream& out, const std::vector<LandslideEvent>& events);
void save_events(const std::filesystem::path& path, const std::vector<LandslideEvent>& events);

/// Throws if an event lies outside every given extent.
void check_event_locations(const std::vector<LandslideEvent>& events, const std::vector<GridSpec>& extents);

/// Inclusive date-range filter, order preserved.
std::vector<LandslideEvent> filter_events(const std::vector<LandslideEvent>& events,
                                          std::chrono::year_month_day start, std::chrono::year_month_day end);
/// Year-granular convenience: [Jan 1 of first_year, Dec 31 of last_year].
std::vector<LandslideEvent> filter_events(const std::vector<LandslideEvent>& events, int first_year,
                                          int last_year);

// ---------------------------------------------------------------------------
// Rasters and climate

struct RainfallRaster {
    Raster intensity;  // mm/h
    std::string period;
};

/// Rainfall multipliers offered by the climate view.
inline constexpr std::array<double, 3> kClimateMultipliers = {1.5, 2.5, 3.0};

struct ClimateScenario {
    std::string base_id;
    double multiplier = 1.0;
};

// ---------------------------------------------------------------------------
// Scenario

struct RiskParams {
    double alpha = kRigidConcreteAlpha;
    double R = 0.8;        // landing velocity reduction factor
    double h_min = 0.05;   // footprint depth threshold, m
    double w_b = 0.5;
    double w_p = 0.5;
    double hazard_cap = 0.0;  // 0: normalise by the raster maximum
    bool attenuate_downstream_only = true;
};

struct BuildingFootprint {
    std::string id;
    Polygon outline;
    double height = 0.0;
};

struct Scenario {
    std::string id;
    std::shared_ptr<const TerrainGrid> terrain;
    std::vector<BuildingFootprint> footprints;
    Polygon release_region;
    double release_volume = 0.0;
    EngineParams engine;
    RiskParams risk;
    std::optional<GridOverride> grid;
    std::optional<RainfallRaster> rainfall;
    std::optional<Raster> susceptibility;
    std::optional<Raster> population_density;
    std::vector<Barrier> barriers;  // in place before any steering
    std::uint64_t seed = 0;
    double duration = 10.0;         // simulated seconds until the session finishes
    double publish_rate = 20.0;     // frames per simulated second
    std::string provenance;         // e.g. "climate x2.5 (linear volume stand-in)"
};

nlohmann::json barrier_to_json(const Barrier& b);
/// Missing fields take the Barrier defaults; `center` may be [x, y] (z = 0).
Barrier barrier_from_json(const nlohmann::json& j);

/// Reads the scenario JSON; relative paths resolve against the file's directory.
Scenario load_scenario(const std::filesystem::path& path);
Scenario scenario_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
/// Summary of the scenario (paths omitted) used in listings and layer metadata.
nlohmann::json scenario_summary(const Scenario& scenario);

/// Throws if any attached raster is misaligned with the terrain.
void check_alignment(const Scenario& scenario);

/// Building footprints extruded to collider boxes on the terrain.
std::vector<Building> extrude_buildings(const TerrainGrid& terrain, const std::vector<BuildingFootprint>& footprints);
/// Fraction of each terrain cell covered by footprints, in [0, 1].
Raster building_density(const TerrainGrid& terrain, const std::vector<BuildingFootprint>& footprints);
std::vector<BuildingFootprint> load_buildings_geojson(const std::filesystem::path& path);

/// Initial simulation state: grid, colliders, scenario barriers, release.
SimulationState make_initial_state(const Scenario& scenario);

/// Climate scaling: release volume and rainfall scale linearly with the multiplier.
Scenario scale_scenario(const Scenario& scenario, double multiplier);

/// FNV-1a over every scenario field that affects a run.
std::uint64_t scenario_hash(const Scenario& scenario);

struct SusceptibilityLayer {
    Raster values;  // [0, 1]
    bool proxy = false;
};
/// The attached susceptibility raster normalised to [0, 1], or a
/// slope x rainfall proxy when none is attached.
SusceptibilityLayer susceptibility_layer(const Scenario& scenario, const RainfallRaster& rainfall);

// ---------------------------------------------------------------------------
// Synthetic fixtures

/// V-shaped channel draining south (-y) onto a gentle fan. 41 x 81 samples, 1 m.
struct VChannel {
    static constexpr double kCellSize = 1.0;
    static constexpr std::size_t kCols = 41, kRows = 81;
    static constexpr double kAxisX = 20.0;
    static constexpr double kBarrierY = 40.0;

    static double height(double x, double y);
    static TerrainGrid terrain();
    static Polygon release_region();
    /// Barrier across the full valley width at kBarrierY, face pointing upstream.
    static Barrier barrier(double height = 9.0);
    /// Cells strictly downstream of the barrier line.
    static bool downstream(double y);
    static Scenario scenario(double volume, std::uint64_t seed = 7);
};

TerrainGrid make_plane(std::size_t cols, std::size_t rows, double cell_size, double dhdx, double dhdy);
TerrainGrid make_two_ridge_valley();
TerrainGrid make_island();

/// Writes terrain rasters, buildings, events and scenario files for all fixtures.
void write_fixtures(const std::filesystem::path& dir);

}  // namespace landsar
