#pragma once

#include "landsar/engine.hpp"
#include "landsar/raster.hpp"
#include "landsar/scenario.hpp"
#include "landsar/session.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace landsar {

/// F = alpha * rho * v^2 * h0 * w, in newtons. Throws std::domain_error on negative input.
double impact_force(double alpha, double rho, double v, double h0, double w);
/// v_i = R cos(theta) v_r. R must lie in (0, 1], theta in [0, pi/2].
double landing_velocity(double v_r, double R, double theta);
/// V = w_b D_b + w_p D_p with densities in [0, 1] and w_b + w_p = 1.
double vulnerability(double D_b, double D_p, double w_b, double w_p);
/// Risk = hazard x vulnerability, both in [0, 1].
double risk(double hazard_norm, double vulnerability);

enum class Colormap { BlueRed, OrangeRed, Purple, RedYellowGreen };
std::string_view colormap_tag(Colormap map);

struct HazardSample {
    std::size_t cell = 0;
    double v = 0.0;
    double h0 = 0.0;
    double w = 0.0;
    double F = 0.0;
};

struct HazardMap {
    Raster force;       // N
    Raster normalized;  // [0, 1]
    double scale = 0.0; // divisor used for normalisation
    std::vector<HazardSample> samples;  // wet cells only
    Colormap colormap = Colormap::RedYellowGreen;
};

/// True when the cell centre lies behind the barrier (past its downstream
/// face) within the barrier's width.
bool downstream_of(const Barrier& barrier, double x, double y);

/// Per-cell impact force from the time maxima of the recorded depth and
/// velocity fields, with w = cell width. Velocities downstream of a barrier
/// (or everywhere, when `attenuate_downstream_only` is off) are attenuated
/// by the landing coefficient first.
HazardMap hazard_map(const std::vector<Frame>& history, const std::vector<Barrier>& barriers,
                     const TerrainGrid& terrain, const RiskParams& params, double rho);

Raster vulnerability_raster(const Raster& building_density, const Raster& population_density, double w_b, double w_p);
Raster risk_raster(const Raster& hazard_norm, const Raster& vulnerability);

struct RiskLayers {
    HazardMap hazard;
    Raster vulnerability;
    Raster risk;
};
RiskLayers risk_layers(const Session& session);

struct RunoutComparison {
    Raster footprint_with;     // 1 where the run's max depth >= h_min
    Raster footprint_without;
    double area_with = 0.0;    // m^2
    double area_without = 0.0;
    double area_delta = 0.0;   // without - with
    std::uint64_t hash_with = 0;
    std::uint64_t hash_without = 0;
};

Raster footprint(const Raster& max_depth, double h_min);
double footprint_area(const Raster& mask);
/// Footprint area restricted to cells downstream of `barrier`.
double downstream_area(const Raster& mask, const Barrier& barrier);

/// The log with every barrier command removed and sequence numbers renumbered.
std::vector<SteeringCommand> strip_barrier_commands(const std::vector<SteeringCommand>& log);

/// Replays `log` as recorded and with all barriers (scenario and steered)
/// removed, then compares the footprints.
RunoutComparison runout_compare(const Scenario& scenario, const std::vector<SteeringCommand>& log,
                                Session::ScenarioResolver resolver = {});

/// Depth time series at the cell containing (x, y), one sample per frame.
std::vector<std::pair<double, double>> query_point(const std::vector<Frame>& history, double x, double y);

struct BarrierReport {
    std::string id;
    double peak_impact_force = 0.0;  // N
    double peak_flow_rate = 0.0;     // m^3/s
    double overtopped_volume = 0.0;  // m^3
    double max_speed = 0.0;
    double max_depth = 0.0;
    double face_width = 0.0;
};
BarrierReport barrier_report(const BarrierContactLog& log, const Barrier& barrier, double rho);
/// Throws UnknownBarrier if `id` has no contact log.
BarrierReport barrier_report(const SimulationState& state, const std::string& id);
nlohmann::json to_json(const BarrierReport& report);

// ---------------------------------------------------------------------------
// Layer export

struct Layer {
    std::string name;
    Raster values;
    Colormap colormap;
    nlohmann::json metadata = nlohmann::json::object();  // merged into the sidecar
};

/// `{layer, colormap, min, max}` plus the layer's extra metadata.
nlohmann::json layer_sidecar(const Layer& layer);
/// Writes `<name>.asc` and `<name>.json` into `dir`.
void export_layer(const std::filesystem::path& dir, const Layer& layer);

/// Analysis layers of a finished (or paused) session: hazard, vulnerability,
/// risk, flow path, deposits, and the scenario's causality rasters.
std::vector<Layer> analysis_layers(const Session& session);

}  // namespace landsar
