#include "landsar/risk.hpp"

#include "landsar/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace landsar {

using nlohmann::json;

double impact_force(double alpha, double rho, double v, double h0, double w) {
    if (!(alpha >= 0 && rho >= 0 && v >= 0 && h0 >= 0 && w >= 0))
        throw std::domain_error("impact_force: inputs must be non-negative");
    return alpha * rho * v * v * h0 * w;
}

double landing_velocity(double v_r, double R, double theta) {
    if (!(R > 0 && R <= 1)) throw std::domain_error(fmt::format("landing_velocity: R = {} is outside (0, 1]", R));
    if (!(v_r >= 0)) throw std::domain_error("landing_velocity: v_r must be non-negative");
    if (!(theta >= 0 && theta <= M_PI / 2)) throw std::domain_error("landing_velocity: theta must lie in [0, pi/2]");
    return std::max(0.0, R * std::cos(theta) * v_r);
}

double vulnerability(double D_b, double D_p, double w_b, double w_p) {
    if (!(w_b >= 0 && w_p >= 0) || std::abs(w_b + w_p - 1.0) > 1e-9)
        throw std::invalid_argument(fmt::format("vulnerability weights must be non-negative and sum to 1 (got {} + {})", w_b, w_p));
    if (!(D_b >= 0 && D_b <= 1 && D_p >= 0 && D_p <= 1))
        throw std::domain_error("vulnerability: densities must lie in [0, 1]");
    return w_b * D_b + w_p * D_p;
}

double risk(double hazard_norm, double vuln) {
    if (!(hazard_norm >= 0 && hazard_norm <= 1 && vuln >= 0 && vuln <= 1))
        throw std::domain_error("risk: hazard and vulnerability must lie in [0, 1]");
    return hazard_norm * vuln;
}

std::string_view colormap_tag(Colormap map) {
    switch (map) {
        case Colormap::BlueRed: return "blue_red";
        case Colormap::OrangeRed: return "orange_red";
        case Colormap::Purple: return "purple";
        case Colormap::RedYellowGreen: return "red_yellow_green";
    }
    return "unknown";
}

bool downstream_of(const Barrier& barrier, double x, double y) {
    const Eigen::Vector3d r(x - barrier.center.x(), y - barrier.center.y(), 0.0);
    return r.dot(barrier.face_normal()) < -0.5 * barrier.thickness &&
           std::abs(r.dot(barrier.width_axis())) <= 0.5 * barrier.width;
}

HazardMap hazard_map(const std::vector<Frame>& history, const std::vector<Barrier>& barriers,
                     const TerrainGrid& terrain, const RiskParams& params, double rho) {
    if (history.empty()) throw std::invalid_argument("hazard map needs at least one recorded frame");
    const GridSpec& spec = terrain.spec();
    Raster v_max(spec, 0.0), h_max(spec, 0.0);
    for (const auto& f : history) {
        if (!aligned(f.depth->spec, spec)) throw std::invalid_argument("frame rasters do not match the terrain");
        for (std::size_t i = 0; i < spec.size(); ++i) {
            h_max.values[i] = std::max(h_max.values[i], f.depth->values[i]);
            v_max.values[i] = std::max(v_max.values[i], f.velocity->values[i]);
        }
    }
    const SlopeField slope = slope_field(terrain);
    HazardMap out{Raster(spec, 0.0), Raster(spec, 0.0), 0.0, {}, Colormap::RedYellowGreen};
    for (std::size_t row = 0; row < spec.n_rows; ++row)
        for (std::size_t col = 0; col < spec.n_cols; ++col) {
            const std::size_t i = spec.index(col, row);
            if (h_max.values[i] <= 0) continue;
            double v = v_max.values[i];
            const bool attenuate =
                !params.attenuate_downstream_only ||
                std::any_of(barriers.begin(), barriers.end(),
                            [&](const Barrier& b) { return downstream_of(b, spec.x_of(col), spec.y_of(row)); });
            if (attenuate) v = landing_velocity(v, params.R, slope.angle[i]);
            HazardSample s{i, v, h_max.values[i], spec.cell_size, 0.0};
            s.F = impact_force(params.alpha, rho, s.v, s.h0, s.w);
            out.force.values[i] = s.F;
            out.samples.push_back(s);
        }
    out.scale = params.hazard_cap > 0 ? params.hazard_cap : out.force.max();
    if (out.scale > 0)
        for (std::size_t i = 0; i < spec.size(); ++i)
            out.normalized.values[i] = std::min(1.0, out.force.values[i] / out.scale);
    return out;
}

Raster vulnerability_raster(const Raster& building_density, const Raster& population_density, double w_b, double w_p) {
    if (!aligned(building_density.spec, population_density.spec))
        throw std::invalid_argument("density rasters are not aligned");
    Raster out(building_density.spec, 0.0);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        auto density = [](const Raster& r, std::size_t k) {
            const double v = r.values[k];
            return v == r.nodata ? 0.0 : std::clamp(v, 0.0, 1.0);
        };
        out.values[i] = vulnerability(density(building_density, i), density(population_density, i), w_b, w_p);
    }
    return out;
}

Raster risk_raster(const Raster& hazard_norm, const Raster& vuln) {
    if (!aligned(hazard_norm.spec, vuln.spec)) throw std::invalid_argument("hazard and vulnerability rasters are not aligned");
    Raster out(hazard_norm.spec, 0.0);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = risk(hazard_norm.values[i], vuln.values[i]);
    return out;
}

RiskLayers risk_layers(const Session& session) {
    const Scenario& sc = session.scenario();
    const auto& spec = sc.terrain->spec();
    HazardMap hazard = hazard_map(session.frames(), session.state().colliders.barriers(), *sc.terrain, sc.risk,
                                  session.state().params.rho);
    const Raster db = building_density(*sc.terrain, sc.footprints);
    const Raster dp = sc.population_density ? *sc.population_density : Raster(spec, 0.0);
    Raster vuln = vulnerability_raster(db, dp, sc.risk.w_b, sc.risk.w_p);
    Raster r = risk_raster(hazard.normalized, vuln);
    return {std::move(hazard), std::move(vuln), std::move(r)};
}

// ---------------------------------------------------------------------------
// Runout

Raster footprint(const Raster& max_depth, double h_min) {
    Raster out(max_depth.spec, 0.0);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = max_depth.values[i] >= h_min ? 1.0 : 0.0;
    return out;
}

double footprint_area(const Raster& mask) {
    double n = 0;
    for (double v : mask.values) n += v > 0 ? 1.0 : 0.0;
    return n * mask.spec.cell_size * mask.spec.cell_size;
}

double downstream_area(const Raster& mask, const Barrier& barrier) {
    double n = 0;
    for (std::size_t row = 0; row < mask.spec.n_rows; ++row)
        for (std::size_t col = 0; col < mask.spec.n_cols; ++col)
            if (mask.at(col, row) > 0 && downstream_of(barrier, mask.spec.x_of(col), mask.spec.y_of(row))) n += 1;
    return n * mask.spec.cell_size * mask.spec.cell_size;
}

std::vector<SteeringCommand> strip_barrier_commands(const std::vector<SteeringCommand>& log) {
    std::vector<SteeringCommand> out;
    for (const auto& c : log) {
        const bool barrier_cmd = std::holds_alternative<cmd::PlaceBarrier>(c.payload) ||
                                 std::holds_alternative<cmd::MoveBarrier>(c.payload) ||
                                 std::holds_alternative<cmd::SetBarrierParams>(c.payload) ||
                                 std::holds_alternative<cmd::RemoveBarrier>(c.payload);
        if (barrier_cmd) continue;
        out.push_back(c);
        out.back().seq = out.size();
    }
    return out;
}

RunoutComparison runout_compare(const Scenario& scenario, const std::vector<SteeringCommand>& log,
                                Session::ScenarioResolver resolver) {
    const auto with = replay(scenario, log, resolver);
    Scenario bare = scenario;
    bare.barriers.clear();
    Session::ScenarioResolver bare_resolver;
    if (resolver)
        bare_resolver = [resolver](const std::string& id) {
            Scenario s = resolver(id);
            s.barriers.clear();
            return s;
        };
    const auto without = replay(bare, strip_barrier_commands(log), bare_resolver);

    RunoutComparison out;
    const double h_min = scenario.risk.h_min;
    out.footprint_with = footprint(with->max_depth(), h_min);
    out.footprint_without = footprint(without->max_depth(), h_min);
    out.area_with = footprint_area(out.footprint_with);
    out.area_without = footprint_area(out.footprint_without);
    out.area_delta = out.area_without - out.area_with;
    out.hash_with = with->hash();
    out.hash_without = without->hash();
    return out;
}

std::vector<std::pair<double, double>> query_point(const std::vector<Frame>& history, double x, double y) {
    std::vector<std::pair<double, double>> series;
    if (history.empty()) return series;
    const GridSpec& spec = history.front().depth->spec;
    if (!spec.contains(x, y)) throw std::domain_error(fmt::format("point ({}, {}) is outside the terrain", x, y));
    const std::size_t i = spec.index(spec.nearest_col(x), spec.nearest_row(y));
    series.reserve(history.size());
    for (const auto& f : history) series.emplace_back(f.t, f.depth->values[i]);
    return series;
}

BarrierReport barrier_report(const BarrierContactLog& log, const Barrier& barrier, double rho) {
    BarrierReport r;
    r.id = barrier.id;
    r.max_speed = log.max_speed;
    r.max_depth = log.max_depth;
    r.face_width = log.max_face_width;
    r.peak_impact_force = impact_force(barrier.alpha, rho, log.max_speed, log.max_depth, log.max_face_width);
    r.peak_flow_rate = log.peak_flow_rate;
    r.overtopped_volume = log.overtopped_volume;
    return r;
}

BarrierReport barrier_report(const SimulationState& state, const std::string& id) {
    const Barrier* b = state.colliders.find_barrier(id);
    const auto it = state.contact_logs.find(id);
    if (!b || it == state.contact_logs.end()) throw UnknownBarrier(id);
    return barrier_report(it->second, *b, state.params.rho);
}

json to_json(const BarrierReport& r) {
    return {{"id", r.id},
            {"peak_impact_force", r.peak_impact_force},
            {"peak_flow_rate", r.peak_flow_rate},
            {"overtopped_volume", r.overtopped_volume},
            {"max_speed", r.max_speed},
            {"max_depth", r.max_depth},
            {"face_width", r.face_width}};
}

// ---------------------------------------------------------------------------
// Layers

json layer_sidecar(const Layer& layer) {
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (double v : layer.values.values) {
        if (v == layer.values.nodata) continue;
        lo = any ? std::min(lo, v) : v;
        hi = any ? std::max(hi, v) : v;
        any = true;
    }
    json j = {{"layer", layer.name}, {"colormap", colormap_tag(layer.colormap)}, {"min", lo}, {"max", hi}};
    for (const auto& [k, v] : layer.metadata.items()) j[k] = v;
    return j;
}

void export_layer(const std::filesystem::path& dir, const Layer& layer) {
    std::filesystem::create_directories(dir);
    write_esri_ascii(dir / (layer.name + ".asc"), layer.values);
    std::ofstream out(dir / (layer.name + ".json"));
    if (!out) throw std::runtime_error(fmt::format("cannot write layer sidecar for '{}'", layer.name));
    out << layer_sidecar(layer).dump(2) << '\n';
}

std::vector<Layer> analysis_layers(const Session& session) {
    const Scenario& sc = session.scenario();
    const json provenance = {{"scenario", sc.id}, {"provenance", sc.provenance}, {"t", session.state().time}};
    RiskLayers r = risk_layers(session);
    std::vector<Layer> layers;
    auto meta = [&](json extra) {
        json j = provenance;
        for (const auto& [k, v] : extra.items()) j[k] = v;
        return j;
    };
    layers.push_back({"hazard", r.hazard.normalized, Colormap::RedYellowGreen,
                      meta({{"units", "normalized impact force"}, {"scale_N", r.hazard.scale}})});
    layers.push_back({"impact_force", r.hazard.force, Colormap::RedYellowGreen, meta({{"units", "N"}})});
    layers.push_back({"vulnerability", r.vulnerability, Colormap::BlueRed, meta({{"w_b", sc.risk.w_b}, {"w_p", sc.risk.w_p}})});
    layers.push_back({"risk", r.risk, Colormap::RedYellowGreen, meta({})});
    layers.push_back({"flow_path", session.max_depth(), Colormap::OrangeRed, meta({{"units", "m"}, {"statistic", "max depth"}})});
    layers.push_back({"deposits", depth_field(session.state()), Colormap::Purple, meta({{"units", "m"}, {"statistic", "final depth"}})});
    layers.push_back({"footprint", footprint(session.max_depth(), sc.risk.h_min), Colormap::OrangeRed,
                      meta({{"h_min", sc.risk.h_min}})});
    if (sc.rainfall) {
        layers.push_back({"rainfall", sc.rainfall->intensity, Colormap::BlueRed,
                          meta({{"units", "mm/h"}, {"period", sc.rainfall->period}})});
        SusceptibilityLayer s = susceptibility_layer(sc, *sc.rainfall);
        layers.push_back({"susceptibility", std::move(s.values), Colormap::BlueRed, meta({{"proxy", s.proxy}})});
    } else if (sc.susceptibility) {
        SusceptibilityLayer s = susceptibility_layer(sc, RainfallRaster{Raster(sc.terrain->spec(), 0.0), {}});
        layers.push_back({"susceptibility", std::move(s.values), Colormap::BlueRed, meta({{"proxy", s.proxy}})});
    }
    return layers;
}

}  // namespace landsar
