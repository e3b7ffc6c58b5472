#include "landsar/scenario.hpp"

#include "landsar/errors.hpp"
#include "fnv.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace landsar {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CSV and events

std::vector<CsvRecord> read_csv(std::istream& in) {
    std::vector<CsvRecord> records;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (content.size() >= 3 && content.compare(0, 3, "\xEF\xBB\xBF") == 0) content.erase(0, 3);

    std::size_t line = 1, i = 0;
    const std::size_t n = content.size();
    while (i < n) {
        CsvRecord rec{{}, line};
        std::string field;
        bool in_quotes = false, field_was_quoted = false;
        for (; i < n; ++i) {
            const char c = content[i];
            if (in_quotes) {
                if (c == '"') {
                    if (i + 1 < n && content[i + 1] == '"') {
                        field.push_back('"');
                        ++i;
                    } else {
                        in_quotes = false;
                    }
                } else {
                    if (c == '\n') ++line;
                    field.push_back(c);
                }
                continue;
            }
            if (c == '"' && field.empty() && !field_was_quoted) {
                in_quotes = field_was_quoted = true;
            } else if (c == ',') {
                rec.fields.push_back(std::move(field));
                field.clear();
                field_was_quoted = false;
            } else if (c == '\r') {
                // tolerated before \n
            } else if (c == '\n') {
                ++line;
                ++i;
                break;
            } else {
                if (field_was_quoted) throw ParseError("text after closing quote", line);
                field.push_back(c);
            }
        }
        if (in_quotes) throw ParseError("unterminated quoted field", rec.line);
        rec.fields.push_back(std::move(field));
        if (!(rec.fields.size() == 1 && rec.fields[0].empty())) records.push_back(std::move(rec));
    }
    return records;
}

std::chrono::year_month_day parse_iso_date(const std::string& text) {
    int y = 0;
    unsigned m = 0, d = 0;
    auto bad = [&] { return std::invalid_argument(fmt::format("unparseable date '{}'", text)); };
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw bad();
    auto num = [&](std::size_t pos, std::size_t len, auto& out) {
        auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
        if (ec != std::errc{} || p != text.data() + pos + len) throw bad();
    };
    num(0, 4, y);
    num(5, 2, m);
    num(8, 2, d);
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw bad();
    return ymd;
}

std::string format_iso_date(std::chrono::year_month_day date) {
    return fmt::format("{:04}-{:02}-{:02}", static_cast<int>(date.year()), static_cast<unsigned>(date.month()),
                       static_cast<unsigned>(date.day()));
}

namespace {

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::optional<double> to_number(const std::string& s) {
    double v = 0;
    const std::string t = trim(s);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || p != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

constexpr std::array<std::string_view, 6> kEventColumns = {"id", "date", "x", "y", "scale", "description"};

}  // namespace

std::vector<LandslideEvent> load_events(std::istream& in) {
    const auto records = read_csv(in);
    if (records.empty()) throw ParseError("events file has no header", 1);
    const auto& header = records.front();
    bool header_ok = header.fields.size() == kEventColumns.size();
    for (std::size_t i = 0; header_ok && i < kEventColumns.size(); ++i) header_ok = trim(header.fields[i]) == kEventColumns[i];
    if (!header_ok) throw ParseError("malformed header, expected id,date,x,y,scale,description", header.line);

    std::vector<LandslideEvent> events;
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.fields.size() != kEventColumns.size())
            throw ParseError(fmt::format("expected {} fields, found {}", kEventColumns.size(), rec.fields.size()),
                             rec.line);
        LandslideEvent e;
        e.id = trim(rec.fields[0]);
        if (e.id.empty()) throw ParseError("empty event id", rec.line);
        try {
            e.date = parse_iso_date(trim(rec.fields[1]));
        } catch (const std::invalid_argument& err) {
            throw ParseError(err.what(), rec.line);
        }
        const auto x = to_number(rec.fields[2]);
        const auto y = to_number(rec.fields[3]);
        if (!x || !y) throw ParseError("non-numeric event location", rec.line);
        e.x = *x;
        e.y = *y;
        e.scale = rec.fields[4];
        e.scale_m3 = to_number(e.scale);
        if (e.scale_m3 && !(*e.scale_m3 > 0)) throw ParseError("numeric scale must be positive", rec.line);
        if (!e.scale_m3 && trim(e.scale).empty()) throw ParseError("missing event scale", rec.line);
        e.description = rec.fields[5];
        events.push_back(std::move(e));
    }
    return events;
}

std::vector<LandslideEvent> load_events(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open events file '{}'", path.string()));
    return load_events(in);
}

void save_events(std::ostream& out, const std::vector<LandslideEvent>& events) {
    out << "id,date,x,y,scale,description\n";
    for (const auto& e : events)
        fmt::print(out, "{},{},{},{},{},{}\n", csv_quote(e.id), format_iso_date(e.date), e.x, e.y, csv_quote(e.scale),
                   csv_quote(e.description));
}

void save_events(const fs::path& path, const std::vector<LandslideEvent>& events) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write events file '{}'", path.string()));
    save_events(out, events);
}

void check_event_locations(const std::vector<LandslideEvent>& events, const std::vector<GridSpec>& extents) {
    for (const auto& e : events) {
        const bool inside = std::any_of(extents.begin(), extents.end(),
                                        [&](const GridSpec& s) { return s.contains(e.x, e.y); });
        if (!inside) throw std::invalid_argument(fmt::format("event '{}' lies outside every terrain extent", e.id));
    }
}

std::vector<LandslideEvent> filter_events(const std::vector<LandslideEvent>& events,
                                          std::chrono::year_month_day start, std::chrono::year_month_day end) {
    if (end < start) throw std::invalid_argument("inverted date range");
    std::vector<LandslideEvent> out;
    std::copy_if(events.begin(), events.end(), std::back_inserter(out),
                 [&](const LandslideEvent& e) { return e.date >= start && e.date <= end; });
    return out;
}

std::vector<LandslideEvent> filter_events(const std::vector<LandslideEvent>& events, int first_year,
                                          int last_year) {
    using namespace std::chrono;
    if (last_year < first_year) throw std::invalid_argument("inverted date range");
    return filter_events(events, year{first_year} / January / 1, year{last_year} / December / 31);
}

// ---------------------------------------------------------------------------
// Buildings

std::vector<Building> extrude_buildings(const TerrainGrid& terrain, const std::vector<BuildingFootprint>& footprints) {
    std::vector<Building> out;
    for (const auto& f : footprints) {
        if (f.outline.size() < 3 || !(f.height > 0))
            throw std::invalid_argument(fmt::format("building '{}' needs a polygon and a positive height", f.id));
        Eigen::Vector2d lo = f.outline.front(), hi = f.outline.front();
        for (const auto& v : f.outline) {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
        double ground_lo = std::numeric_limits<double>::infinity(), ground_hi = -ground_lo;
        for (const Eigen::Vector2d& q : {lo, hi, Eigen::Vector2d(lo.x(), hi.y()), Eigen::Vector2d(hi.x(), lo.y()),
                                         Eigen::Vector2d(0.5 * (lo + hi))}) {
            const double h = sample_surface(terrain, q.x(), q.y()).height;
            ground_lo = std::min(ground_lo, h);
            ground_hi = std::max(ground_hi, h);
        }
        out.push_back({f.id, Eigen::Vector3d(lo.x(), lo.y(), ground_lo - 1.0),
                       Eigen::Vector3d(hi.x(), hi.y(), ground_hi + f.height)});
    }
    return out;
}

Raster building_density(const TerrainGrid& terrain, const std::vector<BuildingFootprint>& footprints) {
    const auto& s = terrain.spec();
    Raster out(s, 0.0);
    constexpr int kSub = 4;
    for (std::size_t row = 0; row < s.n_rows; ++row)
        for (std::size_t col = 0; col < s.n_cols; ++col) {
            int covered = 0;
            for (int a = 0; a < kSub; ++a)
                for (int b = 0; b < kSub; ++b) {
                    const Eigen::Vector2d q(s.x_of(col) + ((a + 0.5) / kSub - 0.5) * s.cell_size,
                                            s.y_of(row) + ((b + 0.5) / kSub - 0.5) * s.cell_size);
                    if (std::any_of(footprints.begin(), footprints.end(),
                                    [&](const BuildingFootprint& f) { return point_in_polygon(f.outline, q); }))
                        ++covered;
                }
            out.at(col, row) = static_cast<double>(covered) / (kSub * kSub);
        }
    return out;
}

std::vector<BuildingFootprint> load_buildings_geojson(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open buildings '{}'", path.string()));
    const json doc = json::parse(in);
    std::vector<BuildingFootprint> out;
    std::size_t n = 0;
    for (const auto& feature : doc.at("features")) {
        ++n;
        const auto& geom = feature.at("geometry");
        if (geom.at("type") != "Polygon")
            throw std::invalid_argument(fmt::format("building feature {} is not a Polygon", n));
        BuildingFootprint f;
        const auto& props = feature.value("properties", json::object());
        f.id = props.contains("id") ? props["id"].get<std::string>() : fmt::format("building-{}", n);
        f.height = props.at("height").get<double>();
        for (const auto& v : geom.at("coordinates").at(0)) f.outline.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
        if (f.outline.size() > 1 && f.outline.front() == f.outline.back()) f.outline.pop_back();
        out.push_back(std::move(f));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scenario

json barrier_to_json(const Barrier& b) {
    return {{"id", b.id},
            {"center", {b.center.x(), b.center.y(), b.center.z()}},
            {"yaw", b.yaw},
            {"height", b.height},
            {"width", b.width},
            {"thickness", b.thickness},
            {"face_angle", b.face_angle},
            {"alpha", b.alpha}};
}

Barrier barrier_from_json(const json& j) {
    Barrier b;
    b.id = j.at("id").get<std::string>();
    if (j.contains("center")) {
        const auto& c = j.at("center");
        if (c.size() < 2 || c.size() > 3) throw std::invalid_argument("barrier center must have 2 or 3 components");
        b.center = Eigen::Vector3d(c.at(0).get<double>(), c.at(1).get<double>(), c.size() == 3 ? c.at(2).get<double>() : 0.0);
    }
    b.yaw = j.value("yaw", b.yaw);
    b.height = j.value("height", b.height);
    b.width = j.value("width", b.width);
    b.thickness = j.value("thickness", b.thickness);
    b.face_angle = j.value("face_angle", b.face_angle);
    b.alpha = j.value("alpha", b.alpha);
    b.validate();
    return b;
}

namespace {

Polygon polygon_from_json(const json& j) {
    Polygon p;
    for (const auto& v : j) p.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
    return p;
}

json polygon_to_json(const Polygon& p) {
    json out = json::array();
    for (const auto& v : p) out.push_back({v.x(), v.y()});
    return out;
}

}  // namespace

Scenario scenario_from_json(const json& doc, const fs::path& base_dir) {
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
    Scenario s;
    s.id = doc.at("id").get<std::string>();
    s.terrain = std::make_shared<const TerrainGrid>(load_dem(resolve(doc.at("terrain").get<std::string>())));
    if (doc.contains("buildings") && !doc["buildings"].is_null())
        s.footprints = load_buildings_geojson(resolve(doc["buildings"].get<std::string>()));

    const auto& release = doc.at("release");
    s.release_region = polygon_from_json(release.at("polygon"));
    s.release_volume = release.at("volume_m3").get<double>();
    if (s.release_volume < 0) throw std::invalid_argument("release volume must not be negative");

    const json params = doc.value("params", json::object());
    auto& e = s.engine;
    e.dt = params.value("dt", e.dt);
    e.gravity = Eigen::Vector3d(0, 0, -params.value("gravity", 9.81));
    e.rho = params.value("rho", e.rho);
    e.mu_t = params.value("mu_t", e.mu_t);
    e.eos_stiffness = params.value("eos_stiffness", e.eos_stiffness);
    e.drag_coefficient = params.value("drag_coefficient", e.drag_coefficient);
    e.grid_spacing = params.value("grid_spacing", e.grid_spacing);
    e.particles_per_cell = params.value("particles_per_cell", e.particles_per_cell);
    e.headroom_cells = params.value("headroom_cells", e.headroom_cells);
    if (params.contains("boulders")) {
        const auto& b = params["boulders"];
        e.boulders.count = b.value("count", e.boulders.count);
        e.boulders.radius_min = b.value("radius_min", e.boulders.radius_min);
        e.boulders.radius_max = b.value("radius_max", e.boulders.radius_max);
        e.boulders.density = b.value("density", e.boulders.density);
    }
    auto& r = s.risk;
    r.alpha = params.value("alpha", r.alpha);
    r.R = params.value("R", r.R);
    r.h_min = params.value("h_min", r.h_min);
    r.w_b = params.value("w_b", r.w_b);
    r.w_p = params.value("w_p", r.w_p);
    r.hazard_cap = params.value("hazard_cap", r.hazard_cap);
    r.attenuate_downstream_only = params.value("attenuate_downstream_only", r.attenuate_downstream_only);
    e.wet_threshold = r.h_min;

    const json rasters = doc.value("rasters", json::object());
    if (rasters.contains("rainfall") && !rasters["rainfall"].is_null())
        s.rainfall = RainfallRaster{read_esri_ascii(resolve(rasters["rainfall"].get<std::string>())),
                                    rasters.value("rainfall_period", std::string{})};
    if (rasters.contains("susceptibility") && !rasters["susceptibility"].is_null())
        s.susceptibility = read_esri_ascii(resolve(rasters["susceptibility"].get<std::string>()));
    if (rasters.contains("population") && !rasters["population"].is_null())
        s.population_density = read_esri_ascii(resolve(rasters["population"].get<std::string>()));

    for (const auto& b : doc.value("barriers", json::array())) s.barriers.push_back(barrier_from_json(b));
    s.seed = doc.value("seed", std::uint64_t{0});
    s.duration = doc.value("duration", params.value("duration", s.duration));
    s.publish_rate = doc.value("publish_rate", params.value("publish_rate", s.publish_rate));
    s.provenance = doc.value("provenance", std::string{});
    if (!(s.duration > 0)) throw std::invalid_argument("scenario duration must be positive");
    if (!(s.publish_rate > 0)) throw std::invalid_argument("publish rate must be positive");
    check_alignment(s);
    return s;
}

Scenario load_scenario(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open scenario '{}'", path.string()));
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(fmt::format("scenario '{}': {}", path.string(), e.what()));
    }
    return scenario_from_json(doc, path.parent_path());
}

json scenario_summary(const Scenario& s) {
    const auto& t = s.terrain->spec();
    return {{"id", s.id},
            {"terrain", {{"ncols", t.n_cols}, {"nrows", t.n_rows}, {"cellsize", t.cell_size},
                         {"xllcorner", t.origin_x}, {"yllcorner", t.origin_y}}},
            {"release", {{"polygon", polygon_to_json(s.release_region)}, {"volume_m3", s.release_volume}}},
            {"params", {{"dt", s.engine.dt}, {"gravity", -s.engine.gravity.z()}, {"rho", s.engine.rho},
                        {"alpha", s.risk.alpha}, {"R", s.risk.R}, {"mu_t", s.engine.mu_t},
                        {"h_min", s.risk.h_min}, {"w_b", s.risk.w_b}, {"w_p", s.risk.w_p}}},
            {"buildings", s.footprints.size()},
            {"seed", s.seed},
            {"duration", s.duration},
            {"provenance", s.provenance}};
}

void check_alignment(const Scenario& s) {
    const auto& spec = s.terrain->spec();
    auto check = [&](const Raster& r, const char* name) {
        if (!aligned(r.spec, spec)) throw std::invalid_argument(fmt::format("{} raster is not aligned with the terrain", name));
    };
    if (s.rainfall) {
        check(s.rainfall->intensity, "rainfall");
        for (double v : s.rainfall->intensity.values)
            if (v != s.rainfall->intensity.nodata && v < 0) throw std::invalid_argument("negative rainfall intensity");
    }
    if (s.susceptibility) check(*s.susceptibility, "susceptibility");
    if (s.population_density) check(*s.population_density, "population");
}

SimulationState make_initial_state(const Scenario& sc) {
    auto state = make_state(sc.terrain, extrude_buildings(*sc.terrain, sc.footprints), sc.engine, sc.seed, sc.grid);
    for (const auto& b : sc.barriers) state.add_barrier(b);
    if (sc.release_volume > 0) init_release(state, sc.release_region, sc.release_volume);
    return state;
}

Scenario scale_scenario(const Scenario& s, double multiplier) {
    if (!(multiplier > 0) || !std::isfinite(multiplier)) throw std::invalid_argument("climate multiplier must be positive");
    Scenario out = s;
    if (multiplier == 1.0) return out;
    out.release_volume *= multiplier;
    if (out.rainfall)
        for (double& v : out.rainfall->intensity.values)
            if (v != out.rainfall->intensity.nodata) v *= multiplier;
    out.provenance = fmt::format("{}{}climate x{} (linear volume stand-in)", s.provenance,
                                 s.provenance.empty() ? "" : "; ", multiplier);
    return out;
}

std::uint64_t scenario_hash(const Scenario& s) {
    detail::Fnv1a f;
    f.text(s.id);
    auto raster = [&](const Raster& r) {
        for (double v : {r.spec.cell_size, r.spec.origin_x, r.spec.origin_y}) f.value(v);
        f.value(static_cast<std::uint64_t>(r.spec.n_cols));
        f.value(static_cast<std::uint64_t>(r.spec.n_rows));
        for (double v : r.values) f.value(v);
    };
    raster(s.terrain->raster());
    for (const auto& b : s.footprints) {
        f.text(b.id);
        f.value(b.height);
        for (const auto& v : b.outline) f.vec({v.x(), v.y(), 0.0});
    }
    for (const auto& v : s.release_region) f.vec({v.x(), v.y(), 0.0});
    f.value(s.release_volume);
    const auto& e = s.engine;
    for (double v : {e.dt, e.rho, e.eos_stiffness, e.eos_gamma, e.drag_coefficient, e.mu_t, e.grid_spacing, e.cfl,
                     e.penetration_tol_factor, e.wet_threshold, e.boulders.radius_min, e.boulders.radius_max,
                     e.boulders.density})
        f.value(v);
    f.vec(e.gravity);
    f.value(static_cast<std::uint64_t>(e.particles_per_cell));
    f.value(static_cast<std::uint64_t>(e.headroom_cells));
    f.value(static_cast<std::uint64_t>(e.boulders.count));
    const auto& r = s.risk;
    for (double v : {r.alpha, r.R, r.h_min, r.w_b, r.w_p, r.hazard_cap}) f.value(v);
    f.value(static_cast<std::uint64_t>(r.attenuate_downstream_only));
    if (s.grid) {
        f.vec(s.grid->origin);
        f.value(s.grid->spacing);
        f.vec(s.grid->dims.cast<double>());
    }
    if (s.rainfall) raster(s.rainfall->intensity);
    if (s.susceptibility) raster(*s.susceptibility);
    if (s.population_density) raster(*s.population_density);
    for (const auto& b : s.barriers) f.text(barrier_to_json(b).dump());
    f.value(s.seed);
    f.value(s.duration);
    f.value(s.publish_rate);
    return f.h;
}

SusceptibilityLayer susceptibility_layer(const Scenario& s, const RainfallRaster& rainfall) {
    const auto& spec = s.terrain->spec();
    if (!aligned(rainfall.intensity.spec, spec)) throw std::invalid_argument("rainfall raster is not aligned with the terrain");
    if (s.susceptibility) {
        if (!aligned(s.susceptibility->spec, spec))
            throw std::invalid_argument("susceptibility raster is not aligned with the terrain");
        Raster r = *s.susceptibility;
        const double hi = r.max();
        for (double& v : r.values) v = hi > 0 ? std::clamp(v / hi, 0.0, 1.0) : 0.0;
        return {std::move(r), false};
    }
    const SlopeField slope = slope_field(*s.terrain);
    const double theta_max = *std::max_element(slope.angle.begin(), slope.angle.end());
    double rain_max = 0.0;
    for (double v : rainfall.intensity.values)
        if (v != rainfall.intensity.nodata) rain_max = std::max(rain_max, v);
    Raster out(spec, 0.0);
    if (theta_max > 0 && rain_max > 0)
        for (std::size_t i = 0; i < spec.size(); ++i) {
            const double rain = rainfall.intensity.values[i] == rainfall.intensity.nodata ? 0.0 : rainfall.intensity.values[i];
            out.values[i] = (slope.angle[i] / theta_max) * (rain / rain_max);
        }
    return {std::move(out), true};
}

// ---------------------------------------------------------------------------
// Fixtures

double VChannel::height(double x, double y) {
    const double along = y <= 30.0 ? 0.05 * y : 1.5 + 0.45 * (y - 30.0);
    const double t = std::clamp((y - 26.0) / 10.0, 0.0, 1.0);
    const double cross = 0.05 + t * (0.5 - 0.05);
    return along + cross * std::abs(x - kAxisX);
}

TerrainGrid VChannel::terrain() {
    Raster r(GridSpec{kCols, kRows, kCellSize, 0.0, 0.0});
    for (std::size_t row = 0; row < kRows; ++row)
        for (std::size_t col = 0; col < kCols; ++col) r.at(col, row) = height(r.spec.x_of(col), r.spec.y_of(row));
    return TerrainGrid(std::move(r));
}

Polygon VChannel::release_region() { return {{15.0, 64.0}, {25.0, 64.0}, {25.0, 74.0}, {15.0, 74.0}}; }

Barrier VChannel::barrier(double h) {
    Barrier b;
    b.id = "b1";
    b.center = Eigen::Vector3d(kAxisX, kBarrierY, height(kAxisX, kBarrierY));
    b.yaw = M_PI / 2;
    b.height = h;
    b.width = 40.0;
    b.thickness = 1.5;
    return b;
}

bool VChannel::downstream(double y) { return y < kBarrierY - 3.0; }

Scenario VChannel::scenario(double volume, std::uint64_t seed) {
    Scenario s;
    s.id = "v_channel";
    s.terrain = std::make_shared<const TerrainGrid>(terrain());
    s.release_region = release_region();
    s.release_volume = volume;
    s.engine.dt = 4e-3;
    s.engine.wet_threshold = s.risk.h_min;
    s.seed = seed;
    s.duration = 12.0;
    return s;
}

TerrainGrid make_plane(std::size_t cols, std::size_t rows, double cell_size, double dhdx, double dhdy) {
    Raster r(GridSpec{cols, rows, cell_size, 0.0, 0.0});
    for (std::size_t row = 0; row < rows; ++row)
        for (std::size_t col = 0; col < cols; ++col) r.at(col, row) = dhdx * r.spec.x_of(col) + dhdy * r.spec.y_of(row);
    return TerrainGrid(std::move(r));
}

TerrainGrid make_two_ridge_valley() {
    Raster r(GridSpec{64, 64, 2.0, 0.0, 0.0});
    for (std::size_t row = 0; row < 64; ++row)
        for (std::size_t col = 0; col < 64; ++col) {
            const double x = r.spec.x_of(col), y = r.spec.y_of(row);
            const double ridge_a = 18.0 * std::exp(-std::pow((x - 30.0) / 12.0, 2));
            const double ridge_b = 14.0 * std::exp(-std::pow((x - 96.0) / 14.0, 2));
            r.at(col, row) = 0.12 * y + ridge_a + ridge_b + 0.02 * std::pow(x - 63.0, 2) / 10.0;
        }
    return TerrainGrid(std::move(r));
}

TerrainGrid make_island() {
    Raster r(GridSpec{64, 64, 10.0, 0.0, 0.0});
    for (std::size_t row = 0; row < 64; ++row)
        for (std::size_t col = 0; col < 64; ++col) {
            const double x = r.spec.x_of(col) - 315.0, y = r.spec.y_of(row) - 315.0;
            const double radius = std::hypot(x, y);
            const double angle = std::atan2(y, x);
            const double ridges = 1.0 + 0.25 * std::cos(5.0 * angle);
            r.at(col, row) = std::max(0.0, 120.0 * std::exp(-std::pow(radius / (180.0 * ridges), 2)) - 8.0);
        }
    return TerrainGrid(std::move(r));
}

void write_fixtures(const fs::path& dir) {
    fs::create_directories(dir);
    save_dem(dir / "v_channel.asc", VChannel::terrain());
    save_dem(dir / "plane.asc", make_plane(33, 33, 1.0, 0.0, 0.2));
    save_dem(dir / "two_ridge_valley.asc", make_two_ridge_valley());
    save_dem(dir / "island.asc", make_island());

    // A row of houses on the fan below the channel.
    json features = json::array();
    for (int i = 0; i < 3; ++i) {
        const double x0 = 8.0 + 9.0 * i, y0 = 6.0;
        features.push_back({{"type", "Feature"},
                            {"properties", {{"id", fmt::format("house-{}", i + 1)}, {"height", 6.0}}},
                            {"geometry",
                             {{"type", "Polygon"},
                              {"coordinates", {{{x0, y0}, {x0 + 5, y0}, {x0 + 5, y0 + 4}, {x0, y0 + 4}, {x0, y0}}}}}}});
    }
    std::ofstream(dir / "v_channel_buildings.geojson") << json{{"type", "FeatureCollection"}, {"features", features}}.dump(2)
                                                       << '\n';

    Raster rain(VChannel::terrain().spec(), 0.0);
    for (std::size_t row = 0; row < rain.spec.n_rows; ++row)
        for (std::size_t col = 0; col < rain.spec.n_cols; ++col)
            rain.at(col, row) = 40.0 + 0.5 * static_cast<double>(row);
    write_esri_ascii(dir / "v_channel_rainfall_2008.asc", rain);

    Raster population(VChannel::terrain().spec(), 0.0);
    for (std::size_t row = 0; row < 14; ++row)
        for (std::size_t col = 6; col < 36; ++col) population.at(col, row) = 0.6;
    write_esri_ascii(dir / "v_channel_population.asc", population);

    const Barrier b = VChannel::barrier();
    auto scenario_doc = [&](const std::string& id, const std::string& terrain, const Polygon& region, double volume,
                            double duration) {
        return json{{"id", id},
                    {"terrain", terrain},
                    {"release", {{"polygon", polygon_to_json(region)}, {"volume_m3", volume}}},
                    {"params",
                     {{"dt", 4e-3}, {"gravity", 9.81}, {"rho", 2000.0}, {"alpha", kRigidConcreteAlpha}, {"R", 0.8},
                      {"mu_t", 0.3}, {"h_min", 0.05}, {"w_b", 0.5}, {"w_p", 0.5}}},
                    {"rasters", json::object()},
                    {"seed", 7},
                    {"duration", duration}};
    };
    json vc = scenario_doc("v_channel", "v_channel.asc", VChannel::release_region(), 120.0, 12.0);
    vc["buildings"] = "v_channel_buildings.geojson";
    vc["rasters"] = {{"rainfall", "v_channel_rainfall_2008.asc"},
                     {"rainfall_period", "2008-06-07 rainstorm"},
                     {"population", "v_channel_population.asc"}};
    json vcb = vc;
    vcb["id"] = "v_channel_barrier";
    vcb["barriers"] = json::array({barrier_to_json(b)});
    std::ofstream(dir / "v_channel.json") << vc.dump(2) << '\n';
    std::ofstream(dir / "v_channel_barrier.json") << vcb.dump(2) << '\n';
    std::ofstream(dir / "plane.json")
        << scenario_doc("plane", "plane.asc", {{12, 20}, {20, 20}, {20, 28}, {12, 28}}, 30.0, 5.0).dump(2) << '\n';
    std::ofstream(dir / "two_ridge_valley.json")
        << scenario_doc("two_ridge_valley", "two_ridge_valley.asc", {{54, 100}, {72, 100}, {72, 116}, {54, 116}}, 200.0,
                        8.0)
               .dump(2)
        << '\n';

    std::vector<LandslideEvent> events;
    auto add = [&](std::string id, std::string date, double x, double y, std::string scale, std::string text) {
        LandslideEvent e;
        e.id = std::move(id);
        e.date = parse_iso_date(date);
        e.x = x;
        e.y = y;
        e.scale = std::move(scale);
        e.scale_m3 = to_number(e.scale);
        e.description = std::move(text);
        events.push_back(std::move(e));
    };
    add("ev-1984", "1984-05-30", 21, 70, "350", "Channelised debris flow after a \"black\" rainstorm");
    add("ev-2005", "2005-08-20", 18, 66, "minor", "Washout, road closed");
    add("ev-2006", "2006-06-01", 20, 68, "1200", "Debris flow reached the fan, houses evacuated");
    add("ev-2008", "2008-06-07", 22, 72, "2500", "Largest event in the record, multiple sources,\nboulders deposited");
    add("ev-2021", "2021-10-09", 19, 60, "80", "Small slip on the channel side");
    save_events(dir / "events.csv", events);
}

}  // namespace landsar
