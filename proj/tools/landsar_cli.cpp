#include "ws_server.hpp"

#include "landsar/errors.hpp"
#include "landsar/physicalize.hpp"
#include "landsar/protocol.hpp"
#include "landsar/risk.hpp"
#include "landsar/scenario.hpp"
#include "landsar/session.hpp"
#include "landsar/terrain.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace landsar;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitScenario = 3;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

Scenario load_scenario_or_throw(const std::string& path) {
    if (path.empty()) throw ConfigError("--scenario is required");
    if (!fs::exists(path)) throw ConfigError(fmt::format("scenario file '{}' does not exist", path));
    try {
        Scenario s = load_scenario(path);
        check_alignment(s);
        return s;
    } catch (const std::exception& e) {
        throw ScenarioError(fmt::format("{}: {}", path, e.what()));
    }
}

/// Scenarios next to the given file, so logged set_scenario commands resolve.
Session::ScenarioResolver resolver_for(const std::string& scenario_path, const std::string& scenario_dir) {
    const fs::path dir = !scenario_dir.empty() ? fs::path(scenario_dir) : fs::path(scenario_path).parent_path();
    if (dir.empty() || !fs::is_directory(dir)) return {};
    auto cat = std::make_shared<ScenarioCatalogue>(ScenarioCatalogue::from_directory(dir));
    return [cat](const std::string& id) { return cat->get(id); };
}

std::vector<SteeringCommand> load_log(const std::string& path) {
    if (path.empty()) return start_only_log();
    if (!fs::exists(path)) throw ConfigError(fmt::format("command log '{}' does not exist", path));
    auto log = read_command_log(fs::path(path));
    check_log_sequence(log);
    return log;
}

json session_summary(const Session& s) {
    const Scenario& sc = s.scenario();
    json barriers = json::array();
    for (const auto& b : s.state().colliders.barriers()) barriers.push_back(barrier_to_json(b));
    const Raster mask = footprint(s.max_depth(), sc.risk.h_min);
    return {{"scenario", sc.id},
            {"scenario_hash", hex(scenario_hash(sc))},
            {"provenance", sc.provenance},
            {"phase", phase_name(s.phase())},
            {"t", s.state().time},
            {"step", s.state().step},
            {"epoch", s.epoch()},
            {"hash", hex(s.hash())},
            {"particles", s.state().particles.size()},
            {"fluid_mass", s.state().total_fluid_mass()},
            {"footprint_area", footprint_area(mask)},
            {"commands", s.log().size()},
            {"barriers", std::move(barriers)}};
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    out << j.dump(2) << '\n';
}

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Debris-flow simulation and steering workbench"};
    app.require_subcommand(1);

    // serve
    auto* serve = app.add_subcommand("serve", "Run the WebSocket steering server");
    std::string serve_scenario, serve_dir = env_or("LANDSAR_SCENARIO_DIR", ""), host = "127.0.0.1";
    int port = -1;
    double speed = 1.0;
    serve->add_option("--scenario", serve_scenario, "Default scenario for new sessions");
    serve->add_option("--scenario-dir", serve_dir, "Directory of scenarios for load_scenario (LANDSAR_SCENARIO_DIR)");
    serve->add_option("--port", port, "TCP port, 0 for any free port (LANDSAR_PORT, default 8080)");
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--speed", speed, "Simulated seconds per wall second; 0 runs unthrottled");

    // run / replay share their options
    std::string scenario_path, commands_path, out_dir, scenario_dir;
    std::optional<double> until;
    auto* run = app.add_subcommand("run", "Run a scenario headless and write log, summary and layers");
    run->add_option("--scenario", scenario_path)->required();
    run->add_option("--commands", commands_path, "Command log (JSONL); default starts at t=0");
    run->add_option("--out", out_dir)->required();
    run->add_option("--until", until, "Stop at this simulated time");
    run->add_option("--scenario-dir", scenario_dir);

    auto* replay_cmd = app.add_subcommand("replay", "Replay a command log and print the final state hash");
    std::string expect_hash;
    replay_cmd->add_option("--scenario", scenario_path)->required();
    replay_cmd->add_option("--commands", commands_path)->required();
    replay_cmd->add_option("--until", until);
    replay_cmd->add_option("--expect-hash", expect_hash, "Exit 1 unless the final hash matches");
    replay_cmd->add_option("--scenario-dir", scenario_dir);

    auto* compare = app.add_subcommand("compare", "Runout with and without the logged barriers");
    compare->add_option("--scenario", scenario_path)->required();
    compare->add_option("--commands", commands_path);
    compare->add_option("--out", out_dir, "Also write compare.json and both footprints");
    compare->add_option("--scenario-dir", scenario_dir);

    auto* export_layers = app.add_subcommand("export-layers", "Run a scenario and export its analysis layers");
    double climate = 1.0;
    export_layers->add_option("--scenario", scenario_path)->required();
    export_layers->add_option("--commands", commands_path);
    export_layers->add_option("--climate", climate, "Release-volume multiplier (1.5, 2.5, 3)");
    export_layers->add_option("--out", out_dir)->required();
    export_layers->add_option("--scenario-dir", scenario_dir);

    auto* fabricate_cmd = app.add_subcommand("fabricate", "Export printable STL tiles of a terrain");
    std::string dem_path;
    FabricationConfig fab;
    fabricate_cmd->add_option("--dem", dem_path, "ESRI ASCII terrain (or use --scenario)");
    fabricate_cmd->add_option("--scenario", scenario_path);
    fabricate_cmd->add_option("--rows", fab.tile_rows)->check(CLI::PositiveNumber);
    fabricate_cmd->add_option("--cols", fab.tile_cols)->check(CLI::PositiveNumber);
    fabricate_cmd->add_option("--z-scale", fab.z_scale);
    fabricate_cmd->add_option("--xy-scale", fab.xy_scale, "Model millimetres per world metre");
    fabricate_cmd->add_option("--base", fab.base_thickness, "Base thickness, mm");
    fabricate_cmd->add_option("--shell", fab.shell_thickness, "Shell thickness, mm; 0 for solid");
    fabricate_cmd->add_option("--pillar-pitch", fab.pillar_pitch, "mm; 0 disables pillars");
    fabricate_cmd->add_option("--pillar-radius", fab.pillar_radius, "mm");
    fabricate_cmd->add_option("--out", out_dir)->required();

    auto* fixtures = app.add_subcommand("make-fixtures", "Write the synthetic fixture corpus");
    fixtures->add_option("--out", out_dir)->required();

    auto* events = app.add_subcommand("events", "Filter a landslide event CSV by date range");
    std::string events_path, from, to;
    events->add_option("--file", events_path)->required();
    events->add_option("--from", from, "YYYY-MM-DD")->required();
    events->add_option("--to", to, "YYYY-MM-DD")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (serve->parsed()) {
            server::ServerOptions options;
            options.host = host;
            if (port < 0) {
                const std::string p = env_or("LANDSAR_PORT", "8080");
                try {
                    port = std::stoi(p);
                } catch (const std::exception&) {
                    throw ConfigError(fmt::format("LANDSAR_PORT '{}' is not a port number", p));
                }
            }
            if (port < 0 || port > 65535) throw ConfigError(fmt::format("port {} out of range", port));
            options.port = static_cast<unsigned short>(port);
            if (speed < 0) throw ConfigError("--speed must be >= 0");
            options.speed = speed;
            if (!serve_dir.empty()) {
                if (!fs::is_directory(serve_dir))
                    throw ConfigError(fmt::format("scenario directory '{}' does not exist", serve_dir));
                auto cat = ScenarioCatalogue::from_directory(serve_dir);
                for (const auto& err : cat.errors()) std::cerr << "skipped scenario " << err << '\n';
                options.catalogue = std::make_shared<ScenarioCatalogue>(std::move(cat));
            }
            if (!serve_scenario.empty()) {
                options.default_scenario = load_scenario_or_throw(serve_scenario);
                if (!options.catalogue) {
                    auto cat = ScenarioCatalogue::from_directory(fs::path(serve_scenario).parent_path().empty()
                                                                     ? fs::path(".")
                                                                     : fs::path(serve_scenario).parent_path());
                    cat.add(options.default_scenario);
                    options.catalogue = std::make_shared<ScenarioCatalogue>(std::move(cat));
                }
            } else if (options.catalogue && !options.catalogue->ids().empty()) {
                options.default_scenario = options.catalogue->get(options.catalogue->ids().front());
            } else {
                throw ConfigError("serve needs --scenario or a scenario directory");
            }
            return server::serve(options);
        }

        if (run->parsed() || replay_cmd->parsed() || export_layers->parsed()) {
            Scenario scenario = load_scenario_or_throw(scenario_path);
            if (climate <= 0) throw ConfigError("--climate must be positive");
            if (climate != 1.0) scenario = scale_scenario(scenario, climate);
            const auto log = load_log(commands_path);
            const auto session = replay(scenario, log, resolver_for(scenario_path, scenario_dir), until);
            const json summary = session_summary(*session);

            if (replay_cmd->parsed()) {
                std::cout << summary.dump(2) << '\n';
                if (!expect_hash.empty() && expect_hash != summary["hash"].get<std::string>()) {
                    std::cerr << fmt::format("hash mismatch: expected {}, got {}\n", expect_hash,
                                             summary["hash"].get<std::string>());
                    return kExitOther;
                }
                return kExitOk;
            }
            fs::create_directories(out_dir);
            const fs::path layers_dir = run->parsed() ? fs::path(out_dir) / "layers" : fs::path(out_dir);
            for (const auto& layer : analysis_layers(*session)) export_layer(layers_dir, layer);
            if (run->parsed()) {
                write_command_log(fs::path(out_dir) / "commands.jsonl", session->log());
                write_json(fs::path(out_dir) / "summary.json", summary);
            }
            std::cout << summary.dump(2) << '\n';
            return kExitOk;
        }

        if (compare->parsed()) {
            const Scenario scenario = load_scenario_or_throw(scenario_path);
            const auto log = load_log(commands_path);
            const RunoutComparison r = runout_compare(scenario, log, resolver_for(scenario_path, scenario_dir));
            const json result = {{"kind", "runout_compare"},
                                 {"area_with", r.area_with},
                                 {"area_without", r.area_without},
                                 {"area_delta", r.area_delta},
                                 {"hash_with", hex(r.hash_with)},
                                 {"hash_without", hex(r.hash_without)},
                                 {"commands", log.size()}};
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                write_json(fs::path(out_dir) / "compare.json", result);
                write_esri_ascii(fs::path(out_dir) / "footprint_with.asc", r.footprint_with);
                write_esri_ascii(fs::path(out_dir) / "footprint_without.asc", r.footprint_without);
            }
            std::cout << result.dump(2) << '\n';
            return kExitOk;
        }

        if (fabricate_cmd->parsed()) {
            TerrainGrid grid = [&] {
                if (!dem_path.empty()) {
                    if (!fs::exists(dem_path)) throw ConfigError(fmt::format("terrain '{}' does not exist", dem_path));
                    try {
                        return load_dem(dem_path);
                    } catch (const std::exception& e) {
                        throw ScenarioError(fmt::format("{}: {}", dem_path, e.what()));
                    }
                }
                if (scenario_path.empty()) throw ConfigError("fabricate needs --dem or --scenario");
                return *load_scenario_or_throw(scenario_path).terrain;
            }();
            try {
                fab.validate();
            } catch (const std::exception& e) {
                throw ConfigError(e.what());
            }
            const auto tiles = fabricate(grid, fab);
            fs::create_directories(out_dir);
            json report = {{"z_scale", fab.z_scale},        {"xy_scale", fab.xy_scale},
                           {"base_thickness", fab.base_thickness}, {"shell_thickness", fab.shell_thickness},
                           {"rows", fab.tile_rows},          {"cols", fab.tile_cols},
                           {"tiles", json::array()}};
            bool all_watertight = true;
            for (std::size_t k = 0; k < tiles.size(); ++k) {
                const int r = static_cast<int>(k) / fab.tile_cols, c = static_cast<int>(k) % fab.tile_cols;
                const fs::path file = fs::path(out_dir) / fmt::format("tile_r{}_c{}.stl", r, c);
                export_stl(tiles[k], file);
                const MeshCheck check = check_mesh(tiles[k]);
                all_watertight = all_watertight && check.watertight();
                report["tiles"].push_back({{"file", file.filename().string()},
                                           {"row", r},
                                           {"col", c},
                                           {"triangles", tiles[k].triangles.size()},
                                           {"bytes", fs::file_size(file)},
                                           {"pillars", tiles[k].pillars},
                                           {"volume_mm3", check.signed_volume},
                                           {"watertight", check.watertight()}});
            }
            report["watertight"] = all_watertight;
            write_json(fs::path(out_dir) / "report.json", report);
            std::cout << report.dump(2) << '\n';
            return all_watertight ? kExitOk : kExitOther;
        }

        if (fixtures->parsed()) {
            write_fixtures(out_dir);
            std::cout << fmt::format("fixtures written to {}\n", out_dir);
            return kExitOk;
        }

        if (events->parsed()) {
            if (!fs::exists(events_path)) throw ConfigError(fmt::format("event file '{}' does not exist", events_path));
            std::chrono::year_month_day first, last;
            try {
                first = parse_iso_date(from);
                last = parse_iso_date(to);
            } catch (const std::exception& e) {
                throw ConfigError(e.what());
            }
            save_events(std::cout, filter_events(load_events(fs::path(events_path)), first, last));
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ScenarioError& e) {
        std::cerr << "scenario error: " << e.what() << '\n';
        return kExitScenario;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitOther;
    }
    return kExitOther;
}
