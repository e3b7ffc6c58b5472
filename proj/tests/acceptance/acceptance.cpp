// Acceptance suite: one PASS/FAIL line per primary criterion.

#include "landsar/physicalize.hpp"
#include "landsar/protocol.hpp"
#include "landsar/risk.hpp"
#include "landsar/scenario.hpp"
#include "landsar/session.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace landsar;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = LANDSAR_FIXTURE_DIR;
const fs::path kCli = LANDSAR_CLI_PATH;

// Pinned tolerances.
constexpr double kFormulaRelTol = 1e-9;
constexpr double kMassRelTol = 1e-9;
constexpr double kMomentumRelTol = 1e-4;
constexpr double kPenetrationFactor = 0.05;  // of the grid spacing
constexpr double kStepsPerSecondTarget = 30.0;
constexpr double kStepsPerSecondFloor = 20.0;
constexpr int kMaxBisectionRuns = 8;

struct Outcome {
    enum class Kind { Pass, Fail, Warn } kind;
    std::string detail;
};

Outcome pass(std::string d) { return {Outcome::Kind::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::Kind::Fail, std::move(d)}; }

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(std::abs(b), 1e-300); }

// ---------------------------------------------------------------------------

Outcome formulas() {
    const auto t0 = Clock::now();
    std::vector<std::string> bad;
    auto expect = [&](const char* what, double got, double want) {
        if (!rel_close(got, want, kFormulaRelTol)) bad.push_back(fmt::format("{} = {} (want {})", what, got, want));
    };
    expect("alpha default", RiskParams{}.alpha, 2.5);
    expect("F(2.5, 2000, 5, 2, 10)", impact_force(2.5, 2000, 5, 2, 10), 2.5e6);
    expect("F(2.5, 2000, 4, 1, 5)", impact_force(2.5, 2000, 4, 1, 5), 4.0e5);
    expect("F scales with v^2", impact_force(2.5, 2000, 10, 2, 10), 4 * 2.5e6);
    expect("v_i(10, 0.8, 30deg)", landing_velocity(10, 0.8, std::numbers::pi / 6), 8.0 * std::sqrt(3.0) / 2);
    expect("v_i(7, 1, 0)", landing_velocity(7, 1, 0), 7.0);
    expect("V(0.3, 0.7, 0.5, 0.5)", vulnerability(0.3, 0.7, 0.5, 0.5), 0.5);
    expect("V(0.2, 0.6, 0.25, 0.75)", vulnerability(0.2, 0.6, 0.25, 0.75), 0.05 + 0.45);
    expect("Risk(0.5, 0.4)", risk(0.5, 0.4), 0.2);
    const double t = seconds_since(t0);
    if (t >= 1.0) bad.push_back(fmt::format("took {:.3f} s", t));
    if (!bad.empty()) return fail(bad.front());
    return pass(fmt::format("9 oracles to {:g} rel, {:.4f} s", kFormulaRelTol, t));
}

// ---------------------------------------------------------------------------

Outcome conservation() {
    const auto t0 = Clock::now();
    const Scenario sc = load_scenario(kFixtures / "v_channel.json");

    SimulationState s = make_initial_state(sc);
    const double m0 = s.total_fluid_mass();
    const double tol = kPenetrationFactor * s.grid.spacing();
    double worst_mass = 0.0, worst_gap = std::numeric_limits<double>::infinity();
    for (int n = 1; n <= 10000; ++n) {
        step(s);
        if (n % 25 == 0) {
            worst_mass = std::max(worst_mass, std::abs(s.grid.total_mass() - m0) / m0);
            worst_gap = std::min(worst_gap, min_collider_distance(s));
        }
    }
    worst_mass = std::max(worst_mass, std::abs(s.total_fluid_mass() - m0) / m0);

    Scenario free = sc;
    free.engine.gravity = Eigen::Vector3d::Zero();
    free.footprints.clear();
    SimulationState g = make_initial_state(free);
    set_terrain_collision(g, false);
    for (auto& p : g.particles) p.v = {0.15, -0.2, 0.05};
    const Eigen::Vector3d p0 = g.total_momentum();
    for (int n = 0; n < 10000; ++n) step(g);
    const double drift = (g.total_momentum() - p0).norm() / p0.norm();

    const double t = seconds_since(t0);
    const std::string detail =
        fmt::format("10000 steps, {} particles: mass drift {:.2e} (<= {:g}), momentum drift {:.2e} (<= {:g}), "
                    "min collider distance {:.4f} m (>= -{:.4f}), {:.1f} s",
                    s.particles.size(), worst_mass, kMassRelTol, drift, kMomentumRelTol, worst_gap, tol, t);
    const bool ok = worst_mass <= kMassRelTol && drift <= kMomentumRelTol && worst_gap >= -tol && t < 120.0;
    return ok ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------------------

struct VolumeRun {
    double footprint = 0.0;
    double downstream = 0.0;
};

VolumeRun run_with_barrier(double volume, double height) {
    Scenario sc = VChannel::scenario(volume);
    const Barrier b = VChannel::barrier(height);
    sc.barriers.push_back(b);
    auto session = replay(sc, start_only_log());
    const Raster mask = footprint(session->max_depth(), sc.risk.h_min);
    return {footprint_area(mask), downstream_area(mask, b)};
}

Outcome behavioural() {
    const auto t0 = Clock::now();
    std::vector<std::string> notes;
    bool ok = true;

    // (b) overflow threshold by bisection on the release volume.
    double lo = 20.0, hi = 240.0;
    int runs = 0;
    const bool lo_contained = run_with_barrier(lo, 9.0).downstream == 0.0;
    const bool hi_overflows = run_with_barrier(hi, 9.0).downstream > 0.0;
    runs = 2;
    if (!lo_contained || !hi_overflows) {
        ok = false;
        notes.push_back(fmt::format("bracket failed: {} m3 contained={}, {} m3 overflows={}", lo, lo_contained, hi,
                                    hi_overflows));
    } else {
        while (runs < kMaxBisectionRuns) {
            const double mid = 0.5 * (lo + hi);
            (run_with_barrier(mid, 9.0).downstream > 0.0 ? hi : lo) = mid;
            ++runs;
        }
        notes.push_back(fmt::format("(b) overflow threshold in ({:.1f}, {:.1f}] m3 after {} runs", lo, hi, runs));
    }

    // (a) adequate barrier below the threshold reduces the footprint.
    Scenario sa = VChannel::scenario(lo);
    const std::vector<SteeringCommand> log = {{1, 0, 0, cmd::PlaceBarrier{VChannel::barrier(9.0)}},
                                              {2, 0, 0, cmd::Start{}}};
    const RunoutComparison cmp = runout_compare(sa, log);
    if (!(cmp.area_delta > 0)) ok = false;
    notes.push_back(fmt::format("(a) {:.1f} m3: area with {:.0f} m2, without {:.0f} m2, delta {:.0f} m2", lo,
                                cmp.area_with, cmp.area_without, cmp.area_delta));

    // (c) boulders behind a barrier taller than twice their diameter.
    Scenario sc = VChannel::scenario(40.0);
    sc.engine.boulders = {12, 0.3, 0.5, 2650.0};
    const double height = 3.0;
    sc.barriers.push_back(VChannel::barrier(height));
    auto session = replay(sc, start_only_log());
    std::size_t kept = 0;
    double max_d = 0.0;
    for (const auto& b : session->state().boulders) {
        max_d = std::max(max_d, 2 * b.radius);
        if (!VChannel::downstream(b.center.y())) ++kept;
    }
    const auto total = session->state().boulders.size();
    if (total == 0 || kept != total || !(height > 2 * max_d)) ok = false;
    notes.push_back(fmt::format("(c) {}/{} boulders retained by a {:.1f} m barrier (max diameter {:.2f} m)", kept,
                                total, height, max_d));

    const double t = seconds_since(t0);
    if (t >= 300.0) ok = false;
    notes.push_back(fmt::format("{:.1f} s", t));
    std::string detail;
    for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
    return ok ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------------------

using Script = std::function<void(Session&)>;

Outcome determinism() {
    const auto base = [] {
        Scenario sc = VChannel::scenario(60.0);
        sc.duration = 4.0;
        return sc;
    };
    auto wall = [](const std::string& id, double y) {
        Barrier b = VChannel::barrier(4.0);
        b.id = id;
        b.center = {VChannel::kAxisX, y, VChannel::height(VChannel::kAxisX, y)};
        return b;
    };
    const std::vector<std::pair<std::string, Script>> scripts = {
        {"place then move twice",
         [&](Session& s) {
             s.apply(cmd::PlaceBarrier{wall("a", 50.0)});
             s.apply(cmd::Start{});
             s.run_until(0.8);
             s.enqueue(cmd::MoveBarrier{"a", {20.0, 45.0, VChannel::height(20, 45)}, 0.2});
             s.run_until(1.6);
             s.enqueue(cmd::MoveBarrier{"a", {21.0, 40.0, VChannel::height(21, 40)}, -0.1});
             s.run_to_end();
         }},
        {"pause, reshape, resume, remove",
         [&](Session& s) {
             s.apply(cmd::Start{});
             s.run_until(0.5);
             s.enqueue(cmd::Pause{});
             s.drain();
             s.apply(cmd::PlaceBarrier{wall("b", 42.0)});
             s.apply(cmd::SetBarrierParams{"b", 6.0, 30.0, 0.15});
             s.apply(cmd::Start{});
             s.run_until(2.0);
             s.enqueue(cmd::RemoveBarrier{"b"});
             s.run_to_end();
         }},
        {"reset mid-run then steer",
         [&](Session& s) {
             s.apply(cmd::PlaceBarrier{wall("c", 50.0)});
             s.apply(cmd::Start{});
             s.run_until(1.0);
             s.apply(cmd::Reset{});
             s.apply(cmd::PlaceBarrier{wall("d", 38.0)});
             s.apply(cmd::Start{});
             s.run_until(0.7);
             s.enqueue(cmd::MoveBarrier{"d", {20.0, 46.0, VChannel::height(20, 46)}, 0.0});
             s.enqueue(cmd::SetBarrierParams{"d", 2.0, std::nullopt, std::nullopt});
             s.run_to_end();
         }},
    };
    std::vector<std::string> notes;
    bool ok = true;
    for (const auto& [name, script] : scripts) {
        Session live(base());
        script(live);
        std::stringstream buf;
        write_command_log(buf, live.log());
        const auto replayed = replay(base(), read_command_log(buf));
        const bool same = replayed->hash() == live.hash();
        ok = ok && same;
        notes.push_back(fmt::format("'{}' {} commands {:016x} {}", name, live.log().size(), live.hash(),
                                    same ? "==" : "!= " + fmt::format("{:016x}", replayed->hash())));
    }
    std::string detail;
    for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
    return ok ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------------------

Scenario benchmark_scenario() {
    Scenario sc;
    sc.id = "bench";
    const double cell = 0.25;
    sc.terrain = std::make_shared<const TerrainGrid>(make_plane(129, 129, cell, 0.0, -0.08));
    sc.engine.dt = 2e-3;
    const double z0 = sc.terrain->min_height() - 2 * cell;
    sc.grid = GridOverride{{0.0, 0.0, z0}, cell, {128, 128, 32}};
    // 100 x 100 columns of 5 particles
    sc.release_region = {{4.0, 14.0}, {16.5, 14.0}, {16.5, 26.5}, {4.0, 26.5}};
    sc.release_volume = 10000 * 0.125 * 0.125 * 0.6;
    sc.duration = 1e6;
    sc.seed = 1;
    return sc;
}

Outcome realtime() {
    const Scenario sc = benchmark_scenario();
    const int warmup = 10, steps = 120;
    const double dt = sc.engine.dt;
    auto rate = [&](const std::function<void()>& run) {
        const auto t0 = Clock::now();
        run();
        return steps / seconds_since(t0);
    };

    SimulationState s = make_initial_state(sc);
    const auto n = s.particles.size();
    const auto dims = s.grid.dims();
    for (int i = 0; i < warmup; ++i) step(s);
    const double raw = rate([&] {
        for (int i = 0; i < steps; ++i) step(s);
    });

    // Publisher overhead with zero subscribers: bare session against a hub
    // whose only connection has left. Both live side by side and advance in
    // interleaved chunks, alternating which goes first.
    Session session(sc);
    session.apply(cmd::Start{});
    session.run_until(warmup * dt);
    SteeringHub hub("bench", sc);
    auto box = std::make_shared<Outbox>();
    const auto id = hub.connect(box);
    hub.handle(id, R"({"v":1,"type":"claim_lock","seq":1})");
    hub.handle(id, R"({"v":1,"type":"start","seq":2})");
    hub.disconnect(id);
    hub.tick(warmup);
    const int chunk = 20, chunks = 2 * steps / chunk;
    double bare_s = 0.0, hub_s = 0.0;
    int done = warmup;
    auto time_bare = [&] {
        const auto t0 = Clock::now();
        session.run_until(static_cast<double>(done + chunk) * dt);
        bare_s += seconds_since(t0);
    };
    auto time_hub = [&] {
        const auto t0 = Clock::now();
        hub.tick(chunk);
        hub_s += seconds_since(t0);
    };
    for (int c = 0; c < chunks; ++c) {
        if (c % 2 == 0) {
            time_bare();
            time_hub();
        } else {
            time_hub();
            time_bare();
        }
        done += chunk;
    }
    const double bare = chunks * chunk / bare_s, hub_rate = chunks * chunk / hub_s;
    const double overhead = 1.0 - hub_rate / bare;

    // One subscriber receiving serialised frames, for the log only.
    Session watched(sc);
    std::size_t bytes = 0;
    watched.set_frame_sink([&](const Frame& f) { bytes += frame_to_json(f).dump().size(); });
    watched.apply(cmd::Start{});
    watched.run_until(warmup * dt);
    const double subscribed = rate([&] { watched.run_until(static_cast<double>(warmup + steps) * dt); });

    const std::string detail = fmt::format(
        "{} particles on a {}x{}x{} grid: solver {:.1f} steps/s (target >= {:g}); session {:.1f}, hub with zero "
        "subscribers {:.1f} steps/s ({:+.1f}% publisher overhead, limit 5%); one subscriber {:.1f} steps/s, {} frame bytes",
        n, dims.x(), dims.y(), dims.z(), raw, kStepsPerSecondTarget, bare, hub_rate, 100 * overhead, subscribed, bytes);
    std::cout << "  throughput: " << detail << '\n';
    if (n < 50000) return fail(detail + "; too few particles");
    if (overhead > 0.05) return fail(detail);
    if (raw >= kStepsPerSecondTarget) return pass(detail);
    if (raw >= kStepsPerSecondFloor) return fail(detail);
    return {Outcome::Kind::Warn, detail + "; below the floor, constrained runner"};
}

// ---------------------------------------------------------------------------

Outcome physicalization() {
    std::vector<std::string> bad;
    const fs::path dir = fs::temp_directory_path() / "landsar_acceptance_stl";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::size_t files = 0;
    FabricationConfig cfg;
    cfg.tile_rows = 2;
    cfg.tile_cols = 2;
    cfg.xy_scale = 0.5;
    cfg.shell_thickness = 1.0;
    for (const auto& [name, grid] : std::vector<std::pair<std::string, TerrainGrid>>{
             {"v_channel", VChannel::terrain()}, {"two_ridge_valley", make_two_ridge_valley()}, {"island", make_island()}}) {
        const auto tiles = fabricate(grid, cfg);
        if (tiles.size() != 4) bad.push_back(fmt::format("{}: {} tiles", name, tiles.size()));
        for (std::size_t i = 0; i < tiles.size(); ++i) {
            if (!check_mesh(tiles[i]).watertight()) bad.push_back(fmt::format("{} tile {} not watertight", name, i));
            const fs::path p = dir / fmt::format("{}_{}.stl", name, i);
            export_stl(tiles[i], p);
            ++files;
            if (fs::file_size(p) != 84 + 50 * tiles[i].triangles.size())
                bad.push_back(fmt::format("{} size {}", p.filename().string(), fs::file_size(p)));
            if (!check_mesh(read_stl(p)).watertight()) bad.push_back(fmt::format("{} re-read not watertight", p.string()));
        }
    }
    // ramp 0..10 m at xy_scale 1: top relief 15 mm over the base
    Raster ramp(GridSpec{11, 3, 1.0, 0, 0});
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 11; ++c) ramp.at(c, r) = static_cast<double>(c);
    FabricationConfig flat_cfg;
    flat_cfg.pillar_pitch = 0;
    const auto ramp_tiles = fabricate(TerrainGrid(ramp), flat_cfg);
    double top = 0.0;
    for (const auto& v : ramp_tiles.front().vertices) top = std::max(top, v.z());
    const double relief = top - flat_cfg.base_thickness;
    if (!rel_close(relief, 15.0, 1e-12)) bad.push_back(fmt::format("ramp relief {} mm, want 15", relief));
    fs::remove_all(dir);
    const std::string detail =
        fmt::format("{} tiles from 3 terrains at 2x2 (0.5 mm/m), all watertight and 84+50n bytes; ramp relief {:.3f} mm for 10 m at z x1.5",
                    files, relief);
    return bad.empty() ? pass(detail) : fail(bad.front());
}

// ---------------------------------------------------------------------------
// Protocol

Outcome fuzz_and_lock() {
    std::vector<std::string> bad;
    Scenario sc = VChannel::scenario(20.0);
    sc.duration = 0.5;
    SteeringHub hub("fuzz", sc);
    auto box = std::make_shared<Outbox>();
    const auto id = hub.connect(box);
    std::mt19937_64 rng(20240601);
    const std::vector<std::string> types = {"ping", "hello", "status", "start", "pause", "reset", "claim_lock",
                                            "release_lock", "place_barrier", "move_barrier", "remove_barrier",
                                            "set_barrier_params", "query_point", "barrier_report", "subscribe",
                                            "get_log", "list_layers", "list_scenarios", "load_scenario", "nope"};
    std::size_t replies = 0;
    for (int i = 0; i < 10000; ++i) {
        std::string text;
        switch (rng() % 5) {
            case 0:
                text.resize(rng() % 64);
                for (auto& c : text) c = static_cast<char>(rng() % 256);
                break;
            case 1: text = json(std::to_string(rng())).dump(); break;
            default: {
                json j = {{"v", rng() % 8 == 0 ? 2 : 1}, {"type", types[rng() % types.size()]}};
                if (rng() % 4) j["seq"] = rng() % 1000;
                if (rng() % 2) j["id"] = fmt::format("b{}", rng() % 3);
                if (rng() % 2) j["x"] = static_cast<double>(rng() % 80) - 10;
                if (rng() % 2) j["y"] = static_cast<double>(rng() % 100) - 10;
                if (rng() % 3 == 0) j["center"] = {static_cast<double>(rng() % 41), static_cast<double>(rng() % 81)};
                if (rng() % 3 == 0)
                    j["barrier"] = {{"id", fmt::format("b{}", rng() % 3)},
                                    {"center", {static_cast<double>(rng() % 41), static_cast<double>(rng() % 81)}},
                                    {"height", static_cast<double>(rng() % 7) - 1}};
                text = j.dump();
            }
        }
        try {
            hub.handle(id, text);
            hub.tick(rng() % 3);
        } catch (const std::exception& e) {
            bad.push_back(fmt::format("message {} threw: {}", i, e.what()));
            break;
        }
        for (const auto& m : box->take_all()) {
            ++replies;
            if (!json::accept(m)) bad.push_back("unparseable reply");
        }
    }

    // three clients and one lock
    SteeringHub h2("lock", sc);
    std::vector<std::shared_ptr<Outbox>> boxes;
    std::vector<SteeringHub::ConnectionId> ids;
    for (int i = 0; i < 3; ++i) {
        boxes.push_back(std::make_shared<Outbox>());
        ids.push_back(h2.connect(boxes.back()));
    }
    auto say = [&](int who, json j) {
        j["v"] = 1;
        h2.handle(ids[static_cast<std::size_t>(who)], j.dump());
        const auto all = boxes[static_cast<std::size_t>(who)]->take_all();
        return all.empty() ? json() : json::parse(all.back());
    };
    auto expect = [&](bool cond, const char* what) {
        if (!cond) bad.push_back(what);
    };
    expect(say(0, {{"type", "claim_lock"}, {"seq", 1}}).value("granted", false), "A claims");
    expect(say(1, {{"type", "claim_lock"}, {"seq", 1}}).value("code", "") == "lock_held", "B refused");
    expect(say(2, {{"type", "start"}, {"seq", 1}}).value("code", "") == "not_steering", "C cannot steer");
    say(0, {{"type", "start"}, {"seq", 2}});
    h2.tick(5);
    expect(h2.phase() == Phase::Running, "A started the run");
    expect(say(0, {{"type", "release_lock"}, {"seq", 3}}).value("granted", true) == false, "A releases");
    expect(say(1, {{"type", "claim_lock"}, {"seq", 2}}).value("granted", false), "B claims after release");
    h2.disconnect(ids[1]);
    expect(!h2.lock_holder(), "disconnect frees the lock");
    expect(say(2, {{"type", "claim_lock"}, {"seq", 2}}).value("granted", false), "C claims after disconnect");
    say(2, {{"type", "pause"}, {"seq", 3}});
    h2.tick(0);
    expect(h2.phase() == Phase::Paused, "C paused");

    const std::string detail = fmt::format("10000 envelopes, {} replies, no crash; 3-client lock script ok", replies);
    return bad.empty() ? pass(detail) : fail(bad.front());
}

// Child process running `landsar serve`.
class Server {
public:
    explicit Server(const std::vector<std::string>& args) {
        int fds[2];
        if (pipe(fds) != 0) throw std::runtime_error("pipe failed");
        pid_ = fork();
        if (pid_ < 0) throw std::runtime_error("fork failed");
        if (pid_ == 0) {
            dup2(fds[1], STDOUT_FILENO);
            close(fds[0]);
            close(fds[1]);
            std::vector<char*> argv;
            std::vector<std::string> copy = args;
            for (auto& a : copy) argv.push_back(a.data());
            argv.push_back(nullptr);
            execv(argv[0], argv.data());
            _exit(127);
        }
        close(fds[1]);
        out_ = fdopen(fds[0], "r");
        char* line = nullptr;
        std::size_t cap = 0;
        while (getline(&line, &cap, out_) > 0) {
            const std::string text(line);
            const auto at = text.find("listening on ");
            if (at != std::string::npos) {
                port_ = static_cast<unsigned short>(std::stoi(text.substr(text.rfind(':') + 1)));
                break;
            }
        }
        free(line);
        if (port_ == 0) throw std::runtime_error("server did not report a port");
    }
    ~Server() {
        kill(pid_, SIGTERM);
        int status = 0;
        waitpid(pid_, &status, 0);
        if (out_) fclose(out_);
    }
    unsigned short port() const { return port_; }

private:
    pid_t pid_ = -1;
    FILE* out_ = nullptr;
    unsigned short port_ = 0;
};

class WsClient {
public:
    WsClient(unsigned short port, const std::string& path) : ws_(ioc_) {
        namespace net = boost::asio;
        net::ip::tcp::resolver resolver(ioc_);
        net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
        ws_.handshake("127.0.0.1", path);
    }
    ~WsClient() {
        boost::system::error_code ec;
        ws_.close(boost::beast::websocket::close_code::normal, ec);
    }
    void send(json j) {
        j["v"] = 1;
        ws_.write(boost::asio::buffer(j.dump()));
    }
    json read() {
        boost::beast::flat_buffer buf;
        ws_.read(buf);
        return json::parse(boost::beast::buffers_to_string(buf.data()));
    }
    // Sends a request and waits for the reply carrying its seq; frames seen meanwhile go to `on_frame`.
    json request(json j, const std::function<void(const json&)>& on_frame = {}) {
        const int seq = next_seq_++;
        j["seq"] = seq;
        send(j);
        for (;;) {
            json m = read();
            if (m.value("type", "") == "frame") {
                if (on_frame) on_frame(m);
                continue;
            }
            if (m.contains("seq") && m["seq"] == seq) return m;
        }
    }
    json wait_for(const std::function<bool(const json&)>& pred) {
        for (;;) {
            json m = read();
            if (pred(m)) return m;
        }
    }

private:
    boost::asio::io_context ioc_;
    boost::beast::websocket::stream<boost::asio::ip::tcp::socket> ws_;
    int next_seq_ = 1;
};

std::pair<int, std::string> run_cli(const std::string& args) {
    const std::string cmd = fmt::format("'{}' {} 2>&1", kCli.string(), args);
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) throw std::runtime_error("popen failed");
    std::string out;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof buf, p)) out.append(buf, n);
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

Outcome cli_matches_server() {
    const auto t0 = Clock::now();
    const fs::path scenario = kFixtures / "v_channel.json";
    Server server({kCli.string(), "serve", "--scenario", scenario.string(), "--port", "0", "--speed", "0"});
    WsClient ws(server.port(), "/session/acceptance");

    std::vector<std::string> bad;
    auto expect = [&](bool cond, std::string what) {
        if (!cond) bad.push_back(std::move(what));
    };
    expect(ws.request({{"type", "claim_lock"}}).value("granted", false), "lock not granted");
    expect(ws.request({{"type", "place_barrier"},
                       {"barrier", {{"id", "b1"}, {"center", {20.0, 50.0}}, {"height", 4.0}, {"width", 40.0}}}})
                   .value("type", "") == "ack",
           "place_barrier not acked");
    expect(ws.request({{"type", "start"}}).value("type", "") == "ack", "start not acked");

    // steer mid-run from what the frames show
    ws.wait_for([](const json& m) { return m.value("type", "") == "frame" && m.value("t", 0.0) >= 2.0; });
    expect(ws.request({{"type", "move_barrier"}, {"id", "b1"}, {"center", {20.0, 42.0}}, {"yaw", 0.1}}).value("type", "") ==
               "ack",
           "move not acked");
    ws.wait_for([](const json& m) { return m.value("type", "") == "frame" && m.value("t", 0.0) >= 5.0; });
    expect(ws.request({{"type", "set_barrier_params"}, {"id", "b1"}, {"height", 9.0}}).value("type", "") == "ack",
           "set_barrier_params not acked");

    json status;
    for (;;) {
        status = ws.request({{"type", "status"}});
        if (status.value("phase", "") == "finished") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    const std::string server_hash = status.at("hash");
    const json log = ws.request({{"type", "get_log"}}).at("commands");
    const json cmp = ws.request({{"type", "run_compare"}});

    const fs::path dir = fs::temp_directory_path() / "landsar_acceptance_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "commands.jsonl");
        for (const auto& c : log) out << c.dump() << '\n';
    }
    const std::string common = fmt::format("--scenario '{}' --commands '{}'", scenario.string(), (dir / "commands.jsonl").string());

    const auto [replay_rc, replay_out] = run_cli(fmt::format("replay {} --expect-hash {}", common, server_hash));
    expect(replay_rc == 0, fmt::format("replay exit {}: {}", replay_rc, replay_out));

    const auto [run_rc, run_out] = run_cli(fmt::format("run {} --out '{}'", common, (dir / "run").string()));
    expect(run_rc == 0, fmt::format("run exit {}: {}", run_rc, run_out));
    std::string run_hash;
    if (run_rc == 0) {
        std::ifstream in(dir / "run" / "summary.json");
        run_hash = json::parse(in).at("hash");
        expect(run_hash == server_hash, fmt::format("run hash {} != server {}", run_hash, server_hash));
    }

    const auto [cmp_rc, cmp_out] = run_cli(fmt::format("compare {}", common));
    expect(cmp_rc == 0, fmt::format("compare exit {}: {}", cmp_rc, cmp_out));
    if (cmp_rc == 0) {
        const json c = json::parse(cmp_out);
        for (const char* k : {"area_with", "area_without", "area_delta", "hash_with", "hash_without"})
            expect(c.at(k) == cmp.at(k), fmt::format("compare {} differs: cli {} server {}", k, c.at(k).dump(), cmp.at(k).dump()));
    }
    fs::remove_all(dir);
    const std::string detail =
        fmt::format("server session of {} commands finished at {}; replay/run/compare agree (area delta {} m2), {:.1f} s",
                    log.size(), server_hash, cmp.value("area_delta", -1.0), seconds_since(t0));
    return bad.empty() ? pass(detail) : fail(bad.front());
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"formula suite", formulas},
        {"conservation suite", conservation},
        {"behavioural contract suite", behavioural},
        {"determinism", determinism},
        {"real-time budget", realtime},
        {"physicalization", physicalization},
        {"protocol fuzz and steering lock", fuzz_and_lock},
        {"protocol CLI equals server", cli_matches_server},
    };
    int failures = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = fail(fmt::format("threw: {}", e.what()));
        }
        const char* tag = o.kind == Outcome::Kind::Pass ? "PASS" : o.kind == Outcome::Kind::Warn ? "WARN" : "FAIL";
        if (o.kind == Outcome::Kind::Fail) ++failures;
        std::cout << fmt::format("{} {}: {}", tag, name, o.detail) << std::endl;
    }
    std::cout << fmt::format("{} of {} criteria passed", criteria.size() - static_cast<std::size_t>(failures),
                             criteria.size())
              << std::endl;
    return failures == 0 ? 0 : 1;
}
