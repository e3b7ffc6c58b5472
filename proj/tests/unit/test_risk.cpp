#include "landsar/errors.hpp"
#include "landsar/risk.hpp"
#include "landsar/scenario.hpp"
#include "landsar/session.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace landsar;

namespace {

Frame frame_of(const Raster& depth, const Raster& velocity, double t = 0.0) {
    Frame f;
    f.t = t;
    f.depth = std::make_shared<const Raster>(depth);
    f.velocity = std::make_shared<const Raster>(velocity);
    return f;
}

Scenario plane_scenario(double volume) {
    Scenario sc;
    sc.id = "flat";
    sc.terrain = std::make_shared<const TerrainGrid>(Raster(GridSpec{20, 20, 1.0, 0.0, 0.0}, 0.0));
    sc.release_region = {{8, 8}, {12, 8}, {12, 12}, {8, 12}};
    sc.release_volume = volume;
    sc.engine.dt = 2e-3;
    sc.seed = 3;
    sc.duration = 0.1;
    return sc;
}

}  // namespace

TEST_CASE("impact force") {
    CHECK(kRigidConcreteAlpha == 2.5);
    CHECK(RiskParams{}.alpha == 2.5);
    CHECK(impact_force(2.5, 2000, 0.0, 2, 10) == 0.0);
    CHECK(impact_force(2.5, 2000, 5, 2, 10) == doctest::Approx(2.5e6).epsilon(1e-12));
    CHECK_THROWS_AS(impact_force(2.5, 2000, -1, 2, 10), std::domain_error);
    CHECK_THROWS_AS(impact_force(-2.5, 2000, 1, 2, 10), std::domain_error);
    CHECK_THROWS_AS(impact_force(2.5, 2000, 1, 2, -10), std::domain_error);
}

TEST_CASE("impact force monotonicity") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    for (int i = 0; i < 500; ++i) {
        const double a = u(rng), r = u(rng) * 200, v = u(rng), h = u(rng), w = u(rng);
        const double f = impact_force(a, r, v, h, w);
        CHECK(impact_force(a * 1.1, r, v, h, w) > f);
        CHECK(impact_force(a, r * 1.1, v, h, w) > f);
        CHECK(impact_force(a, r, v, h * 1.1, w) > f);
        CHECK(impact_force(a, r, v, h, w * 1.1) > f);
        CHECK(impact_force(a, r, 2 * v, h, w) == 4 * f);
    }
}

TEST_CASE("landing velocity") {
    CHECK(landing_velocity(7.0, 1.0, 0.0) == 7.0);
    CHECK(landing_velocity(7.0, 0.8, std::numbers::pi / 2) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(landing_velocity(10.0, 0.8, std::numbers::pi / 6) == doctest::Approx(0.8 * std::sqrt(3.0) / 2 * 10).epsilon(1e-12));
    CHECK(landing_velocity(10.0, 0.8, std::numbers::pi / 6) == doctest::Approx(6.9282).epsilon(1e-5));
    CHECK_THROWS_AS(landing_velocity(1.0, 0.0, 0.1), std::domain_error);
    CHECK_THROWS_AS(landing_velocity(1.0, 1.2, 0.1), std::domain_error);
    CHECK_THROWS_AS(landing_velocity(-1.0, 0.5, 0.1), std::domain_error);
    CHECK_THROWS_AS(landing_velocity(1.0, 0.5, 2.0), std::domain_error);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double vr = 20 * u(rng), R = std::max(1e-6, u(rng)), th = u(rng) * std::numbers::pi / 2;
        const double vi = landing_velocity(vr, R, th);
        CHECK(vi >= 0.0);
        CHECK(vi <= vr);
    }
}

TEST_CASE("vulnerability") {
    CHECK(vulnerability(0, 0, 0.5, 0.5) == 0.0);
    CHECK(vulnerability(0.37, 0.9, 1.0, 0.0) == 0.37);
    CHECK(vulnerability(0.3, 0.7, 0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS(vulnerability(0.3, 0.7, 0.5, 0.6));
    CHECK_THROWS(vulnerability(0.3, 0.7, -0.5, 1.5));
    CHECK_THROWS(vulnerability(1.3, 0.7, 0.5, 0.5));
}

TEST_CASE("risk") {
    CHECK(risk(0.0, 0.8) == 0.0);
    CHECK(risk(0.8, 0.0) == 0.0);
    CHECK(risk(0.5, 0.4) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK_THROWS(risk(1.5, 0.4));
    CHECK_THROWS(risk(0.5, -0.1));
}

TEST_CASE("colormap tags") {
    CHECK(colormap_tag(Colormap::BlueRed) == "blue_red");
    CHECK(colormap_tag(Colormap::OrangeRed) == "orange_red");
    CHECK(colormap_tag(Colormap::Purple) == "purple");
    CHECK(colormap_tag(Colormap::RedYellowGreen) == "red_yellow_green");
}

TEST_CASE("hazard map") {
    const TerrainGrid flat(Raster(GridSpec{5, 5, 10.0, 0, 0}, 0.0));
    const GridSpec spec = flat.spec();
    RiskParams params;
    SUBCASE("empty history is an error") {
        CHECK_THROWS(hazard_map({}, {}, flat, params, 2000.0));
    }
    SUBCASE("all-dry history gives a zero raster") {
        const auto h = hazard_map({frame_of(Raster(spec, 0.0), Raster(spec, 0.0))}, {}, flat, params, 2000.0);
        CHECK(h.force.max() == 0.0);
        CHECK(h.normalized.max() == 0.0);
        CHECK(h.samples.empty());
        CHECK(h.colormap == Colormap::RedYellowGreen);
    }
    SUBCASE("single wet cell: F from the recorded maxima") {
        Raster d(spec, 0.0), v(spec, 0.0), d2(spec, 0.0), v2(spec, 0.0);
        d.at(2, 2) = 2.0;
        v.at(2, 2) = 3.0;
        d2.at(2, 2) = 1.0;
        v2.at(2, 2) = 5.0;
        const auto h = hazard_map({frame_of(d, v, 0.0), frame_of(d2, v2, 0.1)}, {}, flat, params, 2000.0);
        REQUIRE(h.samples.size() == 1);
        CHECK(h.samples[0].v == 5.0);
        CHECK(h.samples[0].h0 == 2.0);
        CHECK(h.samples[0].w == 10.0);
        CHECK(h.force.at(2, 2) == doctest::Approx(2.5e6).epsilon(1e-12));
        CHECK(h.normalized.at(2, 2) == 1.0);
        CHECK(h.samples[0].F == impact_force(2.5, 2000.0, 5.0, 2.0, 10.0));
    }
    SUBCASE("downstream of a barrier velocities are attenuated") {
        Raster slope(spec, 0.0);
        for (std::size_t row = 0; row < 5; ++row)
            for (std::size_t col = 0; col < 5; ++col) slope.at(col, row) = 3.0 * spec.y_of(row) / 10.0;
        const TerrainGrid hill(slope);
        Raster d(spec, 1.0), v(spec, 4.0);
        Barrier b;
        b.id = "b";
        b.center = {20.0, 20.0, 0.0};
        b.yaw = std::numbers::pi / 2;  // face looks north, flow comes from +y
        b.width = 50.0;
        const auto plain = hazard_map({frame_of(d, v)}, {}, hill, params, 2000.0);
        const auto with = hazard_map({frame_of(d, v)}, {b}, hill, params, 2000.0);
        for (std::size_t row = 0; row < 5; ++row)
            for (std::size_t col = 0; col < 5; ++col) {
                const bool down = downstream_of(b, spec.x_of(col), spec.y_of(row));
                CHECK(down == (row < 2));
                CHECK(with.force.at(col, row) <= plain.force.at(col, row));
                if (down) CHECK(with.force.at(col, row) < plain.force.at(col, row));
                else CHECK(with.force.at(col, row) == plain.force.at(col, row));
            }
        RiskParams everywhere = params;
        everywhere.attenuate_downstream_only = false;
        const auto all = hazard_map({frame_of(d, v)}, {}, hill, everywhere, 2000.0);
        CHECK(all.force.max() < plain.force.max());
    }
    SUBCASE("normalisation by a cap") {
        Raster d(spec, 0.0), v(spec, 0.0);
        d.at(1, 1) = 1.0;
        v.at(1, 1) = 1.0;
        params.hazard_cap = 1e5;
        const auto h = hazard_map({frame_of(d, v)}, {}, flat, params, 2000.0);
        CHECK(h.scale == 1e5);
        CHECK(h.normalized.at(1, 1) == doctest::Approx(0.5));
    }
}

TEST_CASE("risk raster is the elementwise product") {
    const GridSpec spec{7, 6, 1.0, 0, 0};
    Raster h(spec), b(spec), p(spec);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < spec.size(); ++i) {
        h.values[i] = u(rng);
        b.values[i] = u(rng);
        p.values[i] = u(rng);
    }
    const Raster vr = vulnerability_raster(b, p, 0.3, 0.7);
    const Raster r = risk_raster(h, vr);
    for (std::size_t i = 0; i < spec.size(); ++i) {
        CHECK(vr.values[i] == 0.3 * b.values[i] + 0.7 * p.values[i]);
        CHECK(r.values[i] == h.values[i] * vr.values[i]);
    }
    CHECK_THROWS(risk_raster(h, Raster(GridSpec{3, 3, 1.0, 0, 0})));
}

TEST_CASE("footprints") {
    const GridSpec spec{4, 4, 2.0, 0, 0};
    Raster d(spec, 0.0);
    d.at(0, 0) = 0.05;
    d.at(1, 0) = 0.049;
    d.at(3, 3) = 1.0;
    const Raster m = footprint(d, 0.05);
    CHECK(m.at(0, 0) == 1.0);
    CHECK(m.at(1, 0) == 0.0);
    for (double v : m.values) CHECK((v == 0.0 || v == 1.0));
    CHECK(footprint_area(m) == 8.0);
}

TEST_CASE("strip_barrier_commands renumbers") {
    std::vector<SteeringCommand> log = {{1, 0, 0, cmd::PlaceBarrier{VChannel::barrier()}},
                                        {2, 0, 0, cmd::Start{}},
                                        {3, 0.1, 25, cmd::MoveBarrier{"b1", {20, 40, 6}, 0.0}},
                                        {4, 0.2, 50, cmd::Pause{}}};
    const auto s = strip_barrier_commands(log);
    REQUIRE(s.size() == 2);
    CHECK(s[0].seq == 1);
    CHECK(s[1].seq == 2);
    CHECK(std::holds_alternative<cmd::Pause>(s[1].payload));
    CHECK_NOTHROW(check_log_sequence(s));
}

TEST_CASE("runout_compare fixed points") {
    SUBCASE("empty log") {
        const Scenario sc = VChannel::scenario(20.0);
        const auto r = runout_compare(sc, {});
        CHECK(r.area_delta == 0.0);
    }
    SUBCASE("log without barriers") {
        Scenario sc = VChannel::scenario(20.0);
        sc.duration = 0.5;
        const auto r = runout_compare(sc, start_only_log());
        CHECK(r.area_delta == 0.0);
        CHECK(r.hash_with == r.hash_without);
        CHECK(r.footprint_with.values == r.footprint_without.values);
    }
    SUBCASE("empty release") {
        Scenario sc = VChannel::scenario(0.0);
        sc.duration = 0.2;
        std::vector<SteeringCommand> log = {{1, 0, 0, cmd::PlaceBarrier{VChannel::barrier()}}, {2, 0, 0, cmd::Start{}}};
        const auto r = runout_compare(sc, log);
        CHECK(r.area_with == 0.0);
        CHECK(r.area_without == 0.0);
    }
}

TEST_CASE("query_point") {
    Session s(plane_scenario(8.0));  // 0.5 m column over 4 x 4 m
    SUBCASE("first sample under the column") {
        s.apply(cmd::Start{});
        s.run_to_end();
        const auto series = query_point(s.frames(), 10.0, 10.0);
        REQUIRE(series.size() == s.frames().size());
        CHECK(series.front().first == 0.0);
        CHECK(series.front().second == doctest::Approx(0.5).epsilon(0.1));
    }
    SUBCASE("permanently dry cell") {
        s.apply(cmd::Start{});
        s.run_to_end();
        for (const auto& [t, h] : query_point(s.frames(), 1.0, 1.0)) CHECK(h == 0.0);
    }
    SUBCASE("outside the extent") {
        CHECK_THROWS_AS(query_point(s.frames(), -1.0, 5.0), std::domain_error);
        CHECK_THROWS_AS(query_point(s.frames(), 5.0, 19.5), std::domain_error);
    }
}

TEST_CASE("barrier report") {
    Scenario sc = plane_scenario(8.0);
    Barrier b;
    b.id = "b";
    b.center = {3.0, 10.0, 0.0};
    b.width = 4.0;
    sc.barriers.push_back(b);
    Session s(sc);
    SUBCASE("untouched barrier") {
        const auto r = barrier_report(s.state(), "b");
        CHECK(r.peak_impact_force == 0.0);
        CHECK(r.peak_flow_rate == 0.0);
        CHECK(r.overtopped_volume == 0.0);
    }
    SUBCASE("unknown id") { CHECK_THROWS_AS(barrier_report(s.state(), "nope"), UnknownBarrier); }
    SUBCASE("peak force from the recorded maxima") {
        BarrierContactLog log;
        log.max_speed = 4.0;
        log.max_depth = 1.0;
        log.max_face_width = 5.0;
        log.peak_flow_rate = 20.0;
        const auto r = barrier_report(log, b, 2000.0);
        CHECK(r.peak_impact_force == doctest::Approx(400000.0).epsilon(1e-12));
        CHECK(r.peak_flow_rate == 20.0);
        const auto j = to_json(r);
        CHECK(j.at("id") == "b");
        CHECK(j.at("peak_impact_force").get<double>() == r.peak_impact_force);
    }
}

TEST_CASE("scripted jet barrier report within 10 percent") {
    EngineParams params;
    params.dt = 2e-3;
    params.mu_t = 0.0;
    auto terrain = std::make_shared<const TerrainGrid>(Raster(GridSpec{24, 24, 1.0, 0, 0}, 0.0));
    SimulationState s = make_state(terrain, {}, params, 1);
    Barrier b;
    b.id = "wall";
    b.center = {8.0, 12.0, 0.0};
    b.width = 5.0;
    b.thickness = 1.0;
    s.add_barrier(b);
    const double sp = 0.5;
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 10; ++j)
            for (int k = 0; k < 2; ++k) {
                FluidParticle p;
                p.x = {8.75 + sp * i, 9.75 + sp * j, 0.25 + sp * k};
                p.v = {-4.0, 0.0, 0.0};
                p.volume = sp * sp * sp;
                p.mass = 2000.0 * p.volume;
                s.particles.push_back(p);
            }
    record_barrier_contact(s, "wall");
    for (int i = 0; i < 5; ++i) step(s);
    const auto r = barrier_report(s, "wall");
    CHECK(r.peak_impact_force == doctest::Approx(400000.0).epsilon(0.1));
}

TEST_CASE("layers and export") {
    Scenario sc = VChannel::scenario(20.0);
    sc.duration = 0.2;
    Session s(sc);
    s.apply(cmd::Start{});
    s.run_to_end();
    const auto layers = analysis_layers(s);
    std::map<std::string, std::string> maps;
    for (const auto& l : layers) maps[l.name] = std::string(colormap_tag(l.colormap));
    CHECK(maps.at("hazard") == "red_yellow_green");
    CHECK(maps.at("vulnerability") == "blue_red");
    CHECK(maps.at("flow_path") == "orange_red");
    CHECK(maps.at("deposits") == "purple");
    CHECK(maps.count("risk") == 1);
    CHECK(maps.count("footprint") == 1);

    const auto dir = std::filesystem::temp_directory_path() / "landsar_layer_test";
    std::filesystem::remove_all(dir);
    const Layer& hazard = layers.front();
    export_layer(dir, hazard);
    const Raster back = read_esri_ascii(dir / "hazard.asc");
    CHECK(back.spec.n_cols == hazard.values.spec.n_cols);
    std::ifstream in(dir / "hazard.json");
    const auto sidecar = nlohmann::json::parse(in);
    CHECK(sidecar.at("layer") == "hazard");
    CHECK(sidecar.at("colormap") == "red_yellow_green");
    CHECK(sidecar.at("min").get<double>() == doctest::Approx(hazard.values.min()));
    CHECK(sidecar.at("max").get<double>() == doctest::Approx(hazard.values.max()));
    std::filesystem::remove_all(dir);
}
