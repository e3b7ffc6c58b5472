#include "landsar/errors.hpp"
#include "landsar/risk.hpp"
#include "landsar/scenario.hpp"
#include "landsar/session.hpp"

#include <doctest.h>

#include <numbers>
#include <sstream>

using namespace landsar;

namespace {

Scenario small(double duration = 0.2, double volume = 20.0) {
    Scenario sc = VChannel::scenario(volume);
    sc.duration = duration;
    return sc;
}

Barrier wall(const std::string& id = "w") {
    Barrier b = VChannel::barrier();
    b.id = id;
    return b;
}

enum class Kind { Place, Move, SetParams, Remove, Start, Pause, Reset, SetScenario };

CommandPayload make(Kind k) {
    switch (k) {
        case Kind::Place: return cmd::PlaceBarrier{wall("new")};
        case Kind::Move: return cmd::MoveBarrier{"w", {20.0, 45.0, VChannel::height(20, 45)}, std::numbers::pi / 2};
        case Kind::SetParams: return cmd::SetBarrierParams{"w", 5.0, std::nullopt, 0.1};
        case Kind::Remove: return cmd::RemoveBarrier{"w"};
        case Kind::Start: return cmd::Start{};
        case Kind::Pause: return cmd::Pause{};
        case Kind::Reset: return cmd::Reset{};
        case Kind::SetScenario: return cmd::SetScenario{"tiny"};
    }
    return cmd::Start{};
}

Session::ScenarioResolver resolver() {
    return [](const std::string& id) {
        if (id != "tiny") throw std::invalid_argument("unknown scenario");
        Scenario s = small();
        s.id = "tiny";
        return s;
    };
}

std::unique_ptr<Session> in_phase(Phase phase) {
    auto s = std::make_unique<Session>(small(), resolver());
    s->apply(cmd::PlaceBarrier{wall()});
    if (phase == Phase::Preparing) return s;
    s->apply(cmd::Start{});
    if (phase == Phase::Running) return s;
    if (phase == Phase::Paused) {
        s->run_until(0.02);
        s->apply(cmd::Pause{});
        return s;
    }
    s->run_to_end();
    return s;
}

}  // namespace

TEST_CASE("phase machine: every command in every phase") {
    const std::vector<Phase> phases = {Phase::Preparing, Phase::Running, Phase::Paused, Phase::Finished};
    const std::vector<Kind> kinds = {Kind::Place, Kind::Move,  Kind::SetParams, Kind::Remove,
                                     Kind::Start, Kind::Pause, Kind::Reset,     Kind::SetScenario};
    for (Phase from : phases)
        for (Kind k : kinds) {
            CAPTURE(phase_name(from));
            CAPTURE(static_cast<int>(k));
            auto s = in_phase(from);
            REQUIRE(s->phase() == from);
            bool legal = true;
            Phase to = from;
            switch (k) {
                case Kind::Start:
                    legal = from == Phase::Preparing || from == Phase::Paused;
                    to = Phase::Running;
                    break;
                case Kind::Pause:
                    legal = from == Phase::Running;
                    to = Phase::Paused;
                    break;
                case Kind::Reset: to = Phase::Preparing; break;
                case Kind::SetScenario:
                    legal = from == Phase::Preparing || from == Phase::Finished;
                    to = Phase::Preparing;
                    break;
                default: break;
            }
            const std::size_t log_before = s->log().size();
            if (legal) {
                CHECK_NOTHROW(s->apply(make(k)));
                CHECK(s->phase() == to);
                CHECK(s->log().size() == log_before + 1);
            } else {
                CHECK_THROWS_AS(s->apply(make(k)), PhaseError);
                CHECK(s->phase() == from);
                CHECK(s->log().size() == log_before);
            }
        }
}

TEST_CASE("phase errors name the phase") {
    Session s(small());
    CHECK_THROWS_WITH(s.apply(cmd::Pause{}), doctest::Contains("preparing"));
}

TEST_CASE("the clock finishes the session") {
    Session s(small(0.1));
    s.apply(cmd::Start{});
    s.run_to_end();
    CHECK(s.phase() == Phase::Finished);
    CHECK(s.state().step == s.final_step());
    CHECK(s.state().step == 25);
}

TEST_CASE("barrier commands") {
    Session s(small());
    SUBCASE("unknown ids") {
        CHECK_THROWS_WITH_AS(s.apply(cmd::MoveBarrier{"ghost", {1, 1, 1}, 0.0}), doctest::Contains("unknown barrier"),
                             UnknownBarrier);
        CHECK_THROWS_AS(s.apply(cmd::SetBarrierParams{"ghost", 1.0, {}, {}}), UnknownBarrier);
        CHECK_THROWS_AS(s.apply(cmd::RemoveBarrier{"ghost"}), UnknownBarrier);
        CHECK(s.log().empty());
    }
    SUBCASE("duplicate ids and invalid geometry are rejected") {
        s.apply(cmd::PlaceBarrier{wall()});
        CHECK_THROWS_AS(s.apply(cmd::PlaceBarrier{wall()}), std::invalid_argument);
        Barrier bad = wall("bad");
        bad.width = -1;
        CHECK_THROWS_AS(s.apply(cmd::PlaceBarrier{bad}), std::invalid_argument);
        CHECK(s.log().size() == 1);
    }
    SUBCASE("set params updates only the given fields") {
        s.apply(cmd::PlaceBarrier{wall()});
        s.apply(cmd::SetBarrierParams{"w", 4.0, std::nullopt, std::nullopt});
        const Barrier* b = s.state().colliders.find_barrier("w");
        REQUIRE(b);
        CHECK(b->height == 4.0);
        CHECK(b->width == wall().width);
        s.apply(cmd::RemoveBarrier{"w"});
        CHECK(s.state().colliders.find_barrier("w") == nullptr);
    }
}

TEST_CASE("moving a barrier to its current pose changes nothing") {
    auto a = std::make_unique<Session>(small(0.4));
    auto b = std::make_unique<Session>(small(0.4));
    for (auto* s : {a.get(), b.get()}) {
        s->apply(cmd::PlaceBarrier{wall()});
        s->apply(cmd::Start{});
        s->run_until(0.2);
    }
    const Barrier* w = a->state().colliders.find_barrier("w");
    a->apply(cmd::MoveBarrier{"w", w->center, w->yaw});
    a->run_until(0.2 + a->state().params.dt);
    b->run_until(0.2 + b->state().params.dt);
    CHECK(a->hash() == b->hash());
}

TEST_CASE("moved barriers push particles out of their volume") {
    Session s(small(1.0, 60.0));
    s.apply(cmd::Start{});
    s.run_until(0.4);
    // drop a barrier onto the release area
    Barrier b = wall("drop");
    b.center = {20.0, 69.0, VChannel::height(20.0, 69.0)};
    s.apply(cmd::PlaceBarrier{b});
    CHECK(min_collider_distance(s.state()) >= -s.state().penetration_tol());
    s.run_until(0.6);
    CHECK(min_collider_distance(s.state()) >= -s.state().penetration_tol());
}

TEST_CASE("run_until") {
    Scenario sc = small(5.0, 10.0);
    sc.engine.dt = 1e-3;
    Session s(sc);
    CHECK_THROWS_AS(s.run_until(1.0), PhaseError);
    s.apply(cmd::Start{});
    CHECK(s.run_until(s.state().time) == 0);
    CHECK(s.run_until(1.0) == 1000);
    CHECK(s.state().step == 1000);
    CHECK(s.run_until(1.5) == 500);
}

TEST_CASE("runs with an empty command script are reproducible") {
    Session a(small()), b(small());
    a.apply(cmd::Start{});
    b.apply(cmd::Start{});
    a.run_to_end();
    b.run_to_end();
    CHECK(a.hash() == b.hash());
}

TEST_CASE("reset restores the initial state and bumps the frame epoch") {
    Session s(small(0.4));
    const auto initial = s.hash();
    s.apply(cmd::PlaceBarrier{wall()});
    s.apply(cmd::Start{});
    s.run_until(0.2);
    CHECK(s.hash() != initial);
    const auto epoch = s.epoch();
    s.apply(cmd::Reset{});
    CHECK(s.phase() == Phase::Preparing);
    CHECK(s.hash() == initial);
    CHECK(s.epoch() == epoch + 1);
    REQUIRE(s.frames().size() == 1);
    CHECK(s.frames().front().t == 0.0);
    CHECK(s.frames().front().epoch == epoch + 1);
    CHECK(s.max_depth().max() == doctest::Approx(depth_field(s.state()).max()));
}

TEST_CASE("frames") {
    Scenario sc = small(0.5);
    sc.publish_rate = 20.0;
    Session s(sc);
    CHECK(s.frame_interval() == 13);  // round(1 / (20 * 0.004))
    std::vector<Frame> sunk;
    s.set_frame_sink([&](const Frame& f) { sunk.push_back(f); });
    s.apply(cmd::Start{});
    s.run_to_end();
    REQUIRE(s.frames().size() >= 2);
    for (std::size_t i = 1; i < s.frames().size(); ++i) CHECK(s.frames()[i].t > s.frames()[i - 1].t);
    CHECK(s.frames().back().step == s.final_step());
    CHECK(sunk.size() == s.frames().size() - 1);
    const Frame& f = s.frames().back();
    CHECK(f.depth->spec.n_cols == sc.terrain->spec().n_cols);
    CHECK(f.depth->spec.n_rows == sc.terrain->spec().n_rows);
    CHECK(f.stats.particle_count == s.state().particles.size());
    CHECK(f.particles.size() <= kMaxParticleSamples + s.state().boulders.size());
}

TEST_CASE("paused sessions publish no frames") {
    Session s(small(1.0));
    s.apply(cmd::Start{});
    s.run_until(0.1);
    s.apply(cmd::Pause{});
    const auto n = s.frames().size();
    CHECK_THROWS_AS(s.run_until(0.5), PhaseError);
    CHECK(s.frames().size() == n);
}

TEST_CASE("queued commands apply at the next step boundary") {
    Session s(small(1.0));
    s.apply(cmd::PlaceBarrier{wall()});
    s.apply(cmd::Start{});
    s.run_until(0.1);
    const auto k = s.state().step;
    bool acked = false;
    s.enqueue(cmd::MoveBarrier{"w", {20.0, 50.0, VChannel::height(20, 50)}, std::numbers::pi / 2},
              [&](const SteeringCommand* c, std::exception_ptr e) {
                  REQUIRE(c);
                  CHECK(!e);
                  CHECK(c->step == k);
                  acked = true;
              });
    s.run_until(s.state().time + s.state().params.dt);
    CHECK(acked);
    CHECK(s.state().colliders.find_barrier("w")->center.y() == 50.0);

    bool rejected = false;
    s.enqueue(cmd::Start{}, [&](const SteeringCommand* c, std::exception_ptr e) {
        CHECK(!c);
        CHECK_THROWS_AS(std::rethrow_exception(e), PhaseError);
        rejected = true;
    });
    s.drain();
    CHECK(rejected);

    s.enqueue(cmd::Pause{});
    const auto before = s.state().step;
    s.run_until(0.9);
    CHECK(s.phase() == Phase::Paused);
    CHECK(s.state().step == before);
}

TEST_CASE("command log JSONL") {
    std::vector<SteeringCommand> log = {
        {1, 0.0, 0, cmd::PlaceBarrier{wall()}},
        {2, 0.0, 0, cmd::Start{}},
        {3, 0.2, 50, cmd::MoveBarrier{"w", {20, 44, 3.5}, 1.25}},
        {4, 0.4, 100, cmd::SetBarrierParams{"w", 6.0, std::nullopt, 0.2}},
        {5, 0.6, 150, cmd::Pause{}},
        {6, 0.6, 150, cmd::Reset{}},
        {7, 0.0, 0, cmd::SetScenario{"tiny"}},
        {8, 0.0, 0, cmd::RemoveBarrier{"w"}},
    };
    std::stringstream buf;
    write_command_log(buf, log);
    const auto back = read_command_log(buf);
    REQUIRE(back.size() == log.size());
    for (std::size_t i = 0; i < log.size(); ++i) CHECK(command_to_json(back[i]) == command_to_json(log[i]));

    SUBCASE("bad line is reported with its number") {
        std::istringstream in("{\"seq\":1,\"t\":0,\"type\":\"start\"}\n\n{\"seq\":2,\"t\":0,\"type\":\"fly\"}\n");
        try {
            read_command_log(in);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 3);
        }
    }
    SUBCASE("sequence checks") {
        CHECK_NOTHROW(check_log_sequence(log));
        auto dup = log;
        dup[2].seq = 2;
        CHECK_THROWS_WITH(check_log_sequence(dup), doctest::Contains("duplicated"));
        auto gap = log;
        gap.erase(gap.begin() + 1);
        CHECK_THROWS_WITH(check_log_sequence(gap), doctest::Contains("gap"));
    }
}

TEST_CASE("replay") {
    const Scenario sc = small(0.6, 30.0);
    SUBCASE("empty log equals an untouched session") {
        CHECK(replay(sc, {})->hash() == Session(sc).hash());
    }
    SUBCASE("start-only log equals a plain run") {
        Session plain(sc);
        plain.apply(cmd::Start{});
        plain.run_to_end();
        CHECK(replay(sc, start_only_log())->hash() == plain.hash());
    }
    SUBCASE("recorded interactive run replays hash-equal") {
        Session live(sc, resolver());
        live.apply(cmd::PlaceBarrier{wall()});
        live.apply(cmd::Start{});
        live.run_until(0.1);
        live.enqueue(cmd::MoveBarrier{"w", {20.0, 50.0, VChannel::height(20, 50)}, 1.4});
        live.run_until(0.2);
        live.enqueue(cmd::SetBarrierParams{"w", 3.0, 30.0, std::nullopt});
        live.enqueue(cmd::Pause{});
        live.drain();
        live.apply(cmd::Start{});
        live.run_until(0.3);
        live.apply(cmd::Reset{});
        live.apply(cmd::Start{});
        live.run_until(0.15);
        live.apply(cmd::PlaceBarrier{wall("w2")});
        live.run_until(0.3);
        live.apply(cmd::RemoveBarrier{"w2"});
        live.run_to_end();
        const auto replayed = replay(sc, live.log(), resolver());
        CHECK(replayed->hash() == live.hash());
        CHECK(replayed->epoch() == live.epoch());
        CHECK(command_to_json(replayed->log().back()) == command_to_json(live.log().back()));
    }
    SUBCASE("logs without a step column use the clock time") {
        std::vector<SteeringCommand> log = {{1, 0.0, 0, cmd::PlaceBarrier{wall()}},
                                            {2, 0.0, 0, cmd::Start{}},
                                            {3, 0.2, 0, cmd::RemoveBarrier{"w"}}};
        const auto r = replay(sc, log);
        CHECK(r->log().back().step == 50);
    }
    SUBCASE("malformed logs") {
        std::vector<SteeringCommand> dup = {{1, 0.0, 0, cmd::Start{}}, {1, 0.0, 0, cmd::Pause{}}};
        CHECK_THROWS(replay(sc, dup));
        std::vector<SteeringCommand> gap = {{1, 0.0, 0, cmd::Start{}}, {3, 0.0, 0, cmd::Pause{}}};
        CHECK_THROWS(replay(sc, gap));
        std::vector<SteeringCommand> stalled = {{1, 0.0, 0, cmd::PlaceBarrier{wall()}},
                                                {2, 0.1, 25, cmd::RemoveBarrier{"w"}}};
        CHECK_THROWS(replay(sc, stalled));
    }
}

TEST_CASE("set_scenario swaps the scenario") {
    Session s(small(), resolver());
    s.apply(cmd::SetScenario{"tiny"});
    CHECK(s.scenario().id == "tiny");
    CHECK_THROWS(s.apply(cmd::SetScenario{"nope"}));
    Session no_catalogue(small());
    CHECK_THROWS(no_catalogue.apply(cmd::SetScenario{"tiny"}));
}
