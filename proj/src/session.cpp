#include "landsar/session.hpp"

#include "landsar/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace landsar {

using nlohmann::json;

std::string_view phase_name(Phase phase) {
    switch (phase) {
        case Phase::Preparing: return "preparing";
        case Phase::Running: return "running";
        case Phase::Paused: return "paused";
        case Phase::Finished: return "finished";
    }
    return "unknown";
}

namespace {

template <class... Fs>
struct Overloaded : Fs... {
    using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

Eigen::Vector3d vec3_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-component array");
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

std::string_view command_type(const CommandPayload& payload) {
    return std::visit(Overloaded{[](const cmd::PlaceBarrier&) { return "place_barrier"; },
                                 [](const cmd::MoveBarrier&) { return "move_barrier"; },
                                 [](const cmd::SetBarrierParams&) { return "set_barrier_params"; },
                                 [](const cmd::RemoveBarrier&) { return "remove_barrier"; },
                                 [](const cmd::Start&) { return "start"; },
                                 [](const cmd::Pause&) { return "pause"; },
                                 [](const cmd::Reset&) { return "reset"; },
                                 [](const cmd::SetScenario&) { return "set_scenario"; }},
                      payload);
}

json command_to_json(const SteeringCommand& c) {
    json j = {{"seq", c.seq}, {"t", c.t}, {"step", c.step}, {"type", command_type(c.payload)}};
    std::visit(Overloaded{[&](const cmd::PlaceBarrier& p) { j["barrier"] = barrier_to_json(p.barrier); },
                          [&](const cmd::MoveBarrier& p) {
                              j["id"] = p.id;
                              j["center"] = {p.center.x(), p.center.y(), p.center.z()};
                              j["yaw"] = p.yaw;
                          },
                          [&](const cmd::SetBarrierParams& p) {
                              j["id"] = p.id;
                              if (p.height) j["height"] = *p.height;
                              if (p.width) j["width"] = *p.width;
                              if (p.face_angle) j["face_angle"] = *p.face_angle;
                          },
                          [&](const cmd::RemoveBarrier& p) { j["id"] = p.id; },
                          [&](const cmd::SetScenario& p) { j["scenario"] = p.scenario_id; },
                          [](const auto&) {}},
               c.payload);
    return j;
}

CommandPayload payload_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    auto opt = [&](const char* key) -> std::optional<double> {
        if (!j.contains(key) || j[key].is_null()) return std::nullopt;
        return j[key].get<double>();
    };
    if (type == "place_barrier") return cmd::PlaceBarrier{barrier_from_json(j.at("barrier"))};
    if (type == "move_barrier")
        return cmd::MoveBarrier{j.at("id").get<std::string>(), vec3_from_json(j.at("center")), j.at("yaw").get<double>()};
    if (type == "set_barrier_params")
        return cmd::SetBarrierParams{j.at("id").get<std::string>(), opt("height"), opt("width"), opt("face_angle")};
    if (type == "remove_barrier") return cmd::RemoveBarrier{j.at("id").get<std::string>()};
    if (type == "start") return cmd::Start{};
    if (type == "pause") return cmd::Pause{};
    if (type == "reset") return cmd::Reset{};
    if (type == "set_scenario") return cmd::SetScenario{j.at("scenario").get<std::string>()};
    throw std::invalid_argument(fmt::format("unknown command type '{}'", type));
}

SteeringCommand command_from_json(const json& j) {
    SteeringCommand c;
    c.seq = j.at("seq").get<std::uint64_t>();
    c.t = j.at("t").get<double>();
    c.step = j.value("step", std::uint64_t{0});
    c.payload = payload_from_json(j);
    return c;
}

void write_command_log(std::ostream& out, const std::vector<SteeringCommand>& log) {
    for (const auto& c : log) out << command_to_json(c).dump() << '\n';
}

void write_command_log(const std::filesystem::path& path, const std::vector<SteeringCommand>& log) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(fmt::format("cannot write command log '{}'", path.string()));
    write_command_log(out, log);
}

std::vector<SteeringCommand> read_command_log(std::istream& in) {
    std::vector<SteeringCommand> log;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            SteeringCommand c = command_from_json(j);
            if (!j.contains("step")) c.step = 0;
            log.push_back(std::move(c));
        } catch (const std::exception& e) {
            throw ParseError(e.what(), n);
        }
    }
    return log;
}

std::vector<SteeringCommand> read_command_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open command log '{}'", path.string()));
    return read_command_log(in);
}

void check_log_sequence(const std::vector<SteeringCommand>& log) {
    for (std::size_t i = 1; i < log.size(); ++i) {
        if (log[i].seq == log[i - 1].seq)
            throw std::invalid_argument(fmt::format("duplicated sequence number {}", log[i].seq));
        if (log[i].seq != log[i - 1].seq + 1)
            throw std::invalid_argument(
                fmt::format("sequence gap between {} and {}", log[i - 1].seq, log[i].seq));
    }
}

// ---------------------------------------------------------------------------
// Session

Session::Session(Scenario scenario, ScenarioResolver resolver)
    : scenario_(std::move(scenario)), resolver_(std::move(resolver)) {
    restore_initial();
}

void Session::restore_initial() {
    state_ = make_initial_state(scenario_);
    phase_ = Phase::Preparing;
    if (!frames_.empty()) ++epoch_;
    frames_.clear();
    const auto& spec = scenario_.terrain->spec();
    max_depth_ = Raster(spec, 0.0);
    max_velocity_ = Raster(spec, 0.0);
    frame_interval_ = std::max<std::uint64_t>(
        1, static_cast<std::uint64_t>(std::llround(1.0 / (scenario_.publish_rate * scenario_.engine.dt))));
    update_maxima();
    publish();
}

std::uint64_t Session::step_for_time(double t) const {
    if (t <= 0) return 0;
    return static_cast<std::uint64_t>(std::ceil(t / scenario_.engine.dt - 1e-6));
}

const SteeringCommand& Session::apply(const CommandPayload& payload) {
    auto require = [&](std::initializer_list<Phase> allowed) {
        if (std::find(allowed.begin(), allowed.end(), phase_) == allowed.end())
            throw PhaseError(std::string(command_type(payload)), std::string(phase_name(phase_)));
    };
    const std::uint64_t step_before = state_.step;
    const double t_before = state_.time;

    std::visit(Overloaded{
                   [&](const cmd::PlaceBarrier& p) {
                       state_.add_barrier(p.barrier);
                       project_out_of_barriers();
                   },
                   [&](const cmd::MoveBarrier& p) {
                       const Barrier* current = state_.colliders.find_barrier(p.id);
                       if (!current) throw UnknownBarrier(p.id);
                       Barrier b = *current;
                       b.center = p.center;
                       b.yaw = p.yaw;
                       state_.update_barrier(b);
                       project_out_of_barriers();
                   },
                   [&](const cmd::SetBarrierParams& p) {
                       const Barrier* current = state_.colliders.find_barrier(p.id);
                       if (!current) throw UnknownBarrier(p.id);
                       Barrier b = *current;
                       if (p.height) b.height = *p.height;
                       if (p.width) b.width = *p.width;
                       if (p.face_angle) b.face_angle = *p.face_angle;
                       state_.update_barrier(b);
                       project_out_of_barriers();
                   },
                   [&](const cmd::RemoveBarrier& p) {
                       if (!state_.colliders.find_barrier(p.id)) throw UnknownBarrier(p.id);
                       state_.remove_barrier(p.id);
                   },
                   [&](const cmd::Start&) {
                       require({Phase::Preparing, Phase::Paused});
                       phase_ = Phase::Running;
                   },
                   [&](const cmd::Pause&) {
                       require({Phase::Running});
                       phase_ = Phase::Paused;
                   },
                   [&](const cmd::Reset&) { restore_initial(); },
                   [&](const cmd::SetScenario& p) {
                       require({Phase::Preparing, Phase::Finished});
                       if (!resolver_) throw std::invalid_argument("no scenario catalogue is available");
                       scenario_ = resolver_(p.scenario_id);
                       restore_initial();
                   },
               },
               payload);

    SteeringCommand c;
    c.seq = log_.empty() ? 1 : log_.back().seq + 1;
    c.t = t_before;
    c.step = step_before;
    c.payload = payload;
    log_.push_back(std::move(c));
    return log_.back();
}

void Session::project_out_of_barriers() {
    const auto& boxes = state_.colliders.barrier_boxes();
    const double tol = state_.penetration_tol();
    for (auto& p : state_.particles)
        for (const auto& box : boxes) {
            if (!box.near(p.x, 0.0) || box.query(p.x).distance >= 0) continue;
            // nearest face whose exit point is clear of every other collider
            const Eigen::Vector3d local = box.axes.transpose() * (p.x - box.center);
            std::array<std::pair<double, Eigen::Vector3d>, 6> exits;
            for (int k = 0; k < 3; ++k)
                for (int s = 0; s < 2; ++s) {
                    const double sign = s == 0 ? 1.0 : -1.0;
                    exits[2 * k + s] = {box.half[k] - sign * local[k], sign * box.axes.col(k)};
                }
            std::sort(exits.begin(), exits.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
            Eigen::Vector3d target = p.x + (exits[0].first + 1e-9) * exits[0].second;
            Eigen::Vector3d normal = exits[0].second;
            for (const auto& [d, n] : exits) {
                const Eigen::Vector3d cand = p.x + (d + 1e-9) * n;
                if (state_.colliders.min_distance(cand) >= -tol) {
                    target = cand;
                    normal = n;
                    break;
                }
            }
            p.x = target;
            const double vn = p.v.dot(normal);
            if (vn < 0) p.v -= vn * normal;
        }
    for (auto& b : state_.boulders)
        for (const auto& box : boxes) {
            if (!box.near(b.center, b.radius)) continue;
            const auto hit = box.query(b.center);
            const double gap = hit.distance - b.radius;
            if (gap >= -tol) continue;
            b.center -= gap * hit.normal;
            const double vn = b.velocity.dot(hit.normal);
            if (vn < 0) b.velocity -= vn * hit.normal;
        }
    state_.previous_positions.clear();
}

void Session::enqueue(CommandPayload payload, Completion done) {
    std::lock_guard lock(queue_mutex_);
    queue_.push_back({std::move(payload), std::move(done)});
}

std::size_t Session::drain() {
    std::deque<Pending> batch;
    {
        std::lock_guard lock(queue_mutex_);
        batch.swap(queue_);
    }
    std::size_t accepted = 0;
    for (auto& item : batch) {
        try {
            const SteeringCommand& c = apply(item.payload);
            ++accepted;
            if (item.done) item.done(&c, nullptr);
        } catch (...) {
            if (item.done) item.done(nullptr, std::current_exception());
        }
    }
    return accepted;
}

void Session::update_maxima() {
    const Raster depth = depth_field(state_);
    const Raster velocity = velocity_field(state_);
    for (std::size_t i = 0; i < depth.values.size(); ++i) {
        max_depth_.values[i] = std::max(max_depth_.values[i], depth.values[i]);
        max_velocity_.values[i] = std::max(max_velocity_.values[i], velocity.values[i]);
    }
}

Frame Session::make_frame() const {
    Frame f;
    f.epoch = epoch_;
    f.t = state_.time;
    f.step = state_.step;
    f.depth = std::make_shared<const Raster>(depth_field(state_));
    f.velocity = std::make_shared<const Raster>(velocity_field(state_));
    const std::size_t n = state_.particles.size();
    const std::size_t stride = std::max<std::size_t>(1, (n + kMaxParticleSamples - 1) / kMaxParticleSamples);
    for (std::size_t i = 0; i < n; i += stride) {
        const auto& p = state_.particles[i];
        f.particles.push_back({static_cast<float>(p.x.x()), static_cast<float>(p.x.y()), static_cast<float>(p.x.z()),
                               static_cast<float>(p.v.norm())});
    }
    for (const auto& b : state_.boulders)
        f.particles.push_back({static_cast<float>(b.center.x()), static_cast<float>(b.center.y()),
                               static_cast<float>(b.center.z()), static_cast<float>(b.velocity.norm())});
    f.stats.particle_count = n;
    f.stats.boulder_count = state_.boulders.size();
    for (const auto& p : state_.particles) f.stats.max_speed = std::max(f.stats.max_speed, p.v.norm());
    for (const auto& b : state_.boulders) f.stats.max_speed = std::max(f.stats.max_speed, b.velocity.norm());
    for (const auto& [id, log] : state_.contact_logs) f.stats.overtopped_volume += log.overtopped_volume;
    return f;
}

void Session::publish() {
    if (!frames_.empty() && frames_.back().step == state_.step) return;
    frames_.push_back(make_frame());
    if (sink_) sink_(frames_.back());
}

void Session::step_once() {
    step(state_);
    update_maxima();
    if (state_.step % frame_interval_ == 0) publish();
    if (state_.step >= final_step()) {
        phase_ = Phase::Finished;
        publish();
    }
}

void Session::advance_to_step(std::uint64_t target) {
    while (state_.step < target) {
        if (phase_ != Phase::Running)
            throw PhaseError("advance", std::string(phase_name(phase_)));
        step_once();
    }
}

std::size_t Session::run_until(double t_end) {
    const bool was_running = phase_ == Phase::Running;
    drain();
    if (!was_running && phase_ != Phase::Running) throw PhaseError("run_until", std::string(phase_name(phase_)));
    const std::uint64_t target = std::min(step_for_time(t_end), final_step());
    std::size_t taken = 0;
    while (phase_ == Phase::Running && state_.step < target) {
        step_once();
        ++taken;
        drain();
    }
    if (phase_ == Phase::Running && state_.step >= final_step()) phase_ = Phase::Finished;
    return taken;
}

std::size_t Session::run_to_end() { return run_until(scenario_.duration); }

// ---------------------------------------------------------------------------
// Replay

std::unique_ptr<Session> replay(const Scenario& scenario, const std::vector<SteeringCommand>& log,
                                Session::ScenarioResolver resolver, std::optional<double> t_end) {
    check_log_sequence(log);
    auto session = std::make_unique<Session>(scenario, std::move(resolver));
    for (const auto& c : log) {
        // Logs written without a step column place commands by their clock time.
        const std::uint64_t at = c.step == 0 && c.t > 0 ? session->step_for_time(c.t) : c.step;
        if (at < session->state().step)
            throw std::invalid_argument(
                fmt::format("command {} is logged at step {} but the session is already at step {}", c.seq, at,
                            session->state().step));
        if (at > session->state().step) {
            if (session->phase() != Phase::Running)
                throw std::invalid_argument(
                    fmt::format("command {} expects the clock to advance while the session is {}", c.seq,
                                phase_name(session->phase())));
            session->advance_to_step(at);
        }
        session->apply(c.payload);
    }
    if (session->phase() == Phase::Running) {
        if (t_end)
            session->run_until(*t_end);
        else
            session->run_to_end();
    }
    return session;
}

std::vector<SteeringCommand> start_only_log() { return {SteeringCommand{1, 0.0, 0, cmd::Start{}}}; }

}  // namespace landsar
