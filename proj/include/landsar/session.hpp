#pragma once

#include "landsar/engine.hpp"
#include "landsar/scenario.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace landsar {

enum class Phase { Preparing, Running, Paused, Finished };
std::string_view phase_name(Phase phase);

namespace cmd {
struct PlaceBarrier {
    Barrier barrier;
};
struct MoveBarrier {
    std::string id;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double yaw = 0.0;
};
struct SetBarrierParams {
    std::string id;
    std::optional<double> height, width, face_angle;
};
struct RemoveBarrier {
    std::string id;
};
struct Start {};
struct Pause {};
struct Reset {};
struct SetScenario {
    std::string scenario_id;
};
}  // namespace cmd

using CommandPayload = std::variant<cmd::PlaceBarrier, cmd::MoveBarrier, cmd::SetBarrierParams, cmd::RemoveBarrier,
                                    cmd::Start, cmd::Pause, cmd::Reset, cmd::SetScenario>;

/// Wire/log name of a payload: "place_barrier", "move_barrier", ...
std::string_view command_type(const CommandPayload& payload);

struct SteeringCommand {
    std::uint64_t seq = 0;
    double t = 0.0;          // session clock when the command took effect
    std::uint64_t step = 0;  // step boundary it was applied at
    CommandPayload payload;
};

/// Command log line `{seq, t, step, type, ...payload}`.
nlohmann::json command_to_json(const SteeringCommand& command);
SteeringCommand command_from_json(const nlohmann::json& j);
/// Payload only, from an object carrying `type` and the payload fields.
CommandPayload payload_from_json(const nlohmann::json& j);

void write_command_log(std::ostream& out, const std::vector<SteeringCommand>& log);
void write_command_log(const std::filesystem::path& path, const std::vector<SteeringCommand>& log);
/// One JSON object per line; blank lines are skipped. Errors carry the line number.
std::vector<SteeringCommand> read_command_log(std::istream& in);
std::vector<SteeringCommand> read_command_log(const std::filesystem::path& path);

/// Throws unless sequence numbers are consecutive.
void check_log_sequence(const std::vector<SteeringCommand>& log);

struct ParticleSample {
    float x, y, z, speed;
};

struct FrameStats {
    std::size_t particle_count = 0;
    std::size_t boulder_count = 0;
    double max_speed = 0.0;
    double overtopped_volume = 0.0;
};

/// Immutable snapshot published at the frame rate.
struct Frame {
    std::uint64_t epoch = 0;  // bumped by every reset; t restarts at 0
    double t = 0.0;
    std::uint64_t step = 0;
    std::shared_ptr<const Raster> depth;
    std::shared_ptr<const Raster> velocity;
    std::vector<ParticleSample> particles;  // every k-th particle, then the boulders
    FrameStats stats;
};

inline constexpr std::size_t kMaxParticleSamples = 4096;

/// Steerable simulation: phase machine, command log and frame history.
/// Not thread-safe except for `enqueue`, which any thread may call.
class Session {
public:
    using ScenarioResolver = std::function<Scenario(const std::string& id)>;
    using FrameSink = std::function<void(const Frame&)>;
    /// Completion callback for queued commands: the applied command, or the error.
    using Completion = std::function<void(const SteeringCommand*, std::exception_ptr)>;

    explicit Session(Scenario scenario, ScenarioResolver resolver = {});

    Phase phase() const { return phase_; }
    const Scenario& scenario() const { return scenario_; }
    const SimulationState& state() const { return state_; }
    std::uint64_t hash() const { return state_hash(state_); }
    std::uint64_t epoch() const { return epoch_; }

    /// Applies a command at the current step boundary and logs it.
    /// Throws PhaseError, UnknownBarrier or std::invalid_argument.
    const SteeringCommand& apply(const CommandPayload& payload);

    /// Thread-safe: queues a command for the next step boundary.
    void enqueue(CommandPayload payload, Completion done = {});
    /// Applies every queued command. Returns how many were accepted.
    std::size_t drain();

    /// Steps until the clock reaches `t_end`, the scenario duration, or a
    /// queued Pause takes effect. Returns the number of steps taken.
    std::size_t run_until(double t_end);
    /// Runs to the scenario duration.
    std::size_t run_to_end();
    /// Step index at which the clock reaches `t`.
    std::uint64_t step_for_time(double t) const;
    std::uint64_t final_step() const { return step_for_time(scenario_.duration); }

    const std::vector<SteeringCommand>& log() const { return log_; }
    const std::vector<Frame>& frames() const { return frames_; }
    const Raster& max_depth() const { return max_depth_; }
    const Raster& max_velocity() const { return max_velocity_; }
    std::uint64_t frame_interval() const { return frame_interval_; }

    void set_frame_sink(FrameSink sink) { sink_ = std::move(sink); }

    /// Steps until the given step index, applying nothing. Requires Running.
    void advance_to_step(std::uint64_t step);

private:
    void restore_initial();
    void step_once();
    void update_maxima();
    void publish();
    Frame make_frame() const;
    void project_out_of_barriers();

    Scenario scenario_;
    ScenarioResolver resolver_;
    SimulationState state_;
    Phase phase_ = Phase::Preparing;
    std::vector<SteeringCommand> log_;
    std::vector<Frame> frames_;
    Raster max_depth_, max_velocity_;
    std::uint64_t frame_interval_ = 1;
    std::uint64_t epoch_ = 0;
    FrameSink sink_;

    struct Pending {
        CommandPayload payload;
        Completion done;
    };
    std::mutex queue_mutex_;
    std::deque<Pending> queue_;
};

/// Re-runs `log` against a fresh session. Commands apply at their recorded
/// step; after the last command a running session continues to `t_end`
/// (default: the scenario duration).
std::unique_ptr<Session> replay(const Scenario& scenario, const std::vector<SteeringCommand>& log,
                                Session::ScenarioResolver resolver = {}, std::optional<double> t_end = std::nullopt);

/// Default log when none is given: start at t = 0 and run to the end.
std::vector<SteeringCommand> start_only_log();

}  // namespace landsar
