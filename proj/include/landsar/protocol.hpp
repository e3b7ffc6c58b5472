#pragma once

#include "landsar/risk.hpp"
#include "landsar/scenario.hpp"
#include "landsar/session.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace landsar {

inline constexpr int kProtocolVersion = 1;

std::string base64_encode(const void* data, std::size_t size);
std::vector<std::uint8_t> base64_decode(std::string_view text);
/// Little-endian float32 array, base64 encoded.
std::string encode_f32le(const std::vector<float>& values);
std::vector<float> decode_f32le(std::string_view text);

/// `{v, type:"frame", epoch, t, step, depth{...}, particles{...}, stats{...}}`.
nlohmann::json frame_to_json(const Frame& frame);
nlohmann::json error_message(std::string_view code, const nlohmann::json& seq, std::string_view message);

/// Per-connection outbound queue. Control messages are never dropped; frames
/// keep only the newest one not yet sent.
class Outbox {
public:
    using Notify = std::function<void()>;

    void set_notify(Notify notify);
    void push(std::string message);
    void push_frame(std::shared_ptr<const std::string> frame);
    /// Next message to send: control messages first, then the pending frame.
    std::optional<std::string> pop();
    bool empty() const;
    std::size_t dropped_frames() const;
    /// Drains everything currently queued.
    std::vector<std::string> take_all();

private:
    void notify();

    mutable std::mutex mutex_;
    std::deque<std::string> control_;
    std::shared_ptr<const std::string> frame_;
    std::size_t dropped_ = 0;
    Notify notify_;
};

/// Scenario files addressable by id.
class ScenarioCatalogue {
public:
    /// Every `*.json` scenario in `dir`. Files that fail to load are skipped
    /// and reported in `errors()`.
    static ScenarioCatalogue from_directory(const std::filesystem::path& dir);

    void add(const std::string& id, const std::filesystem::path& path);
    void add(Scenario scenario);
    bool contains(const std::string& id) const;
    /// Throws std::invalid_argument for an unknown id.
    Scenario get(const std::string& id) const;
    std::vector<std::string> ids() const;
    nlohmann::json listing() const;
    const std::vector<std::string>& errors() const { return errors_; }

private:
    std::map<std::string, std::filesystem::path> paths_;
    std::map<std::string, Scenario> loaded_;
    std::vector<std::string> errors_;
};

/// One steerable session shared by any number of connections. Steering
/// commands go through the session queue; analyses and queries read the
/// session under a mutex.
class SteeringHub {
public:
    using ConnectionId = std::uint64_t;
    struct Options {
        bool inline_analysis = true;  // false: analyses run on a worker thread
    };

    SteeringHub(std::string id, Scenario scenario, std::shared_ptr<const ScenarioCatalogue> catalogue,
                Options options);
    SteeringHub(std::string id, Scenario scenario, std::shared_ptr<const ScenarioCatalogue> catalogue = nullptr);
    ~SteeringHub();
    SteeringHub(const SteeringHub&) = delete;
    SteeringHub& operator=(const SteeringHub&) = delete;

    const std::string& id() const { return id_; }

    ConnectionId connect(std::shared_ptr<Outbox> outbox);
    /// Releases the steering lock if the connection held it.
    void disconnect(ConnectionId connection);
    /// Parses and answers one text message. Never throws.
    void handle(ConnectionId connection, std::string_view text);

    std::optional<ConnectionId> lock_holder() const;
    std::size_t connection_count() const;

    /// Steering loop body: applies queued commands, then takes up to
    /// `max_steps` steps if running. Returns the number of steps taken.
    std::size_t tick(std::size_t max_steps);
    /// Applies queued commands and runs `seconds` of simulated time.
    void advance(double seconds);
    /// Blocks until every queued analysis has been answered.
    void wait_idle();

    Phase phase() const;
    double time() const;
    double dt() const;
    std::uint64_t hash() const;
    std::vector<SteeringCommand> log() const;
    Scenario scenario() const;
    std::vector<Layer> layers() const;
    nlohmann::json status() const;

private:
    struct Connection {
        std::shared_ptr<Outbox> outbox;
        bool frames = true;
        std::uint64_t last_epoch = 0;
        double last_t = -1.0;
    };

    void send(ConnectionId connection, const nlohmann::json& message);
    void publish(const Frame& frame);
    void handle_envelope(ConnectionId connection, const nlohmann::json& envelope);
    void steer(ConnectionId connection, const nlohmann::json& envelope, const nlohmann::json& seq);
    void analysis(ConnectionId connection, const nlohmann::json& envelope, const nlohmann::json& seq);
    void run_job(std::function<void()> job);
    Eigen::Vector3d snap_to_ground(const nlohmann::json& center) const;

    std::string id_;
    std::shared_ptr<const ScenarioCatalogue> catalogue_;
    Options options_;
    Scenario initial_scenario_;

    mutable std::mutex session_mutex_;
    std::unique_ptr<Session> session_;

    mutable std::mutex connections_mutex_;
    std::map<ConnectionId, Connection> connections_;
    std::optional<ConnectionId> lock_holder_;
    ConnectionId next_connection_ = 1;
    std::atomic<std::size_t> subscribers_{0};

    std::mutex jobs_mutex_;
    std::condition_variable jobs_cv_;
    std::deque<std::function<void()>> jobs_;
    std::size_t jobs_running_ = 0;
    bool stopping_ = false;
    std::thread worker_;
};

}  // namespace landsar
