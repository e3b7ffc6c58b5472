#include "landsar/protocol.hpp"

#include "landsar/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>

namespace landsar {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Encoding

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    std::string out;
    out.reserve((size + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < size; i += 3) {
        const std::uint32_t v = p[i] << 16 | p[i + 1] << 8 | p[i + 2];
        for (int k = 3; k >= 0; --k) out.push_back(kAlphabet[(v >> (6 * k)) & 63]);
    }
    if (i < size) {
        const std::uint32_t v = p[i] << 16 | (i + 1 < size ? p[i + 1] << 8 : 0);
        out.push_back(kAlphabet[(v >> 18) & 63]);
        out.push_back(kAlphabet[(v >> 12) & 63]);
        out.push_back(i + 1 < size ? kAlphabet[(v >> 6) & 63] : '=');
        out.push_back('=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::array<int, 256> lookup;
    lookup.fill(-1);
    for (int k = 0; k < 64; ++k) lookup[static_cast<unsigned char>(kAlphabet[k])] = k;
    if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::uint32_t v = 0;
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=' && i + 4 == text.size() && k >= 2) {
                ++pad;
                v <<= 6;
                continue;
            }
            const int d = lookup[static_cast<unsigned char>(c)];
            if (d < 0 || pad > 0) throw std::invalid_argument("invalid base64 character");
            v = v << 6 | static_cast<std::uint32_t>(d);
        }
        out.push_back(static_cast<std::uint8_t>(v >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
    }
    return out;
}

std::string encode_f32le(const std::vector<float>& values) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(values.size() * 4);
    for (float f : values) {
        const auto u = std::bit_cast<std::uint32_t>(f);
        for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * k)));
    }
    return base64_encode(bytes.data(), bytes.size());
}

std::vector<float> decode_f32le(std::string_view text) {
    const auto bytes = base64_decode(text);
    if (bytes.size() % 4 != 0) throw std::invalid_argument("float32 payload length is not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t u = 0;
        for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(bytes[4 * i + k]) << (8 * k);
        out[i] = std::bit_cast<float>(u);
    }
    return out;
}

json frame_to_json(const Frame& f) {
    const Raster& d = *f.depth;
    std::vector<float> depth(d.values.begin(), d.values.end());
    std::vector<float> particles;
    particles.reserve(f.particles.size() * 4);
    for (const auto& p : f.particles) particles.insert(particles.end(), {p.x, p.y, p.z, p.speed});
    return {{"v", kProtocolVersion},
            {"type", "frame"},
            {"epoch", f.epoch},
            {"t", f.t},
            {"step", f.step},
            {"depth",
             {{"ncols", d.spec.n_cols},
              {"nrows", d.spec.n_rows},
              {"cellsize", d.spec.cell_size},
              {"xllcorner", d.spec.origin_x},
              {"yllcorner", d.spec.origin_y},
              {"encoding", "base64-f32le"},
              {"data", encode_f32le(depth)}}},
            {"particles", {{"count", f.particles.size()}, {"layout", "x,y,z,speed"}, {"encoding", "base64-f32le"},
                           {"data", encode_f32le(particles)}}},
            {"stats",
             {{"particle_count", f.stats.particle_count},
              {"boulder_count", f.stats.boulder_count},
              {"max_speed", f.stats.max_speed},
              {"overtopped_volume", f.stats.overtopped_volume}}}};
}

json error_message(std::string_view code, const json& seq, std::string_view message) {
    return {{"v", kProtocolVersion}, {"type", "error"}, {"code", code}, {"seq", seq}, {"message", message}};
}

// ---------------------------------------------------------------------------
// Outbox

void Outbox::set_notify(Notify notify) {
    std::lock_guard lock(mutex_);
    notify_ = std::move(notify);
}

void Outbox::notify() {
    Notify n;
    {
        std::lock_guard lock(mutex_);
        n = notify_;
    }
    if (n) n();
}

void Outbox::push(std::string message) {
    {
        std::lock_guard lock(mutex_);
        control_.push_back(std::move(message));
    }
    notify();
}

void Outbox::push_frame(std::shared_ptr<const std::string> frame) {
    {
        std::lock_guard lock(mutex_);
        if (frame_) ++dropped_;
        frame_ = std::move(frame);
    }
    notify();
}

std::optional<std::string> Outbox::pop() {
    std::lock_guard lock(mutex_);
    if (!control_.empty()) {
        std::string m = std::move(control_.front());
        control_.pop_front();
        return m;
    }
    if (frame_) {
        std::string m = *frame_;
        frame_.reset();
        return m;
    }
    return std::nullopt;
}

bool Outbox::empty() const {
    std::lock_guard lock(mutex_);
    return control_.empty() && !frame_;
}

std::size_t Outbox::dropped_frames() const {
    std::lock_guard lock(mutex_);
    return dropped_;
}

std::vector<std::string> Outbox::take_all() {
    std::vector<std::string> out;
    while (auto m = pop()) out.push_back(std::move(*m));
    return out;
}

// ---------------------------------------------------------------------------
// Catalogue

ScenarioCatalogue ScenarioCatalogue::from_directory(const std::filesystem::path& dir) {
    ScenarioCatalogue c;
    if (!std::filesystem::is_directory(dir))
        throw std::invalid_argument(fmt::format("scenario directory '{}' does not exist", dir.string()));
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        try {
            Scenario s = load_scenario(f);
            c.paths_[s.id] = f;
            c.loaded_.emplace(s.id, std::move(s));
        } catch (const std::exception& e) {
            c.errors_.push_back(fmt::format("{}: {}", f.filename().string(), e.what()));
        }
    }
    return c;
}

void ScenarioCatalogue::add(const std::string& id, const std::filesystem::path& path) {
    Scenario s = load_scenario(path);
    s.id = id;
    paths_[id] = path;
    loaded_.insert_or_assign(id, std::move(s));
}

void ScenarioCatalogue::add(Scenario scenario) {
    const std::string id = scenario.id;
    loaded_.insert_or_assign(id, std::move(scenario));
}

bool ScenarioCatalogue::contains(const std::string& id) const { return loaded_.count(id) > 0; }

Scenario ScenarioCatalogue::get(const std::string& id) const {
    const auto it = loaded_.find(id);
    if (it == loaded_.end()) throw std::invalid_argument(fmt::format("unknown scenario '{}'", id));
    return it->second;
}

std::vector<std::string> ScenarioCatalogue::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, s] : loaded_) out.push_back(id);
    return out;
}

json ScenarioCatalogue::listing() const {
    json out = json::array();
    for (const auto& [id, s] : loaded_) {
        json j = scenario_summary(s);
        const auto p = paths_.find(id);
        if (p != paths_.end()) j["file"] = p->second.filename().string();
        out.push_back(std::move(j));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hub

namespace {

bool is_steering_type(const std::string& type) {
    static const std::array<std::string_view, 8> kTypes = {"load_scenario", "place_barrier", "move_barrier",
                                                           "set_barrier_params", "remove_barrier", "start",
                                                           "pause", "reset"};
    return std::find(kTypes.begin(), kTypes.end(), type) != kTypes.end();
}

std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

// Error texts may quote raw client bytes.
std::string wire(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

}  // namespace

SteeringHub::SteeringHub(std::string id, Scenario scenario, std::shared_ptr<const ScenarioCatalogue> catalogue)
    : SteeringHub(std::move(id), std::move(scenario), std::move(catalogue), Options{}) {}

SteeringHub::SteeringHub(std::string id, Scenario scenario, std::shared_ptr<const ScenarioCatalogue> catalogue,
                         Options options)
    : id_(std::move(id)), catalogue_(std::move(catalogue)), options_(options), initial_scenario_(scenario) {
    Session::ScenarioResolver resolver;
    if (catalogue_) resolver = [cat = catalogue_](const std::string& sid) { return cat->get(sid); };
    session_ = std::make_unique<Session>(std::move(scenario), std::move(resolver));
    session_->set_frame_sink([this](const Frame& f) { publish(f); });
    if (!options_.inline_analysis)
        worker_ = std::thread([this] {
            for (;;) {
                std::function<void()> job;
                {
                    std::unique_lock lock(jobs_mutex_);
                    jobs_cv_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
                    if (jobs_.empty()) return;
                    job = std::move(jobs_.front());
                    jobs_.pop_front();
                    ++jobs_running_;
                }
                job();
                {
                    std::lock_guard lock(jobs_mutex_);
                    --jobs_running_;
                }
                jobs_cv_.notify_all();
            }
        });
}

SteeringHub::~SteeringHub() {
    {
        std::lock_guard lock(jobs_mutex_);
        stopping_ = true;
    }
    jobs_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
}

SteeringHub::ConnectionId SteeringHub::connect(std::shared_ptr<Outbox> outbox) {
    std::lock_guard lock(connections_mutex_);
    const ConnectionId id = next_connection_++;
    connections_[id] = Connection{std::move(outbox)};
    ++subscribers_;
    return id;
}

void SteeringHub::disconnect(ConnectionId connection) {
    std::lock_guard lock(connections_mutex_);
    const auto it = connections_.find(connection);
    if (it == connections_.end()) return;
    if (it->second.frames) --subscribers_;
    connections_.erase(it);
    if (lock_holder_ == connection) lock_holder_.reset();
}

std::optional<SteeringHub::ConnectionId> SteeringHub::lock_holder() const {
    std::lock_guard lock(connections_mutex_);
    return lock_holder_;
}

std::size_t SteeringHub::connection_count() const {
    std::lock_guard lock(connections_mutex_);
    return connections_.size();
}

void SteeringHub::send(ConnectionId connection, const json& message) {
    std::shared_ptr<Outbox> box;
    {
        std::lock_guard lock(connections_mutex_);
        const auto it = connections_.find(connection);
        if (it == connections_.end()) return;
        box = it->second.outbox;
    }
    box->push(wire(message));
}

void SteeringHub::publish(const Frame& frame) {
    if (subscribers_.load() == 0) return;
    const auto text = std::make_shared<const std::string>(frame_to_json(frame).dump());
    std::vector<std::shared_ptr<Outbox>> targets;
    {
        std::lock_guard lock(connections_mutex_);
        for (auto& [id, c] : connections_) {
            if (!c.frames) continue;
            const bool newer = frame.epoch > c.last_epoch || (frame.epoch == c.last_epoch && frame.t > c.last_t);
            if (!newer) continue;
            c.last_epoch = frame.epoch;
            c.last_t = frame.t;
            targets.push_back(c.outbox);
        }
    }
    for (auto& box : targets) box->push_frame(text);
}

void SteeringHub::handle(ConnectionId connection, std::string_view text) {
    json envelope;
    try {
        envelope = json::parse(text);
    } catch (const std::exception& e) {
        send(connection, error_message("bad_json", nullptr, e.what()));
        return;
    }
    try {
        handle_envelope(connection, envelope);
    } catch (const std::exception& e) {
        const json seq = envelope.is_object() && envelope.contains("seq") ? envelope["seq"] : json(nullptr);
        send(connection, error_message("internal", seq, e.what()));
    }
}

void SteeringHub::handle_envelope(ConnectionId connection, const json& envelope) {
    if (!envelope.is_object()) {
        send(connection, error_message("bad_envelope", nullptr, "message must be a JSON object"));
        return;
    }
    json seq = nullptr;
    if (envelope.contains("seq")) {
        seq = envelope["seq"];
        if (!seq.is_number_unsigned() && !seq.is_null()) {
            send(connection, error_message("bad_envelope", nullptr, "seq must be a non-negative integer"));
            return;
        }
    }
    const auto v = envelope.find("v");
    if (v == envelope.end() || !v->is_number_integer() || v->get<long long>() != kProtocolVersion) {
        send(connection, error_message("bad_version", seq, fmt::format("expected protocol version {}", kProtocolVersion)));
        return;
    }
    const auto t = envelope.find("type");
    if (t == envelope.end() || !t->is_string()) {
        send(connection, error_message("bad_envelope", seq, "missing message type"));
        return;
    }
    const std::string type = t->get<std::string>();
    auto reply = [&](json body) {
        body["v"] = kProtocolVersion;
        body["seq"] = seq;
        send(connection, body);
    };

    if (is_steering_type(type)) {
        steer(connection, envelope, seq);
    } else if (type == "hello" || type == "status") {
        json s = status();
        s["type"] = type == "hello" ? "welcome" : "status";
        s["connection"] = connection;
        reply(std::move(s));
    } else if (type == "ping") {
        reply({{"type", "pong"}});
    } else if (type == "claim_lock") {
        bool granted = false;
        {
            std::lock_guard lock(connections_mutex_);
            if (!lock_holder_ || *lock_holder_ == connection) {
                lock_holder_ = connection;
                granted = true;
            }
        }
        if (granted) reply({{"type", "lock"}, {"granted", true}});
        else send(connection, error_message("lock_held", seq, "another connection holds the steering lock"));
    } else if (type == "release_lock") {
        bool released = false;
        {
            std::lock_guard lock(connections_mutex_);
            if (lock_holder_ == connection) {
                lock_holder_.reset();
                released = true;
            }
        }
        if (released) reply({{"type", "lock"}, {"granted", false}});
        else send(connection, error_message("not_steering", seq, "this connection does not hold the steering lock"));
    } else if (type == "subscribe") {
        const bool on = envelope.value("frames", true);
        {
            std::lock_guard lock(connections_mutex_);
            auto& c = connections_.at(connection);
            if (c.frames != on) on ? ++subscribers_ : --subscribers_;
            c.frames = on;
        }
        reply({{"type", "subscribed"}, {"frames", on}});
    } else if (type == "get_log") {
        json lines = json::array();
        for (const auto& c : log()) lines.push_back(command_to_json(c));
        reply({{"type", "log"}, {"commands", std::move(lines)}});
    } else if (type == "list_scenarios") {
        reply({{"type", "scenarios"}, {"scenarios", catalogue_ ? catalogue_->listing() : json::array()}});
    } else if (type == "query_point" || type == "run_compare" || type == "barrier_report" || type == "list_layers") {
        analysis(connection, envelope, seq);
    } else {
        send(connection, error_message("unknown_type", seq, fmt::format("unknown message type '{}'", type)));
    }
}

Eigen::Vector3d SteeringHub::snap_to_ground(const json& center) const {
    if (!center.is_array() || center.size() < 2 || center.size() > 3)
        throw std::invalid_argument("center must be [x, y] or [x, y, z]");
    const double x = center.at(0).get<double>(), y = center.at(1).get<double>();
    if (!std::isfinite(x) || !std::isfinite(y)) throw std::invalid_argument("center must be finite");
    if (center.size() == 3) return {x, y, center.at(2).get<double>()};
    std::lock_guard lock(session_mutex_);
    return {x, y, sample_surface(*session_->scenario().terrain, x, y).height};
}

void SteeringHub::steer(ConnectionId connection, const json& envelope, const json& seq) {
    bool holder = false;
    {
        std::lock_guard lock(connections_mutex_);
        holder = lock_holder_ == connection;
    }
    if (!holder) {
        send(connection, error_message("not_steering", seq, "steering commands need the steering lock"));
        return;
    }

    CommandPayload payload;
    try {
        json body = envelope;
        std::string type = body["type"].get<std::string>();
        if (type == "load_scenario") {
            body["type"] = "set_scenario";
            if (!body.contains("scenario") && body.contains("id")) body["scenario"] = body["id"];
        }
        if (type == "place_barrier" && body.contains("barrier") && body["barrier"].is_object() &&
            body["barrier"].contains("center") && body["barrier"]["center"].is_array() &&
            body["barrier"]["center"].size() == 2) {
            const Eigen::Vector3d c = snap_to_ground(body["barrier"]["center"]);
            body["barrier"]["center"] = {c.x(), c.y(), c.z()};
        }
        if (type == "move_barrier" && body.contains("center")) {
            const Eigen::Vector3d c = snap_to_ground(body["center"]);
            body["center"] = {c.x(), c.y(), c.z()};
        }
        payload = payload_from_json(body);
    } catch (const std::exception& e) {
        send(connection, error_message("bad_payload", seq, e.what()));
        return;
    }

    std::weak_ptr<Outbox> weak;
    {
        std::lock_guard lock(connections_mutex_);
        weak = connections_.at(connection).outbox;
    }
    session_->enqueue(std::move(payload), [weak, seq](const SteeringCommand* applied, std::exception_ptr error) {
        const auto box = weak.lock();
        if (!box) return;
        if (applied) {
            box->push(wire({{"v", kProtocolVersion}, {"type", "ack"}, {"seq", seq}, {"command", command_to_json(*applied)}}));
            return;
        }
        try {
            std::rethrow_exception(error);
        } catch (const PhaseError& e) {
            box->push(wire(error_message("bad_phase", seq, e.what())));
        } catch (const UnknownBarrier& e) {
            box->push(wire(error_message("unknown_barrier", seq, e.what())));
        } catch (const std::invalid_argument& e) {
            box->push(wire(error_message("rejected", seq, e.what())));
        } catch (const std::exception& e) {
            box->push(wire(error_message("internal", seq, e.what())));
        }
    });
}

void SteeringHub::analysis(ConnectionId connection, const json& envelope, const json& seq) {
    const std::string type = envelope["type"].get<std::string>();
    auto respond = [this, connection, seq](json body) {
        body["v"] = kProtocolVersion;
        body["type"] = "analysis";
        body["seq"] = seq;
        send(connection, body);
    };
    try {
        if (type == "query_point") {
            const double x = envelope.at("x").get<double>(), y = envelope.at("y").get<double>();
            std::vector<std::pair<double, double>> series;
            {
                std::lock_guard lock(session_mutex_);
                series = query_point(session_->frames(), x, y);
            }
            json s = json::array();
            for (const auto& [t, h] : series) s.push_back({t, h});
            respond({{"kind", "query_point"}, {"x", x}, {"y", y}, {"series", std::move(s)}});
        } else if (type == "barrier_report") {
            const std::string id = envelope.at("id").get<std::string>();
            BarrierReport r;
            {
                std::lock_guard lock(session_mutex_);
                r = barrier_report(session_->state(), id);
            }
            json body = to_json(r);
            body["kind"] = "barrier_report";
            respond(std::move(body));
        } else if (type == "list_layers") {
            json names = json::array();
            for (const auto& l : layers()) names.push_back(layer_sidecar(l));
            respond({{"kind", "layers"}, {"layers", std::move(names)}});
        } else if (type == "run_compare") {
            Scenario scenario;
            std::vector<SteeringCommand> commands;
            Session::ScenarioResolver resolver;
            if (catalogue_) resolver = [cat = catalogue_](const std::string& sid) { return cat->get(sid); };
            {
                std::lock_guard lock(session_mutex_);
                commands = session_->log();
            }
            // The log replays against the scenario the session started with.
            scenario = initial_scenario_;
            run_job([=, this] {
                try {
                    const RunoutComparison r = runout_compare(scenario, commands, resolver);
                    respond({{"kind", "runout_compare"},
                             {"area_with", r.area_with},
                             {"area_without", r.area_without},
                             {"area_delta", r.area_delta},
                             {"hash_with", hex(r.hash_with)},
                             {"hash_without", hex(r.hash_without)},
                             {"commands", commands.size()}});
                } catch (const std::exception& e) {
                    send(connection, error_message("analysis_failed", seq, e.what()));
                }
            });
        }
    } catch (const std::domain_error& e) {
        send(connection, error_message("out_of_extent", seq, e.what()));
    } catch (const UnknownBarrier& e) {
        send(connection, error_message("unknown_barrier", seq, e.what()));
    } catch (const std::exception& e) {
        send(connection, error_message("bad_payload", seq, e.what()));
    }
}

void SteeringHub::run_job(std::function<void()> job) {
    if (options_.inline_analysis) {
        job();
        return;
    }
    {
        std::lock_guard lock(jobs_mutex_);
        jobs_.push_back(std::move(job));
    }
    jobs_cv_.notify_all();
}

void SteeringHub::wait_idle() {
    std::unique_lock lock(jobs_mutex_);
    jobs_cv_.wait(lock, [&] { return jobs_.empty() && jobs_running_ == 0; });
}

std::size_t SteeringHub::tick(std::size_t max_steps) {
    std::lock_guard lock(session_mutex_);
    session_->drain();
    if (session_->phase() != Phase::Running || max_steps == 0) return 0;
    const std::uint64_t before = session_->state().step;
    const double t_end = static_cast<double>(before + max_steps) * session_->state().params.dt;
    session_->run_until(t_end);
    return static_cast<std::size_t>(session_->state().step - before);
}

void SteeringHub::advance(double seconds) {
    std::lock_guard lock(session_mutex_);
    session_->drain();
    if (session_->phase() == Phase::Running) session_->run_until(session_->state().time + seconds);
}

Phase SteeringHub::phase() const {
    std::lock_guard lock(session_mutex_);
    return session_->phase();
}

double SteeringHub::time() const {
    std::lock_guard lock(session_mutex_);
    return session_->state().time;
}

double SteeringHub::dt() const {
    std::lock_guard lock(session_mutex_);
    return session_->state().params.dt;
}

std::uint64_t SteeringHub::hash() const {
    std::lock_guard lock(session_mutex_);
    return session_->hash();
}

std::vector<SteeringCommand> SteeringHub::log() const {
    std::lock_guard lock(session_mutex_);
    return session_->log();
}

Scenario SteeringHub::scenario() const {
    std::lock_guard lock(session_mutex_);
    return session_->scenario();
}

std::vector<Layer> SteeringHub::layers() const {
    std::lock_guard lock(session_mutex_);
    return analysis_layers(*session_);
}

json SteeringHub::status() const {
    json barriers = json::array();
    std::lock_guard lock(session_mutex_);
    for (const auto& b : session_->state().colliders.barriers()) barriers.push_back(barrier_to_json(b));
    const auto& sc = session_->scenario();
    return {{"session", id_},
            {"protocol", kProtocolVersion},
            {"scenario", sc.id},
            {"phase", phase_name(session_->phase())},
            {"t", session_->state().time},
            {"step", session_->state().step},
            {"dt", sc.engine.dt},
            {"duration", sc.duration},
            {"publish_rate", sc.publish_rate},
            {"epoch", session_->epoch()},
            {"hash", hex(session_->hash())},
            {"particles", session_->state().particles.size()},
            {"barriers", std::move(barriers)},
            {"terrain",
             {{"ncols", sc.terrain->spec().n_cols},
              {"nrows", sc.terrain->spec().n_rows},
              {"cellsize", sc.terrain->spec().cell_size},
              {"xllcorner", sc.terrain->spec().origin_x},
              {"yllcorner", sc.terrain->spec().origin_y}}}};
}

}  // namespace landsar
