#include "ws_server.hpp"

#include "landsar/raster.hpp"
#include "landsar/risk.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/version.hpp>
#include <boost/beast/websocket.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace landsar::server {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

void fail(beast::error_code ec, const char* what) {
    if (ec == net::error::operation_aborted || ec == websocket::error::closed || ec == http::error::end_of_stream ||
        ec == net::error::eof || ec == net::error::connection_reset)
        return;
    std::cerr << fmt::format("{}: {}\n", what, ec.message());
}

// ---------------------------------------------------------------------------
// Hubs and their steering threads

/// A hub plus the thread that paces its session against the wall clock.
class HubRunner {
public:
    HubRunner(std::string id, Scenario scenario, std::shared_ptr<const ScenarioCatalogue> catalogue, double speed)
        : hub_(std::move(id), std::move(scenario), std::move(catalogue), SteeringHub::Options{false}), speed_(speed) {
        thread_ = std::thread([this] { loop(); });
    }
    ~HubRunner() {
        stop_ = true;
        if (thread_.joinable()) thread_.join();
    }

    SteeringHub& hub() { return hub_; }

private:
    void loop() {
        using clock = std::chrono::steady_clock;
        double budget = 0.0;
        auto last = clock::now();
        while (!stop_) {
            const auto now = clock::now();
            const double elapsed = std::chrono::duration<double>(now - last).count();
            last = now;
            std::size_t steps = 0;
            if (hub_.phase() == Phase::Running) {
                if (speed_ <= 0.0) {
                    steps = 25;
                } else {
                    const double dt = hub_.dt();
                    budget = std::min(budget + speed_ * elapsed / dt, 0.25 * speed_ / dt);
                    steps = static_cast<std::size_t>(budget);
                }
            } else {
                budget = 0.0;
            }
            const std::size_t taken = hub_.tick(steps);
            budget = std::max(0.0, budget - static_cast<double>(taken));
            if (taken == 0) std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
    }

    SteeringHub hub_;
    double speed_;
    std::atomic<bool> stop_{false};
    std::thread thread_;
};

class Registry {
public:
    explicit Registry(const ServerOptions& options) : options_(options) {}

    std::shared_ptr<HubRunner> get_or_create(const std::string& id) {
        std::lock_guard lock(mutex_);
        auto& slot = hubs_[id];
        if (!slot) slot = std::make_shared<HubRunner>(id, options_.default_scenario, options_.catalogue, options_.speed);
        return slot;
    }

    std::shared_ptr<HubRunner> find(const std::string& id) {
        std::lock_guard lock(mutex_);
        const auto it = hubs_.find(id);
        return it == hubs_.end() ? nullptr : it->second;
    }

    json scenario_listing() const {
        if (options_.catalogue) return options_.catalogue->listing();
        return json::array({scenario_summary(options_.default_scenario)});
    }

    void clear() {
        std::lock_guard lock(mutex_);
        hubs_.clear();
    }

private:
    const ServerOptions& options_;
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<HubRunner>> hubs_;
};

// ---------------------------------------------------------------------------
// WebSocket session

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket&& socket, std::shared_ptr<HubRunner> runner)
        : ws_(std::move(socket)), runner_(std::move(runner)), outbox_(std::make_shared<Outbox>()) {}

    void run(http::request<http::string_body> req) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.set_option(websocket::stream_base::decorator(
            [](websocket::response_type& res) { res.set(http::field::server, "landsar-steer"); }));
        ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
    }

private:
    void on_accept(beast::error_code ec) {
        if (ec) return fail(ec, "accept");
        ws_.text(true);
        std::weak_ptr<WsSession> weak = shared_from_this();
        outbox_->set_notify([weak] {
            if (auto self = weak.lock())
                net::post(self->ws_.get_executor(), [self] { self->do_write(); });
        });
        connection_ = runner_->hub().connect(outbox_);
        do_read();
    }

    void do_read() {
        ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec) {
            close();
            return fail(ec, "read");
        }
        const std::string text = beast::buffers_to_string(buffer_.data());
        buffer_.consume(buffer_.size());
        runner_->hub().handle(connection_, text);
        do_read();
    }

    void do_write() {
        if (writing_ || closed_) return;
        auto next = outbox_->pop();
        if (!next) return;
        writing_ = true;
        pending_ = std::move(*next);
        ws_.async_write(net::buffer(pending_), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t) {
        writing_ = false;
        if (ec) {
            close();
            return fail(ec, "write");
        }
        do_write();
    }

    void close() {
        if (closed_) return;
        closed_ = true;
        outbox_->set_notify(nullptr);
        runner_->hub().disconnect(connection_);
    }

    websocket::stream<beast::tcp_stream> ws_;
    std::shared_ptr<HubRunner> runner_;
    std::shared_ptr<Outbox> outbox_;
    SteeringHub::ConnectionId connection_ = 0;
    beast::flat_buffer buffer_;
    std::string pending_;
    bool writing_ = false;
    bool closed_ = false;
};

// ---------------------------------------------------------------------------
// HTTP

struct Target {
    std::string path;
    std::map<std::string, std::string> query;
};

Target parse_target(std::string_view target) {
    Target t;
    const auto q = target.find('?');
    t.path = std::string(target.substr(0, q));
    if (q == std::string_view::npos) return t;
    std::string_view rest = target.substr(q + 1);
    while (!rest.empty()) {
        const auto amp = rest.find('&');
        const std::string_view pair = rest.substr(0, amp);
        const auto eq = pair.find('=');
        if (eq == std::string_view::npos) t.query[std::string(pair)] = "";
        else t.query[std::string(pair.substr(0, eq))] = std::string(pair.substr(eq + 1));
        if (amp == std::string_view::npos) break;
        rest = rest.substr(amp + 1);
    }
    return t;
}

http::response<http::string_body> respond(const http::request<http::string_body>& req, http::status status,
                                          std::string body, std::string_view content_type = "application/json") {
    http::response<http::string_body> res{status, req.version()};
    res.set(http::field::server, "landsar-steer");
    res.set(http::field::content_type, std::string(content_type));
    res.set(http::field::access_control_allow_origin, "*");
    res.keep_alive(req.keep_alive());
    res.body() = std::move(body);
    res.prepare_payload();
    return res;
}

http::response<http::string_body> json_error(const http::request<http::string_body>& req, http::status status,
                                             std::string_view message) {
    return respond(req, status, json{{"error", message}}.dump());
}

http::response<http::string_body> handle_http(Registry& registry, const http::request<http::string_body>& req) {
    if (req.method() != http::verb::get) return json_error(req, http::status::bad_request, "only GET is supported");
    const Target target = parse_target(std::string_view(req.target().data(), req.target().size()));

    if (target.path == "/scenarios") return respond(req, http::status::ok, registry.scenario_listing().dump());

    if (target.path == "/layers" || target.path.rfind("/layers/", 0) == 0) {
        const auto s = target.query.find("session");
        const std::string session = s == target.query.end() ? "default" : s->second;
        const auto runner = registry.find(session);
        if (!runner) return json_error(req, http::status::not_found, fmt::format("no session '{}'", session));
        const auto layers = runner->hub().layers();
        if (target.path == "/layers" || target.path == "/layers/") {
            json list = json::array();
            for (const auto& l : layers) list.push_back(layer_sidecar(l));
            return respond(req, http::status::ok, list.dump());
        }
        const std::string name = target.path.substr(std::string_view("/layers/").size());
        const auto it = std::find_if(layers.begin(), layers.end(), [&](const Layer& l) { return l.name == name; });
        if (it == layers.end()) return json_error(req, http::status::not_found, fmt::format("no layer '{}'", name));
        std::ostringstream asc;
        write_esri_ascii(asc, it->values);
        const auto f = target.query.find("format");
        if (f != target.query.end() && f->second == "asc") {
            auto res = respond(req, http::status::ok, asc.str(), "text/plain");
            res.set("X-Layer-Sidecar", layer_sidecar(*it).dump());
            return res;
        }
        return respond(req, http::status::ok, json{{"sidecar", layer_sidecar(*it)}, {"asc", asc.str()}}.dump());
    }
    return json_error(req, http::status::not_found, fmt::format("no resource '{}'", target.path));
}

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket&& socket, Registry& registry) : stream_(std::move(socket)), registry_(registry) {}

    void run() {
        net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this()));
    }

private:
    void do_read() {
        req_ = {};
        stream_.expires_after(std::chrono::seconds(30));
        http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec == http::error::end_of_stream) {
            stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
            return;
        }
        if (ec) return fail(ec, "http read");

        if (websocket::is_upgrade(req_)) {
            const Target target = parse_target(std::string_view(req_.target().data(), req_.target().size()));
            const std::string prefix = "/session/";
            if (target.path.rfind(prefix, 0) != 0 || target.path.size() == prefix.size()) {
                res_ = std::make_shared<http::response<http::string_body>>(
                    json_error(req_, http::status::not_found, "websocket endpoint is /session/{id}"));
                return write();
            }
            const auto runner = registry_.get_or_create(target.path.substr(prefix.size()));
            stream_.expires_never();
            std::make_shared<WsSession>(stream_.release_socket(), runner)->run(std::move(req_));
            return;
        }

        try {
            res_ = std::make_shared<http::response<http::string_body>>(handle_http(registry_, req_));
        } catch (const std::exception& e) {
            res_ = std::make_shared<http::response<http::string_body>>(
                json_error(req_, http::status::internal_server_error, e.what()));
        }
        write();
    }

    void write() {
        http::async_write(stream_, *res_, beast::bind_front_handler(&HttpSession::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t) {
        if (ec) return fail(ec, "http write");
        if (!res_->keep_alive()) {
            stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
            return;
        }
        res_.reset();
        do_read();
    }

    beast::tcp_stream stream_;
    Registry& registry_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
    std::shared_ptr<http::response<http::string_body>> res_;
};

class Listener : public std::enable_shared_from_this<Listener> {
public:
    Listener(net::io_context& ioc, tcp::acceptor acceptor, Registry& registry)
        : ioc_(ioc), acceptor_(std::move(acceptor)), registry_(registry) {}

    void run() { do_accept(); }

private:
    void do_accept() {
        acceptor_.async_accept(net::make_strand(ioc_),
                               beast::bind_front_handler(&Listener::on_accept, shared_from_this()));
    }

    void on_accept(beast::error_code ec, tcp::socket socket) {
        if (ec == net::error::operation_aborted) return;
        if (ec) fail(ec, "accept");
        else std::make_shared<HttpSession>(std::move(socket), registry_)->run();
        do_accept();
    }

    net::io_context& ioc_;
    tcp::acceptor acceptor_;
    Registry& registry_;
};

}  // namespace

int serve(const ServerOptions& options) {
    net::io_context ioc{1};
    Registry registry(options);

    const auto address = net::ip::make_address(options.host);
    tcp::acceptor acceptor(ioc);
    const tcp::endpoint endpoint{address, options.port};
    acceptor.open(endpoint.protocol());
    acceptor.set_option(net::socket_base::reuse_address(true));
    acceptor.bind(endpoint);
    acceptor.listen(net::socket_base::max_listen_connections);
    const auto bound = acceptor.local_endpoint();

    std::make_shared<Listener>(ioc, std::move(acceptor), registry)->run();
    // The default session exists from the start so /layers works before any client connects.
    registry.get_or_create("default");

    net::signal_set signals(ioc, SIGINT, SIGTERM);
    signals.async_wait([&](beast::error_code, int) { ioc.stop(); });

    std::cout << fmt::format("listening on {}:{}", bound.address().to_string(), bound.port()) << std::endl;
    ioc.run();
    registry.clear();
    return 0;
}

}  // namespace landsar::server
