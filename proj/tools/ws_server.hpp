#pragma once

#include "landsar/protocol.hpp"
#include "landsar/scenario.hpp"

#include <memory>
#include <string>

namespace landsar::server {

struct ServerOptions {
    std::string host = "127.0.0.1";
    unsigned short port = 8080;  // 0 picks a free port
    Scenario default_scenario;
    std::shared_ptr<const ScenarioCatalogue> catalogue;
    double speed = 1.0;  // simulated seconds per wall second; 0 runs unthrottled
};

/// Serves until SIGINT or SIGTERM. Prints "listening on host:port" once bound.
int serve(const ServerOptions& options);

}  // namespace landsar::server
