#pragma once

#include "pdscan/monitor.hpp"

#include <memory>
#include <string>

namespace pdscan::monitor {

// HTTP control plane for a running Monitor:
//   GET  /plan    status, active plan, pending plan
//   POST /plan    {threshold_dbm?, span_hz?, step_hz?}, applied at the next sweep
//   POST /stop    stop before the next window
//   POST /start   resume
//   GET  /health
// With a non-empty token every request needs "Authorization: Bearer <token>".
class ControlServer {
public:
    ControlServer(Monitor& monitor, std::string host, int port, std::string token = {});
    ~ControlServer();
    ControlServer(const ControlServer&) = delete;
    ControlServer& operator=(const ControlServer&) = delete;

    // Binds and serves on a background thread. Throws IoError if the bind fails.
    void start();
    void stop();
    int port() const noexcept;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace pdscan::monitor
