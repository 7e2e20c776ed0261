#include "pdscan/control.hpp"

#include "http_util.hpp"
#include "pdscan/errors.hpp"

#include <thread>

namespace pdscan::monitor {

struct ControlServer::Impl {
    Monitor& monitor;
    std::string host;
    int port;
    std::string token;
    httplib::Server server;
    std::thread thread;
};

ControlServer::ControlServer(Monitor& monitor, std::string host, int port, std::string token)
    : impl_(new Impl{monitor, std::move(host), port, std::move(token), {}, {}}) {
    auto& srv = impl_->server;
    auto& mon = impl_->monitor;
    detail::install_common(srv, impl_->token);

    srv.Get("/health", [](const httplib::Request&, httplib::Response& res) {
        detail::send_json(res, 200, {{"ok", true}});
    });
    srv.Get("/plan", [&mon](const httplib::Request&, httplib::Response& res) {
        detail::send_json(res, 200, mon.status());
    });
    srv.Post("/plan", [&mon](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const std::exception& e) {
            return detail::send_error(res, 400, "bad_json", e.what());
        }
        try {
            const auto next = mon.patch_plan(body);
            detail::send_json(res, 200, {{"pending", sweep::plan_to_json(next)}, {"applies", "next_sweep"}});
        } catch (const ConfigError& e) {
            detail::send_error(res, 400, "invalid_plan", e.what());
        }
    });
    srv.Post("/stop", [&mon](const httplib::Request&, httplib::Response& res) {
        mon.stop();
        detail::send_json(res, 200, {{"requested", "stop"}});
    });
    srv.Post("/start", [&mon](const httplib::Request&, httplib::Response& res) {
        mon.start();
        detail::send_json(res, 200, {{"requested", "start"}});
    });
}

ControlServer::~ControlServer() { stop(); }

void ControlServer::start() { impl_->port = detail::bind_and_serve(impl_->server, impl_->host, impl_->port, impl_->thread); }

void ControlServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

int ControlServer::port() const noexcept { return impl_->port; }

}  // namespace pdscan::monitor
