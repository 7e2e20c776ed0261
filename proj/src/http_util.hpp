#pragma once

#include "pdscan/errors.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <string>
#include <thread>

namespace pdscan::detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& reason, const std::string& detail = {}) {
    nlohmann::json body{{"error", reason}};
    if (!detail.empty()) body["detail"] = detail;
    send_json(res, status, body);
}

// Installs permissive CORS headers and the optional bearer-token check (/health stays open).
inline void install_common(httplib::Server& server, std::string token) {
    server.set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    server.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type, X-Content-SHA256");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS");
        if (req.method == "OPTIONS") {
            res.status = 204;
            return httplib::Server::HandlerResponse::Handled;
        }
        if (!token.empty() && req.path != "/health" && req.get_header_value("Authorization") != "Bearer " + token) {
            send_error(res, 401, "unauthorized");
            return httplib::Server::HandlerResponse::Handled;
        }
        return httplib::Server::HandlerResponse::Unhandled;
    });
}

// Binds to host:port (port 0 picks one) and serves on `thread`. Returns the bound port.
inline int bind_and_serve(httplib::Server& server, const std::string& host, int port, std::thread& thread) {
    int bound = port;
    if (port == 0) {
        bound = server.bind_to_any_port(host);
        if (bound < 0) throw IoError("cannot bind", host);
    } else if (!server.bind_to_port(host, port)) {
        throw IoError("cannot bind", host + ":" + std::to_string(port));
    }
    thread = std::thread([&server] { server.listen_after_bind(); });
    server.wait_until_ready();
    return bound;
}

}  // namespace pdscan::detail
