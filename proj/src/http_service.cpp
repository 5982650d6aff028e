#include "polyrecover/http_service.hpp"

#include <cstdlib>
#include <sstream>

#include <httplib.h>

#include "polyrecover/errors.hpp"
#include "polyrecover/png.hpp"

namespace polyrecover {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

// Maps library exceptions onto HTTP status codes.
template <typename Handler>
void guarded(httplib::Response& res, Handler&& handler) {
    try {
        handler();
    } catch (const NotFoundError& e) {
        send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
        send_error(res, 409, e.what());
    } catch (const ValidationError& e) {
        send_error(res, 400, e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, std::string("malformed JSON: ") + e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, e.what());
    }
}

std::set<std::string> split_sessions(const std::string& value) {
    std::set<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.insert(item);
    }
    return out;
}

}  // namespace

int port_from_env(int fallback) {
    const char* raw = std::getenv(kPortEnvVar);
    if (raw == nullptr || *raw == '\0') return fallback;
    char* end = nullptr;
    const long v = std::strtol(raw, &end, 10);
    if (*end != '\0' || v < 0 || v > 65535) return fallback;
    return static_cast<int>(v);
}

struct TrialHttpServer::Impl {
    httplib::Server server;
};

TrialHttpServer::TrialHttpServer(TrialService& service, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>()) {
    auto& srv = impl_->server;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}, {"Cache-Control", "no-store"}});
    srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });

    srv.Post("/sessions", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const json body = req.body.empty() ? json::object() : json::parse(req.body);
            if (!body.contains("exposure_ms")) throw ValidationError("exposure_ms is required");
            const SessionFilter filter = filter_from_json(body.value("filter", json()));
            const auto seed = body.value("seed", service.options().default_seed);
            send_json(res, 201, session_to_json(service.create_session(body["exposure_ms"].get<int>(), filter, seed)));
        });
    });

    srv.Get(R"(/sessions/([0-9A-Za-z]+)/next)", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, descriptor_to_json(service.next_stimulus(req.matches[1]))); });
    });

    srv.Post(R"(/sessions/([0-9A-Za-z]+)/responses)",
             [&service](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                     TrialResponse r = response_from_json(json::parse(req.body));
                     r.session_id = req.matches[1];
                     r.served_at.clear();
                     const ResponseAck ack = service.record_response(std::move(r));
                     send_json(res, 200, {{"ok", true}, {"next_index", ack.next_index}, {"remaining", ack.remaining}});
                 });
             });

    srv.Get(R"(/images/([0-9A-Za-z_\-]+))", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto bytes = read_file_bytes(service.image_path(req.matches[1].str()));
            res.set_content(reinterpret_cast<const char*>(bytes.data()), bytes.size(), "image/png");
        });
    });

    srv.Get("/export", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::optional<std::set<std::string>> filter;
            if (req.has_param("session")) filter = split_sessions(req.get_param_value("session"));
            res.set_content(service.export_predictions(filter), "text/csv");
        });
    });

    srv.Get("/config", [&service](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200,
                  {{"exposures_ms", service.options().exposures_ms},
                   {"choices", service.choices()},
                   {"mask", service.options().mask}});
    });

    if (static_dir) srv.set_mount_point("/ui", static_dir->string());
}

TrialHttpServer::~TrialHttpServer() { stop(); }

int TrialHttpServer::bind(const std::string& host, int port) {
    auto& srv = impl_->server;
    const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void TrialHttpServer::serve() {
    if (!impl_->server.listen_after_bind()) {
        if (impl_->server.is_running()) throw IoError("HTTP server stopped unexpectedly");
    }
}

int TrialHttpServer::start(const std::string& host, int port) {
    const int bound = bind(host, port);
    thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void TrialHttpServer::stop() {
    if (impl_) impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace polyrecover
