#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "polyrecover/trial.hpp"

namespace polyrecover {

inline constexpr const char* kPortEnvVar = "POLYRECOVER_PORT";

// Port from POLYRECOVER_PORT, or `fallback` when unset or malformed.
int port_from_env(int fallback = 8080);

// JSON-over-HTTP front of a TrialService:
//   POST /sessions                 {exposure_ms, filter, seed} -> session
//   GET  /sessions/{id}/next       -> stimulus descriptor or end-of-session
//   POST /sessions/{id}/responses  {image_id, chosen_label, response_ms,
//                                   measured_flash_ms?} -> ack
//   GET  /images/{image_id}        -> PNG
//   GET  /export[?session=a,b]     -> predictions CSV
// Errors come back as {"error": message} with 400/404/409/500.
class TrialHttpServer {
public:
    explicit TrialHttpServer(TrialService& service, std::optional<std::filesystem::path> static_dir = {});
    ~TrialHttpServer();
    TrialHttpServer(const TrialHttpServer&) = delete;
    TrialHttpServer& operator=(const TrialHttpServer&) = delete;

    // Binds (port 0 picks a free port) and returns the bound port.
    int bind(const std::string& host, int port);
    // Blocks until stop().
    void serve();
    // bind() then serve() on a background thread.
    int start(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::thread thread_;
};

}  // namespace polyrecover
