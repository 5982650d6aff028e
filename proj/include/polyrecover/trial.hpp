#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "polyrecover/datagen.hpp"
#include "polyrecover/evalmetrics.hpp"

// Timed human trials: sessions over dataset images, served one stimulus at a
// time, with responses kept in an append-only JSONL log that is replayed on
// startup.
namespace polyrecover {

// Empty lists select everything.
struct SessionFilter {
    std::vector<int> classes;
    std::vector<double> proportions;
    std::vector<DegradationKind> kinds;
    std::vector<Split> splits;
    std::optional<std::size_t> length;  // default: every selected image

    bool matches(const ImageRecord& record) const;
};

nlohmann::json filter_to_json(const SessionFilter& filter);
// Throws ValidationError on malformed fields.
SessionFilter filter_from_json(const nlohmann::json& doc);

// Seeded, cell-balanced stimulus order: images are shuffled within each
// (class, p_d, kind) cell, taken round-robin over cells until `length` is
// reached, and the result is shuffled again. Throws ValidationError when the
// filter selects nothing.
std::vector<std::string> balanced_order(std::span<const ImageRecord> records, const SessionFilter& filter,
                                        std::uint64_t seed);

struct StimulusDescriptor {
    bool end_of_session = false;
    std::string session_id;
    std::string image_id;
    std::string image_url;
    int exposure_ms = 0;
    std::vector<int> choices;
    std::string mask;
    std::size_t index = 0;
    std::size_t total = 0;
};

nlohmann::json descriptor_to_json(const StimulusDescriptor& d);

struct TrialResponse {
    std::string session_id;
    std::string image_id;
    int chosen_label = 0;
    double response_ms = 0.0;  // stimulus offset to keypress
    std::optional<double> measured_flash_ms;
    std::string served_at;  // filled in by the service
};

nlohmann::json response_to_json(const TrialResponse& r);
TrialResponse response_from_json(const nlohmann::json& doc);

struct SessionInfo {
    std::string session_id;
    int exposure_ms = 0;
    std::uint64_t seed = 0;
    std::size_t length = 0;
    std::size_t cursor = 0;
    std::string created_at;
};

nlohmann::json session_to_json(const SessionInfo& s);

struct ResponseAck {
    std::size_t next_index = 0;
    std::size_t remaining = 0;
};

struct TrialOptions {
    std::vector<int> exposures_ms{100, 200, 750};
    std::string mask = "white";
    std::uint64_t default_seed = 0;  // for session requests without a seed
};

// Serialised, fsync'd appends to a JSONL file.
class TrialLog {
public:
    explicit TrialLog(std::filesystem::path path);
    ~TrialLog();
    TrialLog(const TrialLog&) = delete;
    TrialLog& operator=(const TrialLog&) = delete;

    void append(const nlohmann::json& event);
    const std::filesystem::path& path() const { return path_; }

    // Every event in the file; a torn final line is ignored.
    static std::vector<nlohmann::json> read(const std::filesystem::path& path);

private:
    std::filesystem::path path_;
    std::mutex mutex_;
    int fd_ = -1;
};

std::vector<TrialResponse> read_logged_responses(const std::filesystem::path& log_path);

// Predictions CSV (standard header) with source "human:{session_id}". When
// `sessions` is set, only those sessions are exported; an empty set yields a
// header-only file.
std::string export_human_predictions(std::span<const TrialResponse> responses,
                                     const std::optional<std::set<std::string>>& sessions);

class TrialService {
public:
    TrialService(Manifest manifest, std::filesystem::path dataset_root, std::filesystem::path log_path,
                 TrialOptions options = {});
    ~TrialService();

    SessionInfo create_session(int exposure_ms, const SessionFilter& filter, std::uint64_t seed);
    // Same descriptor until its response arrives. Throws NotFoundError.
    StimulusDescriptor next_stimulus(const std::string& session_id);
    // Throws NotFoundError, ValidationError (label/time) or ConflictError
    // (not the current served stimulus, or already answered).
    ResponseAck record_response(TrialResponse response);

    SessionInfo session(const std::string& session_id) const;
    std::vector<TrialResponse> responses() const;
    std::string export_predictions(const std::optional<std::set<std::string>>& sessions) const;
    std::filesystem::path image_path(std::string_view image_id) const;

    const std::vector<int>& choices() const { return choices_; }
    const ManifestIndex& index() const { return index_; }
    const TrialOptions& options() const { return options_; }

private:
    struct SessionState;

    std::shared_ptr<SessionState> find(const std::string& session_id) const;
    void replay();

    ManifestIndex index_;
    std::filesystem::path root_;
    TrialOptions options_;
    std::vector<int> choices_;
    TrialLog log_;

    mutable std::mutex sessions_mutex_;
    std::unordered_map<std::string, std::shared_ptr<SessionState>> sessions_;
    mutable std::mutex responses_mutex_;
    std::vector<TrialResponse> responses_;
};

}  // namespace polyrecover
