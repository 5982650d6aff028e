#include "polyrecover/trial.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <random>

#include "polyrecover/errors.hpp"

namespace polyrecover {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
    const std::time_t secs = static_cast<std::time_t>(ms / 1000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms % 1000));
    return buf;
}

std::string random_token() {
    std::random_device rd;
    char buf[33];
    const std::uint64_t hi = (std::uint64_t{rd()} << 32) | rd();
    const std::uint64_t lo = (std::uint64_t{rd()} << 32) | rd();
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(hi),
                  static_cast<unsigned long long>(lo));
    return buf;
}

template <typename T>
bool contains_or_empty(const std::vector<T>& values, const T& v) {
    return values.empty() || std::find(values.begin(), values.end(), v) != values.end();
}

}  // namespace

// --- filter ---------------------------------------------------------------

bool SessionFilter::matches(const ImageRecord& r) const {
    return contains_or_empty(classes, r.class_label) &&
           contains_or_empty(proportions, r.degradation.proportion) &&
           contains_or_empty(kinds, r.degradation.kind) && contains_or_empty(splits, r.split);
}

json filter_to_json(const SessionFilter& f) {
    json kinds = json::array();
    for (auto k : f.kinds) kinds.push_back(to_string(k));
    json splits = json::array();
    for (auto s : f.splits) splits.push_back(to_string(s));
    json out = {{"classes", f.classes}, {"proportions", f.proportions}, {"kinds", kinds}, {"splits", splits}};
    out["length"] = f.length ? json(*f.length) : json(nullptr);
    return out;
}

SessionFilter filter_from_json(const json& doc) {
    SessionFilter f;
    if (doc.is_null()) return f;
    if (!doc.is_object()) throw ValidationError("filter must be a JSON object");
    try {
        if (doc.contains("classes")) f.classes = doc["classes"].get<std::vector<int>>();
        if (doc.contains("proportions")) f.proportions = doc["proportions"].get<std::vector<double>>();
        if (doc.contains("kinds")) {
            for (const auto& k : doc["kinds"]) f.kinds.push_back(parse_degradation_kind(k.get<std::string>()));
        }
        if (doc.contains("splits")) {
            for (const auto& s : doc["splits"]) f.splits.push_back(parse_split(s.get<std::string>()));
        }
        if (doc.contains("length") && !doc["length"].is_null()) {
            f.length = doc["length"].get<std::size_t>();
            if (*f.length == 0) throw ValidationError("session length must be positive");
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed filter: ") + e.what());
    }
    return f;
}

std::vector<std::string> balanced_order(std::span<const ImageRecord> records, const SessionFilter& filter,
                                        std::uint64_t seed) {
    std::map<CellKey, std::vector<std::string>> cells;
    for (const auto& r : records) {
        if (filter.matches(r)) {
            cells[{r.class_label, r.degradation.proportion, r.degradation.kind}].push_back(r.image_id);
        }
    }
    if (cells.empty()) throw ValidationError("session filter selects no images");

    Rng rng(splitmix64(seed));
    std::size_t available = 0;
    for (auto& [_, ids] : cells) {
        rng.shuffle(std::span(ids));
        available += ids.size();
    }
    const std::size_t length = std::min(filter.length.value_or(available), available);

    std::vector<std::string> order;
    order.reserve(length);
    for (std::size_t round = 0; order.size() < length; ++round) {
        for (auto& [_, ids] : cells) {
            if (order.size() == length) break;
            if (round < ids.size()) order.push_back(ids[round]);
        }
    }
    rng.shuffle(std::span(order));
    return order;
}

// --- wire formats ---------------------------------------------------------

json descriptor_to_json(const StimulusDescriptor& d) {
    if (d.end_of_session) {
        return {{"end_of_session", true}, {"session_id", d.session_id}, {"total", d.total}};
    }
    return {{"end_of_session", false}, {"session_id", d.session_id}, {"image_id", d.image_id},
            {"image_url", d.image_url}, {"exposure_ms", d.exposure_ms}, {"choices", d.choices},
            {"mask", d.mask},          {"index", d.index},             {"total", d.total}};
}

json response_to_json(const TrialResponse& r) {
    json out = {{"session_id", r.session_id}, {"image_id", r.image_id}, {"chosen_label", r.chosen_label},
                {"response_ms", r.response_ms}, {"served_at", r.served_at}};
    out["measured_flash_ms"] = r.measured_flash_ms ? json(*r.measured_flash_ms) : json(nullptr);
    return out;
}

TrialResponse response_from_json(const json& doc) {
    try {
        TrialResponse r;
        if (doc.contains("session_id")) r.session_id = doc["session_id"].get<std::string>();
        r.image_id = doc.at("image_id").get<std::string>();
        r.chosen_label = doc.at("chosen_label").get<int>();
        r.response_ms = doc.at("response_ms").get<double>();
        if (doc.contains("measured_flash_ms") && !doc["measured_flash_ms"].is_null()) {
            r.measured_flash_ms = doc["measured_flash_ms"].get<double>();
        }
        if (doc.contains("served_at")) r.served_at = doc["served_at"].get<std::string>();
        return r;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed response: ") + e.what());
    }
}

json session_to_json(const SessionInfo& s) {
    return {{"session_id", s.session_id}, {"exposure_ms", s.exposure_ms}, {"seed", s.seed},
            {"length", s.length},         {"cursor", s.cursor},           {"created_at", s.created_at}};
}

// --- log ------------------------------------------------------------------

TrialLog::TrialLog(fs::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path_.parent_path(), ec);
    }
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open response log " + path_.string());
}

TrialLog::~TrialLog() {
    if (fd_ >= 0) ::close(fd_);
}

void TrialLog::append(const json& event) {
    const std::string line = event.dump() + "\n";
    std::lock_guard lock(mutex_);
    std::size_t done = 0;
    while (done < line.size()) {
        const ssize_t n = ::write(fd_, line.data() + done, line.size() - done);
        if (n < 0) throw IoError("failed appending to " + path_.string());
        done += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw IoError("fsync failed on " + path_.string());
}

std::vector<json> TrialLog::read(const fs::path& path) {
    std::vector<json> events;
    std::ifstream in(path);
    if (!in) return events;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            events.push_back(json::parse(line));
        } catch (const json::exception&) {
            if (in.peek() != std::char_traits<char>::eof()) {
                throw ParseError("corrupt response log line in " + path.string());
            }
        }
    }
    return events;
}

std::vector<TrialResponse> read_logged_responses(const fs::path& log_path) {
    if (!fs::exists(log_path)) throw IoError("no response log at " + log_path.string());
    std::vector<TrialResponse> out;
    for (const auto& ev : TrialLog::read(log_path)) {
        if (ev.value("event", "") == "response") out.push_back(response_from_json(ev));
    }
    return out;
}

std::string export_human_predictions(std::span<const TrialResponse> responses,
                                     const std::optional<std::set<std::string>>& sessions) {
    PredictionSet set;
    for (const auto& r : responses) {
        if (sessions && !sessions->contains(r.session_id)) continue;
        PredictionRow row;
        row.image_id = r.image_id;
        row.ranked = {r.chosen_label};
        row.response_ms = r.response_ms;
        row.source = "human:" + r.session_id;
        set.rows.push_back(std::move(row));
    }
    return predictions_csv(set);
}

// --- service --------------------------------------------------------------

struct TrialService::SessionState {
    std::mutex mutex;
    SessionInfo info;
    std::vector<std::string> order;
    std::set<std::string> answered;
    std::string served_at;  // of order[cursor], empty until fetched
};

TrialService::TrialService(Manifest manifest, fs::path dataset_root, fs::path log_path, TrialOptions options)
    : index_(std::move(manifest.records)),
      root_(std::move(dataset_root)),
      options_(std::move(options)),
      choices_(index_.classes().begin(), index_.classes().end()),
      log_(log_path) {
    if (options_.exposures_ms.empty()) throw ConfigError("at least one exposure duration is required");
    replay();
}

TrialService::~TrialService() = default;

void TrialService::replay() {
    for (const auto& ev : TrialLog::read(log_.path())) {
        const std::string kind = ev.value("event", "");
        if (kind == "session") {
            auto s = std::make_shared<SessionState>();
            s->info.session_id = ev.at("session_id").get<std::string>();
            s->info.exposure_ms = ev.at("exposure_ms").get<int>();
            s->info.seed = ev.at("seed").get<std::uint64_t>();
            s->info.created_at = ev.at("created_at").get<std::string>();
            s->order = ev.at("order").get<std::vector<std::string>>();
            s->info.length = s->order.size();
            sessions_[s->info.session_id] = std::move(s);
        } else if (kind == "response") {
            TrialResponse r = response_from_json(ev);
            const auto it = sessions_.find(r.session_id);
            if (it != sessions_.end()) {
                it->second->answered.insert(r.image_id);
                ++it->second->info.cursor;
            }
            responses_.push_back(std::move(r));
        }
    }
}

std::shared_ptr<TrialService::SessionState> TrialService::find(const std::string& session_id) const {
    std::lock_guard lock(sessions_mutex_);
    const auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFoundError("unknown session '" + session_id + "'");
    return it->second;
}

SessionInfo TrialService::create_session(int exposure_ms, const SessionFilter& filter, std::uint64_t seed) {
    if (std::find(options_.exposures_ms.begin(), options_.exposures_ms.end(), exposure_ms) ==
        options_.exposures_ms.end()) {
        throw ValidationError("exposure_ms " + std::to_string(exposure_ms) + " is not a configured duration");
    }
    auto s = std::make_shared<SessionState>();
    s->order = balanced_order(index_.records(), filter, seed);
    s->info.session_id = random_token();
    s->info.exposure_ms = exposure_ms;
    s->info.seed = seed;
    s->info.length = s->order.size();
    s->info.created_at = utc_now();

    log_.append({{"event", "session"},
                 {"session_id", s->info.session_id},
                 {"exposure_ms", exposure_ms},
                 {"seed", seed},
                 {"filter", filter_to_json(filter)},
                 {"order", s->order},
                 {"created_at", s->info.created_at}});
    std::lock_guard lock(sessions_mutex_);
    sessions_[s->info.session_id] = s;
    return s->info;
}

StimulusDescriptor TrialService::next_stimulus(const std::string& session_id) {
    const auto s = find(session_id);
    std::lock_guard lock(s->mutex);
    StimulusDescriptor d;
    d.session_id = session_id;
    d.total = s->order.size();
    if (s->info.cursor >= s->order.size()) {
        d.end_of_session = true;
        return d;
    }
    if (s->served_at.empty()) s->served_at = utc_now();
    d.image_id = s->order[s->info.cursor];
    d.image_url = "/images/" + d.image_id;
    d.exposure_ms = s->info.exposure_ms;
    d.choices = choices_;
    d.mask = options_.mask;
    d.index = s->info.cursor;
    return d;
}

ResponseAck TrialService::record_response(TrialResponse response) {
    const auto s = find(response.session_id);
    if (!index_.has_class(response.chosen_label)) {
        throw ValidationError("chosen_label " + std::to_string(response.chosen_label) + " is not in the class set");
    }
    if (!std::isfinite(response.response_ms) || response.response_ms < 0.0) {
        throw ValidationError("response_ms must be a nonnegative number");
    }
    if (response.measured_flash_ms &&
        (!std::isfinite(*response.measured_flash_ms) || *response.measured_flash_ms < 0.0)) {
        throw ValidationError("measured_flash_ms must be a nonnegative number");
    }

    std::lock_guard lock(s->mutex);
    if (s->answered.contains(response.image_id)) {
        throw ConflictError("response for " + response.image_id + " already recorded");
    }
    if (s->info.cursor >= s->order.size() || s->order[s->info.cursor] != response.image_id) {
        throw ConflictError(response.image_id + " is not the current stimulus of this session");
    }
    if (s->served_at.empty()) throw ConflictError(response.image_id + " has not been served yet");

    response.served_at = s->served_at;
    json ev = response_to_json(response);
    ev["event"] = "response";
    ev["recorded_at"] = utc_now();
    log_.append(ev);

    s->answered.insert(response.image_id);
    ++s->info.cursor;
    s->served_at.clear();
    {
        std::lock_guard rlock(responses_mutex_);
        responses_.push_back(std::move(response));
    }
    return {s->info.cursor, s->order.size() - s->info.cursor};
}

SessionInfo TrialService::session(const std::string& session_id) const {
    const auto s = find(session_id);
    std::lock_guard lock(s->mutex);
    return s->info;
}

std::vector<TrialResponse> TrialService::responses() const {
    std::lock_guard lock(responses_mutex_);
    return responses_;
}

std::string TrialService::export_predictions(const std::optional<std::set<std::string>>& sessions) const {
    const auto all = responses();
    return export_human_predictions(all, sessions);
}

fs::path TrialService::image_path(std::string_view image_id) const {
    const ImageRecord* r = index_.find(image_id);
    if (r == nullptr) throw NotFoundError("unknown image '" + std::string(image_id) + "'");
    return root_ / r->path;
}

}  // namespace polyrecover
