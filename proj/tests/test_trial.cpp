#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "fixtures.hpp"
#include "polyrecover/errors.hpp"
#include "polyrecover/trial.hpp"
#include "temp_dir.hpp"

using namespace polyrecover;
using fixture::record;

namespace {

constexpr auto kEdge = DegradationKind::edge;
constexpr auto kCorner = DegradationKind::corner;

Manifest two_cell_manifest() {
    Manifest m;
    for (int i = 0; i < 5; ++i) {
        m.records.push_back(record("e" + std::to_string(i), 3, 0.5, kEdge));
        m.records.push_back(record("c" + std::to_string(i), 4, 0.5, kCorner));
    }
    m.records.push_back(record("w0", 5, 0, DegradationKind::none));
    return m;
}

// Serves and answers every stimulus of a session, choosing the true label.
std::size_t run_session(TrialService& svc, const std::string& sid) {
    std::size_t answered = 0;
    for (;;) {
        const auto d = svc.next_stimulus(sid);
        if (d.end_of_session) return answered;
        const int label = svc.index().find(d.image_id)->class_label;
        svc.record_response({sid, d.image_id, label, 400.0 + static_cast<double>(answered), std::nullopt, ""});
        ++answered;
    }
}

}  // namespace

TEST_CASE("balanced_order") {
    const Manifest m = two_cell_manifest();
    SUBCASE("single cell gives a permutation") {
        SessionFilter f;
        f.classes = {3};
        auto order = balanced_order(m.records, f, 11);
        CHECK(order.size() == 5);
        std::sort(order.begin(), order.end());
        CHECK(order == std::vector<std::string>{"e0", "e1", "e2", "e3", "e4"});
    }
    SUBCASE("seeded and reproducible") {
        SessionFilter f;
        CHECK(balanced_order(m.records, f, 1) == balanced_order(m.records, f, 1));
        CHECK(balanced_order(m.records, f, 1) != balanced_order(m.records, f, 2));
    }
    SUBCASE("length is split evenly across cells") {
        SessionFilter f;
        f.kinds = {kEdge, kCorner};
        f.length = 6;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto order = balanced_order(m.records, f, seed);
            REQUIRE(order.size() == 6);
            CHECK(std::count_if(order.begin(), order.end(), [](const auto& id) { return id[0] == 'e'; }) == 3);
        }
    }
    SUBCASE("length beyond the pool is clipped") {
        SessionFilter f;
        f.length = 100;
        CHECK(balanced_order(m.records, f, 0).size() == 11);
    }
    SUBCASE("empty selection") {
        SessionFilter f;
        f.classes = {8};
        CHECK_THROWS_AS(balanced_order(m.records, f, 0), ValidationError);
    }
}

TEST_CASE("filter JSON") {
    const auto f = filter_from_json(nlohmann::json::parse(
        R"({"classes":[3,4],"proportions":[0.5],"kinds":["edge"],"splits":["test"],"length":4})"));
    CHECK(f.classes == std::vector<int>{3, 4});
    CHECK(f.kinds == std::vector<DegradationKind>{kEdge});
    CHECK(f.splits == std::vector<Split>{Split::test});
    CHECK(*f.length == 4);
    CHECK(filter_to_json(filter_from_json(filter_to_json(f))) == filter_to_json(f));
    CHECK_THROWS_AS(filter_from_json(nlohmann::json::parse(R"({"kinds":["round"]})")), ValidationError);
    CHECK_THROWS_AS(filter_from_json(nlohmann::json::parse(R"({"length":0})")), ValidationError);
    CHECK_THROWS_AS(filter_from_json(nlohmann::json::parse("[1]")), ValidationError);
}

TEST_CASE("session lifecycle") {
    TempDir dir("trial");
    TrialService svc(two_cell_manifest(), dir.path(), dir / "log.jsonl", {});
    CHECK(svc.choices() == std::vector<int>{3, 4, 5});

    SessionFilter f;
    f.kinds = {kEdge, kCorner};
    const auto info = svc.create_session(200, f, 5);
    CHECK(info.length == 10);
    CHECK(info.cursor == 0);
    CHECK_THROWS_AS(svc.create_session(150, f, 5), ValidationError);

    const auto d1 = svc.next_stimulus(info.session_id);
    const auto d2 = svc.next_stimulus(info.session_id);
    CHECK_FALSE(d1.end_of_session);
    CHECK(d1.image_id == d2.image_id);
    CHECK(d1.exposure_ms == 200);
    CHECK(d1.mask == "white");
    CHECK(d1.total == 10);
    CHECK(d1.choices == std::vector<int>{3, 4, 5});

    // No trace of the true label or degradation on the wire.
    const auto wire = descriptor_to_json(d1);
    for (const char* key : {"class_label", "label", "true_label", "kind", "proportion", "degradation", "polygon"}) {
        CHECK_FALSE(wire.contains(key));
    }
    CHECK(wire.dump().find("corner") == std::string::npos);
    CHECK(wire.dump().find("edge") == std::string::npos);

    const int truth = svc.index().find(d1.image_id)->class_label;
    CHECK_THROWS_AS(svc.record_response({info.session_id, d1.image_id, 9, 300, std::nullopt, ""}), ValidationError);
    CHECK_THROWS_AS(svc.record_response({info.session_id, d1.image_id, truth, -1, std::nullopt, ""}),
                    ValidationError);
    CHECK_THROWS_AS(svc.record_response({"nope", d1.image_id, truth, 300, std::nullopt, ""}), NotFoundError);
    const std::string other = d1.image_id == "e0" ? "e1" : "e0";
    CHECK_THROWS_AS(svc.record_response({info.session_id, other, truth, 300, std::nullopt, ""}), ConflictError);

    const auto ack = svc.record_response({info.session_id, d1.image_id, truth, 300, 201.5, ""});
    CHECK(ack.next_index == 1);
    CHECK(ack.remaining == 9);
    CHECK_THROWS_AS(svc.record_response({info.session_id, d1.image_id, truth, 300, std::nullopt, ""}),
                    ConflictError);

    // Answering before the next stimulus is fetched is rejected.
    const auto pending = svc.next_stimulus(info.session_id);
    CHECK(pending.index == 1);
    CHECK(pending.image_id != d1.image_id);

    CHECK(run_session(svc, info.session_id) == 9);
    const auto end = svc.next_stimulus(info.session_id);
    CHECK(end.end_of_session);
    CHECK(end.total == 10);
    CHECK(svc.session(info.session_id).cursor == 10);
    CHECK(svc.responses().size() == 10);
    CHECK_FALSE(svc.responses()[0].served_at.empty());
    CHECK(*svc.responses()[0].measured_flash_ms == 201.5);

    CHECK_THROWS_AS(svc.next_stimulus("missing"), NotFoundError);
    CHECK_THROWS_AS(svc.image_path("missing"), NotFoundError);
    CHECK(svc.image_path("e0") == dir / "e0.png");
}

TEST_CASE("unserved stimulus cannot be answered") {
    TempDir dir("trial-unserved");
    TrialService svc(two_cell_manifest(), dir.path(), dir / "log.jsonl", {});
    SessionFilter f;
    f.classes = {3};
    const auto info = svc.create_session(100, f, 1);
    const std::string first = balanced_order(two_cell_manifest().records, f, 1).front();
    CHECK_THROWS_AS(svc.record_response({info.session_id, first, 3, 300, std::nullopt, ""}), ConflictError);
}

TEST_CASE("log replay restores sessions and responses") {
    TempDir dir("trial-replay");
    std::string sid;
    std::vector<std::string> served;
    {
        TrialService svc(two_cell_manifest(), dir.path(), dir / "log.jsonl", {});
        sid = svc.create_session(750, {}, 3).session_id;
        for (int i = 0; i < 4; ++i) {
            const auto d = svc.next_stimulus(sid);
            served.push_back(d.image_id);
            svc.record_response({sid, d.image_id, 3, 250, std::nullopt, ""});
        }
    }
    TrialService again(two_cell_manifest(), dir.path(), dir / "log.jsonl", {});
    CHECK(again.session(sid).cursor == 4);
    CHECK(again.session(sid).exposure_ms == 750);
    REQUIRE(again.responses().size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(again.responses()[i].image_id == served[i]);
    const auto next = again.next_stimulus(sid);
    CHECK(next.index == 4);
    CHECK(std::find(served.begin(), served.end(), next.image_id) == served.end());
    CHECK(run_session(again, sid) == 7);

    // A torn trailing line from a crash is ignored.
    std::ofstream(dir / "log.jsonl", std::ios::app) << "{\"event\":\"resp";
    TrialService torn(two_cell_manifest(), dir.path(), dir / "log.jsonl", {});
    CHECK(torn.responses().size() == 11);
}

TEST_CASE("concurrent sessions keep every response") {
    TempDir dir("trial-threads");
    Manifest m;
    for (int i = 0; i < 200; ++i) m.records.push_back(record("x" + std::to_string(i), 3 + i % 4, 0.1, kEdge));
    TrialService svc(m, dir.path(), dir / "log.jsonl", {});
    std::vector<std::string> ids;
    for (int i = 0; i < 4; ++i) ids.push_back(svc.create_session(100, {}, static_cast<std::uint64_t>(i)).session_id);
    {
        std::vector<std::jthread> threads;
        for (const auto& sid : ids) threads.emplace_back([&svc, sid] { run_session(svc, sid); });
    }
    CHECK(svc.responses().size() == 800);
    CHECK(read_logged_responses(dir / "log.jsonl").size() == 800);
}

TEST_CASE("human predictions export") {
    TempDir dir("trial-export");
    const Manifest m = two_cell_manifest();
    const ManifestIndex index(m);
    TrialService svc(m, dir.path(), dir / "log.jsonl", {});
    SessionFilter f;
    f.kinds = {kEdge, kCorner};
    const auto a = svc.create_session(100, f, 1).session_id;
    const auto b = svc.create_session(100, f, 2).session_id;
    run_session(svc, a);
    run_session(svc, b);

    const std::string only_a = svc.export_predictions(std::set<std::string>{a});
    std::istringstream in(only_a);
    const auto set = parse_predictions(in, index);
    CHECK(set.rows.size() == 10);
    CHECK(set.source == "human:" + a);
    const auto report = accuracy_by_cell(set, index);
    for (const auto& [key, counts] : report.cells) CHECK(counts.accuracy() == 100);

    std::istringstream all(svc.export_predictions(std::nullopt));
    CHECK(parse_predictions(all, index).rows.size() == 20);
    CHECK(svc.export_predictions(std::set<std::string>{}) == std::string(kPredictionsHeader) + "\n");

    const auto logged = read_logged_responses(dir / "log.jsonl");
    CHECK(export_human_predictions(logged, std::set<std::string>{a}) == only_a);
    CHECK_THROWS_AS(read_logged_responses(dir / "missing.jsonl"), IoError);
}

TEST_CASE("response JSON") {
    TrialResponse r{"s", "img", 5, 412.5, 99.0, "2026-01-01T00:00:00Z"};
    const auto back = response_from_json(response_to_json(r));
    CHECK(back.session_id == "s");
    CHECK(back.chosen_label == 5);
    CHECK(back.response_ms == 412.5);
    CHECK(*back.measured_flash_ms == 99.0);
    CHECK_THROWS_AS(response_from_json(nlohmann::json::parse(R"({"session_id":"s"})")), ValidationError);
}
