#pragma once

#include <array>
#include <string>
#include <vector>

#include "polyrecover/datagen.hpp"
#include "polyrecover/evalmetrics.hpp"

namespace fixture {

inline polyrecover::ImageRecord record(const std::string& id, int label, double p,
                                       polyrecover::DegradationKind kind) {
    polyrecover::ImageRecord r;
    r.image_id = id;
    r.class_label = label;
    r.polygon = {label, {112, 112}, 60, 0.0, 2};
    r.degradation = {kind, kind == polyrecover::DegradationKind::none ? 0.0 : p};
    r.base_id = id;
    r.path = id + ".png";
    return r;
}

inline polyrecover::PredictionRow row(const std::string& id, std::vector<int> ranked) {
    polyrecover::PredictionRow r;
    r.image_id = id;
    r.ranked = std::move(ranked);
    r.source = "test";
    return r;
}

// Published per-class accuracies (triangle..octagon) for two classifiers at
// one degradation level each.
struct TableRow {
    const char* model;
    double proportion;
    polyrecover::DegradationKind kind;
    std::array<double, 6> accuracy;
};

inline const std::array<TableRow, 4> kTables{{
    {"imagenet", 0.5, polyrecover::DegradationKind::edge, {100.0, 39.0, 0.0, 0.0, 0.1, 92.9}},
    {"imagenet", 0.5, polyrecover::DegradationKind::corner, {100.0, 69.8, 0.1, 14.4, 16.3, 55.6}},
    {"fractaldb", 0.6, polyrecover::DegradationKind::edge, {2.4, 27.0, 0.4, 0.0, 0.1, 100.0}},
    {"fractaldb", 0.6, polyrecover::DegradationKind::corner, {100.0, 98.5, 100.0, 62.5, 100.0, 84.0}},
}};

// Builds a manifest index and a prediction set reproducing the table rows of
// one model with 1000 images per cell; wrong answers pick the next class.
inline std::pair<polyrecover::ManifestIndex, polyrecover::PredictionSet> table_predictions(const std::string& model) {
    std::vector<polyrecover::ImageRecord> records;
    polyrecover::PredictionSet set;
    set.source = model;
    for (const auto& t : kTables) {
        if (model != t.model) continue;
        for (int c = 0; c < 6; ++c) {
            const int label = c + 3;
            const int correct = static_cast<int>(t.accuracy[c] * 10.0 + 0.5);
            for (int i = 0; i < 1000; ++i) {
                const std::string id = model + "-" + std::to_string(label) + "-" +
                                       std::string(polyrecover::to_string(t.kind)) + "-" + std::to_string(i);
                records.push_back(record(id, label, t.proportion, t.kind));
                const int wrong = label == 8 ? 3 : label + 1;
                set.rows.push_back(row(id, {i < correct ? label : wrong}));
            }
        }
    }
    return {polyrecover::ManifestIndex(std::move(records)), std::move(set)};
}

}  // namespace fixture
