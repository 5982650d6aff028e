#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "polyrecover/datagen.hpp"

namespace polyrecover {

using Rational = boost::multiprecision::cpp_rational;

inline constexpr std::string_view kPredictionsHeader =
    "image_id,predicted,rank2,rank3,rank4,rank5,rank6,response_ms,source";
inline constexpr std::size_t kMaxRanks = 6;

struct PredictionRow {
    std::string image_id;
    std::vector<int> ranked;  // ranked[0] is the top-1 prediction
    std::optional<double> response_ms;
    std::string source;
    std::size_t line = 0;  // 1-based line in the source file, 0 if synthetic

    int predicted() const { return ranked.front(); }
};

struct PredictionSet {
    std::string source;
    std::vector<PredictionRow> rows;
};

// Id lookup and class set of a manifest, detached from the Manifest object.
class ManifestIndex {
public:
    explicit ManifestIndex(const Manifest& manifest);
    explicit ManifestIndex(std::vector<ImageRecord> records);

    const ImageRecord* find(std::string_view image_id) const;
    bool has_class(int label) const { return classes_.contains(label); }
    const std::set<int>& classes() const { return classes_; }
    const std::vector<ImageRecord>& records() const { return records_; }

private:
    std::vector<ImageRecord> records_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::set<int> classes_;
};

// Throws ParseError listing every offending line (bad header, unknown id,
// label outside the class set, gaps in the rank columns, bad response_ms).
PredictionSet parse_predictions(std::istream& in, const ManifestIndex& index,
                                std::string_view origin = "<predictions>");
PredictionSet load_predictions(const std::filesystem::path& path, const ManifestIndex& index);

void write_predictions_csv(std::ostream& out, const PredictionSet& set);
std::string predictions_csv(const PredictionSet& set);

struct CellKey {
    int class_label = 0;
    double proportion = 0.0;
    DegradationKind kind = DegradationKind::none;

    auto operator<=>(const CellKey&) const = default;
};

struct CellCounts {
    std::uint64_t correct = 0;
    std::uint64_t total = 0;

    // 100 * correct / total, exact.
    Rational accuracy() const;
    bool operator==(const CellCounts&) const = default;
};

using Curve = std::map<double, Rational>;

struct MetricsReport {
    std::map<CellKey, CellCounts> cells;  // cells without predictions are absent
    std::map<DegradationKind, Curve> marginal;  // unweighted class mean per p_d
    Curve differential;  // edge - corner
    std::vector<std::string> warnings;
};

// Fills marginal curves and the differential from cell counts.
MetricsReport report_from_cells(std::map<CellKey, CellCounts> cells);

MetricsReport accuracy_by_cell(const PredictionSet& preds, const ManifestIndex& index);

// Edge mean minus corner mean at each p_d where both kinds are present.
// Missing points are skipped with a message appended to `warnings`.
Curve differential_curve(const MetricsReport& report, std::vector<std::string>* warnings = nullptr);

// Percent of rows whose true label is among the first k ranked labels.
// Throws ValidationError naming the first row with fewer than k ranks.
double topk_accuracy(const PredictionSet& preds, const ManifestIndex& index, std::size_t k);

double to_double(const Rational& r);
// Rounded to 0.1 and formatted with one decimal, e.g. "38.7".
std::string format_percent(const Rational& r);
std::string format_number(double v);

// External human baseline for plotting: CSV with header p_d,kind,accuracy.
struct BaselinePoint {
    double proportion = 0.0;
    DegradationKind kind = DegradationKind::none;
    double accuracy = 0.0;
};
std::vector<BaselinePoint> load_baseline_csv(const std::filesystem::path& path);

// Writes cells.csv, curves.csv, differential.csv, accuracy.svg and
// differential.svg into dir. Throws ValidationError for an empty report.
void export_report(const MetricsReport& report, const std::filesystem::path& dir,
                   std::span<const BaselinePoint> baseline = {});

std::string cells_csv(const MetricsReport& report);
std::map<CellKey, CellCounts> parse_cells_csv(std::istream& in);
std::string accuracy_svg(const MetricsReport& report, std::span<const BaselinePoint> baseline = {});
std::string differential_svg(const MetricsReport& report, std::span<const BaselinePoint> baseline = {});

}  // namespace polyrecover
