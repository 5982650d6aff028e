#include "polyrecover/evalmetrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "polyrecover/errors.hpp"

namespace polyrecover {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kMaxListedErrors = 20;

std::vector<std::string> split_fields(std::string_view line, std::size_t max_fields) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (out.size() + 1 < max_fields) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) break;
        out.emplace_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    // The last field keeps any further commas (free-form source tags).
    out.emplace_back(line.substr(start));
    return out;
}

std::string_view strip_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
    T value{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

std::string join_errors(std::string_view origin, const std::vector<std::string>& errors) {
    std::string msg = std::string(origin) + ": " + std::to_string(errors.size()) + " invalid row(s)";
    for (std::size_t i = 0; i < errors.size() && i < kMaxListedErrors; ++i) msg += "\n  " + errors[i];
    if (errors.size() > kMaxListedErrors) msg += "\n  ...";
    return msg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out << text;
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

// --- SVG ------------------------------------------------------------------

constexpr double kWidth = 640;
constexpr double kHeight = 400;
constexpr double kLeft = 60;
constexpr double kRight = 150;
constexpr double kTop = 30;
constexpr double kBottom = 50;

struct Series {
    std::string name;
    std::string color;
    bool dashed = false;
    std::vector<std::pair<double, double>> points;
};

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string render_chart(const std::string& title, const std::string& y_label, double y_lo,
                         double y_hi, const std::vector<Series>& series) {
    double x_hi = 0.1;
    for (const auto& s : series) {
        for (const auto& [x, _] : s.points) x_hi = std::max(x_hi, x);
    }
    x_hi = std::ceil(x_hi * 10.0 - 1e-9) / 10.0;
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    const auto sx = [&](double x) { return kLeft + plot_w * x / x_hi; };
    const auto sy = [&](double y) { return kTop + plot_h * (y_hi - y) / (y_hi - y_lo); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << fixed2(kLeft + plot_w / 2) << "\" y=\"18\" text-anchor=\"middle\">" << title
        << "</text>\n";

    // Axes and ticks.
    svg << "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n";
    svg << "<line x1=\"" << fixed2(kLeft) << "\" y1=\"" << fixed2(sy(y_lo)) << "\" x2=\"" << fixed2(sx(x_hi))
        << "\" y2=\"" << fixed2(sy(y_lo)) << "\"/>\n";
    svg << "<line x1=\"" << fixed2(kLeft) << "\" y1=\"" << fixed2(sy(y_lo)) << "\" x2=\"" << fixed2(kLeft)
        << "\" y2=\"" << fixed2(sy(y_hi)) << "\"/>\n";
    if (y_lo < 0.0 && y_hi > 0.0) {
        svg << "<line x1=\"" << fixed2(kLeft) << "\" y1=\"" << fixed2(sy(0)) << "\" x2=\"" << fixed2(sx(x_hi))
            << "\" y2=\"" << fixed2(sy(0)) << "\" stroke-dasharray=\"2 3\"/>\n";
    }
    svg << "</g>\n<g class=\"ticks\">\n";
    const int x_ticks = static_cast<int>(std::lround(x_hi * 10.0));
    for (int i = 0; i <= x_ticks; ++i) {
        const double x = i / 10.0;
        svg << "<text x=\"" << fixed2(sx(x)) << "\" y=\"" << fixed2(sy(y_lo) + 16)
            << "\" text-anchor=\"middle\">" << fixed2(x).substr(0, 3) << "</text>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        const double y = y_lo + (y_hi - y_lo) * i / 4.0;
        svg << "<text x=\"" << fixed2(kLeft - 6) << "\" y=\"" << fixed2(sy(y) + 4)
            << "\" text-anchor=\"end\">" << std::lround(y) << "</text>\n";
    }
    svg << "<text x=\"" << fixed2(kLeft + plot_w / 2) << "\" y=\"" << fixed2(kHeight - 10)
        << "\" text-anchor=\"middle\">degradation proportion</text>\n";
    svg << "<text transform=\"translate(16 " << fixed2(kTop + plot_h / 2)
        << ") rotate(-90)\" text-anchor=\"middle\">" << y_label << "</text>\n";
    svg << "</g>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        svg << "<polyline class=\"series\" data-name=\"" << s.name << "\" fill=\"none\" stroke=\"" << s.color
            << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
        for (std::size_t k = 0; k < s.points.size(); ++k) {
            if (k) svg << ' ';
            svg << fixed2(sx(s.points[k].first)) << ',' << fixed2(sy(s.points[k].second));
        }
        svg << "\"/>\n";
        for (const auto& [x, y] : s.points) {
            svg << "<circle cx=\"" << fixed2(sx(x)) << "\" cy=\"" << fixed2(sy(y)) << "\" r=\"3\" fill=\""
                << s.color << "\"/>\n";
        }
        const double ly = kTop + 10 + 18.0 * static_cast<double>(i);
        svg << "<line x1=\"" << fixed2(kWidth - kRight + 15) << "\" y1=\"" << fixed2(ly) << "\" x2=\""
            << fixed2(kWidth - kRight + 40) << "\" y2=\"" << fixed2(ly) << "\" stroke=\"" << s.color
            << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
        svg << "<text x=\"" << fixed2(kWidth - kRight + 46) << "\" y=\"" << fixed2(ly + 4) << "\">" << s.name
            << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

const char* kind_color(DegradationKind k) {
    switch (k) {
        case DegradationKind::corner: return "#d62728";
        case DegradationKind::edge: return "#1f77b4";
        case DegradationKind::none: return "#2ca02c";
    }
    return "black";
}

Series curve_series(const std::string& name, const std::string& color, const Curve& curve) {
    Series s{name, color, false, {}};
    for (const auto& [p, v] : curve) s.points.emplace_back(p, to_double(v));
    return s;
}

std::map<double, std::map<DegradationKind, double>> baseline_by_p(std::span<const BaselinePoint> baseline) {
    std::map<double, std::map<DegradationKind, double>> out;
    for (const auto& b : baseline) out[b.proportion][b.kind] = b.accuracy;
    return out;
}

}  // namespace

// --- ManifestIndex ----------------------------------------------------------

ManifestIndex::ManifestIndex(const Manifest& manifest) : ManifestIndex(manifest.records) {}

ManifestIndex::ManifestIndex(std::vector<ImageRecord> records) : records_(std::move(records)) {
    by_id_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        by_id_.emplace(records_[i].image_id, i);
        classes_.insert(records_[i].class_label);
    }
}

const ImageRecord* ManifestIndex::find(std::string_view image_id) const {
    const auto it = by_id_.find(std::string(image_id));
    return it == by_id_.end() ? nullptr : &records_[it->second];
}

// --- predictions CSV ------------------------------------------------------

PredictionSet parse_predictions(std::istream& in, const ManifestIndex& index, std::string_view origin) {
    constexpr std::size_t kFields = 9;
    std::string line;
    if (!std::getline(in, line)) throw ParseError(std::string(origin) + ": missing header line");
    std::string_view header = strip_cr(line);
    if (header.starts_with("\xEF\xBB\xBF")) header.remove_prefix(3);
    if (header != kPredictionsHeader) {
        throw ParseError(std::string(origin) + ":1: header must be '" + std::string(kPredictionsHeader) + "'");
    }

    PredictionSet set;
    std::vector<std::string> errors;
    std::set<std::string> sources;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view text = strip_cr(line);
        if (text.empty()) continue;
        const std::string where = "line " + std::to_string(line_no) + ": ";
        const auto fields = split_fields(text, kFields);
        if (fields.size() != kFields) {
            errors.push_back(where + "expected " + std::to_string(kFields) + " fields, got " +
                             std::to_string(fields.size()));
            continue;
        }

        PredictionRow row;
        row.line = line_no;
        row.image_id = fields[0];
        row.source = fields[8];
        bool ok = true;
        if (index.find(row.image_id) == nullptr) {
            errors.push_back(where + "unknown image_id '" + row.image_id + "'");
            ok = false;
        }
        bool gap = false;
        for (std::size_t col = 1; col <= kMaxRanks; ++col) {
            const std::string& f = fields[col];
            if (f.empty()) {
                if (col == 1) {
                    errors.push_back(where + "predicted label is required");
                    ok = false;
                }
                gap = true;
                continue;
            }
            if (gap) {
                errors.push_back(where + "rank columns must be filled left to right");
                ok = false;
                break;
            }
            const auto label = parse_number<int>(f);
            if (!label) {
                errors.push_back(where + "label '" + f + "' is not an integer side count");
                ok = false;
                break;
            }
            if (!index.has_class(*label)) {
                errors.push_back(where + "label " + f + " is not a class of the manifest");
                ok = false;
                break;
            }
            row.ranked.push_back(*label);
        }
        if (!fields[7].empty()) {
            const auto ms = parse_number<double>(fields[7]);
            if (!ms || !std::isfinite(*ms) || *ms < 0.0) {
                errors.push_back(where + "response_ms '" + fields[7] + "' is not a nonnegative number");
                ok = false;
            } else {
                row.response_ms = *ms;
            }
        }
        if (!ok) continue;
        sources.insert(row.source);
        set.rows.push_back(std::move(row));
    }
    if (!errors.empty()) throw ParseError(join_errors(origin, errors));
    if (sources.size() == 1) {
        set.source = *sources.begin();
    } else if (sources.size() > 1) {
        set.source = "mixed";
    }
    return set;
}

PredictionSet load_predictions(const fs::path& path, const ManifestIndex& index) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open predictions " + path.string());
    return parse_predictions(in, index, path.string());
}

void write_predictions_csv(std::ostream& out, const PredictionSet& set) {
    out << kPredictionsHeader << '\n';
    for (const auto& row : set.rows) {
        out << row.image_id;
        for (std::size_t i = 0; i < kMaxRanks; ++i) {
            out << ',';
            if (i < row.ranked.size()) out << row.ranked[i];
        }
        out << ',';
        if (row.response_ms) out << format_number(*row.response_ms);
        out << ',' << (row.source.empty() ? set.source : row.source) << '\n';
    }
}

std::string predictions_csv(const PredictionSet& set) {
    std::ostringstream out;
    write_predictions_csv(out, set);
    return out.str();
}

// --- aggregation ----------------------------------------------------------

Rational CellCounts::accuracy() const {
    if (total == 0) return Rational(0);
    return Rational(boost::multiprecision::cpp_int(correct) * 100, boost::multiprecision::cpp_int(total));
}

MetricsReport report_from_cells(std::map<CellKey, CellCounts> cells) {
    MetricsReport report;
    report.cells = std::move(cells);

    std::map<DegradationKind, std::map<double, std::pair<Rational, std::size_t>>> sums;
    for (const auto& [key, counts] : report.cells) {
        if (counts.total == 0) continue;
        auto& slot = sums[key.kind][key.proportion];
        slot.first += counts.accuracy();
        ++slot.second;
    }
    for (const auto& [kind, by_p] : sums) {
        for (const auto& [p, acc] : by_p) {
            report.marginal[kind][p] = acc.first / static_cast<long long>(acc.second);
        }
    }
    report.differential = differential_curve(report, &report.warnings);
    return report;
}

MetricsReport accuracy_by_cell(const PredictionSet& preds, const ManifestIndex& index) {
    std::map<CellKey, CellCounts> cells;
    for (const auto& row : preds.rows) {
        const ImageRecord* rec = index.find(row.image_id);
        if (rec == nullptr) {
            throw ValidationError("prediction for unknown image_id '" + row.image_id + "'");
        }
        auto& c = cells[{rec->class_label, rec->degradation.proportion, rec->degradation.kind}];
        ++c.total;
        if (!row.ranked.empty() && row.predicted() == rec->class_label) ++c.correct;
    }
    return report_from_cells(std::move(cells));
}

Curve differential_curve(const MetricsReport& report, std::vector<std::string>* warnings) {
    static const Curve kEmpty;
    const auto lookup = [&](DegradationKind k) -> const Curve& {
        const auto it = report.marginal.find(k);
        return it == report.marginal.end() ? kEmpty : it->second;
    };
    const Curve& edge = lookup(DegradationKind::edge);
    const Curve& corner = lookup(DegradationKind::corner);

    std::set<double> ps;
    for (const auto& [p, _] : edge) ps.insert(p);
    for (const auto& [p, _] : corner) ps.insert(p);

    Curve out;
    for (double p : ps) {
        const auto e = edge.find(p);
        const auto c = corner.find(p);
        if (e == edge.end() || c == corner.end()) {
            if (warnings) {
                warnings->push_back("differential: p_d=" + format_number(p) + " lacks " +
                                    (e == edge.end() ? "edge" : "corner") + " predictions; point omitted");
            }
            continue;
        }
        out[p] = e->second - c->second;
    }
    return out;
}

double topk_accuracy(const PredictionSet& preds, const ManifestIndex& index, std::size_t k) {
    if (k == 0) throw ValidationError("k must be positive");
    if (preds.rows.empty()) throw ValidationError("no predictions to score");
    std::uint64_t correct = 0;
    for (const auto& row : preds.rows) {
        const ImageRecord* rec = index.find(row.image_id);
        if (rec == nullptr) throw ValidationError("prediction for unknown image_id '" + row.image_id + "'");
        if (row.ranked.size() < k) {
            throw ValidationError("row for " + row.image_id + (row.line ? " (line " + std::to_string(row.line) + ")" : "") +
                                  " ranks " + std::to_string(row.ranked.size()) + " labels, top-" +
                                  std::to_string(k) + " needs " + std::to_string(k));
        }
        if (std::find(row.ranked.begin(), row.ranked.begin() + static_cast<std::ptrdiff_t>(k),
                      rec->class_label) != row.ranked.begin() + static_cast<std::ptrdiff_t>(k)) {
            ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(preds.rows.size());
}

double to_double(const Rational& r) { return r.convert_to<double>(); }

std::string format_percent(const Rational& r) {
    // Round half away from zero at one decimal, on the exact value.
    const Rational tenths = r * 10;
    const bool negative = tenths < 0;
    const Rational mag = negative ? Rational(-tenths) : tenths;
    boost::multiprecision::cpp_int whole = boost::multiprecision::numerator(mag) /
                                           boost::multiprecision::denominator(mag);
    if (mag - Rational(whole) >= Rational(1, 2)) ++whole;
    const std::string digits = whole.str();
    std::string text = digits.size() > 1 ? digits.substr(0, digits.size() - 1) : "0";
    text += "." + digits.substr(digits.size() - 1);
    return (negative && whole != 0 ? "-" : "") + text;
}

std::string format_number(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

// --- exports --------------------------------------------------------------

std::vector<BaselinePoint> load_baseline_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open baseline " + path.string());
    std::string line;
    if (!std::getline(in, line) || strip_cr(line) != "p_d,kind,accuracy") {
        throw ParseError(path.string() + ":1: header must be 'p_d,kind,accuracy'");
    }
    std::vector<BaselinePoint> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view text = strip_cr(line);
        if (text.empty()) continue;
        const auto f = split_fields(text, 3);
        const auto p = f.size() == 3 ? parse_number<double>(f[0]) : std::nullopt;
        const auto acc = f.size() == 3 ? parse_number<double>(f[2]) : std::nullopt;
        if (!p || !acc) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
        try {
            out.push_back({*p, parse_degradation_kind(f[1]), *acc});
        } catch (const ValidationError& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::string cells_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "class,p_d,kind,accuracy,count,correct\n";
    for (const auto& [key, c] : report.cells) {
        out << key.class_label << ',' << format_number(key.proportion) << ',' << to_string(key.kind) << ','
            << format_percent(c.accuracy()) << ',' << c.total << ',' << c.correct << '\n';
    }
    return out.str();
}

std::map<CellKey, CellCounts> parse_cells_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || strip_cr(line) != "class,p_d,kind,accuracy,count,correct") {
        throw ParseError("cells CSV: unexpected header");
    }
    std::map<CellKey, CellCounts> cells;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view text = strip_cr(line);
        if (text.empty()) continue;
        const auto f = split_fields(text, 6);
        const auto fail = [&] { return ParseError("cells CSV line " + std::to_string(line_no) + ": malformed row"); };
        if (f.size() != 6) throw fail();
        const auto label = parse_number<int>(f[0]);
        const auto p = parse_number<double>(f[1]);
        const auto total = parse_number<std::uint64_t>(f[4]);
        const auto correct = parse_number<std::uint64_t>(f[5]);
        if (!label || !p || !total || !correct || *correct > *total) throw fail();
        CellKey key{*label, *p, DegradationKind::none};
        try {
            key.kind = parse_degradation_kind(f[2]);
        } catch (const ValidationError&) {
            throw fail();
        }
        cells[key] = {*correct, *total};
    }
    return cells;
}

std::string accuracy_svg(const MetricsReport& report, std::span<const BaselinePoint> baseline) {
    std::vector<Series> series;
    for (const auto& [kind, curve] : report.marginal) {
        series.push_back(curve_series(std::string(to_string(kind)), kind_color(kind), curve));
    }
    for (const auto& [p, by_kind] : baseline_by_p(baseline)) {
        for (const auto& [kind, acc] : by_kind) {
            const std::string name = "baseline " + std::string(to_string(kind));
            auto it = std::find_if(series.begin(), series.end(), [&](const Series& s) { return s.name == name; });
            if (it == series.end()) {
                series.push_back({name, kind_color(kind), true, {}});
                it = series.end() - 1;
            }
            it->points.emplace_back(p, acc);
        }
    }
    return render_chart("Top-1 accuracy vs degradation", "accuracy (%)", 0.0, 100.0, series);
}

std::string differential_svg(const MetricsReport& report, std::span<const BaselinePoint> baseline) {
    std::vector<Series> series{curve_series("edge - corner", "#9467bd", report.differential)};
    Series base{"baseline", "#7f7f7f", true, {}};
    for (const auto& [p, by_kind] : baseline_by_p(baseline)) {
        const auto e = by_kind.find(DegradationKind::edge);
        const auto c = by_kind.find(DegradationKind::corner);
        if (e != by_kind.end() && c != by_kind.end()) base.points.emplace_back(p, e->second - c->second);
    }
    if (!base.points.empty()) series.push_back(std::move(base));
    return render_chart("Differential (edge - corner)", "accuracy difference (%)", -100.0, 100.0, series);
}

void export_report(const MetricsReport& report, const fs::path& dir, std::span<const BaselinePoint> baseline) {
    if (report.cells.empty()) throw ValidationError("cannot export an empty report");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    write_text(dir / "cells.csv", cells_csv(report));

    std::ostringstream curves;
    curves << "kind,p_d,accuracy\n";
    for (const auto& [kind, curve] : report.marginal) {
        for (const auto& [p, v] : curve) {
            curves << to_string(kind) << ',' << format_number(p) << ',' << format_percent(v) << '\n';
        }
    }
    write_text(dir / "curves.csv", curves.str());

    std::ostringstream diff;
    diff << "p_d,differential\n";
    for (const auto& [p, v] : report.differential) diff << format_number(p) << ',' << format_percent(v) << '\n';
    write_text(dir / "differential.csv", diff.str());

    write_text(dir / "accuracy.svg", accuracy_svg(report, baseline));
    write_text(dir / "differential.svg", differential_svg(report, baseline));
}

}  // namespace polyrecover
