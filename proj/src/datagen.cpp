#include "polyrecover/datagen.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_map>

#include "polyrecover/errors.hpp"
#include "polyrecover/png.hpp"
#include "polyrecover/raster.hpp"

namespace polyrecover {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitDomain = 0x73706c6974000000ULL;  // "split"
constexpr double kFractionSlack = 1e-9;

unsigned resolve_workers(unsigned requested, std::size_t tasks) {
    unsigned n = requested != 0 ? requested : std::max(1u, std::thread::hardware_concurrency());
    if (tasks < n) n = static_cast<unsigned>(std::max<std::size_t>(1, tasks));
    return n;
}

// Runs body(i) for i in [0, count) over `workers` threads. The first
// exception stops further dispatch and is rethrown after all threads join.
template <typename Body>
void parallel_for(std::size_t count, unsigned workers, Body&& body) {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        while (!failed.load(std::memory_order_relaxed)) {
            const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= count) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed = true;
            }
        }
    };
    if (workers <= 1) {
        run();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run);
    }
    if (error) std::rethrow_exception(error);
}

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json point_to_json(Point p) { return {{"x", p.x}, {"y", p.y}}; }

json polygon_to_json(const PolygonSpec& s) {
    return {{"n_sides", s.n_sides},
            {"center", point_to_json(s.center)},
            {"circumradius", s.circumradius},
            {"rotation", s.rotation},
            {"stroke_width", s.stroke_width}};
}

PolygonSpec polygon_from_json(const json& j) {
    PolygonSpec s;
    s.n_sides = j.at("n_sides").get<int>();
    s.center = {j.at("center").at("x").get<double>(), j.at("center").at("y").get<double>()};
    s.circumradius = j.at("circumradius").get<double>();
    s.rotation = j.at("rotation").get<double>();
    s.stroke_width = j.at("stroke_width").get<double>();
    return s;
}

void write_text_atomically(const fs::path& target, const std::string& text) {
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot create " + tmp.string());
        out << text;
        out.close();
        if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    throw ValidationError("unknown split '" + std::string(text) + "'");
}

void validate(const GenerationConfig& c) {
    if (c.classes.empty()) throw ConfigError("at least one class is required");
    std::set<int> seen_classes;
    for (int n : c.classes) {
        if (n < 3) throw ConfigError("class side counts must be >= 3, got " + std::to_string(n));
        if (!seen_classes.insert(n).second) {
            throw ConfigError("duplicate class " + std::to_string(n));
        }
    }
    if (c.canvas_size <= 0) throw ConfigError("canvas_size must be positive");
    admissible_centers(c.canvas_size, c.r_min, c.stroke_width);

    std::set<std::string> labels;
    for (double p : c.degradation_grid) {
        if (!std::isfinite(p) || p < 0.0 || p >= 1.0) {
            throw ConfigError("degradation grid values must lie in [0, 1), got " + std::to_string(p));
        }
        if (!labels.insert(proportion_label(p)).second) {
            throw ConfigError("duplicate degradation grid value " + std::to_string(p));
        }
    }
    std::set<DegradationKind> kinds;
    for (DegradationKind k : c.kinds) {
        if (k == DegradationKind::none) throw ConfigError("kinds may only contain corner and edge");
        if (!kinds.insert(k).second) throw ConfigError("duplicate degradation kind");
    }

    const auto& f = c.split_fractions;
    for (double v : {f.train, f.val, f.test}) {
        if (!std::isfinite(v) || v < 0.0) throw ConfigError("split fractions must be nonnegative");
    }
    if (std::abs(f.train + f.val + f.test - 1.0) > kFractionSlack) {
        throw ConfigError("split fractions must sum to 1");
    }
}

GenerationConfig config_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known = {
        "classes",       "per_class_whole", "degradation_grid",  "kinds",
        "master_seed",   "canvas_size",     "r_min",             "stroke_width",
        "split_fractions", "independent_cells", "output_dir",    "workers"};
    for (const auto& [key, _] : doc.items()) {
        if (!known.contains(key)) throw ConfigError("unknown config field '" + key + "'");
    }

    GenerationConfig c;
    try {
        if (doc.contains("classes")) c.classes = doc["classes"].get<std::vector<int>>();
        if (doc.contains("per_class_whole")) c.per_class_whole = doc["per_class_whole"].get<std::size_t>();
        if (doc.contains("degradation_grid")) {
            c.degradation_grid = doc["degradation_grid"].get<std::vector<double>>();
        }
        if (doc.contains("kinds")) {
            c.kinds.clear();
            for (const auto& k : doc["kinds"]) c.kinds.push_back(parse_degradation_kind(k.get<std::string>()));
        }
        if (doc.contains("master_seed")) c.master_seed = doc["master_seed"].get<std::uint64_t>();
        if (doc.contains("canvas_size")) c.canvas_size = doc["canvas_size"].get<int>();
        if (doc.contains("r_min")) c.r_min = doc["r_min"].get<double>();
        if (doc.contains("stroke_width")) c.stroke_width = doc["stroke_width"].get<double>();
        if (doc.contains("split_fractions")) {
            const auto& s = doc["split_fractions"];
            if (s.is_array()) {
                const auto v = s.get<std::vector<double>>();
                if (v.size() != 3) throw ConfigError("split_fractions needs 3 values");
                c.split_fractions = {v[0], v[1], v[2]};
            } else {
                c.split_fractions = {s.at("train").get<double>(), s.at("val").get<double>(),
                                     s.at("test").get<double>()};
            }
        }
        if (doc.contains("independent_cells")) c.independent_cells = doc["independent_cells"].get<bool>();
        if (doc.contains("output_dir")) c.output_dir = doc["output_dir"].get<std::string>();
        if (doc.contains("workers")) c.workers = doc["workers"].get<unsigned>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    return c;
}

GenerationConfig load_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(doc);
}

json config_to_json(const GenerationConfig& c) {
    json kinds = json::array();
    for (auto k : c.kinds) kinds.push_back(to_string(k));
    return {{"classes", c.classes},
            {"per_class_whole", c.per_class_whole},
            {"degradation_grid", c.degradation_grid},
            {"kinds", kinds},
            {"master_seed", c.master_seed},
            {"canvas_size", c.canvas_size},
            {"r_min", c.r_min},
            {"stroke_width", c.stroke_width},
            {"split_fractions",
             {{"train", c.split_fractions.train},
              {"val", c.split_fractions.val},
              {"test", c.split_fractions.test}}},
            {"independent_cells", c.independent_cells}};
}

json record_to_json(const ImageRecord& r) {
    return {{"image_id", r.image_id},
            {"class_label", r.class_label},
            {"polygon", polygon_to_json(r.polygon)},
            {"degradation",
             {{"kind", to_string(r.degradation.kind)}, {"proportion", r.degradation.proportion}}},
            {"base_id", r.base_id},
            {"split", to_string(r.split)},
            {"seed", r.seed},
            {"path", r.path}};
}

ImageRecord record_from_json(const json& j) {
    try {
        ImageRecord r;
        r.image_id = j.at("image_id").get<std::string>();
        r.class_label = j.at("class_label").get<int>();
        r.polygon = polygon_from_json(j.at("polygon"));
        r.degradation.kind = parse_degradation_kind(j.at("degradation").at("kind").get<std::string>());
        r.degradation.proportion = j.at("degradation").at("proportion").get<double>();
        r.base_id = j.at("base_id").get<std::string>();
        r.split = parse_split(j.at("split").get<std::string>());
        r.seed = j.at("seed").get<std::uint64_t>();
        r.path = j.at("path").get<std::string>();
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed manifest record: ") + e.what());
    }
}

std::uint64_t derive_seed(std::uint64_t master_seed, int class_label, std::uint64_t index) {
    std::uint64_t h = splitmix64(master_seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(class_label)));
    return splitmix64(h ^ index);
}

std::uint64_t derive_cell_seed(std::uint64_t base_seed, std::size_t cell) {
    return splitmix64(splitmix64(base_seed) ^ (0xce11000000000000ULL + cell));
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& f) {
    const std::array<double, 3> frac{f.train, f.val, f.test};
    std::array<std::size_t, 3> counts{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        // Slack keeps 0.6 * 10 at 6 despite binary rounding.
        counts[i] = static_cast<std::size_t>(std::floor(static_cast<double>(n) * frac[i] + kFractionSlack));
        assigned += counts[i];
    }
    for (std::size_t i = 0; assigned < n; i = (i + 1) % 3) {
        if (frac[i] > 0.0) {
            ++counts[i];
            ++assigned;
        }
    }
    return counts;
}

Split assign_split(std::size_t rank, std::size_t per_class_whole, const SplitFractions& f) {
    const auto counts = split_counts(per_class_whole, f);
    if (rank < counts[0]) return Split::train;
    if (rank < counts[0] + counts[1]) return Split::val;
    return Split::test;
}

std::vector<std::size_t> split_ranks(std::uint64_t master_seed, int class_label, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(master_seed ^ kSplitDomain, class_label, n));
    rng.shuffle(std::span(order));
    std::vector<std::size_t> rank(n);
    for (std::size_t pos = 0; pos < n; ++pos) rank[order[pos]] = pos;
    return rank;
}

std::string proportion_label(double p_d) {
    const double tenths = std::round(p_d * 1000.0);
    if (std::abs(tenths - p_d * 1000.0) > 1e-6) {
        throw ConfigError("degradation proportion " + std::to_string(p_d) +
                          " is finer than 0.1 percent");
    }
    const auto t = static_cast<long>(tenths);
    char buf[32];
    if (t % 10 == 0) {
        std::snprintf(buf, sizeof buf, "p%03ld", t / 10);
    } else {
        std::snprintf(buf, sizeof buf, "p%03ld_%ld", t / 10, t % 10);
    }
    return buf;
}

Manifest plan_dataset(const GenerationConfig& config) {
    validate(config);
    Manifest m;
    m.config = config;
    m.records.reserve(config.expected_record_count());

    for (int label : config.classes) {
        const auto ranks = split_ranks(config.master_seed, label, config.per_class_whole);
        for (std::size_t index = 0; index < config.per_class_whole; ++index) {
            const std::uint64_t seed = derive_seed(config.master_seed, label, index);
            Rng rng(seed);
            ImageRecord base;
            base.image_id = hex16(seed);
            base.class_label = label;
            base.polygon = sample_polygon(rng, label, config.canvas_size, config.r_min,
                                          config.stroke_width);
            base.base_id = base.image_id;
            base.split = assign_split(ranks[index], config.per_class_whole, config.split_fractions);
            base.seed = seed;
            const std::string dir =
                std::string(to_string(base.split)) + "/" + std::to_string(label) + "/";
            base.path = dir + "none/p000/" + base.image_id + ".png";
            m.records.push_back(base);

            std::size_t cell = 0;
            for (double p : config.degradation_grid) {
                const std::string plabel = proportion_label(p);
                for (DegradationKind kind : config.kinds) {
                    ImageRecord r = base;
                    r.degradation = {kind, p};
                    r.image_id = base.image_id + "-" + std::string(to_string(kind)) + "-" + plabel;
                    r.path = dir + std::string(to_string(kind)) + "/" + plabel + "/" + r.image_id + ".png";
                    if (config.independent_cells) {
                        r.seed = derive_cell_seed(seed, cell);
                        Rng cell_rng(r.seed);
                        r.polygon = sample_polygon(cell_rng, label, config.canvas_size, config.r_min,
                                                   config.stroke_width);
                    }
                    m.records.push_back(std::move(r));
                    ++cell;
                }
            }
        }
    }

    std::unordered_map<std::string_view, std::size_t> ids;
    ids.reserve(m.records.size());
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        if (!ids.emplace(m.records[i].image_id, i).second) {
            throw ConfigError("derived image id collision on " + m.records[i].image_id);
        }
    }
    return m;
}

void write_manifest(const Manifest& manifest, const fs::path& dir) {
    std::string lines;
    lines.reserve(manifest.records.size() * 360);
    for (const auto& r : manifest.records) {
        lines += record_to_json(r).dump();
        lines += '\n';
    }
    const json header = {{"version", manifest.version},
                         {"config", config_to_json(manifest.config)},
                         {"record_count", manifest.records.size()},
                         {"records_file", kManifestRecordsName}};
    // Records first, header last: a present header implies complete records.
    write_text_atomically(dir / kManifestRecordsName, lines);
    write_text_atomically(dir / kManifestHeaderName, header.dump(2) + "\n");
}

Manifest generate_dataset(const GenerationConfig& config) {
    Manifest m = plan_dataset(config);
    const fs::path& out = config.output_dir;
    if (out.empty()) throw ConfigError("output_dir is required");

    const fs::path marker = out / kIncompleteMarkerName;
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
    fs::remove(out / kManifestHeaderName, ec);
    {
        std::ofstream mark(marker);
        if (!mark) throw IoError("cannot write " + marker.string());
        mark << "generation in progress or aborted\n";
    }

    std::set<fs::path> dirs;
    for (const auto& r : m.records) dirs.insert((out / r.path).parent_path());
    for (const auto& d : dirs) {
        fs::create_directories(d, ec);
        if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
    }

    const std::size_t group = 1 + config.cells_per_base();
    const std::size_t groups = m.records.size() / group;
    parallel_for(groups, resolve_workers(config.workers, groups), [&](std::size_t g) {
        const ImageRecord& base = m.records[g * group];
        const Canvas whole = render_polygon(base.polygon, config.canvas_size);
        write_png_file(out / base.path, whole);
        for (std::size_t c = 1; c < group; ++c) {
            const ImageRecord& r = m.records[g * group + c];
            Canvas img = r.polygon == base.polygon ? whole : render_polygon(r.polygon, config.canvas_size);
            stamp_disks_in_place(img, erasure_disks(r.polygon, r.degradation));
            write_png_file(out / r.path, img);
        }
    });

    write_manifest(m, out);
    fs::remove(marker, ec);
    return m;
}

fs::path dataset_root(const fs::path& where) {
    if (fs::is_directory(where)) return where;
    return where.parent_path().empty() ? fs::path(".") : where.parent_path();
}

Manifest load_manifest(const fs::path& where) {
    const fs::path root = dataset_root(where);
    const bool records_given = !fs::is_directory(where) && where.extension() == ".jsonl";
    const fs::path header_path =
        fs::is_directory(where) || records_given ? root / kManifestHeaderName : where;
    fs::path records_path = records_given ? where : root / kManifestRecordsName;

    Manifest m;
    if (fs::exists(header_path)) {
        std::ifstream in(header_path);
        try {
            const json header = json::parse(in);
            m.config = config_from_json(header.at("config"));
            m.version = header.at("version").get<std::string>();
            if (!records_given && header.contains("records_file")) {
                records_path = root / header["records_file"].get<std::string>();
            }
        } catch (const json::exception& e) {
            throw ParseError("malformed manifest header " + header_path.string() + ": " + e.what());
        }
    } else if (!records_given) {
        throw IoError("no manifest header at " + header_path.string());
    }

    std::ifstream in(records_path);
    if (!in) throw IoError("cannot open " + records_path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            m.records.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError(records_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            throw ParseError(records_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return m;
}

json report_to_json(const VerificationReport& r) {
    auto flags = [](const std::vector<VerificationFlag>& v) {
        json out = json::array();
        for (const auto& f : v) {
            json j = {{"image_id", f.image_id}, {"reason", f.reason}, {"declared", f.declared}};
            j["measured"] = f.measured ? json(*f.measured) : json(nullptr);
            out.push_back(std::move(j));
        }
        return out;
    };
    return {{"checked", r.checked},
            {"degraded_checked", r.degraded_checked},
            {"max_abs_deviation", r.max_abs_deviation},
            {"mean_abs_deviation", r.mean_abs_deviation},
            {"mean_signed_deviation", r.mean_signed_deviation},
            {"tolerance", r.tolerance},
            {"flagged", flags(r.flagged)},
            {"unreadable", flags(r.unreadable)},
            {"ok", r.ok()}};
}

VerificationReport verify_dataset(const Manifest& manifest, const fs::path& root,
                                  double tolerance, unsigned workers) {
    const int canvas_size = manifest.config.canvas_size;

    // Group records under their base, preserving manifest order.
    std::unordered_map<std::string_view, std::size_t> group_of;
    std::vector<std::vector<std::size_t>> groups;
    std::unordered_map<std::string_view, std::size_t> record_of;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        record_of.emplace(manifest.records[i].image_id, i);
    }
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        auto [it, inserted] = group_of.emplace(r.base_id, groups.size());
        if (inserted) groups.emplace_back();
        groups[it->second].push_back(i);
    }

    struct Outcome {
        std::optional<double> deviation;
        std::optional<VerificationFlag> flag;
        std::optional<VerificationFlag> unreadable;
    };
    std::vector<Outcome> outcomes(manifest.records.size());

    parallel_for(groups.size(), resolve_workers(workers, groups.size()), [&](std::size_t g) {
        const auto& members = groups[g];
        const std::string& base_id = manifest.records[members.front()].base_id;
        const auto base_it = record_of.find(base_id);
        std::optional<Canvas> base_img;
        std::string base_problem;
        if (base_it == record_of.end()) {
            base_problem = "base record " + base_id + " missing from manifest";
        } else {
            try {
                base_img = read_png_file(root / manifest.records[base_it->second].path);
            } catch (const Error& e) {
                base_problem = std::string("base image unreadable: ") + e.what();
            }
        }

        for (std::size_t i : members) {
            const auto& r = manifest.records[i];
            Outcome& o = outcomes[i];
            const VerificationFlag stub{r.image_id, "", r.degradation.proportion, std::nullopt};
            try {
                const Canvas img = read_png_file(root / r.path);
                double measured;
                if (r.is_whole()) {
                    measured = measure_degradation(render_polygon(r.polygon, canvas_size), img);
                } else if (base_it != record_of.end() &&
                           manifest.records[base_it->second].polygon == r.polygon) {
                    if (!base_img) {
                        o.unreadable = stub;
                        o.unreadable->reason = base_problem;
                        continue;
                    }
                    measured = measure_degradation(*base_img, img);
                } else {
                    measured = measure_degradation(render_polygon(r.polygon, canvas_size), img);
                }
                const double dev = measured - r.degradation.proportion;
                o.deviation = dev;
                if (std::abs(dev) > tolerance) {
                    o.flag = stub;
                    o.flag->reason = "deviation beyond tolerance";
                    o.flag->measured = measured;
                }
            } catch (const Error& e) {
                o.unreadable = stub;
                o.unreadable->reason = e.what();
            }
        }
    });

    VerificationReport report;
    report.tolerance = tolerance;
    double abs_sum = 0.0;
    double signed_sum = 0.0;
    report.deviations.reserve(outcomes.size());
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const auto& o = outcomes[i];
        report.deviations.push_back(o.deviation);
        if (o.unreadable) report.unreadable.push_back(*o.unreadable);
        if (o.flag) report.flagged.push_back(*o.flag);
        if (!o.deviation) continue;
        ++report.checked;
        if (manifest.records[i].is_whole()) continue;
        ++report.degraded_checked;
        abs_sum += std::abs(*o.deviation);
        signed_sum += *o.deviation;
        report.max_abs_deviation = std::max(report.max_abs_deviation, std::abs(*o.deviation));
    }
    if (report.degraded_checked > 0) {
        report.mean_abs_deviation = abs_sum / static_cast<double>(report.degraded_checked);
        report.mean_signed_deviation = signed_sum / static_cast<double>(report.degraded_checked);
    }
    return report;
}

}  // namespace polyrecover
