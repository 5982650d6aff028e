#include "polyrecover/cli.hpp"

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "polyrecover/datagen.hpp"
#include "polyrecover/errors.hpp"
#include "polyrecover/evalmetrics.hpp"
#include "polyrecover/http_service.hpp"
#include "polyrecover/png.hpp"
#include "polyrecover/raster.hpp"
#include "polyrecover/trial.hpp"

namespace polyrecover {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags every subcommand carries.
struct CommonFlags {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
};

CLI::App* add_common(CLI::App& app, CommonFlags& flags) {
    app.add_option("--seed", flags.seed, "Master / session seed");
    app.add_option("--config", flags.config, "JSON config file");
    app.add_option("--out", flags.out, "Output path");
    return &app;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + " is not valid JSON: " + e.what());
    }
}

// For subcommands other than gen, --config holds {"option-name": value}
// pairs that fill options not given on the command line.
void apply_option_config(CLI::App& app, const std::string& config_path) {
    if (config_path.empty()) return;
    const json doc = read_json_file(config_path);
    if (!doc.is_object()) throw ConfigError("--config must hold a JSON object");
    for (const auto& [key, value] : doc.items()) {
        CLI::Option* opt = nullptr;
        try {
            opt = app.get_option("--" + key);
        } catch (const CLI::OptionNotFound&) {
            throw ConfigError("unknown option '" + key + "' in " + config_path);
        }
        if (opt->count() > 0) continue;
        const auto add = [&](const json& v) { opt->add_result(v.is_string() ? v.get<std::string>() : v.dump()); };
        if (value.is_array()) {
            for (const auto& v : value) add(v);
        } else {
            add(value);
        }
        opt->run_callback();
    }
}

// Required options are checked after --config has been applied, so that a
// config file can supply them.
void check_required(const CLI::App& app) {
    for (const CLI::Option* opt : app.get_options()) {
        if (opt->get_group() == "Required" && opt->count() == 0) {
            throw ValidationError(opt->get_name() + " is required");
        }
    }
}

PolygonSpec load_spec_record(const fs::path& path) {
    const json doc = read_json_file(path);
    const json& poly = doc.contains("polygon") ? doc["polygon"] : doc;
    try {
        PolygonSpec s;
        s.n_sides = poly.at("n_sides").get<int>();
        const json& c = poly.at("center");
        s.center = c.is_array() ? Point{c.at(0).get<double>(), c.at(1).get<double>()}
                                : Point{c.at("x").get<double>(), c.at("y").get<double>()};
        s.circumradius = poly.at("circumradius").get<double>();
        s.rotation = poly.at("rotation").get<double>();
        s.stroke_width = poly.value("stroke_width", 2.0);
        return s;
    } catch (const json::exception& e) {
        throw ValidationError("spec record " + path.string() + " is malformed: " + e.what());
    }
}

std::atomic<TrialHttpServer*> g_server{nullptr};

extern "C" void handle_stop_signal(int) {
    if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_dispatch(args, out, err);
}

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Degraded regular-polygon dataset generator and evaluation harness", "polyrecover"};
    app.require_subcommand(1);

    // gen
    CommonFlags gen_flags;
    unsigned gen_workers = 0;
    std::optional<std::size_t> gen_per_class;
    bool gen_independent = false;
    auto* gen = add_common(*app.add_subcommand("gen", "Generate a dataset"), gen_flags);
    gen->add_option("--workers", gen_workers, "Worker threads (0 = all cores)");
    gen->add_option("--per-class", gen_per_class, "Whole shapes per class");
    gen->add_flag("--independent-cells", gen_independent, "Resample the polygon for every cell");

    // degrade
    CommonFlags deg_flags;
    std::string deg_image, deg_spec, deg_kind = "corner";
    double deg_pd = 0.0;
    auto* degrade = add_common(*app.add_subcommand("degrade", "Degrade one whole-shape PNG"), deg_flags);
    degrade->add_option("--image", deg_image, "Whole-shape PNG")->group("Required");
    degrade->add_option("--spec", deg_spec, "JSON polygon spec or manifest record")->group("Required");
    degrade->add_option("--kind", deg_kind, "corner | edge | none");
    degrade->add_option("--pd", deg_pd, "Degradation proportion in [0, 1)")->group("Required");

    // verify
    CommonFlags ver_flags;
    std::string ver_dataset;
    double ver_tol = 0.04;
    unsigned ver_workers = 0;
    auto* verify = add_common(*app.add_subcommand("verify", "Re-measure degradation of a dataset"), ver_flags);
    verify->add_option("--dataset,--manifest", ver_dataset, "Dataset dir or manifest file")->group("Required");
    verify->add_option("--tolerance", ver_tol, "Allowed |measured - p_d|");
    verify->add_option("--workers", ver_workers, "Worker threads (0 = all cores)");

    // eval
    CommonFlags eval_flags;
    std::string eval_preds, eval_manifest, eval_baseline;
    std::vector<std::size_t> eval_topk;
    auto* eval = add_common(*app.add_subcommand("eval", "Score a predictions CSV"), eval_flags);
    eval->add_option("--predictions", eval_preds, "Predictions CSV")->group("Required");
    eval->add_option("--manifest", eval_manifest, "Dataset dir or manifest file")->group("Required");
    eval->add_option("--baseline", eval_baseline, "Baseline CSV (p_d,kind,accuracy) to overlay");
    eval->add_option("--topk", eval_topk, "Also report top-k accuracy for these k");

    // serve
    CommonFlags srv_flags;
    std::string srv_dataset, srv_host = "127.0.0.1", srv_log, srv_ui, srv_mask = "white";
    std::optional<int> srv_port;
    std::vector<int> srv_exposures{100, 200, 750};
    auto* serve = add_common(*app.add_subcommand("serve", "Run the trial service"), srv_flags);
    serve->add_option("--dataset", srv_dataset, "Dataset dir or manifest file")->group("Required");
    serve->add_option("--port", srv_port, std::string("Port (default $") + kPortEnvVar + " or 8080)");
    serve->add_option("--host", srv_host, "Bind address");
    serve->add_option("--log", srv_log, "Response log (default <out>/responses.jsonl)");
    serve->add_option("--exposures", srv_exposures, "Allowed exposure durations in ms");
    serve->add_option("--mask", srv_mask, "Post-stimulus mask");
    serve->add_option("--ui", srv_ui, "Static directory served under /ui");

    // export-human
    CommonFlags exp_flags;
    std::string exp_log;
    std::optional<std::vector<std::string>> exp_sessions;
    auto* export_human = add_common(*app.add_subcommand("export-human", "Dump trial responses as predictions"), exp_flags);
    export_human->add_option("--log", exp_log, "Response log")->group("Required");
    export_human->add_option("--session", exp_sessions, "Only these sessions");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
        for (auto [sub, flags] : {std::pair{degrade, &deg_flags}, {verify, &ver_flags}, {eval, &eval_flags},
                                  {serve, &srv_flags}, {export_human, &exp_flags}}) {
            if (!sub->parsed()) continue;
            apply_option_config(*sub, flags->config);
            check_required(*sub);
        }
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitValidation;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const CLI::Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    }

    try {
        if (gen->parsed()) {
            GenerationConfig config = gen_flags.config.empty() ? GenerationConfig{} : load_config_file(gen_flags.config);
            if (gen_flags.seed) config.master_seed = *gen_flags.seed;
            if (!gen_flags.out.empty()) config.output_dir = gen_flags.out;
            if (gen->count("--workers")) config.workers = gen_workers;
            if (gen_per_class) config.per_class_whole = *gen_per_class;
            if (gen_independent) config.independent_cells = true;
            if (config.output_dir.empty()) throw ConfigError("--out (or output_dir in the config) is required");

            const auto t0 = std::chrono::steady_clock::now();
            const Manifest m = generate_dataset(config);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            out << json{{"records", m.records.size()},
                        {"output_dir", config.output_dir.string()},
                        {"seconds", secs}}.dump()
                << '\n';
            return kExitOk;
        }

        if (degrade->parsed()) {
            if (deg_flags.out.empty()) throw ValidationError("--out is required");
            const PolygonSpec spec = load_spec_record(deg_spec);
            const DegradationSpec deg{parse_degradation_kind(deg_kind), deg_pd};
            const Canvas whole = read_png_file(deg_image);
            validate_for_canvas(spec, whole.width());
            const Canvas degraded = stamp_disks(whole, erasure_disks(spec, deg));
            write_png_file(deg_flags.out, degraded);
            out << json{{"out", deg_flags.out}, {"measured", measure_degradation(whole, degraded)}}.dump() << '\n';
            return kExitOk;
        }

        if (verify->parsed()) {
            const Manifest m = load_manifest(ver_dataset);
            const VerificationReport report = verify_dataset(m, dataset_root(ver_dataset), ver_tol, ver_workers);
            const json doc = report_to_json(report);
            if (!ver_flags.out.empty()) {
                std::ofstream f(ver_flags.out);
                if (!(f << doc.dump(2) << '\n')) throw IoError("cannot write " + ver_flags.out);
            }
            out << json{{"checked", report.checked},
                        {"max_abs_deviation", report.max_abs_deviation},
                        {"mean_abs_deviation", report.mean_abs_deviation},
                        {"flagged", report.flagged.size()},
                        {"unreadable", report.unreadable.size()}}.dump()
                << '\n';
            for (const auto& f : report.flagged) err << "flagged " << f.image_id << ": " << f.reason << '\n';
            for (const auto& f : report.unreadable) err << "unreadable " << f.image_id << ": " << f.reason << '\n';
            if (!report.unreadable.empty()) return kExitIo;
            return report.flagged.empty() ? kExitOk : kExitValidation;
        }

        if (eval->parsed()) {
            const ManifestIndex index(load_manifest(eval_manifest));
            const PredictionSet preds = load_predictions(eval_preds, index);
            const MetricsReport report = accuracy_by_cell(preds, index);
            std::vector<BaselinePoint> baseline;
            if (!eval_baseline.empty()) baseline = load_baseline_csv(eval_baseline);
            const fs::path dir = eval_flags.out.empty() ? fs::path("report") : fs::path(eval_flags.out);
            export_report(report, dir, baseline);

            json summary = {{"rows", preds.rows.size()}, {"cells", report.cells.size()}, {"out", dir.string()}};
            json diff = json::object();
            for (const auto& [p, v] : report.differential) diff[format_number(p)] = to_double(v);
            summary["differential"] = diff;
            for (std::size_t k : eval_topk) summary["top" + std::to_string(k)] = topk_accuracy(preds, index, k);
            out << summary.dump() << '\n';
            for (const auto& w : report.warnings) err << "warning: " << w << '\n';
            return kExitOk;
        }

        if (serve->parsed()) {
            const fs::path log_path = !srv_log.empty()       ? fs::path(srv_log)
                                      : !srv_flags.out.empty() ? fs::path(srv_flags.out) / "responses.jsonl"
                                                               : fs::path("responses.jsonl");
            TrialService service(load_manifest(srv_dataset), dataset_root(srv_dataset), log_path,
                                 TrialOptions{srv_exposures, srv_mask, srv_flags.seed.value_or(0)});
            std::optional<fs::path> ui;
            if (!srv_ui.empty()) ui = srv_ui;
            TrialHttpServer server(service, ui);
            const int port = server.bind(srv_host, srv_port.value_or(port_from_env()));
            out << "serving on http://" << srv_host << ':' << port << " (log " << log_path.string() << ")" << std::endl;
            g_server = &server;
            std::signal(SIGINT, handle_stop_signal);
            std::signal(SIGTERM, handle_stop_signal);
            server.serve();
            g_server = nullptr;
            return kExitOk;
        }

        if (export_human->parsed()) {
            const auto responses = read_logged_responses(exp_log);
            std::optional<std::set<std::string>> filter;
            if (exp_sessions) filter = std::set<std::string>(exp_sessions->begin(), exp_sessions->end());
            const std::string csv = export_human_predictions(responses, filter);
            if (exp_flags.out.empty()) {
                out << csv;
            } else {
                std::ofstream f(exp_flags.out, std::ios::binary);
                if (!(f << csv)) throw IoError("cannot write " + exp_flags.out);
            }
            return kExitOk;
        }
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitIo;
    }
    return kExitValidation;
}

}  // namespace polyrecover
