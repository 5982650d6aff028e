#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "polyrecover/geometry.hpp"

namespace polyrecover {

inline constexpr std::string_view kPipelineVersion = "polyrecover-1.0.0";
inline constexpr std::string_view kManifestHeaderName = "manifest.json";
inline constexpr std::string_view kManifestRecordsName = "manifest.jsonl";
inline constexpr std::string_view kIncompleteMarkerName = "INCOMPLETE";

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SplitFractions {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;

    bool operator==(const SplitFractions&) const = default;
};

struct GenerationConfig {
    std::vector<int> classes{3, 4, 5, 6, 7, 8};
    std::size_t per_class_whole = 1000;
    std::vector<double> degradation_grid{0.10, 0.15, 0.20, 0.25, 0.30, 0.40, 0.50, 0.60, 0.70};
    std::vector<DegradationKind> kinds{DegradationKind::corner, DegradationKind::edge};
    std::uint64_t master_seed = 0;
    int canvas_size = 224;
    double r_min = 28.0;
    double stroke_width = 2.0;
    SplitFractions split_fractions;
    // Sample a fresh polygon for every (p_d, kind) cell instead of editing the
    // shared whole-shape base.
    bool independent_cells = false;

    // Run settings; they never influence output bytes and are not part of
    // the manifest snapshot.
    std::filesystem::path output_dir;
    unsigned workers = 0;  // 0 = hardware concurrency

    std::size_t cells_per_base() const { return degradation_grid.size() * kinds.size(); }
    std::size_t expected_record_count() const {
        return classes.size() * per_class_whole * (1 + cells_per_base());
    }
};

// Throws ConfigError describing the first violated constraint.
void validate(const GenerationConfig& config);

// Missing fields keep their defaults; unknown fields are rejected.
GenerationConfig config_from_json(const nlohmann::json& doc);
GenerationConfig load_config_file(const std::filesystem::path& path);
// Snapshot written to the manifest header (run settings excluded).
nlohmann::json config_to_json(const GenerationConfig& config);

struct ImageRecord {
    std::string image_id;
    int class_label = 0;
    PolygonSpec polygon;
    DegradationSpec degradation;
    std::string base_id;
    Split split = Split::train;
    std::uint64_t seed = 0;
    std::string path;  // relative to the dataset root, '/' separated

    bool is_whole() const { return degradation.kind == DegradationKind::none; }
    bool operator==(const ImageRecord&) const = default;
};

nlohmann::json record_to_json(const ImageRecord& record);
ImageRecord record_from_json(const nlohmann::json& doc);

struct Manifest {
    GenerationConfig config;
    std::vector<ImageRecord> records;
    std::string version{kPipelineVersion};
};

std::uint64_t derive_seed(std::uint64_t master_seed, int class_label, std::uint64_t index);

// Seed of cell `cell` for base seed `base_seed` (independent_cells mode).
std::uint64_t derive_cell_seed(std::uint64_t base_seed, std::size_t cell);

// Counts per split: floor(n * fraction) each, leftovers handed out one at a
// time to train, then val, then test (skipping zero fractions).
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& fractions);

// Split of the base that sits at position `rank` of its class permutation.
Split assign_split(std::size_t rank, std::size_t per_class_whole, const SplitFractions& fractions);

// rank_of[index] for every base index of a class, from a seeded shuffle.
std::vector<std::size_t> split_ranks(std::uint64_t master_seed, int class_label, std::size_t n);

// Directory label for a proportion: whole percents as "p050", others with one
// decimal as "p012_5". Throws ConfigError for finer proportions.
std::string proportion_label(double p_d);

// Full manifest without touching the filesystem; records are ordered by
// (class, index, cell) with the whole shape first in each group.
Manifest plan_dataset(const GenerationConfig& config);

// Renders and writes every record, then writes the manifest atomically.
// Output bytes depend only on the config, never on config.workers.
Manifest generate_dataset(const GenerationConfig& config);

void write_manifest(const Manifest& manifest, const std::filesystem::path& dir);

// Accepts a dataset directory, its manifest.json, or its manifest.jsonl.
Manifest load_manifest(const std::filesystem::path& where);
// Directory that record paths are relative to.
std::filesystem::path dataset_root(const std::filesystem::path& where);

struct VerificationFlag {
    std::string image_id;
    std::string reason;
    double declared = 0.0;
    std::optional<double> measured;
};

struct VerificationReport {
    std::size_t checked = 0;
    std::size_t degraded_checked = 0;
    double max_abs_deviation = 0.0;
    double mean_abs_deviation = 0.0;
    double mean_signed_deviation = 0.0;
    double tolerance = 0.04;
    std::vector<VerificationFlag> flagged;  // beyond tolerance
    std::vector<VerificationFlag> unreadable;  // missing or corrupt files
    // measured - declared per manifest record; empty when unreadable.
    std::vector<std::optional<double>> deviations;

    bool ok() const { return flagged.empty() && unreadable.empty(); }
};

nlohmann::json report_to_json(const VerificationReport& report);

// Degraded records are measured against their base image file; whole records
// against a fresh render of their spec (so tampering shows up as deviation).
VerificationReport verify_dataset(const Manifest& manifest, const std::filesystem::path& root,
                                  double tolerance = 0.04, unsigned workers = 0);

}  // namespace polyrecover
