#pragma once
// Sketch datasets: stroke-record ingestion, Edgemap image sets, zero-shot
// Edgemap filtering, seen/unseen few-shot splits and the on-disk manifest.

#include "sketchclip/raster.hpp"
#include "sketchclip/vector_sketch.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sketchclip {

enum class AbstractionLevel : int { Low = 0, Medium = 1, High = 2 };

// Where a sample came from. The coarse abstraction label is a function of the
// source alone: Edgemaps are low, TU-Berlin-style sketches medium and
// QuickDraw-style doodles high.
enum class SketchSource : int { Edgemap = 0, TuBerlin = 1, QuickDraw = 2 };

inline constexpr AbstractionLevel abstraction_of(SketchSource s) { return static_cast<AbstractionLevel>(s); }

std::string to_string(AbstractionLevel level);
std::string to_string(SketchSource source);
// "EM" / "TU" / "QD" (case-insensitive; long names accepted too).
SketchSource parse_source(const std::string& name);
AbstractionLevel parse_abstraction(const std::string& name);
std::string source_code(SketchSource source);

struct SampleInfo {
    std::string id;
    std::string category;
    SketchSource source = SketchSource::TuBerlin;
};

struct LabeledSample {
    SampleInfo info;
    int category_index = -1;
    AbstractionLevel abstraction = AbstractionLevel::Medium;
    RasterSketch raster;
    // Absent for Edgemaps, which carry no stroke order.
    std::optional<VectorSketch> vector;
};

enum class StrokeFormat { Stroke3Delta, Stroke5Absolute };
StrokeFormat parse_stroke_format(const std::string& name);

// One record's sketch (see ingest_stroke_dataset for the layouts).
VectorSketch parse_stroke_record(const nlohmann::json& record, StrokeFormat format, const SketchLimits& limits = {});

struct IngestOptions {
    int raster_side = 224;
    double stroke_width = 2.0;
    std::size_t max_points = 196;
};

struct RecordError {
    std::size_t line = 0;  // 0-based record index
    std::string message;
};

struct IngestResult {
    std::vector<LabeledSample> samples;
    std::vector<RecordError> errors;
    std::size_t rejected_unknown_category = 0;
};

// Newline-delimited JSON. Stroke-3 records look like
//   {"category": "cat", "strokes": [[dx, dy, lift], ...]}
// and stroke-5 records like
//   {"category": "cat", "points": [[x, y, q1, q2, q3], ...]}.
// An optional "id" field names the sample; otherwise ids are derived from
// source, category and record index. Throws InputError when the file is missing.
IngestResult ingest_stroke_dataset(const std::filesystem::path& path, StrokeFormat format, SketchSource source,
                                   std::span<const std::string> categories, const IngestOptions& options = {});

// <dir>/<category>/<image files>, visited in sorted order.
std::vector<LabeledSample> load_edgemap_directory(const std::filesystem::path& dir,
                                                  std::span<const std::string> categories, int raster_side);

// Per-category probabilities for an image over the given names.
using ZeroShotScorer = std::function<std::vector<double>(const RasterSketch&, std::span<const std::string>)>;

struct EdgemapFilterResult {
    std::vector<LabeledSample> kept;
    std::vector<std::string> warnings;
};

// Keeps, per category, the ceil(keep_fraction * n) images with the highest
// probability of their own category; ties go to the smaller source id.
EdgemapFilterResult filter_edgemaps(std::vector<LabeledSample> images, std::span<const std::string> category_names,
                                    const ZeroShotScorer& scorer, double keep_fraction);

struct DatasetSplit {
    std::vector<std::string> seen_categories;
    std::vector<std::string> unseen_categories;
    int shots_per_class = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> train_samples;
    std::vector<std::string> eval_seen_samples;
    std::vector<std::string> eval_unseen_samples;
};

// Per seen category and per source present in `samples`, draws `shots`
// training samples with a seeded shuffle; the remaining seen samples become
// few-shot evaluation samples and every unseen-category sample becomes a
// zero-shot evaluation sample.
DatasetSplit build_split(std::span<const SampleInfo> samples, std::span<const std::string> seen,
                         std::span<const std::string> unseen, int shots, std::uint64_t seed);

nlohmann::json to_json(const DatasetSplit& split);
DatasetSplit split_from_json(const nlohmann::json& j);
void write_split(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit read_split(const std::filesystem::path& path);

struct ManifestEntry {
    SampleInfo info;
    std::string raster_path;                 // relative to the manifest directory
    std::optional<std::string> vector_path;  // stroke-5 JSON, relative
};

struct Manifest {
    std::vector<std::string> categories;
    int raster_side = 0;
    std::vector<ManifestEntry> entries;
};

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

// Writes raster PNGs and stroke-5 JSON files under `dir` and returns the manifest.
Manifest export_samples(std::span<const LabeledSample> samples, std::span<const std::string> categories,
                        const std::filesystem::path& dir);

// Loads the samples named in `ids` (all samples when empty), resolving
// category indices against `label_space`; samples outside it are skipped.
std::vector<LabeledSample> load_samples(const Manifest& manifest, const std::filesystem::path& manifest_dir,
                                        std::span<const std::string> ids, std::span<const std::string> label_space);

int index_of(std::span<const std::string> names, const std::string& name);

}  // namespace sketchclip
