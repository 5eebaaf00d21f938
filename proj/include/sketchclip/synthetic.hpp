#pragma once
// Procedural sketch fixtures: simple shape categories drawn at a continuous
// abstraction level (0 = detailed and clean, 1 = sparse and sloppy). Used by
// the tests, the acceptance suite and `sketchclip synth-data`.

#include "sketchclip/dataset.hpp"

#include <random>
#include <string>
#include <vector>

namespace sketchclip {

const std::vector<std::string>& synthetic_category_names();

// Throws InputError for an unknown category.
VectorSketch synthesize_sketch(const std::string& category, double abstraction, std::mt19937_64& rng);

struct SyntheticSourceSpec {
    SketchSource source = SketchSource::TuBerlin;
    // Abstraction is drawn uniformly from [center - spread, center + spread].
    double center = 0.5;
    double spread = 0.05;
};

struct SyntheticOptions {
    std::vector<std::string> categories;
    std::vector<SyntheticSourceSpec> sources = {
        {SketchSource::Edgemap, 0.0, 0.05}, {SketchSource::TuBerlin, 0.5, 0.05}, {SketchSource::QuickDraw, 1.0, 0.05}};
    int per_source = 10;
    int raster_side = 16;
    double stroke_width = 1.5;
    std::uint64_t seed = 0;
    std::string id_prefix;
};

// Edgemap samples get a thicker, speckled raster and no vector; stroke
// sources keep their vector. Category indices follow options.categories.
std::vector<LabeledSample> make_synthetic_dataset(const SyntheticOptions& options);

// A single sample at an explicit abstraction level.
LabeledSample make_synthetic_sample(const std::string& category, int category_index, SketchSource source,
                                    double abstraction, int raster_side, double stroke_width, std::mt19937_64& rng,
                                    std::string id);

// Overlap benchmark: source abstraction ranges of half-width 0.35 around
// 0, 0.5 and 1, so neighbouring sources share levels.
SyntheticOptions overlap_benchmark_options(std::vector<std::string> categories, int per_source, std::uint64_t seed);

// Stroke sketches drawn at the given in-between abstraction levels, standing
// in for a source never seen in training. Labelled TU / medium.
std::vector<LabeledSample> make_intermediate_samples(const std::vector<std::string>& categories,
                                                     const std::vector<double>& levels, int per_level,
                                                     std::uint64_t seed, int raster_side = 16);

}  // namespace sketchclip
