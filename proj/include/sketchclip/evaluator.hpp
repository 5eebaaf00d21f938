#pragma once
// Few-shot / zero-shot evaluation and its report files.

#include "sketchclip/model.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sketchclip {

struct SamplePrediction {
    std::string id;
    SketchSource source = SketchSource::TuBerlin;
    int label = -1;
    int predicted = -1;
    double label_probability = 0.0;
    AbstractionDistribution abstraction{};
    AbstractionLevel abstraction_label = AbstractionLevel::Medium;
};

struct CountCorrect {
    std::size_t count = 0;
    std::size_t correct = 0;
    double accuracy() const { return count ? 100.0 * static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
};

inline constexpr int kHistogramBins = 10;
inline constexpr int kCurveBins = 5;

struct EvalReport {
    std::string which;  // "seen" or "unseen"
    std::vector<std::string> label_space;
    std::size_t samples = 0;
    double top1 = 0.0;                  // percent
    double abstraction_accuracy = 0.0;  // percent
    std::map<std::string, CountCorrect> per_category;
    std::map<std::string, CountCorrect> per_source;  // EM / TU / QD
    // Own-abstraction-class membership a[label] in ten bins over [0, 1].
    std::array<std::size_t, kHistogramBins> membership_histogram{};
    // Top-1 accuracy against the predicted expected abstraction
    // E[A] = 0.5 a_m + a_h, in equal bins over [0, 1].
    std::array<CountCorrect, kCurveBins> accuracy_by_abstraction{};
    std::vector<SamplePrediction> predictions;  // sorted by id
};

// Samples carry category indices into `label_space`. Independent of sample order.
EvalReport evaluate(const Model& model, std::span<const LabeledSample> samples,
                    std::span<const std::string> label_space, const std::string& which);

nlohmann::json to_json(const EvalReport& report);

// report.json, per_category.csv, per_source.csv, abstraction.csv,
// accuracy_vs_abstraction.png and membership_histogram.png.
void write_report(const EvalReport& report, const std::filesystem::path& dir);

void plot_membership_histogram(const EvalReport& report, const std::filesystem::path& path);
void plot_accuracy_curve(const EvalReport& report, const std::filesystem::path& path);

}  // namespace sketchclip
