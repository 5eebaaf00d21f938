#include "sketchclip/evaluator.hpp"

#include "sketchclip/errors.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sketchclip {

namespace {

int bin_of(double v, int bins) {
    const int b = static_cast<int>(std::floor(v * bins));
    return std::clamp(b, 0, bins - 1);
}

}  // namespace

EvalReport evaluate(const Model& model, std::span<const LabeledSample> samples,
                    std::span<const std::string> label_space, const std::string& which) {
    if (which != "seen" && which != "unseen") throw InputError("evaluation set must be 'seen' or 'unseen'");
    if (label_space.empty()) throw InputError("empty label space for the " + which + " evaluation");
    if (samples.empty()) throw InputError("no samples to evaluate for the " + which + " split");
    EvalReport rep;
    rep.which = which;
    rep.label_space.assign(label_space.begin(), label_space.end());
    const TextCache cache = make_text_cache(model, label_space);
    for (const auto& name : label_space) rep.per_category[name];

    for (const auto& s : samples) {
        if (s.category_index < 0 || s.category_index >= static_cast<int>(label_space.size())) {
            throw InputError("sample " + s.info.id + " has no category in the label space");
        }
        const Prediction p = predict(model, s.raster, cache);
        SamplePrediction sp;
        sp.id = s.info.id;
        sp.source = s.info.source;
        sp.label = s.category_index;
        sp.predicted = static_cast<int>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                                        p.probabilities.begin());
        sp.label_probability = p.probabilities[static_cast<std::size_t>(s.category_index)];
        sp.abstraction = p.abstraction;
        sp.abstraction_label = s.abstraction;
        rep.predictions.push_back(sp);
    }
    std::sort(rep.predictions.begin(), rep.predictions.end(),
              [](const SamplePrediction& a, const SamplePrediction& b) { return a.id < b.id; });

    std::size_t correct = 0, abstraction_correct = 0;
    for (const auto& sp : rep.predictions) {
        const bool ok = sp.predicted == sp.label;
        correct += ok;
        const auto a = std::max_element(sp.abstraction.begin(), sp.abstraction.end()) - sp.abstraction.begin();
        abstraction_correct += a == static_cast<int>(sp.abstraction_label);
        auto& cat = rep.per_category[rep.label_space[static_cast<std::size_t>(sp.label)]];
        ++cat.count;
        cat.correct += ok;
        auto& src = rep.per_source[source_code(sp.source)];
        ++src.count;
        src.correct += ok;
        ++rep.membership_histogram[static_cast<std::size_t>(
            bin_of(sp.abstraction[static_cast<std::size_t>(sp.abstraction_label)], kHistogramBins))];
        const double expected = 0.5 * sp.abstraction[1] + sp.abstraction[2];
        auto& bin = rep.accuracy_by_abstraction[static_cast<std::size_t>(bin_of(expected, kCurveBins))];
        ++bin.count;
        bin.correct += ok;
    }
    rep.samples = rep.predictions.size();
    const double n = static_cast<double>(rep.samples);
    rep.top1 = 100.0 * static_cast<double>(correct) / n;
    rep.abstraction_accuracy = 100.0 * static_cast<double>(abstraction_correct) / n;
    return rep;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["which"] = r.which;
    j["label_space"] = r.label_space;
    j["samples"] = r.samples;
    j["top1"] = r.top1;
    j["top1_" + r.which] = r.top1;
    j["abstraction_accuracy"] = r.abstraction_accuracy;
    for (const auto& [name, c] : r.per_category) {
        j["per_category"][name] = {{"count", c.count}, {"correct", c.correct}, {"accuracy", c.accuracy()}};
    }
    for (const auto& [name, c] : r.per_source) {
        j["per_source"][name] = {{"count", c.count}, {"correct", c.correct}, {"accuracy", c.accuracy()}};
    }
    j["membership_histogram"] = r.membership_histogram;
    for (const auto& c : r.accuracy_by_abstraction) {
        j["accuracy_by_abstraction"].push_back({{"count", c.count}, {"correct", c.correct}, {"accuracy", c.accuracy()}});
    }
    return j;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out << std::setprecision(10);
    return out;
}

const cv::Scalar kInk(40, 40, 40);

void axes(cv::Mat& img, int left, int top, int right, int bottom, const std::string& title, const std::string& xlabel) {
    cv::line(img, {left, bottom}, {right, bottom}, kInk, 1, cv::LINE_AA);
    cv::line(img, {left, top}, {left, bottom}, kInk, 1, cv::LINE_AA);
    cv::putText(img, title, {left, top - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.5, kInk, 1, cv::LINE_AA);
    cv::putText(img, xlabel, {(left + right) / 2 - 60, bottom + 36}, cv::FONT_HERSHEY_SIMPLEX, 0.42, kInk, 1,
                cv::LINE_AA);
}

void save_plot(const cv::Mat& img, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) throw InputError("cannot write plot " + path.string());
}

}  // namespace

void plot_membership_histogram(const EvalReport& r, const std::filesystem::path& path) {
    const int w = 520, h = 340, left = 60, right = w - 20, top = 40, bottom = h - 50;
    cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
    axes(img, left, top, right, bottom, "own-abstraction membership (" + r.which + ")", "membership a[label]");
    const std::size_t peak = std::max<std::size_t>(1, *std::max_element(r.membership_histogram.begin(),
                                                                         r.membership_histogram.end()));
    const double bw = static_cast<double>(right - left) / kHistogramBins;
    for (int b = 0; b < kHistogramBins; ++b) {
        const double frac = static_cast<double>(r.membership_histogram[static_cast<std::size_t>(b)]) / peak;
        const int x0 = left + static_cast<int>(b * bw) + 2;
        const int x1 = left + static_cast<int>((b + 1) * bw) - 2;
        const int y0 = bottom - static_cast<int>(frac * (bottom - top));
        cv::rectangle(img, {x0, y0}, {x1, bottom}, cv::Scalar(180, 120, 60), cv::FILLED);
        cv::putText(img, std::to_string(r.membership_histogram[static_cast<std::size_t>(b)]), {x0, y0 - 4},
                    cv::FONT_HERSHEY_SIMPLEX, 0.35, kInk, 1, cv::LINE_AA);
        std::ostringstream tick;
        tick << std::fixed << std::setprecision(1) << static_cast<double>(b) / kHistogramBins;
        cv::putText(img, tick.str(), {x0, bottom + 16}, cv::FONT_HERSHEY_SIMPLEX, 0.35, kInk, 1, cv::LINE_AA);
    }
    save_plot(img, path);
}

void plot_accuracy_curve(const EvalReport& r, const std::filesystem::path& path) {
    const int w = 520, h = 340, left = 60, right = w - 20, top = 40, bottom = h - 50;
    cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
    axes(img, left, top, right, bottom, "top-1 accuracy vs predicted abstraction (" + r.which + ")",
         "expected abstraction E[A]");
    for (int pct : {0, 50, 100}) {
        const int y = bottom - pct * (bottom - top) / 100;
        cv::putText(img, std::to_string(pct), {left - 34, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.35, kInk, 1, cv::LINE_AA);
    }
    std::vector<cv::Point> pts;
    for (int b = 0; b < kCurveBins; ++b) {
        const auto& c = r.accuracy_by_abstraction[static_cast<std::size_t>(b)];
        const int x = left + static_cast<int>((b + 0.5) * (right - left) / kCurveBins);
        std::ostringstream tick;
        tick << std::fixed << std::setprecision(1) << (b + 0.5) / kCurveBins;
        cv::putText(img, tick.str(), {x - 10, bottom + 16}, cv::FONT_HERSHEY_SIMPLEX, 0.35, kInk, 1, cv::LINE_AA);
        if (c.count == 0) continue;
        const int y = bottom - static_cast<int>(c.accuracy() / 100.0 * (bottom - top));
        pts.emplace_back(x, y);
        cv::putText(img, "n=" + std::to_string(c.count), {x - 14, y - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.33, kInk, 1,
                    cv::LINE_AA);
    }
    if (pts.size() > 1) cv::polylines(img, pts, false, cv::Scalar(60, 60, 200), 2, cv::LINE_AA);
    for (const auto& p : pts) cv::circle(img, p, 4, cv::Scalar(60, 60, 200), cv::FILLED, cv::LINE_AA);
    save_plot(img, path);
}

void write_report(const EvalReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    open_out(dir / "report.json") << to_json(r).dump(2) << '\n';
    {
        auto out = open_out(dir / "per_category.csv");
        out << "category,count,correct,accuracy\n";
        for (const auto& [name, c] : r.per_category) {
            out << name << ',' << c.count << ',' << c.correct << ',' << c.accuracy() << '\n';
        }
    }
    {
        auto out = open_out(dir / "per_source.csv");
        out << "source,count,correct,accuracy\n";
        for (const auto& [name, c] : r.per_source) {
            out << name << ',' << c.count << ',' << c.correct << ',' << c.accuracy() << '\n';
        }
    }
    {
        auto out = open_out(dir / "abstraction.csv");
        out << "sample_id,a_l,a_m,a_h,label\n";
        for (const auto& p : r.predictions) {
            out << p.id << ',' << p.abstraction[0] << ',' << p.abstraction[1] << ',' << p.abstraction[2] << ','
                << to_string(p.abstraction_label) << '\n';
        }
    }
    plot_accuracy_curve(r, dir / "accuracy_vs_abstraction.png");
    plot_membership_histogram(r, dir / "membership_histogram.png");
}

}  // namespace sketchclip
