#include "sketchclip/synthetic.hpp"

#include "sketchclip/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace sketchclip {

namespace {

using Polyline = std::vector<std::pair<double, double>>;

Polyline regular_polygon(int n, double radius, double phase, bool closed = true) {
    Polyline p;
    for (int i = 0; i < n; ++i) {
        const double a = phase + 2.0 * std::numbers::pi * i / n;
        p.emplace_back(radius * std::cos(a), radius * std::sin(a));
    }
    if (closed) p.push_back(p.front());
    return p;
}

std::vector<Polyline> template_strokes(const std::string& category) {
    const double pi = std::numbers::pi;
    if (category == "circle") return {regular_polygon(8, 1.0, 0.0)};
    if (category == "square") return {{{-1, -1}, {1, -1}, {1, 1}, {-1, 1}, {-1, -1}}};
    if (category == "triangle") return {regular_polygon(3, 1.0, -pi / 2)};
    if (category == "cross") return {{{-1, 0}, {1, 0}}, {{0, -1}, {0, 1}}};
    if (category == "star") {
        Polyline p;
        for (int i = 0; i <= 10; ++i) {
            const double r = (i % 2 == 0) ? 1.0 : 0.4;
            const double a = -pi / 2 + pi * i / 5.0;
            p.emplace_back(r * std::cos(a), r * std::sin(a));
        }
        return {p};
    }
    if (category == "zigzag") return {{{-1, 0.5}, {-0.5, -0.5}, {0, 0.5}, {0.5, -0.5}, {1, 0.5}}};
    if (category == "spiral") {
        Polyline p;
        for (int i = 0; i <= 12; ++i) {
            const double t = i / 12.0;
            p.emplace_back(t * std::cos(3.0 * pi * t), t * std::sin(3.0 * pi * t));
        }
        return {p};
    }
    if (category == "house") return {{{-1, 0}, {-1, 1}, {1, 1}, {1, 0}, {-1, 0}}, {{-1, 0}, {0, -1}, {1, 0}}};
    if (category == "arrow") return {{{-1, 0}, {1, 0}}, {{0.4, -0.5}, {1, 0}, {0.4, 0.5}}};
    if (category == "diamond") return {regular_polygon(4, 1.0, 0.0)};
    throw InputError("unknown synthetic category '" + category + "'");
}

}  // namespace

const std::vector<std::string>& synthetic_category_names() {
    static const std::vector<std::string> names = {"circle", "square", "triangle", "cross", "star",
                                                   "zigzag", "spiral", "house",    "arrow", "diamond"};
    return names;
}

VectorSketch synthesize_sketch(const std::string& category, double abstraction, std::mt19937_64& rng) {
    const double a = std::clamp(abstraction, 0.0, 1.0);
    std::vector<Polyline> strokes = template_strokes(category);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Detailed sketches carry an inner echo of the outline.
    if (unit(rng) < 0.9 * (1.0 - a)) {
        Polyline inner;
        for (auto [x, y] : strokes.front()) inner.emplace_back(0.55 * x, 0.55 * y);
        strokes.push_back(std::move(inner));
    }
    // Sloppy sketches lose strokes or the tail of a single stroke.
    if (strokes.size() > 1 && unit(rng) < 0.5 * a) strokes.pop_back();
    if (strokes.size() == 1 && strokes.front().size() > 3) {
        const double keep = 1.0 - 0.3 * a * unit(rng);
        const auto n = std::max<std::size_t>(3, static_cast<std::size_t>(std::round(keep * strokes.front().size())));
        strokes.front().resize(std::min(n, strokes.front().size()));
    }

    const int subdivisions = 1 + static_cast<int>(std::lround(3.0 * (1.0 - a)));
    const double jitter = 0.02 + 0.10 * a;
    const double rot = 0.3 * a * normal(rng);
    const double stretch = 1.0 + 0.15 * a * normal(rng);
    const double c = std::cos(rot), s = std::sin(rot);

    std::vector<StrokePoint> pts;
    for (const auto& stroke : strokes) {
        for (std::size_t i = 0; i < stroke.size(); ++i) {
            const int steps = (i + 1 < stroke.size()) ? subdivisions : 1;
            for (int k = 0; k < steps; ++k) {
                const double t = static_cast<double>(k) / subdivisions;
                double x = stroke[i].first, y = stroke[i].second;
                if (i + 1 < stroke.size()) {
                    x += t * (stroke[i + 1].first - x);
                    y += t * (stroke[i + 1].second - y);
                }
                x = x * stretch + jitter * normal(rng);
                y = y + jitter * normal(rng);
                pts.push_back({c * x - s * y, s * x + c * y, PenState::Down});
            }
        }
        pts.back().pen = PenState::Up;
    }
    return from_absolute(pts);
}

LabeledSample make_synthetic_sample(const std::string& category, int category_index, SketchSource source,
                                    double abstraction, int raster_side, double stroke_width, std::mt19937_64& rng,
                                    std::string id) {
    LabeledSample s;
    s.info = {std::move(id), category, source};
    s.category_index = category_index;
    s.abstraction = abstraction_of(source);
    VectorSketch v = synthesize_sketch(category, abstraction, rng);
    if (source == SketchSource::Edgemap) {
        s.raster = rasterize_for_backbone(v, raster_side, stroke_width * 1.6);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (int y = 0; y < raster_side; ++y) {
            for (int x = 0; x < raster_side; ++x) {
                if (unit(rng) < 0.04) {
                    const auto shade = static_cast<float>(0.3 + 0.4 * unit(rng));
                    for (int ch = 0; ch < 3; ++ch) s.raster.at(ch, y, x) = std::min(s.raster.at(ch, y, x), shade);
                }
            }
        }
    } else {
        s.raster = rasterize_for_backbone(v, raster_side, stroke_width);
        s.vector = std::move(v);
    }
    return s;
}

std::vector<LabeledSample> make_synthetic_dataset(const SyntheticOptions& options) {
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<LabeledSample> out;
    for (std::size_t c = 0; c < options.categories.size(); ++c) {
        for (const auto& src : options.sources) {
            for (int i = 0; i < options.per_source; ++i) {
                const double level = std::clamp(src.center + src.spread * unit(rng), 0.0, 1.0);
                std::ostringstream id;
                id << options.id_prefix << source_code(src.source) << "-" << options.categories[c] << "-"
                   << std::setw(4) << std::setfill('0') << i;
                out.push_back(make_synthetic_sample(options.categories[c], static_cast<int>(c), src.source, level,
                                                    options.raster_side, options.stroke_width, rng, id.str()));
            }
        }
    }
    return out;
}

SyntheticOptions overlap_benchmark_options(std::vector<std::string> categories, int per_source, std::uint64_t seed) {
    SyntheticOptions o;
    o.categories = std::move(categories);
    o.per_source = per_source;
    o.seed = seed;
    for (auto& s : o.sources) s.spread = 0.35;
    return o;
}

std::vector<LabeledSample> make_intermediate_samples(const std::vector<std::string>& categories,
                                                     const std::vector<double>& levels, int per_level,
                                                     std::uint64_t seed, int raster_side) {
    std::mt19937_64 rng(seed);
    std::vector<LabeledSample> out;
    for (std::size_t c = 0; c < categories.size(); ++c) {
        for (double level : levels) {
            for (int i = 0; i < per_level; ++i) {
                std::ostringstream id;
                id << "mid-" << categories[c] << "-" << std::setw(4) << std::setfill('0') << out.size();
                out.push_back(make_synthetic_sample(categories[c], static_cast<int>(c), SketchSource::TuBerlin, level,
                                                    raster_side, 1.5 * raster_side / 16.0, rng, id.str()));
            }
        }
    }
    return out;
}

}  // namespace sketchclip
