#include "sketchclip/vector_sketch.hpp"

#include "sketchclip/errors.hpp"

#include <algorithm>
#include <cmath>

namespace sketchclip {

std::string validate_points(std::span<const StrokePoint> points) {
    if (points.empty()) return "sketch has no points";
    for (std::size_t i = 0; i < points.size(); ++i) {
        const StrokePoint& p = points[i];
        const auto state = static_cast<int>(p.pen);
        if (state < 0 || state > 2) return "point " + std::to_string(i) + " has an invalid pen state";
        if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
            return "point " + std::to_string(i) + " lies outside [0,1]";
        }
        const bool last = i + 1 == points.size();
        if (last != (p.pen == PenState::End)) {
            return last ? "sketch does not terminate with end-of-sketch"
                        : "end-of-sketch state before the final point (index " + std::to_string(i) + ")";
        }
    }
    return {};
}

VectorSketch::VectorSketch(std::vector<StrokePoint> points) : points_(std::move(points)) {
    if (auto err = validate_points(points_); !err.empty()) throw InputError("invalid vector sketch: " + err);
}

Matrix VectorSketch::to_stroke5() const {
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(points_.size()), 5);
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        m(r, 0) = points_[i].x;
        m(r, 1) = points_[i].y;
        m(r, 2 + static_cast<int>(points_[i].pen)) = 1.0;
    }
    return m;
}

std::size_t VectorSketch::pen_down_segments() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
        if (points_[i].pen == PenState::Down) ++n;
    }
    return n;
}

namespace {

// Truncation keeps whole strokes: the kept prefix must end on a pen-up point
// and leave room for the terminal point. A single over-long stroke is cut hard.
std::vector<StrokePoint> truncate_strokes(std::vector<StrokePoint> pts, std::size_t max_points) {
    if (max_points < 1) throw InputError("max_points must be at least 1");
    const bool needs_append = !pts.empty() && pts.back().pen == PenState::Up;
    const std::size_t final_count = pts.size() + (needs_append ? 1 : 0);
    if (final_count <= max_points) return pts;

    std::size_t keep = 0;
    for (std::size_t k = 1; k <= pts.size(); ++k) {
        if (pts[k - 1].pen == PenState::Up && k + 1 <= max_points) keep = k;
    }
    if (keep == 0) {
        pts.resize(max_points);
        pts.back().pen = PenState::Down;  // converted to End by terminate()
        return pts;
    }
    pts.resize(keep);
    return pts;
}

void terminate(std::vector<StrokePoint>& pts) {
    if (pts.back().pen == PenState::Up) {
        StrokePoint end = pts.back();
        end.pen = PenState::End;
        pts.push_back(end);
    } else {
        pts.back().pen = PenState::End;
    }
}

void normalize_unit_box(std::vector<StrokePoint>& pts) {
    double min_x = pts.front().x, max_x = min_x, min_y = pts.front().y, max_y = min_y;
    for (const auto& p : pts) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    const double w = max_x - min_x;
    const double h = max_y - min_y;
    const double extent = std::max(w, h);
    if (extent <= 0.0) {
        for (auto& p : pts) p.x = p.y = 0.5;
        return;
    }
    const double off_x = 0.5 * (1.0 - w / extent);
    const double off_y = 0.5 * (1.0 - h / extent);
    for (auto& p : pts) {
        p.x = std::clamp((p.x - min_x) / extent + off_x, 0.0, 1.0);
        p.y = std::clamp((p.y - min_y) / extent + off_y, 0.0, 1.0);
    }
}

VectorSketch finish(std::vector<StrokePoint> pts, const SketchLimits& limits) {
    if (pts.empty()) throw InputError("sketch has no points");
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (!std::isfinite(pts[i].x) || !std::isfinite(pts[i].y)) {
            throw InputError("non-finite coordinate at point " + std::to_string(i));
        }
    }
    pts = truncate_strokes(std::move(pts), limits.max_points);
    terminate(pts);
    normalize_unit_box(pts);
    return VectorSketch(std::move(pts));
}

}  // namespace

VectorSketch from_stroke3(std::span<const Stroke3Point> deltas, const SketchLimits& limits) {
    std::vector<StrokePoint> pts;
    pts.reserve(deltas.size() + 1);
    double x = 0.0, y = 0.0;
    for (const auto& d : deltas) {
        x += d.dx;
        y += d.dy;
        pts.push_back({x, y, d.lift ? PenState::Up : PenState::Down});
    }
    return finish(std::move(pts), limits);
}

VectorSketch from_absolute(std::span<const StrokePoint> points, const SketchLimits& limits) {
    std::vector<StrokePoint> pts(points.begin(), points.end());
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        if (pts[i].pen == PenState::End) throw InputError("end-of-sketch state before the final point");
    }
    if (!pts.empty() && pts.back().pen == PenState::End) pts.back().pen = PenState::Down;
    return finish(std::move(pts), limits);
}

nlohmann::json to_json(const VectorSketch& sketch) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : sketch.points()) {
        const int s = static_cast<int>(p.pen);
        arr.push_back({p.x, p.y, s == 0 ? 1 : 0, s == 1 ? 1 : 0, s == 2 ? 1 : 0});
    }
    return arr;
}

VectorSketch vector_sketch_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw InputError("stroke-5 sketch must be a JSON array");
    std::vector<StrokePoint> pts;
    pts.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& row = j[i];
        if (!row.is_array() || row.size() != 5) {
            throw InputError("stroke-5 point " + std::to_string(i) + " must have 5 entries");
        }
        const int q1 = row[2].get<int>(), q2 = row[3].get<int>(), q3 = row[4].get<int>();
        if (q1 + q2 + q3 != 1 || q1 < 0 || q2 < 0 || q3 < 0) {
            throw InputError("stroke-5 point " + std::to_string(i) + " pen state is not one-hot");
        }
        pts.push_back({row[0].get<double>(), row[1].get<double>(),
                       q1 ? PenState::Down : (q2 ? PenState::Up : PenState::End)});
    }
    return VectorSketch(std::move(pts));
}

}  // namespace sketchclip
