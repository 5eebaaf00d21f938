#pragma once
// Stroke-5 vector sketches: absolute coordinates in [0,1] plus a one-hot pen
// state per point (pen-down, pen-up, end-of-sketch).

#include "sketchclip/autograd.hpp"

#include "json.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sketchclip {

enum class PenState : std::uint8_t { Down = 0, Up = 1, End = 2 };

struct StrokePoint {
    double x = 0.0;
    double y = 0.0;
    PenState pen = PenState::Down;

    bool operator==(const StrokePoint&) const = default;
};

// One stroke-3 record entry: offset from the previous point and a lift flag
// (lift = pen leaves the paper after this point).
struct Stroke3Point {
    double dx = 0.0;
    double dy = 0.0;
    bool lift = false;
};

class VectorSketch {
public:
    VectorSketch() = default;
    // Validates the invariants; throws InputError when violated.
    explicit VectorSketch(std::vector<StrokePoint> points);

    const std::vector<StrokePoint>& points() const { return points_; }
    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    const StrokePoint& operator[](std::size_t i) const { return points_[i]; }

    // N x 5 rows of (x, y, q1, q2, q3).
    Matrix to_stroke5() const;
    std::size_t pen_down_segments() const;

    bool operator==(const VectorSketch&) const = default;

private:
    std::vector<StrokePoint> points_;
};

// Checks one-hot pen states, end-of-sketch only at the final point and
// coordinates in [0,1]. Returns an empty string when valid.
std::string validate_points(std::span<const StrokePoint> points);

struct SketchLimits {
    std::size_t max_points = 196;
};

// Accumulates offsets, truncates at the last complete stroke under the cap,
// normalizes into [0,1] (aspect preserved, centered) and terminates.
VectorSketch from_stroke3(std::span<const Stroke3Point> deltas, const SketchLimits& limits = {});

// Absolute points of any scale; the pen state of the final point is
// replaced or followed by end-of-sketch exactly as in from_stroke3.
VectorSketch from_absolute(std::span<const StrokePoint> points, const SketchLimits& limits = {});

nlohmann::json to_json(const VectorSketch& sketch);
VectorSketch vector_sketch_from_json(const nlohmann::json& j);

}  // namespace sketchclip
