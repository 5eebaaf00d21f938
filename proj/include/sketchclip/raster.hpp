#pragma once
// Raster sketches: square 3-channel float images in [0,1], white background
// (1.0) and dark ink. Backbones apply their own mean/std normalization.

#include "sketchclip/vector_sketch.hpp"

#include <filesystem>
#include <vector>

namespace sketchclip {

struct RasterSketch {
    int side = 0;
    // Channel-major: pixels[(c * side + y) * side + x].
    std::vector<float> pixels;

    static RasterSketch blank(int side);

    float at(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * side + y) * side + x]; }
    float& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * side + y) * side + x]; }

    bool operator==(const RasterSketch&) const = default;
};

inline constexpr int kMinRenderSide = 32;

// Anti-aliased line rendering of the pen-down segments. Coverage of a pixel is
// the overlap of a round-capped band of `stroke_width` pixels with the pixel,
// approximated from the distance of the pixel center to the segment.
// Requires side >= kMinRenderSide.
RasterSketch render_raster(const VectorSketch& sketch, int side, double stroke_width = 2.0);

// Renders at `resolution`, or supersamples and box-filters when the backbone
// resolution is below kMinRenderSide.
RasterSketch rasterize_for_backbone(const VectorSketch& sketch, int resolution, double stroke_width = 2.0);

RasterSketch box_downsample(const RasterSketch& raster, int factor);
RasterSketch resize_raster(const RasterSketch& raster, int side);

// Pixels whose darkest channel is at or below `threshold`.
std::size_t ink_pixel_count(const RasterSketch& raster, float threshold = 0.5f);

RasterSketch load_image(const std::filesystem::path& path, int side);
void save_png(const RasterSketch& raster, const std::filesystem::path& path);

}  // namespace sketchclip
