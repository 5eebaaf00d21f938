#include "sketchclip/raster.hpp"

#include "sketchclip/errors.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace sketchclip {

RasterSketch RasterSketch::blank(int side) {
    RasterSketch r;
    r.side = side;
    r.pixels.assign(3 * static_cast<std::size_t>(side) * side, 1.0f);
    return r;
}

namespace {

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

RasterSketch render_raster(const VectorSketch& sketch, int side, double stroke_width) {
    if (side < kMinRenderSide) {
        throw InputError("render side " + std::to_string(side) + " is below the minimum of " +
                         std::to_string(kMinRenderSide));
    }
    if (!(stroke_width > 0.0)) throw InputError("stroke width must be positive");
    std::vector<double> ink(static_cast<std::size_t>(side) * side, 0.0);
    const double pad = stroke_width;
    const double span = side - 2.0 * pad;
    const double half = 0.5 * stroke_width;
    const auto& pts = sketch.points();
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        if (pts[i].pen != PenState::Down) continue;
        const double ax = pad + pts[i].x * span, ay = pad + pts[i].y * span;
        const double bx = pad + pts[i + 1].x * span, by = pad + pts[i + 1].y * span;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - half - 1.0)));
        const int x1 = std::min(side - 1, static_cast<int>(std::ceil(std::max(ax, bx) + half + 1.0)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - half - 1.0)));
        const int y1 = std::min(side - 1, static_cast<int>(std::ceil(std::max(ay, by) + half + 1.0)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double d = segment_distance(x + 0.5, y + 0.5, ax, ay, bx, by);
                const double cover = std::clamp(half + 0.5 - d, 0.0, 1.0);
                double& cell = ink[static_cast<std::size_t>(y) * side + x];
                cell = std::max(cell, cover);
            }
        }
    }
    RasterSketch r = RasterSketch::blank(side);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                r.at(c, y, x) = static_cast<float>(1.0 - ink[static_cast<std::size_t>(y) * side + x]);
            }
        }
    }
    return r;
}

RasterSketch box_downsample(const RasterSketch& raster, int factor) {
    if (factor < 1 || raster.side % factor != 0) throw InputError("downsample factor must divide the raster side");
    const int out_side = raster.side / factor;
    RasterSketch out = RasterSketch::blank(out_side);
    const double norm = 1.0 / (static_cast<double>(factor) * factor);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < out_side; ++y) {
            for (int x = 0; x < out_side; ++x) {
                double acc = 0.0;
                for (int dy = 0; dy < factor; ++dy) {
                    for (int dx = 0; dx < factor; ++dx) acc += raster.at(c, y * factor + dy, x * factor + dx);
                }
                out.at(c, y, x) = static_cast<float>(acc * norm);
            }
        }
    }
    return out;
}

RasterSketch rasterize_for_backbone(const VectorSketch& sketch, int resolution, double stroke_width) {
    if (resolution >= kMinRenderSide) return render_raster(sketch, resolution, stroke_width);
    if (resolution < 1) throw InputError("backbone resolution must be positive");
    const int factor = (kMinRenderSide + resolution - 1) / resolution;
    return box_downsample(render_raster(sketch, resolution * factor, stroke_width * factor), factor);
}

namespace {

cv::Mat to_mat(const RasterSketch& r) {
    cv::Mat m(r.side, r.side, CV_8UC3);
    for (int y = 0; y < r.side; ++y) {
        for (int x = 0; x < r.side; ++x) {
            auto& px = m.at<cv::Vec3b>(y, x);
            // OpenCV stores BGR.
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(r.at(c, y, x), 0.0f, 1.0f);
                px[2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
    }
    return m;
}

RasterSketch from_mat(const cv::Mat& bgr) {
    RasterSketch r = RasterSketch::blank(bgr.rows);
    for (int y = 0; y < bgr.rows; ++y) {
        for (int x = 0; x < bgr.cols; ++x) {
            const auto& px = bgr.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) r.at(c, y, x) = static_cast<float>(px[2 - c]) / 255.0f;
        }
    }
    return r;
}

}  // namespace

RasterSketch resize_raster(const RasterSketch& raster, int side) {
    if (raster.side == side) return raster;
    cv::Mat src(raster.side, raster.side, CV_32FC3);
    for (int y = 0; y < raster.side; ++y) {
        for (int x = 0; x < raster.side; ++x) {
            auto& px = src.at<cv::Vec3f>(y, x);
            for (int c = 0; c < 3; ++c) px[c] = raster.at(c, y, x);
        }
    }
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(side, side), 0, 0, side < raster.side ? cv::INTER_AREA : cv::INTER_LINEAR);
    RasterSketch out = RasterSketch::blank(side);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const auto& px = dst.at<cv::Vec3f>(y, x);
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = std::clamp(px[c], 0.0f, 1.0f);
        }
    }
    return out;
}

std::size_t ink_pixel_count(const RasterSketch& raster, float threshold) {
    std::size_t n = 0;
    for (int y = 0; y < raster.side; ++y) {
        for (int x = 0; x < raster.side; ++x) {
            const float v = std::min({raster.at(0, y, x), raster.at(1, y, x), raster.at(2, y, x)});
            if (v <= threshold) ++n;
        }
    }
    return n;
}

RasterSketch load_image(const std::filesystem::path& path, int side) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw InputError("cannot read image: " + path.string());
    if (img.rows != img.cols) {
        // Center-pad to a square on a white background.
        const int s = std::max(img.rows, img.cols);
        cv::Mat square(s, s, img.type(), cv::Scalar(255, 255, 255));
        img.copyTo(square(cv::Rect((s - img.cols) / 2, (s - img.rows) / 2, img.cols, img.rows)));
        img = square;
    }
    if (img.rows != side) {
        cv::Mat resized;
        cv::resize(img, resized, cv::Size(side, side), 0, 0, side < img.rows ? cv::INTER_AREA : cv::INTER_LINEAR);
        img = resized;
    }
    return from_mat(img);
}

void save_png(const RasterSketch& raster, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), to_mat(raster))) throw InputError("cannot write image: " + path.string());
}

}  // namespace sketchclip
