#include "polyrecover/raster.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "polyrecover/errors.hpp"

namespace polyrecover {

namespace {

double segment_distance_sq(Point p, Point a, Point b) {
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len_sq = dx * dx + dy * dy;
    double t = 0.0;
    if (len_sq > 0.0) {
        t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len_sq, 0.0, 1.0);
    }
    const double ex = p.x - (a.x + t * dx);
    const double ey = p.y - (a.y + t * dy);
    return ex * ex + ey * ey;
}

// Pixel index range whose centers may lie within [lo, hi].
std::pair<int, int> pixel_span(double lo, double hi, int size) {
    const int first = std::max(0, static_cast<int>(std::floor(lo - 0.5)));
    const int last = std::min(size - 1, static_cast<int>(std::ceil(hi - 0.5)));
    return {first, last};
}

}  // namespace

Canvas::Canvas(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw ValidationError("canvas dimensions must be positive");
    if (fill != kWhite && fill != kBlack) throw ValidationError("canvas fill must be 0 or 255");
    pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

Canvas Canvas::from_pixels(int width, int height, std::vector<std::uint8_t> pixels) {
    Canvas c(width, height);
    if (pixels.size() != c.pixels_.size()) {
        throw ValidationError("pixel buffer has " + std::to_string(pixels.size()) +
                              " values, expected " + std::to_string(c.pixels_.size()));
    }
    if (!std::all_of(pixels.begin(), pixels.end(),
                     [](std::uint8_t v) { return v == kWhite || v == kBlack; })) {
        throw ValidationError("canvas values must be 0 or 255");
    }
    c.pixels_ = std::move(pixels);
    return c;
}

void stroke_segment(Canvas& canvas, Point a, Point b, double width) {
    const double half = width / 2.0;
    const double half_sq = half * half;
    const auto [x0, x1] = pixel_span(std::min(a.x, b.x) - half, std::max(a.x, b.x) + half,
                                     canvas.width());
    const auto [y0, y1] = pixel_span(std::min(a.y, b.y) - half, std::max(a.y, b.y) + half,
                                     canvas.height());
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (segment_distance_sq({x + 0.5, y + 0.5}, a, b) <= half_sq) {
                canvas.set(x, y, Canvas::kBlack);
            }
        }
    }
}

Canvas render_polygon(const PolygonSpec& spec, int canvas_size) {
    validate_for_canvas(spec, canvas_size);
    Canvas canvas(canvas_size, canvas_size);
    const auto v = polygon_vertices(spec);
    for (std::size_t k = 0; k < v.size(); ++k) {
        stroke_segment(canvas, v[k], v[(k + 1) % v.size()], spec.stroke_width);
    }
    return canvas;
}

void stamp_disks_in_place(Canvas& canvas, std::span<const Disk> disks) {
    for (const Disk& d : disks) {
        if (!(d.radius > 0.0)) continue;
        const double r_sq = d.radius * d.radius;
        const auto [x0, x1] = pixel_span(d.center.x - d.radius, d.center.x + d.radius,
                                         canvas.width());
        const auto [y0, y1] = pixel_span(d.center.y - d.radius, d.center.y + d.radius,
                                         canvas.height());
        for (int y = y0; y <= y1; ++y) {
            const double dy = y + 0.5 - d.center.y;
            for (int x = x0; x <= x1; ++x) {
                const double dx = x + 0.5 - d.center.x;
                if (dx * dx + dy * dy < r_sq) canvas.set(x, y, Canvas::kWhite);
            }
        }
    }
}

Canvas stamp_disks(Canvas canvas, std::span<const Disk> disks) {
    stamp_disks_in_place(canvas, disks);
    return canvas;
}

std::size_t black_pixel_count(const Canvas& canvas) {
    const auto px = canvas.pixels();
    return static_cast<std::size_t>(std::count(px.begin(), px.end(), Canvas::kBlack));
}

double measure_degradation(const Canvas& whole, const Canvas& degraded) {
    if (whole.width() != degraded.width() || whole.height() != degraded.height()) {
        throw MeasurementError("canvas dimensions differ");
    }
    const auto whole_black = black_pixel_count(whole);
    if (whole_black == 0) throw MeasurementError("whole canvas has no ink");
    return 1.0 - static_cast<double>(black_pixel_count(degraded)) /
                     static_cast<double>(whole_black);
}

Canvas render_degraded(const PolygonSpec& spec, const DegradationSpec& deg, int canvas_size) {
    Canvas canvas = render_polygon(spec, canvas_size);
    stamp_disks_in_place(canvas, erasure_disks(spec, deg));
    return canvas;
}

}  // namespace polyrecover
