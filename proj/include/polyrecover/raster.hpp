#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "polyrecover/geometry.hpp"

namespace polyrecover {

constexpr int kDefaultCanvasSize = 224;

// Strictly binary single-channel image, row-major, 255 = white background and
// 0 = ink. Pixel (x, y) covers [x, x+1) x [y, y+1); its center is
// (x + 0.5, y + 0.5).
class Canvas {
public:
    static constexpr std::uint8_t kWhite = 255;
    static constexpr std::uint8_t kBlack = 0;

    Canvas(int width, int height, std::uint8_t fill = kWhite);

    // Throws ValidationError on size mismatch or any value other than 0/255.
    static Canvas from_pixels(int width, int height, std::vector<std::uint8_t> pixels);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }

    std::uint8_t at(int x, int y) const { return pixels_[index(x, y)]; }
    void set(int x, int y, std::uint8_t value) { pixels_[index(x, y)] = value; }

    std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
    std::span<const std::uint8_t> row(int y) const {
        return std::span(pixels_).subspan(static_cast<std::size_t>(y) * width_, width_);
    }

    bool operator==(const Canvas&) const = default;

private:
    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int width_;
    int height_;
    std::vector<std::uint8_t> pixels_;
};

// Paints black every pixel whose center lies within width/2 of segment ab
// (a capsule: round caps, so consecutive segments get round joins).
void stroke_segment(Canvas& canvas, Point a, Point b, double width);

// Closed outline of the polygon on a fresh white square canvas.
Canvas render_polygon(const PolygonSpec& spec, int canvas_size = kDefaultCanvasSize);

// Whitens every pixel whose center lies strictly inside a disk.
void stamp_disks_in_place(Canvas& canvas, std::span<const Disk> disks);
Canvas stamp_disks(Canvas canvas, std::span<const Disk> disks);

std::size_t black_pixel_count(const Canvas& canvas);

// 1 - black(degraded) / black(whole). Throws MeasurementError for mismatched
// sizes or a whole canvas without ink.
double measure_degradation(const Canvas& whole, const Canvas& degraded);

// render_polygon followed by the erasure disks of deg.
Canvas render_degraded(const PolygonSpec& spec, const DegradationSpec& deg,
                       int canvas_size = kDefaultCanvasSize);

}  // namespace polyrecover
