#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "polyrecover/errors.hpp"
#include "polyrecover/raster.hpp"

using namespace polyrecover;

namespace {

const std::vector<double> kGrid{0.10, 0.15, 0.20, 0.25, 0.30, 0.40, 0.50, 0.60, 0.70};

std::vector<oracle::Vec> oracle_vertices(const PolygonSpec& s) {
    return oracle::vertices(s.n_sides, {s.center.x, s.center.y}, s.circumradius, s.rotation);
}

bool binary(const Canvas& c) {
    return std::all_of(c.pixels().begin(), c.pixels().end(), [](auto v) { return v == 0 || v == 255; });
}

}  // namespace

TEST_CASE("canvas construction") {
    const Canvas c(224, 224);
    CHECK(c.width() == 224);
    CHECK(black_pixel_count(c) == 0);
    CHECK(black_pixel_count(Canvas(224, 224, Canvas::kBlack)) == 50176);
    CHECK_THROWS_AS(Canvas(0, 10), ValidationError);
    CHECK_THROWS_AS(Canvas(4, 4, 128), ValidationError);
    CHECK_THROWS_AS(Canvas::from_pixels(2, 2, {0, 255, 7, 0}), ValidationError);
    CHECK_THROWS_AS(Canvas::from_pixels(2, 2, {0, 255, 0}), ValidationError);
}

TEST_CASE("horizontal segment covers exactly the rows within half the stroke") {
    Canvas c(40, 40);
    stroke_segment(c, {5.0, 10.0}, {20.0, 10.0}, 2.0);
    const auto mask = oracle::stroke_mask({{5.0, 10.0}, {20.0, 10.0}}, 2.0, 40);
    for (int y = 0; y < 40; ++y) {
        for (int x = 0; x < 40; ++x) {
            CHECK((c.at(x, y) == Canvas::kBlack) == mask[static_cast<std::size_t>(y) * 40 + x]);
        }
    }
    for (int x = 5; x < 20; ++x) {
        CHECK(c.at(x, 9) == Canvas::kBlack);
        CHECK(c.at(x, 10) == Canvas::kBlack);
        CHECK(c.at(x, 8) == Canvas::kWhite);
        CHECK(c.at(x, 11) == Canvas::kWhite);
    }
}

TEST_CASE("render_polygon matches the brute-force pixel oracle") {
    Rng rng(17);
    for (int i = 0; i < 12; ++i) {
        const auto s = sample_polygon(rng, 3 + i % 6, 224, 28, 2);
        const Canvas c = render_polygon(s);
        const auto mask = oracle::stroke_mask(oracle_vertices(s), s.stroke_width, 224);
        std::size_t mismatches = 0;
        for (int y = 0; y < 224; ++y) {
            for (int x = 0; x < 224; ++x) {
                mismatches += (c.at(x, y) == Canvas::kBlack) != mask[static_cast<std::size_t>(y) * 224 + x];
            }
        }
        CHECK(mismatches == 0);
        CHECK(black_pixel_count(c) == oracle::count(mask));
    }
}

TEST_CASE("rendered ink stays near the outline") {
    Rng rng(23);
    for (int i = 0; i < 100; ++i) {
        const auto s = sample_polygon(rng, 3 + i % 6, 224, 28, 2);
        const Canvas c = render_polygon(s);
        CHECK(black_pixel_count(c) > 0);
        CHECK(binary(c));
        for (int y = 0; y < 224; ++y) {
            for (int x = 0; x < 224; ++x) {
                if (c.at(x, y) == Canvas::kBlack) {
                    CHECK(distance({x + 0.5, y + 0.5}, s.center) <= s.circumradius + s.stroke_width);
                }
            }
        }
    }
}

TEST_CASE("hexagon ink is close to perimeter times stroke width") {
    Rng rng(31);
    for (int i = 0; i < 100; ++i) {
        const auto s = sample_polygon(rng, 6, 224, 28, 2);
        const double ratio = static_cast<double>(black_pixel_count(render_polygon(s))) / (perimeter(s) * s.stroke_width);
        CHECK(ratio > 0.85);
        CHECK(ratio < 1.15);
    }
}

TEST_CASE("render_polygon rejects specs that leave the canvas") {
    PolygonSpec s;
    s.n_sides = 4;
    s.center = {10, 10};
    s.circumradius = 30;
    CHECK_THROWS_AS(render_polygon(s), ValidationError);
}

TEST_CASE("stamp_disks") {
    Rng rng(41);
    const auto s = sample_polygon(rng, 5, 224, 28, 2);
    const Canvas whole = render_polygon(s);

    CHECK(stamp_disks(whole, {}) == whole);

    const std::vector<Disk> everything{{{112, 112}, 400}};
    CHECK(black_pixel_count(stamp_disks(whole, everything)) == 0);

    const auto disks = erasure_disks(s, {DegradationKind::corner, 0.4});
    const Canvas once = stamp_disks(whole, disks);
    CHECK(stamp_disks(once, disks) == once);

    // Pixel center exactly on the boundary stays untouched.
    Canvas black(4, 4, Canvas::kBlack);
    const std::vector<Disk> boundary{{{0.5, 0.5}, 1.0}};
    const Canvas stamped = stamp_disks(black, boundary);
    CHECK(stamped.at(0, 0) == Canvas::kWhite);
    CHECK(stamped.at(1, 0) == Canvas::kBlack);
    CHECK(stamped.at(0, 1) == Canvas::kBlack);
}

TEST_CASE("measure_degradation") {
    Rng rng(43);
    const auto s = sample_polygon(rng, 5, 224, 28, 2);
    const Canvas whole = render_polygon(s);
    CHECK(measure_degradation(whole, whole) == 0.0);
    CHECK(measure_degradation(whole, Canvas(224, 224)) == 1.0);
    CHECK_THROWS_AS(measure_degradation(whole, Canvas(100, 100)), MeasurementError);
    CHECK_THROWS_AS(measure_degradation(Canvas(224, 224), whole), MeasurementError);

    PolygonSpec pent;
    pent.n_sides = 5;
    pent.center = {112, 112};
    pent.circumradius = 80;
    pent.rotation = 0.3;
    const Canvas pw = render_polygon(pent);
    const double m = measure_degradation(pw, render_degraded(pent, {DegradationKind::corner, 0.5}));
    CHECK(std::abs(m - 0.5) <= 0.04);
}

TEST_CASE("property: binary purity, monotonicity, identity of kind none") {
    Rng rng(47);
    for (int i = 0; i < 200; ++i) {
        const auto s = sample_polygon(rng, 3 + i % 6, 224, 28, 2);
        const Canvas whole = render_polygon(s);
        CHECK(render_degraded(s, {DegradationKind::none, 0.0}) == whole);
        const double p = kGrid[i % kGrid.size()];
        for (auto kind : {DegradationKind::corner, DegradationKind::edge}) {
            const Canvas d = stamp_disks(whole, erasure_disks(s, {kind, p}));
            CHECK(binary(d));
            CHECK(black_pixel_count(d) <= black_pixel_count(whole));
        }
    }
}

TEST_CASE("property: degradation accounting over 1000 shapes with r >= 50") {
    Rng rng(53);
    double signed_sum = 0.0;
    double worst = 0.0;
    std::size_t count = 0;
    for (int i = 0; i < 1000; ++i) {
        const int n = 3 + i % 6;
        const auto s = sample_polygon(rng, n, 224, 50, 2);
        const Canvas whole = render_polygon(s);
        const double p = kGrid[(i / 6) % kGrid.size()];
        const auto kind = (i / 54) % 2 == 0 ? DegradationKind::corner : DegradationKind::edge;
        const double err = measure_degradation(whole, stamp_disks(whole, erasure_disks(s, {kind, p}))) - p;
        worst = std::max(worst, std::abs(err));
        signed_sum += err;
        ++count;
    }
    CHECK(worst <= 0.04);
    CHECK(std::abs(signed_sum / static_cast<double>(count)) <= 0.015);
}

TEST_CASE("property: edge degradation keeps ink around vertices") {
    Rng rng(59);
    for (int i = 0; i < 300; ++i) {
        const auto s = sample_polygon(rng, 3 + i % 6, 224, 28, 2);
        const Canvas whole = render_polygon(s);
        const double p = kGrid[i % kGrid.size()];
        const Canvas d = stamp_disks(whole, erasure_disks(s, {DegradationKind::edge, p}));
        for (const Point& v : polygon_vertices(s)) {
            const int x0 = std::max(0, static_cast<int>(v.x - 3));
            const int y0 = std::max(0, static_cast<int>(v.y - 3));
            for (int y = y0; y < std::min(224, y0 + 7); ++y) {
                for (int x = x0; x < std::min(224, x0 + 7); ++x) {
                    if (distance({x + 0.5, y + 0.5}, v) <= s.stroke_width && whole.at(x, y) == Canvas::kBlack) {
                        CHECK(d.at(x, y) == Canvas::kBlack);
                    }
                }
            }
        }
    }
}
