#include "polyrecover/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "polyrecover/errors.hpp"

namespace polyrecover {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool finite(Point p) { return std::isfinite(p.x) && std::isfinite(p.y); }

}  // namespace

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::string_view to_string(DegradationKind kind) {
    switch (kind) {
        case DegradationKind::none: return "none";
        case DegradationKind::corner: return "corner";
        case DegradationKind::edge: return "edge";
    }
    return "none";
}

DegradationKind parse_degradation_kind(std::string_view text) {
    if (text == "none") return DegradationKind::none;
    if (text == "corner") return DegradationKind::corner;
    if (text == "edge") return DegradationKind::edge;
    throw ValidationError("unknown degradation kind '" + std::string(text) + "'");
}

void validate(const PolygonSpec& spec) {
    if (spec.n_sides < 3) {
        throw ValidationError("polygon needs at least 3 sides, got " + std::to_string(spec.n_sides));
    }
    if (!finite(spec.center)) throw ValidationError("polygon center is not finite");
    if (!std::isfinite(spec.circumradius) || spec.circumradius <= 0.0) {
        throw ValidationError("circumradius must be positive and finite");
    }
    if (!std::isfinite(spec.rotation) || spec.rotation < 0.0 || spec.rotation >= kTwoPi) {
        throw ValidationError("rotation must lie in [0, 2pi)");
    }
    if (!std::isfinite(spec.stroke_width) || spec.stroke_width <= 0.0) {
        throw ValidationError("stroke width must be positive and finite");
    }
}

void validate_for_canvas(const PolygonSpec& spec, double canvas_size, double r_min) {
    validate(spec);
    if (spec.circumradius < r_min) {
        throw ValidationError("circumradius " + std::to_string(spec.circumradius) +
                              " is below r_min " + std::to_string(r_min));
    }
    const double reach = spec.circumradius + spec.stroke_width / 2.0;
    // Closed on the far side: the sampler's largest radius touches the border
    // exactly. A small slack absorbs rounding in center + radius.
    constexpr double kSlack = 1e-9;
    const auto inside = [&](double c) {
        return c - reach >= -kSlack && c + reach <= canvas_size + kSlack;
    };
    if (!inside(spec.center.x) || !inside(spec.center.y)) {
        throw ValidationError("stroked polygon does not fit on a " + std::to_string(canvas_size) +
                              " px canvas");
    }
}

void validate(const DegradationSpec& deg) {
    if (!std::isfinite(deg.proportion) || deg.proportion < 0.0 || deg.proportion >= 1.0) {
        throw DomainError("degradation proportion must lie in [0, 1), got " +
                          std::to_string(deg.proportion));
    }
}

std::vector<Point> polygon_vertices(const PolygonSpec& spec) {
    validate(spec);
    std::vector<Point> out;
    out.reserve(static_cast<std::size_t>(spec.n_sides));
    for (int k = 0; k < spec.n_sides; ++k) {
        const double angle = spec.rotation + kTwoPi * k / spec.n_sides;
        out.push_back({spec.center.x + spec.circumradius * std::cos(angle),
                       spec.center.y + spec.circumradius * std::sin(angle)});
    }
    return out;
}

std::vector<Point> edge_midpoints(const PolygonSpec& spec) {
    const auto v = polygon_vertices(spec);
    std::vector<Point> out;
    out.reserve(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        const Point& a = v[k];
        const Point& b = v[(k + 1) % v.size()];
        out.push_back({(a.x + b.x) / 2.0, (a.y + b.y) / 2.0});
    }
    return out;
}

double side_length(const PolygonSpec& spec) {
    validate(spec);
    return 2.0 * spec.circumradius * std::sin(std::numbers::pi / spec.n_sides);
}

double perimeter(const PolygonSpec& spec) { return spec.n_sides * side_length(spec); }

double degradation_radius(double p_d, int n_sides, double perimeter) {
    if (!std::isfinite(p_d) || p_d < 0.0 || p_d >= 1.0) {
        throw DomainError("degradation proportion must lie in [0, 1), got " + std::to_string(p_d));
    }
    if (n_sides < 3) throw DomainError("degradation radius needs n_sides >= 3");
    if (!std::isfinite(perimeter) || perimeter <= 0.0) {
        throw DomainError("degradation radius needs a positive perimeter");
    }
    return p_d * perimeter / (2.0 * n_sides);
}

std::vector<Disk> erasure_disks(const PolygonSpec& spec, const DegradationSpec& deg) {
    validate(spec);
    validate(deg);
    if (deg.kind == DegradationKind::none) return {};

    const double radius = degradation_radius(deg.proportion, spec.n_sides, perimeter(spec));
    const auto centers =
        deg.kind == DegradationKind::corner ? polygon_vertices(spec) : edge_midpoints(spec);
    std::vector<Disk> disks;
    disks.reserve(centers.size());
    for (const Point& c : centers) disks.push_back({c, radius});
    return disks;
}

CenterRange admissible_centers(double canvas_size, double r_min, double stroke_width) {
    if (!(canvas_size > 0.0) || !(r_min > 0.0) || !(stroke_width > 0.0)) {
        throw ConfigError("canvas size, r_min and stroke width must be positive");
    }
    const double margin = r_min + stroke_width / 2.0;
    const CenterRange range{margin, canvas_size - margin};
    if (range.lo > range.hi) {
        throw ConfigError("r_min " + std::to_string(r_min) + " with stroke " +
                          std::to_string(stroke_width) + " does not fit a " +
                          std::to_string(canvas_size) + " px canvas");
    }
    return range;
}

double max_radius_at(Point center, double canvas_size, double stroke_width) {
    const double border = std::min({center.x, center.y, canvas_size - center.x,
                                    canvas_size - center.y});
    return border - stroke_width / 2.0;
}

PolygonSpec sample_polygon(Rng& rng, int n_sides, double canvas_size, double r_min,
                           double stroke_width) {
    if (n_sides < 3) throw ConfigError("cannot sample a polygon with fewer than 3 sides");
    const CenterRange range = admissible_centers(canvas_size, r_min, stroke_width);

    PolygonSpec spec;
    spec.n_sides = n_sides;
    spec.stroke_width = stroke_width;
    spec.center.x = range.lo + (range.hi - range.lo) * rng.uniform01();
    spec.center.y = range.lo + (range.hi - range.lo) * rng.uniform01();
    const double max_r = std::max(r_min, max_radius_at(spec.center, canvas_size, stroke_width));
    spec.circumradius = rng.uniform(r_min, max_r);
    spec.rotation = kTwoPi * rng.uniform01();
    if (spec.rotation >= kTwoPi) spec.rotation = 0.0;
    return spec;
}

}  // namespace polyrecover
