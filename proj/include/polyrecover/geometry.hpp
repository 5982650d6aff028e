#pragma once

#include <string_view>
#include <vector>

#include "polyrecover/random.hpp"

// Continuous-plane math for regular polygons and the disks that erase parts
// of their perimeter. Nothing in here knows about pixels.
namespace polyrecover {

struct Point {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point&) const = default;
};

double distance(Point a, Point b);

struct PolygonSpec {
    int n_sides = 3;
    Point center;
    double circumradius = 1.0;
    double rotation = 0.0;  // radians, [0, 2pi)
    double stroke_width = 2.0;

    bool operator==(const PolygonSpec&) const = default;
};

enum class DegradationKind { none, corner, edge };

std::string_view to_string(DegradationKind kind);
// Throws ValidationError for anything but "none", "corner" or "edge".
DegradationKind parse_degradation_kind(std::string_view text);

struct DegradationSpec {
    DegradationKind kind = DegradationKind::none;
    double proportion = 0.0;  // fraction of the perimeter erased, [0, 1)

    bool operator==(const DegradationSpec&) const = default;
};

struct Disk {
    Point center;
    double radius = 0.0;
};

// Shape-only checks: side count, finite values, positive radius and stroke,
// rotation in [0, 2pi). Throws ValidationError.
void validate(const PolygonSpec& spec);

// validate() plus the canvas constraints: circumradius >= r_min and the
// stroked outline's bounding square inside [0, canvas_size).
void validate_for_canvas(const PolygonSpec& spec, double canvas_size, double r_min = 0.0);

void validate(const DegradationSpec& deg);

// Vertex k sits at angle rotation + 2*pi*k/n, counter-clockwise in the
// mathematical orientation.
std::vector<Point> polygon_vertices(const PolygonSpec& spec);

// Midpoint k lies between vertex k and vertex k+1 (mod n).
std::vector<Point> edge_midpoints(const PolygonSpec& spec);

double side_length(const PolygonSpec& spec);
double perimeter(const PolygonSpec& spec);

// Radius of each erasure disk so that n_sides disks, each cutting 2r of the
// outline, remove exactly p_d * perimeter. Throws DomainError when p_d is
// outside [0, 1) or the other arguments are degenerate.
double degradation_radius(double p_d, int n_sides, double perimeter);

std::vector<Disk> erasure_disks(const PolygonSpec& spec, const DegradationSpec& deg);

// Range of admissible center coordinates for sample_polygon (same on both axes).
struct CenterRange {
    double lo = 0.0;
    double hi = 0.0;
};

// Throws ConfigError when no center admits a radius of r_min.
CenterRange admissible_centers(double canvas_size, double r_min, double stroke_width);

// Largest circumradius whose stroked outline stays on the canvas.
double max_radius_at(Point center, double canvas_size, double stroke_width);

// Center uniform over the admissible square, radius uniform in
// [r_min, max_radius_at(center)], rotation uniform in [0, 2pi). Consumes a
// fixed number of draws from rng.
PolygonSpec sample_polygon(Rng& rng, int n_sides, double canvas_size, double r_min,
                           double stroke_width);

}  // namespace polyrecover
