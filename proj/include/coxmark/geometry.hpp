#pragma once

#include <cstdint>
#include <vector>

namespace coxmark {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double norm(Vec2 a);
double dist(Vec2 a, Vec2 b);

// Planar polygon in projected km coordinates. Outer ring counterclockwise by
// convention (normalized on validation); holes are interior rings.
struct DomainPolygon {
    std::vector<Vec2> vertices;
    std::vector<std::vector<Vec2>> holes;

    // Throws invalid_domain_error unless the outer ring has >= 3 vertices,
    // is simple, and encloses positive area. Orients rings canonically.
    void validate();

    double area() const;       // outer area minus hole areas, km^2
    bool contains(Vec2 p) const;
    double boundary_distance(Vec2 p) const; // distance to nearest ring segment
    void bounding_box(Vec2& lo, Vec2& hi) const;
};

double ring_signed_area(const std::vector<Vec2>& ring);
bool ring_is_simple(const std::vector<Vec2>& ring);
bool point_in_ring(Vec2 p, const std::vector<Vec2>& ring);
double point_segment_distance(Vec2 p, Vec2 a, Vec2 b);

// Z-order key on normalized coordinates; the survey frame sort uses it.
std::uint64_t morton_key(Vec2 p, Vec2 lo, Vec2 hi);

DomainPolygon make_rectangle(double x0, double y0, double x1, double y1);

} // namespace coxmark
