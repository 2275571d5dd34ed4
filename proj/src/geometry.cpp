#include "coxmark/geometry.hpp"
#include "coxmark/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace coxmark {

double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }
double dist(Vec2 a, Vec2 b) { return norm(a - b); }

double ring_signed_area(const std::vector<Vec2>& ring) {
    double s = 0.0;
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& a = ring[i];
        const Vec2& b = ring[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    return 0.5 * s;
}

namespace {

bool segments_properly_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
    double d1 = cross(b - a, c - a);
    double d2 = cross(b - a, d - a);
    double d3 = cross(d - c, a - c);
    double d4 = cross(d - c, b - c);
    return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
}

} // namespace

bool ring_is_simple(const std::vector<Vec2>& ring) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
        Vec2 a = ring[i], b = ring[(i + 1) % n];
        for (std::size_t j = i + 1; j < n; ++j) {
            if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
            Vec2 c = ring[j], d = ring[(j + 1) % n];
            if (segments_properly_intersect(a, b, c, d)) return false;
        }
    }
    return true;
}

bool point_in_ring(Vec2 p, const std::vector<Vec2>& ring) {
    // Even-odd crossing rule.
    bool inside = false;
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = ring[i];
        const Vec2& b = ring[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            double xint = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if (p.x < xint) inside = !inside;
        }
    }
    return inside;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    Vec2 ab = b - a;
    double len2 = dot(ab, ab);
    if (len2 == 0.0) return dist(p, a);
    double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
    return dist(p, a + t * ab);
}

void DomainPolygon::validate() {
    if (vertices.size() < 3)
        throw invalid_domain_error("domain polygon needs at least 3 vertices, got " +
                                   std::to_string(vertices.size()));
    double a = ring_signed_area(vertices);
    if (std::abs(a) <= 0.0)
        throw invalid_domain_error("domain polygon encloses zero area");
    if (a < 0.0) std::reverse(vertices.begin(), vertices.end());
    if (!ring_is_simple(vertices))
        throw invalid_domain_error("domain polygon outer ring self-intersects");
    for (auto& h : holes) {
        if (h.size() < 3) throw invalid_domain_error("hole ring needs at least 3 vertices");
        if (ring_signed_area(h) > 0.0) std::reverse(h.begin(), h.end());
        if (!ring_is_simple(h)) throw invalid_domain_error("hole ring self-intersects");
    }
}

double DomainPolygon::area() const {
    double a = std::abs(ring_signed_area(vertices));
    for (const auto& h : holes) a -= std::abs(ring_signed_area(h));
    return a;
}

bool DomainPolygon::contains(Vec2 p) const {
    if (!point_in_ring(p, vertices)) return false;
    for (const auto& h : holes)
        if (point_in_ring(p, h)) return false;
    return true;
}

double DomainPolygon::boundary_distance(Vec2 p) const {
    double best = std::numeric_limits<double>::infinity();
    auto scan = [&](const std::vector<Vec2>& ring) {
        const std::size_t n = ring.size();
        for (std::size_t i = 0; i < n; ++i)
            best = std::min(best, point_segment_distance(p, ring[i], ring[(i + 1) % n]));
    };
    scan(vertices);
    for (const auto& h : holes) scan(h);
    return best;
}

void DomainPolygon::bounding_box(Vec2& lo, Vec2& hi) const {
    lo = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    hi = {-lo.x, -lo.y};
    for (const auto& v : vertices) {
        lo.x = std::min(lo.x, v.x);
        lo.y = std::min(lo.y, v.y);
        hi.x = std::max(hi.x, v.x);
        hi.y = std::max(hi.y, v.y);
    }
}

std::uint64_t morton_key(Vec2 p, Vec2 lo, Vec2 hi) {
    auto normalize = [](double v, double a, double b) {
        if (b <= a) return std::uint32_t(0);
        double t = (v - a) / (b - a);
        t = std::clamp(t, 0.0, 1.0);
        return static_cast<std::uint32_t>(t * double((1u << 21) - 1));
    };
    std::uint64_t xi = normalize(p.x, lo.x, hi.x);
    std::uint64_t yi = normalize(p.y, lo.y, hi.y);
    auto spread = [](std::uint64_t v) {
        v &= 0x1fffff;
        v = (v | (v << 32)) & 0x1f00000000ffffULL;
        v = (v | (v << 16)) & 0x1f0000ff0000ffULL;
        v = (v | (v << 8)) & 0x100f00f00f00f00fULL;
        v = (v | (v << 4)) & 0x10c30c30c30c30c3ULL;
        v = (v | (v << 2)) & 0x1249249249249249ULL;
        return v;
    };
    return (spread(xi) << 1) | spread(yi);
}

DomainPolygon make_rectangle(double x0, double y0, double x1, double y1) {
    DomainPolygon poly;
    poly.vertices = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
    poly.validate();
    return poly;
}

} // namespace coxmark
