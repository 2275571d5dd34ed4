#include "coxmark/mesh.hpp"
#include "coxmark/errors.hpp"
#include "coxmark/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>

namespace coxmark {

double Mesh::triangle_area(std::size_t t) const {
    const auto& tr = triangles[t];
    Vec2 a = nodes[tr[0]], b = nodes[tr[1]], c = nodes[tr[2]];
    return 0.5 * cross(b - a, c - a);
}

double Mesh::total_area() const {
    double s = 0.0;
    for (std::size_t t = 0; t < triangles.size(); ++t) s += triangle_area(t);
    return s;
}

double QuadratureWeights::total() const {
    double s = 0.0;
    for (double b : beta) s += b;
    return s;
}

namespace {

constexpr double kMinAngleDeg = 21.0;

struct Tri {
    int v[3];
    bool alive = true;
};

// Incremental Bowyer-Watson triangulation with a fixed super-triangle.
class Delaunay {
public:
    explicit Delaunay(Vec2 lo, Vec2 hi) {
        Vec2 c{0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y)};
        double r = std::max(hi.x - lo.x, hi.y - lo.y);
        if (r <= 0.0) r = 1.0;
        r *= 8.0;
        points.push_back({c.x - 2.0 * r, c.y - r});
        points.push_back({c.x + 2.0 * r, c.y - r});
        points.push_back({c.x, c.y + 2.0 * r});
        tris.push_back({{0, 1, 2}, true});
    }

    int insert(Vec2 p) {
        int pid = static_cast<int>(points.size());
        points.push_back(p);

        // Bad set: alive triangles whose circumcircle contains p, restricted to
        // the edge-connected component of the triangle containing p.
        std::vector<int> candidates;
        int containing = -1;
        for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
            if (!tris[t].alive) continue;
            if (in_circumcircle(t, p)) {
                candidates.push_back(t);
                if (containing < 0 && contains_point(t, p)) containing = t;
            }
        }
        if (candidates.empty() || containing < 0)
            throw numerical_error("triangulation insertion failed to locate point (" +
                                  std::to_string(p.x) + "," + std::to_string(p.y) + ")");

        std::set<int> cand_set(candidates.begin(), candidates.end());
        std::map<std::pair<int, int>, std::vector<int>> edge_owner;
        for (int t : candidates)
            for (int e = 0; e < 3; ++e) {
                int a = tris[t].v[e], b = tris[t].v[(e + 1) % 3];
                edge_owner[{std::min(a, b), std::max(a, b)}].push_back(t);
            }
        // Flood fill from the containing triangle through shared edges.
        std::set<int> cavity;
        std::vector<int> stack{containing};
        while (!stack.empty()) {
            int t = stack.back();
            stack.pop_back();
            if (cavity.count(t)) continue;
            cavity.insert(t);
            for (int e = 0; e < 3; ++e) {
                int a = tris[t].v[e], b = tris[t].v[(e + 1) % 3];
                for (int other : edge_owner[{std::min(a, b), std::max(a, b)}])
                    if (other != t && cand_set.count(other) && !cavity.count(other))
                        stack.push_back(other);
            }
        }

        // Boundary edges: oriented edges whose twin is not inside the cavity.
        std::vector<std::array<int, 2>> boundary;
        for (int t : cavity)
            for (int e = 0; e < 3; ++e) {
                int a = tris[t].v[e], b = tris[t].v[(e + 1) % 3];
                bool shared = false;
                for (int other : edge_owner[{std::min(a, b), std::max(a, b)}])
                    if (other != t && cavity.count(other)) shared = true;
                if (!shared) boundary.push_back({a, b});
            }
        std::sort(boundary.begin(), boundary.end());

        for (int t : cavity) tris[t].alive = false;
        for (const auto& e : boundary) tris.push_back({{e[0], e[1], pid}, true});
        return pid;
    }

    bool has_edge(int a, int b) const {
        for (const auto& t : tris) {
            if (!t.alive) continue;
            for (int e = 0; e < 3; ++e) {
                int u = t.v[e], v = t.v[(e + 1) % 3];
                if ((u == a && v == b) || (u == b && v == a)) return true;
            }
        }
        return false;
    }

    bool contains_point(int t, Vec2 p) const {
        Vec2 a = points[tris[t].v[0]], b = points[tris[t].v[1]], c = points[tris[t].v[2]];
        double d = cross(b - a, c - a);
        if (d == 0.0) return false;
        double w0 = cross(b - p, c - p) / d;
        double w1 = cross(c - p, a - p) / d;
        double w2 = cross(a - p, b - p) / d;
        const double eps = -1e-12;
        return w0 >= eps && w1 >= eps && w2 >= eps;
    }

    bool in_circumcircle(int t, Vec2 p) const {
        // Lifted determinant, translated to p; long double to tame cancellation.
        Vec2 pa = points[tris[t].v[0]], pb = points[tris[t].v[1]], pc = points[tris[t].v[2]];
        long double ax = pa.x - p.x, ay = pa.y - p.y;
        long double bx = pb.x - p.x, by = pb.y - p.y;
        long double cx = pc.x - p.x, cy = pc.y - p.y;
        long double det = (ax * ax + ay * ay) * (bx * cy - by * cx) -
                          (bx * bx + by * by) * (ax * cy - ay * cx) +
                          (cx * cx + cy * cy) * (ax * by - ay * bx);
        return det > 0.0L;
    }

    std::vector<Vec2> points; // first 3 are super-triangle vertices
    std::vector<Tri> tris;
};

double min_angle_deg(Vec2 a, Vec2 b, Vec2 c) {
    double la = dist(b, c), lb = dist(a, c), lc = dist(a, b);
    auto ang = [](double opp, double s1, double s2) {
        double v = (s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2);
        return std::acos(std::clamp(v, -1.0, 1.0)) * 180.0 / M_PI;
    };
    return std::min({ang(la, lb, lc), ang(lb, la, lc), ang(lc, la, lb)});
}

Vec2 circumcenter(Vec2 a, Vec2 b, Vec2 c) {
    double d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    double ux = ((a.x * a.x + a.y * a.y) * (b.y - c.y) + (b.x * b.x + b.y * b.y) * (c.y - a.y) +
                 (c.x * c.x + c.y * c.y) * (a.y - b.y)) / d;
    double uy = ((a.x * a.x + a.y * a.y) * (c.x - b.x) + (b.x * b.x + b.y * b.y) * (a.x - c.x) +
                 (c.x * c.x + c.y * c.y) * (b.x - a.x)) / d;
    return {ux, uy};
}

// Deterministic sub-cell jitter that breaks lattice cocircularity.
double lattice_jitter(std::uint64_t ix, std::uint64_t iy, std::uint64_t salt) {
    std::uint64_t h = mix_seed((ix << 32) ^ iy ^ (salt * 0x9e3779b97f4a7c15ULL));
    return (static_cast<double>(h >> 11) * 0x1p-53 - 0.5);
}

} // namespace

Mesh build_mesh(const DomainPolygon& domain_in, double max_edge, double cutoff) {
    DomainPolygon domain = domain_in;
    domain.validate();
    if (!(max_edge > cutoff && cutoff > 0.0))
        throw invalid_domain_error("build_mesh requires max_edge > cutoff > 0");

    Vec2 lo, hi;
    domain.bounding_box(lo, hi);
    Delaunay dt(lo, hi);

    // Boundary samples: every ring vertex plus subdivisions so segment length
    // stays under max_edge; intermediate samples respect the cutoff.
    std::vector<Vec2> boundary_pts;
    std::vector<std::pair<int, int>> segments; // indices into boundary_pts
    auto sample_ring = [&](const std::vector<Vec2>& ring) {
        std::vector<int> ids;
        for (std::size_t i = 0; i < ring.size(); ++i) {
            Vec2 a = ring[i], b = ring[(i + 1) % ring.size()];
            int first = static_cast<int>(boundary_pts.size());
            boundary_pts.push_back(a);
            ids.push_back(first);
            double len = dist(a, b);
            int pieces = std::max(1, static_cast<int>(std::ceil(len / (0.95 * max_edge))));
            double piece = len / pieces;
            while (pieces > 1 && piece < cutoff) {
                --pieces;
                piece = len / pieces;
            }
            for (int k = 1; k < pieces; ++k) {
                double t = static_cast<double>(k) / pieces;
                boundary_pts.push_back(a + t * (b - a));
                ids.push_back(static_cast<int>(boundary_pts.size()) - 1);
            }
        }
        for (std::size_t i = 0; i < ids.size(); ++i)
            segments.push_back({ids[i], ids[(i + 1) % ids.size()]});
    };
    sample_ring(domain.vertices);
    for (const auto& h : domain.holes) sample_ring(h);

    std::vector<int> boundary_node_id(boundary_pts.size());
    for (std::size_t i = 0; i < boundary_pts.size(); ++i)
        boundary_node_id[i] = dt.insert(boundary_pts[i]);

    // Jittered hexagonal lattice in the interior, clear of the boundary band.
    double spacing = std::max(0.85 * max_edge, 1.02 * cutoff);
    double row_h = spacing * std::sqrt(3.0) / 2.0;
    double clear_band = std::max(0.35 * spacing, cutoff);
    std::vector<Vec2> lattice;
    long iy = 0;
    for (double y = lo.y + 0.5 * row_h; y < hi.y; y += row_h, ++iy) {
        double x0 = lo.x + ((iy % 2 == 0) ? 0.5 : 1.0) * spacing * 0.5;
        long ix = 0;
        for (double x = x0; x < hi.x; x += spacing, ++ix) {
            Vec2 p{x + 0.02 * spacing * lattice_jitter(ix, iy, 1),
                   y + 0.02 * spacing * lattice_jitter(ix, iy, 2)};
            if (!domain.contains(p)) continue;
            if (domain.boundary_distance(p) < clear_band) continue;
            lattice.push_back(p);
        }
    }
    for (const auto& p : lattice) dt.insert(p);

    // Segment recovery: a missing constrained edge is split at its midpoint.
    std::vector<std::pair<int, int>> work = segments;
    for (int depth = 0; depth < 12 && !work.empty(); ++depth) {
        std::vector<std::pair<int, int>> next;
        for (auto [ia, ib] : work) {
            int na = boundary_node_id[ia], nb = boundary_node_id[ib];
            if (dt.has_edge(na, nb)) continue;
            Vec2 mid = 0.5 * (dt.points[na] + dt.points[nb]);
            if (dist(dt.points[na], mid) < cutoff) continue; // too short to split further
            int nid = dt.insert(mid);
            boundary_pts.push_back(mid);
            boundary_node_id.push_back(nid);
            int mid_idx = static_cast<int>(boundary_pts.size()) - 1;
            next.push_back({ia, mid_idx});
            next.push_back({mid_idx, ib});
        }
        work = std::move(next);
    }

    // Quality and size refinement over triangles lying inside the domain.
    auto relevant = [&](int t) {
        const auto& tr = dt.tris[t];
        if (!tr.alive) return false;
        for (int k = 0; k < 3; ++k)
            if (tr.v[k] < 3) return false;
        Vec2 cen = (1.0 / 3.0) * (dt.points[tr.v[0]] + dt.points[tr.v[1]] + dt.points[tr.v[2]]);
        return domain.contains(cen);
    };
    auto too_close = [&](Vec2 p) {
        for (std::size_t i = 3; i < dt.points.size(); ++i)
            if (dist(dt.points[i], p) < cutoff) return true;
        return false;
    };

    std::set<std::array<int, 3>> given_up;
    const long max_inserts = 60 * static_cast<long>(dt.points.size()) + 20000;
    long inserts = 0;
    bool changed = true;
    while (changed && inserts < max_inserts) {
        changed = false;
        std::vector<std::pair<double, int>> queue; // (badness, triangle); worst first
        for (int t = 0; t < static_cast<int>(dt.tris.size()); ++t) {
            if (!relevant(t)) continue;
            const auto& tr = dt.tris[t];
            Vec2 a = dt.points[tr.v[0]], b = dt.points[tr.v[1]], c = dt.points[tr.v[2]];
            double longest = std::max({dist(a, b), dist(b, c), dist(a, c)});
            double ang = min_angle_deg(a, b, c);
            std::array<int, 3> key{tr.v[0], tr.v[1], tr.v[2]};
            std::sort(key.begin(), key.end());
            if (given_up.count(key)) continue;
            if (longest > max_edge)
                queue.push_back({longest / max_edge + 1000.0, t});
            else if (ang < kMinAngleDeg)
                queue.push_back({kMinAngleDeg / std::max(ang, 1e-9), t});
        }
        std::sort(queue.begin(), queue.end(), [&](const auto& l, const auto& r) {
            if (l.first != r.first) return l.first > r.first;
            return dt.tris[l.second].v[0] < dt.tris[r.second].v[0];
        });
        for (const auto& [badness, t] : queue) {
            if (!dt.tris[t].alive) continue;
            const auto& tr = dt.tris[t];
            Vec2 a = dt.points[tr.v[0]], b = dt.points[tr.v[1]], c = dt.points[tr.v[2]];
            Vec2 cc = circumcenter(a, b, c);
            Vec2 candidate = cc;
            bool ok = std::isfinite(cc.x) && std::isfinite(cc.y) && domain.contains(cc) &&
                      domain.boundary_distance(cc) >= 0.5 * cutoff && !too_close(cc);
            if (!ok) {
                // Fall back to the midpoint of the longest edge.
                Vec2 m01 = 0.5 * (a + b), m12 = 0.5 * (b + c), m02 = 0.5 * (a + c);
                double d01 = dist(a, b), d12 = dist(b, c), d02 = dist(a, c);
                candidate = m01;
                double best = d01;
                if (d12 > best) { candidate = m12; best = d12; }
                if (d02 > best) { candidate = m02; best = d02; }
                ok = domain.contains(candidate) && !too_close(candidate);
            }
            std::array<int, 3> key{tr.v[0], tr.v[1], tr.v[2]};
            std::sort(key.begin(), key.end());
            if (!ok) {
                given_up.insert(key);
                continue;
            }
            dt.insert(candidate);
            ++inserts;
            changed = true;
            break; // requeue: insertion may have fixed several triangles
        }
    }

    // Finalize: drop super-triangle fans and outside triangles, compact nodes.
    Mesh mesh;
    std::vector<int> remap(dt.points.size(), -1);
    for (int t = 0; t < static_cast<int>(dt.tris.size()); ++t) {
        if (!relevant(t)) continue;
        const auto& tr = dt.tris[t];
        std::array<int, 3> out{};
        for (int k = 0; k < 3; ++k) {
            int old = tr.v[k];
            if (remap[old] < 0) {
                remap[old] = static_cast<int>(mesh.nodes.size());
                mesh.nodes.push_back(dt.points[old]);
            }
            out[k] = remap[old];
        }
        mesh.triangles.push_back(out);
    }
    if (mesh.triangles.empty())
        throw invalid_domain_error("triangulation produced no interior triangles; "
                                   "domain smaller than max_edge?");

    double scale = std::max(hi.x - lo.x, hi.y - lo.y);
    mesh.boundary_flags.assign(mesh.nodes.size(), 0);
    for (std::size_t i = 0; i < mesh.nodes.size(); ++i)
        if (domain.boundary_distance(mesh.nodes[i]) < 1e-7 * scale) mesh.boundary_flags[i] = 1;
    return mesh;
}

TriangleLocator::TriangleLocator(const Mesh& mesh) : mesh_(mesh) {
    lo_ = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    hi_ = {-lo_.x, -lo_.y};
    for (const auto& n : mesh.nodes) {
        lo_.x = std::min(lo_.x, n.x);
        lo_.y = std::min(lo_.y, n.y);
        hi_.x = std::max(hi_.x, n.x);
        hi_.y = std::max(hi_.y, n.y);
    }
    double w = std::max(hi_.x - lo_.x, 1e-12), h = std::max(hi_.y - lo_.y, 1e-12);
    int target = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(mesh.triangles.size()))));
    target = std::max(1, target);
    cell_ = std::max(w, h) / target;
    nx_ = std::max(1, static_cast<int>(std::ceil(w / cell_)));
    ny_ = std::max(1, static_cast<int>(std::ceil(h / cell_)));
    bins_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
        const auto& tr = mesh.triangles[t];
        Vec2 tlo = mesh.nodes[tr[0]], thi = tlo;
        for (int k = 1; k < 3; ++k) {
            tlo.x = std::min(tlo.x, mesh.nodes[tr[k]].x);
            tlo.y = std::min(tlo.y, mesh.nodes[tr[k]].y);
            thi.x = std::max(thi.x, mesh.nodes[tr[k]].x);
            thi.y = std::max(thi.y, mesh.nodes[tr[k]].y);
        }
        int i0 = std::clamp(static_cast<int>((tlo.x - lo_.x) / cell_), 0, nx_ - 1);
        int i1 = std::clamp(static_cast<int>((thi.x - lo_.x) / cell_), 0, nx_ - 1);
        int j0 = std::clamp(static_cast<int>((tlo.y - lo_.y) / cell_), 0, ny_ - 1);
        int j1 = std::clamp(static_cast<int>((thi.y - lo_.y) / cell_), 0, ny_ - 1);
        for (int j = j0; j <= j1; ++j)
            for (int i = i0; i <= i1; ++i)
                bins_[static_cast<std::size_t>(j) * nx_ + i].push_back(t);
    }
}

int TriangleLocator::locate(Vec2 p, std::array<double, 3>& bary) const {
    if (p.x < lo_.x - 1e-12 || p.x > hi_.x + 1e-12 || p.y < lo_.y - 1e-12 || p.y > hi_.y + 1e-12)
        return -1;
    int i = std::clamp(static_cast<int>((p.x - lo_.x) / cell_), 0, nx_ - 1);
    int j = std::clamp(static_cast<int>((p.y - lo_.y) / cell_), 0, ny_ - 1);
    const double eps = -1e-9;
    for (int t : bins_[static_cast<std::size_t>(j) * nx_ + i]) {
        const auto& tr = mesh_.triangles[t];
        Vec2 a = mesh_.nodes[tr[0]], b = mesh_.nodes[tr[1]], c = mesh_.nodes[tr[2]];
        double d = cross(b - a, c - a);
        if (d <= 0.0) continue;
        double w0 = cross(b - p, c - p) / d;
        double w1 = cross(c - p, a - p) / d;
        double w2 = 1.0 - w0 - w1;
        if (w0 >= eps && w1 >= eps && w2 >= eps) {
            w0 = std::max(w0, 0.0);
            w1 = std::max(w1, 0.0);
            w2 = std::max(w2, 0.0);
            double s = w0 + w1 + w2;
            bary = {w0 / s, w1 / s, w2 / s};
            return t;
        }
    }
    return -1;
}

Projector barycentric_projector(const Mesh& mesh, const std::vector<Vec2>& locations) {
    TriangleLocator locator(mesh);
    Projector proj;
    proj.A.resize(static_cast<Eigen::Index>(locations.size()),
                  static_cast<Eigen::Index>(mesh.nodes.size()));
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(locations.size() * 3);
    for (std::size_t r = 0; r < locations.size(); ++r) {
        std::array<double, 3> bary{};
        int t = locator.locate(locations[r], bary);
        if (t < 0) {
            ++proj.n_outside;
            continue;
        }
        const auto& tr = mesh.triangles[t];
        for (int k = 0; k < 3; ++k)
            if (bary[k] != 0.0)
                trips.emplace_back(static_cast<int>(r), tr[k], bary[k]);
    }
    proj.A.setFromTriplets(trips.begin(), trips.end());
    return proj;
}

QuadratureWeights dual_weights(const Mesh& mesh, const DomainPolygon& domain) {
    // Triangles already lie inside the domain, so each barycentric dual cell
    // contributes exactly area/3 per vertex; no further clipping is needed.
    (void)domain;
    QuadratureWeights w;
    w.beta.assign(mesh.nodes.size(), 0.0);
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        double third = mesh.triangle_area(t) / 3.0;
        for (int k = 0; k < 3; ++k) w.beta[mesh.triangles[t][k]] += third;
    }
    return w;
}

FemMatrices fem_matrices(const Mesh& mesh) {
    const std::size_t n = mesh.nodes.size();
    FemMatrices fem;
    fem.c_diag = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(mesh.triangles.size() * 9);
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tr = mesh.triangles[t];
        Vec2 p0 = mesh.nodes[tr[0]], p1 = mesh.nodes[tr[1]], p2 = mesh.nodes[tr[2]];
        double area = 0.5 * cross(p1 - p0, p2 - p0);
        if (!(area > 1e-14))
            throw assembly_error("degenerate triangle " + std::to_string(t) +
                                 " (area " + std::to_string(area) + ") in FEM assembly");
        Vec2 e[3] = {p2 - p1, p0 - p2, p1 - p0}; // edge opposite each vertex
        for (int i = 0; i < 3; ++i) {
            fem.c_diag[tr[i]] += area / 3.0;
            for (int j = 0; j < 3; ++j)
                trips.emplace_back(tr[i], tr[j], dot(e[i], e[j]) / (4.0 * area));
        }
    }
    fem.g.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    fem.g.setFromTriplets(trips.begin(), trips.end());
    return fem;
}

} // namespace coxmark
