#include "coxmark/surface.hpp"
#include "coxmark/errors.hpp"

#include <cmath>

namespace coxmark {

long GridSpec::cell_index(Vec2 p) const {
    int ix = static_cast<int>(std::floor((p.x - x0) / cell));
    int iy = static_cast<int>(std::floor((p.y - y0) / cell));
    if (ix < 0 || ix >= nx || iy < 0 || iy >= ny) return -1;
    return static_cast<long>(iy) * nx + ix;
}

GridSpec make_grid(const DomainPolygon& domain, double cell) {
    if (!(cell > 0.0)) throw invalid_domain_error("grid cell size must be positive");
    Vec2 lo, hi;
    domain.bounding_box(lo, hi);
    GridSpec g;
    g.cell = cell;
    g.x0 = lo.x;
    g.y0 = lo.y;
    g.nx = std::max(1, static_cast<int>(std::ceil((hi.x - lo.x) / cell - 1e-12)));
    g.ny = std::max(1, static_cast<int>(std::ceil((hi.y - lo.y) / cell - 1e-12)));
    g.inside.assign(g.size(), 0);
    for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix)
            if (domain.contains(g.center(ix, iy)))
                g.inside[static_cast<std::size_t>(iy) * g.nx + ix] = 1;
    return g;
}

double Surface::value_at(Vec2 p) const {
    long idx = grid.cell_index(p);
    return idx < 0 ? global_mean : values[static_cast<std::size_t>(idx)];
}

bool Surface::valid_at(Vec2 p) const {
    long idx = grid.cell_index(p);
    return idx >= 0 && valid[static_cast<std::size_t>(idx)] != 0;
}

Surface kernel_smooth(const std::vector<Vec2>& points, const std::vector<double>& values,
                      double bandwidth, const GridSpec& grid) {
    if (points.empty()) throw invalid_domain_error("kernel_smooth needs at least one point");
    if (points.size() != values.size())
        throw invalid_domain_error("kernel_smooth: points/values size mismatch");
    if (!(bandwidth > 0.0)) throw invalid_domain_error("kernel_smooth bandwidth must be positive");

    Surface s;
    s.grid = grid;
    s.bandwidth = bandwidth;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    s.global_mean = mean;
    s.values.assign(grid.size(), mean);
    s.valid.assign(grid.size(), 0);

    const double reach = 6.0 * bandwidth;
    const double inv2b2 = 1.0 / (2.0 * bandwidth * bandwidth);
    for (int iy = 0; iy < grid.ny; ++iy) {
        for (int ix = 0; ix < grid.nx; ++ix) {
            Vec2 c = grid.center(ix, iy);
            double num = 0.0, den = 0.0;
            bool reached = false;
            for (std::size_t k = 0; k < points.size(); ++k) {
                double d2 = (c.x - points[k].x) * (c.x - points[k].x) +
                            (c.y - points[k].y) * (c.y - points[k].y);
                if (d2 <= reach * reach) reached = true;
                double w = std::exp(-d2 * inv2b2);
                num += w * values[k];
                den += w;
            }
            std::size_t idx = static_cast<std::size_t>(iy) * grid.nx + ix;
            if (reached && den > 0.0) {
                s.values[idx] = num / den;
                s.valid[idx] = 1;
            }
        }
    }
    return s;
}

} // namespace coxmark
