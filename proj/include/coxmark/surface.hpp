#pragma once

#include "coxmark/geometry.hpp"

#include <cstdint>
#include <vector>

namespace coxmark {

// Regular square-cell grid tiling the domain bounding box. Cells whose center
// falls inside the domain are flagged; those are the prediction pixels.
struct GridSpec {
    double x0 = 0.0, y0 = 0.0; // lower-left corner of cell (0,0)
    double cell = 1.0;         // cell side, km
    int nx = 0, ny = 0;
    std::vector<std::uint8_t> inside; // nx*ny, row-major (iy*nx+ix)

    std::size_t size() const { return static_cast<std::size_t>(nx) * ny; }
    Vec2 center(int ix, int iy) const {
        return {x0 + (ix + 0.5) * cell, y0 + (iy + 0.5) * cell};
    }
    // Containing cell index, or -1 when off the grid.
    long cell_index(Vec2 p) const;
    double cell_area() const { return cell * cell; }
};

GridSpec make_grid(const DomainPolygon& domain, double cell);

// Cellwise-constant surface over a GridSpec. valid marks cells carrying a
// kernel estimate; invalid cells hold the global mean fallback.
struct Surface {
    GridSpec grid;
    std::vector<double> values;
    std::vector<std::uint8_t> valid;
    double bandwidth = 0.0;
    double global_mean = 0.0;

    double value_at(Vec2 p) const; // global mean off the grid
    bool valid_at(Vec2 p) const;
};

// Nadaraya-Watson estimate with a Gaussian kernel. Cells farther than
// 6*bandwidth from every point fall back to the global mean and are flagged.
Surface kernel_smooth(const std::vector<Vec2>& points, const std::vector<double>& values,
                      double bandwidth, const GridSpec& grid);

} // namespace coxmark
