#pragma once

#include "coxmark/geometry.hpp"

#include <Eigen/Sparse>

#include <array>
#include <vector>

namespace coxmark {

// Triangulation of the study domain. Triangles are positively oriented and
// index into nodes; boundary_flags marks nodes lying on the domain boundary.
struct Mesh {
    std::vector<Vec2> nodes;
    std::vector<std::array<int, 3>> triangles;
    std::vector<std::uint8_t> boundary_flags;

    double triangle_area(std::size_t t) const;
    double total_area() const;
};

// Barycentric projection from mesh nodes to arbitrary locations. Each row has
// at most 3 nonzeros summing to 1; rows for locations outside the mesh are zero.
struct Projector {
    Eigen::SparseMatrix<double> A;
    std::size_t n_outside = 0; // locations that produced zero rows
};

// Dual-cell quadrature weights, km^2 per node. Sum equals the domain area.
struct QuadratureWeights {
    std::vector<double> beta;
    double total() const;
};

// Lumped P1 mass matrix (diagonal of C, km^2) and stiffness matrix G.
struct FemMatrices {
    Eigen::VectorXd c_diag;
    Eigen::SparseMatrix<double> g;
};

// Constrained Delaunay refinement of the domain polygon. No interior edge
// exceeds max_edge, no two nodes sit closer than cutoff, min-angle target 21
// degrees. Deterministic for fixed inputs.
Mesh build_mesh(const DomainPolygon& domain, double max_edge, double cutoff);

Projector barycentric_projector(const Mesh& mesh, const std::vector<Vec2>& locations);

QuadratureWeights dual_weights(const Mesh& mesh, const DomainPolygon& domain);

FemMatrices fem_matrices(const Mesh& mesh);

// Point-location accelerator shared by projector construction and predict.
class TriangleLocator {
public:
    explicit TriangleLocator(const Mesh& mesh);
    // Returns triangle index and barycentric weights, or -1 if outside.
    int locate(Vec2 p, std::array<double, 3>& bary) const;

private:
    const Mesh& mesh_;
    Vec2 lo_, hi_;
    double cell_ = 1.0;
    int nx_ = 1, ny_ = 1;
    std::vector<std::vector<int>> bins_;
};

} // namespace coxmark
