#include <doctest.h>

#include "coxmark/errors.hpp"
#include "coxmark/mesh.hpp"
#include "coxmark/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

using namespace coxmark;

namespace {

Mesh reference_triangle_mesh() {
    Mesh m;
    m.nodes = {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}};
    m.triangles = {{0, 1, 2}};
    m.boundary_flags = {1, 1, 1};
    return m;
}

std::vector<Vec2> random_interior_points(const DomainPolygon& domain, std::size_t n,
                                         std::uint64_t seed) {
    Vec2 lo, hi;
    domain.bounding_box(lo, hi);
    Rng rng(seed);
    std::vector<Vec2> pts;
    while (pts.size() < n) {
        Vec2 p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y)};
        if (domain.contains(p) && domain.boundary_distance(p) > 1e-6) pts.push_back(p);
    }
    return pts;
}

} // namespace

TEST_CASE("unit square mesh satisfies edge, cutoff and coverage constraints") {
    DomainPolygon square = make_rectangle(0, 0, 1, 1);
    Mesh mesh = build_mesh(square, 0.1, 0.02);

    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        CHECK(mesh.triangle_area(t) > 0.0);
        const auto& tr = mesh.triangles[t];
        for (int e = 0; e < 3; ++e) {
            double len = dist(mesh.nodes[tr[e]], mesh.nodes[tr[(e + 1) % 3]]);
            CHECK(len <= 0.1 + 1e-9);
        }
    }

    // No node pair closer than the cutoff.
    double min_dist = 1e9;
    for (std::size_t i = 0; i < mesh.nodes.size(); ++i)
        for (std::size_t j = i + 1; j < mesh.nodes.size(); ++j)
            min_dist = std::min(min_dist, dist(mesh.nodes[i], mesh.nodes[j]));
    CHECK(min_dist >= 0.02 - 1e-12);

    // Triangulation covers the square.
    CHECK(mesh.total_area() == doctest::Approx(1.0).epsilon(1e-6));

    // Every node belongs to a triangle and indices are in range.
    std::vector<int> uses(mesh.nodes.size(), 0);
    for (const auto& tr : mesh.triangles)
        for (int k = 0; k < 3; ++k) {
            REQUIRE(tr[k] >= 0);
            REQUIRE(tr[k] < static_cast<int>(mesh.nodes.size()));
            uses[tr[k]]++;
        }
    CHECK(*std::min_element(uses.begin(), uses.end()) >= 1);
}

TEST_CASE("mesh construction is deterministic") {
    DomainPolygon square = make_rectangle(0, 0, 1, 1);
    Mesh a = build_mesh(square, 0.15, 0.03);
    Mesh b = build_mesh(square, 0.15, 0.03);
    REQUIRE(a.nodes.size() == b.nodes.size());
    REQUIRE(a.triangles.size() == b.triangles.size());
    for (std::size_t i = 0; i < a.nodes.size(); ++i) {
        CHECK(a.nodes[i].x == b.nodes[i].x);
        CHECK(a.nodes[i].y == b.nodes[i].y);
    }
    for (std::size_t t = 0; t < a.triangles.size(); ++t) CHECK(a.triangles[t] == b.triangles[t]);
}

TEST_CASE("degenerate polygons are rejected") {
    DomainPolygon two;
    two.vertices = {{0, 0}, {1, 0}};
    CHECK_THROWS_AS(two.validate(), invalid_domain_error);
    CHECK_THROWS_AS(build_mesh(two, 0.1, 0.02), invalid_domain_error);

    DomainPolygon flat;
    flat.vertices = {{0, 0}, {1, 0}, {2, 0}};
    CHECK_THROWS_AS(build_mesh(flat, 0.1, 0.02), invalid_domain_error);

    DomainPolygon square = make_rectangle(0, 0, 1, 1);
    CHECK_THROWS_AS(build_mesh(square, 0.02, 0.1), invalid_domain_error); // max_edge <= cutoff
}

TEST_CASE("projector reproduces basis interpolation properties") {
    DomainPolygon square = make_rectangle(0, 0, 1, 1);
    Mesh mesh = build_mesh(square, 0.2, 0.02);

    SUBCASE("location at a node gives a single unit weight") {
        std::vector<Vec2> locs{mesh.nodes[5]};
        Projector proj = barycentric_projector(mesh, locs);
        REQUIRE(proj.A.nonZeros() >= 1);
        double at_node = proj.A.coeff(0, 5);
        CHECK(at_node == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(Eigen::RowVectorXd(proj.A.row(0)).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("triangle centroid gives three 1/3 weights") {
        const auto& tr = mesh.triangles[0];
        Vec2 c = (1.0 / 3.0) * (mesh.nodes[tr[0]] + mesh.nodes[tr[1]] + mesh.nodes[tr[2]]);
        Projector proj = barycentric_projector(mesh, {c});
        for (int k = 0; k < 3; ++k)
            CHECK(proj.A.coeff(0, tr[k]) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
    }

    SUBCASE("outside locations give zero rows") {
        Projector proj = barycentric_projector(mesh, {{5.0, 5.0}, {-1.0, 0.5}});
        CHECK(proj.A.nonZeros() == 0);
        CHECK(proj.n_outside == 2);
    }

    SUBCASE("partition of unity at 1000 random interior points") {
        auto pts = random_interior_points(square, 1000, 77);
        Projector proj = barycentric_projector(mesh, pts);
        CHECK(proj.n_outside == 0);
        for (int r = 0; r < proj.A.rows(); ++r)
            CHECK(std::abs(Eigen::RowVectorXd(proj.A.row(r)).sum() - 1.0) < 1e-12);
    }

    SUBCASE("linear functions are interpolated exactly") {
        Eigen::VectorXd fx(static_cast<Eigen::Index>(mesh.nodes.size()));
        for (std::size_t i = 0; i < mesh.nodes.size(); ++i)
            fx[static_cast<Eigen::Index>(i)] = mesh.nodes[i].x;
        auto pts = random_interior_points(square, 200, 78);
        Projector proj = barycentric_projector(mesh, pts);
        Eigen::VectorXd vals = proj.A * fx;
        for (std::size_t i = 0; i < pts.size(); ++i)
            CHECK(std::abs(vals[static_cast<Eigen::Index>(i)] - pts[i].x) < 1e-10);
    }
}

TEST_CASE("dual weights partition the domain area") {
    SUBCASE("unit square") {
        DomainPolygon square = make_rectangle(0, 0, 1, 1);
        Mesh mesh = build_mesh(square, 0.13, 0.02);
        QuadratureWeights w = dual_weights(mesh, square);
        REQUIRE(w.beta.size() == mesh.nodes.size());
        CHECK(w.total() == doctest::Approx(1.0).epsilon(1e-6));
        for (double b : w.beta) CHECK(b >= 0.0);
    }

    SUBCASE("single reference triangle splits into thirds") {
        Mesh m = reference_triangle_mesh();
        DomainPolygon tri;
        tri.vertices = {{0, 0}, {1, 0}, {0, 1}};
        tri.validate();
        QuadratureWeights w = dual_weights(m, tri);
        for (double b : w.beta) CHECK(b == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    }
}

TEST_CASE("fem matrices: lumped mass, stiffness null space, area identities") {
    SUBCASE("reference triangle lumped mass") {
        FemMatrices fem = fem_matrices(reference_triangle_mesh());
        for (int i = 0; i < 3; ++i)
            CHECK(fem.c_diag[i] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    }

    SUBCASE("stiffness annihilates constants; mass sums to area") {
        DomainPolygon square = make_rectangle(0, 0, 1, 1);
        Mesh mesh = build_mesh(square, 0.17, 0.02);
        FemMatrices fem = fem_matrices(mesh);
        Eigen::VectorXd ones = Eigen::VectorXd::Ones(fem.c_diag.size());
        Eigen::VectorXd g1 = fem.g * ones;
        CHECK(g1.cwiseAbs().maxCoeff() < 1e-12);
        CHECK(fem.c_diag.sum() == doctest::Approx(1.0).epsilon(1e-6));

        Eigen::SparseMatrix<double> diff = fem.g - Eigen::SparseMatrix<double>(fem.g.transpose());
        double asym = 0.0;
        for (int k = 0; k < diff.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(diff, k); it; ++it)
                asym = std::max(asym, std::abs(it.value()));
        CHECK(asym < 1e-12);

        QuadratureWeights w = dual_weights(mesh, square);
        CHECK(std::abs(w.total() - fem.c_diag.sum()) < 1e-8);
    }

    SUBCASE("degenerate triangle names the offender") {
        Mesh bad = reference_triangle_mesh();
        bad.nodes[2] = {2.0, 0.0}; // collinear
        try {
            fem_matrices(bad);
            FAIL("expected assembly_error");
        } catch (const assembly_error& e) {
            CHECK(std::string(e.what()).find("triangle 0") != std::string::npos);
        }
    }
}

TEST_CASE("mesh handles a non-convex domain with a hole") {
    DomainPolygon dom;
    dom.vertices = {{0, 0}, {4, 0}, {4, 1}, {1, 1}, {1, 3}, {4, 3}, {4, 4}, {0, 4}};
    dom.holes = {{{0.3, 3.2}, {0.7, 3.2}, {0.7, 3.7}, {0.3, 3.7}}};
    dom.validate();
    double target = dom.area();
    Mesh mesh = build_mesh(dom, 0.35, 0.05);
    CHECK(mesh.total_area() == doctest::Approx(target).epsilon(1e-4));
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tr = mesh.triangles[t];
        Vec2 c = (1.0 / 3.0) * (mesh.nodes[tr[0]] + mesh.nodes[tr[1]] + mesh.nodes[tr[2]]);
        CHECK(dom.contains(c));
    }
}
