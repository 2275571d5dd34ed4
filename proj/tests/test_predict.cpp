#include <doctest.h>

#include "coxmark/errors.hpp"
#include "coxmark/predict.hpp"
#include "coxmark/rng.hpp"
#include "toy.hpp"

#include <cmath>

using namespace coxmark;
using namespace coxmark::testutil;

namespace {

// Hand-built pixel field over an n x n unit-cell grid.
PixelField make_field(int n, const Eigen::MatrixXd& lambda1, const Eigen::MatrixXd& lambda2) {
    PixelField f;
    f.grid.x0 = 0.0;
    f.grid.y0 = 0.0;
    f.grid.cell = 1.0;
    f.grid.nx = n;
    f.grid.ny = n;
    f.grid.inside.assign(static_cast<std::size_t>(n) * n, 1);
    for (long c = 0; c < n * n; ++c) f.cells.push_back(c);
    f.lambda1 = lambda1;
    f.lambda2 = lambda2;
    f.p_area.assign(f.cells.size(), 1.0);
    f.p_dwel.assign(f.cells.size(), 1.0);
    return f;
}

Surface constant_surface(const GridSpec& grid, double value) {
    Surface s;
    s.grid = grid;
    s.values.assign(grid.size(), value);
    s.valid.assign(grid.size(), 1);
    s.bandwidth = 1.0;
    s.global_mean = value;
    return s;
}

} // namespace

TEST_CASE("pixel intensities from posterior draws") {
    Toy t = make_toy(LatentVariant::SHARED_W, {}, 6, 17);
    GridSpec grid = make_grid(t.domain, 0.25);
    SurfaceBundle surfaces; // no offsets, no covariates

    // Two hand-made draws: all-zero latent, and one with alpha2 bumped by 1.
    PosteriorDraws draws;
    draws.latent = Eigen::MatrixXd::Zero(2, static_cast<Eigen::Index>(t.model.dim()));
    draws.latent(1, t.model.fixed_index("alpha2")) = 1.0;
    draws.hyper_index = {0, 0};
    draws.support = {toy_hyper(t.model)};
    draws.support_weights = {1.0};

    PixelField field = pixel_intensities(draws, t.model, t.mesh, grid, surfaces);

    SUBCASE("zero field and intercepts give unit intensity everywhere") {
        for (Eigen::Index p = 0; p < field.lambda1.cols(); ++p) {
            CHECK(field.lambda1(0, p) == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(field.lambda2(0, p) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }

    SUBCASE("adding 1 to alpha2 multiplies every lambda2 pixel by e") {
        for (Eigen::Index p = 0; p < field.lambda2.cols(); ++p) {
            CHECK(field.lambda2(1, p) ==
                  doctest::Approx(std::exp(1.0) * field.lambda2(0, p)).epsilon(1e-12));
            CHECK(field.lambda1(1, p) == doctest::Approx(field.lambda1(0, p)).epsilon(1e-12));
        }
    }

    SUBCASE("pixel centered on a mesh node reproduces the node value") {
        // Grid cell 0.25 around node (0.5, 0.5)? Use a draw with a known field.
        PosteriorDraws d2 = draws;
        int node = -1;
        for (std::size_t i = 0; i < t.mesh.nodes.size(); ++i) {
            long c = grid.cell_index(t.mesh.nodes[i]);
            if (c < 0) continue;
            Vec2 center = grid.center(static_cast<int>(c % grid.nx),
                                      static_cast<int>(c / grid.nx));
            if (dist(center, t.mesh.nodes[i]) < 1e-9) node = static_cast<int>(i);
        }
        if (node >= 0) {
            d2.latent(0, node) = 0.7;
            PixelField f2 = pixel_intensities(d2, t.model, t.mesh, grid, surfaces);
            long c = grid.cell_index(t.mesh.nodes[static_cast<std::size_t>(node)]);
            std::size_t p = 0;
            while (f2.cells[p] != c) ++p;
            CHECK(f2.lambda1(0, static_cast<Eigen::Index>(p)) ==
                  doctest::Approx(std::exp(0.7)).epsilon(1e-9));
        }
    }
}

TEST_CASE("thinning correction") {
    Eigen::MatrixXd l1 = Eigen::MatrixXd::Constant(3, 4, 2.0);
    Eigen::MatrixXd l2 = Eigen::MatrixXd::Constant(3, 4, 0.5);
    PixelField field = make_field(2, l1, l2);

    SUBCASE("unit probabilities leave the field bit-identical") {
        Surface ones = constant_surface(field.grid, 1.0);
        PixelField corrected = thinning_correct(field, ones, ones);
        CHECK((corrected.lambda1 - field.lambda1).cwiseAbs().maxCoeff() == 0.0);
        CHECK((corrected.lambda2 - field.lambda2).cwiseAbs().maxCoeff() == 0.0);
        CHECK(corrected.corrected);
    }

    SUBCASE("p_area = 0.5 doubles lambda1 and leaves lambda2 alone") {
        Surface half = constant_surface(field.grid, 0.5);
        Surface ones = constant_surface(field.grid, 1.0);
        PixelField corrected = thinning_correct(field, half, ones);
        CHECK(corrected.lambda1(0, 0) == doctest::Approx(4.0).epsilon(1e-12));
        CHECK(corrected.lambda2(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    }

    SUBCASE("combined correction divides the product by p") {
        Eigen::MatrixXd u1 = Eigen::MatrixXd::Constant(1, 4, 2.0);
        Eigen::MatrixXd u2 = Eigen::MatrixXd::Constant(1, 4, 0.5); // product 1 per pixel
        PixelField unit = make_field(2, u1, u2);
        Surface pa = constant_surface(unit.grid, 0.1);
        Surface pd = constant_surface(unit.grid, 0.5); // combined p = 0.05
        PixelField corrected = thinning_correct(unit, pa, pd);
        CHECK(corrected.lambda1(0, 0) * corrected.lambda2(0, 0) ==
              doctest::Approx(20.0).epsilon(1e-12));
    }

    SUBCASE("probabilities outside (0,1] name the pixel") {
        Surface bad = constant_surface(field.grid, 1.5);
        Surface ones = constant_surface(field.grid, 1.0);
        try {
            thinning_correct(field, bad, ones);
            FAIL("expected invalid_domain_error");
        } catch (const invalid_domain_error& e) {
            CHECK(std::string(e.what()).find("pixel") != std::string::npos);
        }
        Surface zero = constant_surface(field.grid, 0.0);
        CHECK_THROWS_AS(thinning_correct(field, ones, zero), invalid_domain_error);
    }
}

TEST_CASE("area moments: compound Poisson integrands") {
    SUBCASE("single pixel, constant draws: mean 1.0, within-variance 1.5") {
        Eigen::MatrixXd l1 = Eigen::MatrixXd::Constant(5, 1, 2.0);
        Eigen::MatrixXd l2 = Eigen::MatrixXd::Constant(5, 1, 0.5);
        PixelField field = make_field(1, l1, l2);
        AreaEstimate est = area_moments(field, make_rectangle(0, 0, 1, 1), "A", 1);
        CHECK(est.mean == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(est.var_within == doctest::Approx(1.5).epsilon(1e-12));
        CHECK(est.var_between == 0.0);
        CHECK(est.var_total == doctest::Approx(1.5).epsilon(1e-12));
        CHECK(est.lo95 <= est.mean);
        CHECK(est.hi95 >= est.mean);
    }

    SUBCASE("variance decomposition holds exactly") {
        Rng rng(5);
        Eigen::MatrixXd l1(40, 9), l2(40, 9);
        for (int k = 0; k < 40; ++k)
            for (int p = 0; p < 9; ++p) {
                l1(k, p) = std::exp(0.3 * rng.normal());
                l2(k, p) = std::exp(0.2 * rng.normal() - 0.5);
            }
        PixelField field = make_field(3, l1, l2);
        AreaEstimate est = area_moments(field, make_rectangle(0, 0, 3, 3), "A", 2);
        CHECK(est.var_total == doctest::Approx(est.var_between + est.var_within).epsilon(1e-12));
        CHECK(est.lo95 <= est.mean);
        CHECK(est.hi95 >= est.mean);
    }

    SUBCASE("disjoint regions add") {
        Rng rng(6);
        Eigen::MatrixXd l1(10, 16), l2(10, 16);
        for (int k = 0; k < 10; ++k)
            for (int p = 0; p < 16; ++p) {
                l1(k, p) = std::exp(0.3 * rng.normal());
                l2(k, p) = std::exp(0.2 * rng.normal());
            }
        PixelField field = make_field(4, l1, l2);
        AreaEstimate left = area_moments(field, make_rectangle(0, 0, 2, 4), "L", 3);
        AreaEstimate right = area_moments(field, make_rectangle(2, 0, 4, 4), "R", 3);
        AreaEstimate both = area_moments(field, make_rectangle(0, 0, 4, 4), "B", 3);
        CHECK(both.mean == doctest::Approx(left.mean + right.mean).epsilon(1e-10));
    }

    SUBCASE("empty region is flagged") {
        Eigen::MatrixXd l1 = Eigen::MatrixXd::Constant(2, 1, 1.0);
        PixelField field = make_field(1, l1, l1);
        AreaEstimate est = area_moments(field, make_rectangle(50, 50, 51, 51), "E", 4);
        CHECK(est.empty);
        CHECK(est.mean == 0.0);
    }

    SUBCASE("monotone thinning: smaller p never shrinks the regional mean") {
        Rng rng(7);
        Eigen::MatrixXd l1(8, 4), l2(8, 4);
        for (int k = 0; k < 8; ++k)
            for (int p = 0; p < 4; ++p) {
                l1(k, p) = std::exp(0.4 * rng.normal());
                l2(k, p) = std::exp(0.3 * rng.normal());
            }
        PixelField field = make_field(2, l1, l2);
        Surface p_hi = constant_surface(field.grid, 0.8);
        Surface p_lo = constant_surface(field.grid, 0.4);
        Surface ones = constant_surface(field.grid, 1.0);
        AreaEstimate hi = area_moments(thinning_correct(field, p_hi, ones),
                                       make_rectangle(0, 0, 2, 2), "A", 8);
        AreaEstimate lo = area_moments(thinning_correct(field, p_lo, ones),
                                       make_rectangle(0, 0, 2, 2), "A", 8);
        CHECK(lo.mean >= hi.mean);
    }

    SUBCASE("brute-force compound simulation matches the analytic moments") {
        // 2x2 pixels, constant truth, p = 1: simulate the marked process.
        const double lam1 = 2.0, lam2 = 0.5;
        Eigen::MatrixXd l1 = Eigen::MatrixXd::Constant(3, 4, lam1);
        Eigen::MatrixXd l2 = Eigen::MatrixXd::Constant(3, 4, lam2);
        PixelField field = make_field(2, l1, l2);
        AreaEstimate est = area_moments(field, make_rectangle(0, 0, 2, 2), "A", 9);

        Rng rng(99);
        const int reps = 10000;
        double sum = 0.0, sum2 = 0.0;
        for (int r = 0; r < reps; ++r) {
            double total = 0.0;
            for (int p = 0; p < 4; ++p) {
                long n_points = rng.poisson(lam1); // pixel area 1
                for (long j = 0; j < n_points; ++j)
                    total += static_cast<double>(rng.poisson(lam2));
            }
            sum += total;
            sum2 += total * total;
        }
        double mc_mean = sum / reps;
        double mc_var = sum2 / reps - mc_mean * mc_mean;
        double se_mean = std::sqrt(mc_var / reps);
        CHECK(std::abs(mc_mean - est.mean) < 3.0 * se_mean);
        // SE of the variance of a compound Poisson, via the 4th moment bound.
        double se_var = mc_var * std::sqrt(2.0 / (reps - 1)) * 2.0;
        CHECK(std::abs(mc_var - est.var_total) < 3.0 * se_var);
    }
}

TEST_CASE("pearson residuals") {
    std::vector<AreaEstimate> est(3);
    est[0].region_id = "A";
    est[0].mean = 4.0;
    est[0].var_total = 4.0;
    est[1].region_id = "B";
    est[1].mean = 4.0;
    est[1].var_total = 4.0;
    est[2].region_id = "C";
    est[2].mean = 2.0;
    est[2].var_total = 0.0;

    auto rows = pearson_residuals(est, {{"A", 4.0}, {"B", 6.0}, {"C", 5.0}});
    CHECK(rows[0].residual == 0.0);
    CHECK(rows[1].residual == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rows[1].residual > 0.0);
    CHECK(rows[2].infinite);

    auto below = pearson_residuals(est, {{"B", 2.0}});
    CHECK(below[0].residual < 0.0);

    CHECK_THROWS_AS(pearson_residuals(est, {{"missing", 1.0}}), invalid_domain_error);
}

TEST_CASE("comparison against direct estimates") {
    std::vector<AreaEstimate> est(2);
    est[0].region_id = "A";
    est[0].mean = 10.0;
    est[0].var_between = 4.0;
    est[0].var_within = 0.0;
    est[0].var_total = 4.0;
    est[0].cv = 0.2;
    est[0].lo95 = 8.0;
    est[0].hi95 = 12.0;
    est[1].region_id = "B";
    est[1].mean = 5.0;
    est[1].var_between = 1.0;
    est[1].var_total = 1.0;
    est[1].lo95 = 4.0;
    est[1].hi95 = 6.0;

    SUBCASE("identical inputs give zero differences and unit ratios") {
        auto rows = compare_direct(est, {{"A", {10.0, 2.0}}});
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].available);
        CHECK(rows[0].difference == 0.0);
        CHECK(rows[0].sd_ratio == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(rows[0].covered);
    }

    SUBCASE("direct value outside the interval is not covered") {
        auto rows = compare_direct(est, {{"B", {7.0, 0.5}}});
        CHECK(!rows[1].covered);
    }

    SUBCASE("regions without direct estimates keep model columns") {
        auto rows = compare_direct(est, {{"A", {10.0, 2.0}}});
        CHECK(!rows[1].available);
        CHECK(rows[1].cv_model == est[1].cv);
    }

    SUBCASE("direct estimate for an unknown region errors") {
        CHECK_THROWS_AS(compare_direct(est, {{"Z", {1.0, 1.0}}}), invalid_domain_error);
    }
}
