#include <doctest.h>

#include "coxmark/errors.hpp"
#include "coxmark/model.hpp"
#include "toy.hpp"

#include <cmath>
#include <string>

using namespace coxmark;
using namespace coxmark::testutil;

TEST_CASE("point pseudo-data: row structure, exposure budget, dropped points") {
    Toy t = make_toy(LatentVariant::SHARED_W, {}, 10, 11);
    const std::size_t n_nodes = t.mesh.nodes.size();

    PointPseudoData pd = assemble_point_pseudodata(t.mesh, t.weights, t.sample, nullptr);
    CHECK(pd.rows.size() == n_nodes + 10);
    std::size_t ones = 0;
    double exposure = 0.0;
    for (const auto& r : pd.rows) {
        if (r.count == 1.0) {
            ones++;
            CHECK(r.exposure == 0.0);
        }
        exposure += r.exposure;
    }
    CHECK(ones == 10);
    CHECK(exposure == doctest::Approx(t.domain.area()).epsilon(1e-9));
    CHECK(pd.n_dropped == 0);

    SUBCASE("outside location dropped and reported") {
        MarkedSample s = t.sample;
        s.buildings[0].loc = {7.0, 7.0};
        PointPseudoData pd2 = assemble_point_pseudodata(t.mesh, t.weights, s, nullptr);
        CHECK(pd2.n_dropped == 1);
        CHECK(pd2.rows.size() == n_nodes + 9);
    }

    SUBCASE("empty sample is an error") {
        MarkedSample empty;
        CHECK_THROWS(assemble_point_pseudodata(t.mesh, t.weights, empty, nullptr));
    }
}

TEST_CASE("mark data: zero marks kept, marks never at mesh nodes, missing covariates") {
    Toy t = make_toy(LatentVariant::SHARED_W, {"edu"}, 12, 12);
    t.sample.buildings[3].mark = 0;
    MarkData md = assemble_mark_data(t.sample, {"edu"}, t.mesh);
    CHECK(md.rows.size() == 12); // one per building, none at nodes
    bool found_zero = false;
    for (const auto& r : md.rows)
        if (r.building_id == 3) {
            CHECK(r.y == 0.0);
            found_zero = true;
        }
    CHECK(found_zero);

    SUBCASE("edu enters as a numeric level") {
        for (const auto& r : md.rows) {
            REQUIRE(r.z.size() == 1);
            CHECK(r.z[0] >= 1.0);
            CHECK(r.z[0] <= 3.0);
        }
    }

    SUBCASE("missing covariate lists building ids") {
        MarkedSample s = t.sample;
        s.buildings[5].edu = std::nan("");
        try {
            assemble_mark_data(s, {"edu"}, t.mesh);
            FAIL("expected assembly_error");
        } catch (const assembly_error& e) {
            CHECK(std::string(e.what()).find("5") != std::string::npos);
        }
    }
}

TEST_CASE("joint log-likelihood: hand-checked Poisson contributions") {
    // A field-free model constructed directly: latent = (alpha1, alpha2).
    JointModel m;
    m.n_nodes = 0;
    m.n_fields = 0;
    m.variant = LatentVariant::NONE;
    m.fixed_names = {"alpha1", "alpha2"};
    HyperParams h;
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);

    SUBCASE("pseudo-row with count 0, exposure 2 at log lambda1 = 0 contributes -2") {
        PointPseudoData::Row r;
        r.count = 0.0;
        r.exposure = 2.0;
        m.points.rows = {r};
        CHECK(joint_loglik(m, zero, h) == doctest::Approx(-2.0).epsilon(1e-15));
    }

    SUBCASE("mark y=0 at log lambda2 = 0 contributes -1") {
        MarkData::Row r;
        r.y = 0.0;
        m.marks.rows = {r};
        CHECK(joint_loglik(m, zero, h) == doctest::Approx(-1.0).epsilon(1e-15));
    }

    SUBCASE("mark y=2 at lambda2=1 contributes -1-log 2") {
        MarkData::Row r;
        r.y = 2.0;
        m.marks.rows = {r};
        CHECK(joint_loglik(m, zero, h) == doctest::Approx(-1.0 - std::log(2.0)).epsilon(1e-15));
    }

    SUBCASE("zero-data model scores 0 with zero gradient") {
        CHECK(joint_loglik(m, zero, h) == 0.0);
        LoglikDerivatives d = loglik_grad_hess(m, zero, h);
        CHECK(d.value == 0.0);
        CHECK(d.gradient.norm() == 0.0);
        CHECK(d.neg_hessian.nonZeros() == 0);
    }
}

TEST_CASE("analytic gradient matches central finite differences") {
    for (LatentVariant variant : {LatentVariant::SHARED_W, LatentVariant::SCALED_W,
                                  LatentVariant::INDEPENDENT_W1_W2}) {
        Toy t = make_toy(variant, {"edu", "age"}, 15, 21);
        HyperParams h = toy_hyper(t.model);
        if (variant == LatentVariant::SCALED_W) h.field_scale = 0.7;
        Rng rng(31);
        const double step = 1e-5;
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::VectorXd x = random_latent(t.model, rng);
            LoglikDerivatives d = loglik_grad_hess(t.model, x, h);
            CHECK(d.value == doctest::Approx(joint_loglik(t.model, x, h)).epsilon(1e-12));
            Eigen::VectorXd fd(x.size());
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                Eigen::VectorXd xp = x, xm = x;
                xp[i] += step;
                xm[i] -= step;
                fd[i] = (joint_loglik(t.model, xp, h) - joint_loglik(t.model, xm, h)) /
                        (2.0 * step);
            }
            CHECK((fd - d.gradient).norm() / d.gradient.norm() < 1e-4);
        }
    }
}

TEST_CASE("negative Hessian plus prior precision is positive definite") {
    Toy t = make_toy(LatentVariant::SHARED_W, {"edu"}, 20, 41);
    HyperParams h = toy_hyper(t.model);
    Rng rng(5);
    Eigen::VectorXd x = random_latent(t.model, rng);
    LoglikDerivatives d = loglik_grad_hess(t.model, x, h);

    SparsePrecision qf = precision(to_spde({std::exp(h.fields[0].log_sigma),
                                            std::exp(h.fields[0].log_rho)}),
                                   t.model.fem);
    std::vector<Eigen::Triplet<double>> trips;
    for (int k = 0; k < qf.Q.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(qf.Q, k); it; ++it)
            trips.emplace_back(it.row(), it.col(), it.value());
    for (std::size_t j = 0; j < t.model.fixed_names.size(); ++j) {
        auto idx = static_cast<int>(t.model.fixed_offset() + j);
        trips.emplace_back(idx, idx, 1.0 / t.model.v0);
    }
    Eigen::SparseMatrix<double> prior(static_cast<Eigen::Index>(t.model.dim()),
                                      static_cast<Eigen::Index>(t.model.dim()));
    prior.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseMatrix<double> post = prior + d.neg_hessian;
    CHECK_NOTHROW(SparseChol{post});
}

TEST_CASE("variant nesting: SCALED_W with scale 1 reproduces SHARED_W exactly") {
    Toy shared = make_toy(LatentVariant::SHARED_W, {"edu"}, 14, 61);
    Toy scaled = make_toy(LatentVariant::SCALED_W, {"edu"}, 14, 61);
    HyperParams hs = toy_hyper(shared.model);
    HyperParams hc = toy_hyper(scaled.model);
    hc.field_scale = 1.0;
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::VectorXd x = random_latent(shared.model, rng);
        CHECK(joint_loglik(shared.model, x, hs) == joint_loglik(scaled.model, x, hc));
    }
}

TEST_CASE("offset shift compensated by the intercept leaves the likelihood invariant") {
    Toy t = make_toy(LatentVariant::SHARED_W, {}, 16, 71);
    HyperParams h = toy_hyper(t.model);
    Rng rng(9);
    Eigen::VectorXd x = random_latent(t.model, rng);
    double base = joint_loglik(t.model, x, h);

    const double c = 0.8;
    JointModel shifted = t.model;
    for (auto& r : shifted.points.rows) r.offset1 += c;
    Eigen::VectorXd x2 = x;
    x2[shifted.fixed_index("alpha1")] -= c;
    double moved = joint_loglik(shifted, x2, h);
    CHECK(moved == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("non-finite predictor is reported with its row") {
    Toy t = make_toy(LatentVariant::SHARED_W, {}, 5, 81);
    HyperParams h = toy_hyper(t.model);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.model.dim()));
    x[0] = std::nan("");
    CHECK_THROWS_AS(joint_loglik(t.model, x, h), numerical_error);
}
