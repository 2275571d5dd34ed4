#include <doctest.h>

#include "coxmark/errors.hpp"
#include "coxmark/survey.hpp"

#include <cmath>
#include <map>

using namespace coxmark;

namespace {

PopulationConfig homogeneous_config(double log_lambda1 = 3.0) {
    PopulationConfig cfg;
    cfg.domain = make_rectangle(0, 0, 10, 10);
    cfg.strata = {{0, make_rectangle(0, 0, 10, 10)}};
    cfg.log_lambda1 = log_lambda1;
    cfg.use_field = false;
    cfg.alpha2 = -1.0;
    cfg.use_offset2 = true;
    cfg.dwellings_per_building_mean = 1.0;
    cfg.people_per_dwelling_mean = 2.0;
    return cfg;
}

// Frame with explicit area spans: sizes[i] dwellings in area i.
StratumFrame synthetic_frame(const std::vector<long>& sizes) {
    StratumFrame f;
    f.stratum_id = 0;
    long b = 0;
    for (std::size_t a = 0; a < sizes.size(); ++a)
        for (long d = 0; d < sizes[a]; ++d)
            f.dwellings.push_back({b++, 0, static_cast<long>(a)});
    return f;
}

// Tiny population with hand-set dwelling counts, one stratum.
Population tiny_population(const std::vector<std::vector<long>>& buildings_dwellings) {
    Population pop;
    pop.domain = make_rectangle(0, 0, 4, 4);
    pop.strata = {{0, make_rectangle(0, 0, 4, 4)}};
    pop.cells = make_grid(pop.domain, 1.0);
    long id = 0;
    for (std::size_t b = 0; b < buildings_dwellings.size(); ++b) {
        PopBuilding pb;
        pb.id = id++;
        pb.loc = {0.5 + static_cast<double>(b % 4), 0.5 + static_cast<double>(b / 4)};
        pb.cell = pop.cells.cell_index(pb.loc);
        pb.stratum = 0;
        for (long u : buildings_dwellings[b]) {
            Dwelling d;
            d.people.resize(2);
            d.unemployed_count = u;
            pb.dwellings.push_back(d);
        }
        pop.buildings.push_back(pb);
    }
    pop.cell_log_lambda1.assign(pop.cells.size(), 0.0);
    return pop;
}

DesignSpec census_design() {
    DesignSpec d;
    d.strata = {{0, 1000000, 1000000, std::nullopt}};
    return d;
}

} // namespace

TEST_CASE("population generator: Poisson counts, degenerate marks, determinism") {
    SUBCASE("homogeneous truth gives the Poisson expected building count") {
        // E[count] = exp(3)*100 ~ 2008.6, sd ~ 44.8; 3-sigma check over 10 seeds.
        int ok = 0;
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            Population pop = generate_population(homogeneous_config(), seed);
            double expected = std::exp(3.0) * 100.0;
            if (std::abs(static_cast<double>(pop.buildings.size()) - expected) <=
                3.0 * std::sqrt(expected))
                ++ok;
        }
        CHECK(ok >= 9);
    }

    SUBCASE("all-employed limit produces zero unemployment") {
        PopulationConfig cfg = homogeneous_config();
        cfg.alpha2 = -20.0;
        cfg.use_offset2 = false;
        Population pop = generate_population(cfg, 3);
        CHECK(pop.total_unemployed() == 0);
    }

    SUBCASE("same seed reproduces the population exactly") {
        Population a = generate_population(homogeneous_config(), 11);
        Population b = generate_population(homogeneous_config(), 11);
        REQUIRE(a.buildings.size() == b.buildings.size());
        CHECK(a.total_unemployed() == b.total_unemployed());
        for (std::size_t i = 0; i < a.buildings.size(); i += 97) {
            CHECK(a.buildings[i].loc.x == b.buildings[i].loc.x);
            CHECK(a.buildings[i].loc.y == b.buildings[i].loc.y);
            CHECK(a.buildings[i].total_unemployed() == b.buildings[i].total_unemployed());
        }
    }

    SUBCASE("every building lands in a stratum and a cell") {
        Population pop = generate_population(homogeneous_config(), 5);
        for (const auto& b : pop.buildings) {
            CHECK(b.stratum == 0);
            CHECK(b.cell >= 0);
            CHECK(pop.cells.inside[static_cast<std::size_t>(b.cell)] == 1);
        }
    }
}

TEST_CASE("area selection probabilities follow the two-case formula") {
    SUBCASE("small area: p = (A_jh/A_h) * s_h") {
        // 20 areas of 50 dwellings: A_h = 1000, s_h = 10, K_h = 100, p = 0.5.
        StratumFrame frame = synthetic_frame(std::vector<long>(20, 50));
        Rng rng(1);
        AreaSelection sel = select_areas(frame, 10, rng);
        CHECK(sel.interval == doctest::Approx(100.0));
        REQUIRE(!sel.areas.empty());
        for (const auto& a : sel.areas)
            CHECK(a.p_area == doctest::Approx((50.0 / 1000.0) * 10.0).epsilon(1e-12));
    }

    SUBCASE("area spanning at least one interval is certain") {
        StratumFrame frame = synthetic_frame({150, 50, 100, 200, 500});
        Rng rng(2);
        AreaSelection sel = select_areas(frame, 10, rng); // K_h = 100
        bool saw_large = false;
        for (const auto& a : sel.areas)
            if (a.area_id == 4) {
                CHECK(a.p_area == 1.0);
                saw_large = true;
            }
        CHECK(saw_large); // 500 >= K guarantees selection
    }

    SUBCASE("Monte Carlo selection frequency matches p_jh within 0.02") {
        StratumFrame frame = synthetic_frame(std::vector<long>(20, 50));
        Rng rng(3);
        int hits = 0;
        const int reps = 20000;
        for (int r = 0; r < reps; ++r) {
            AreaSelection sel = select_areas(frame, 10, rng);
            for (const auto& a : sel.areas)
                if (a.area_id == 7) ++hits;
        }
        CHECK(std::abs(static_cast<double>(hits) / reps - 0.5) < 0.02);
    }

    SUBCASE("empty stratum is an error") {
        StratumFrame frame;
        Rng rng(4);
        CHECK_THROWS_AS(select_areas(frame, 5, rng), invalid_domain_error);
    }

    SUBCASE("literal interval rule uses n_h for the spacing") {
        StratumFrame frame = synthetic_frame(std::vector<long>(20, 50));
        Rng rng(5);
        AreaSelection sel = select_areas(frame, 10, rng, 40L); // K = 1000/40 = 25
        CHECK(sel.interval == doctest::Approx(25.0));
        for (const auto& a : sel.areas) CHECK(a.p_area == 1.0); // 50 >= 25
    }
}

TEST_CASE("dwelling selection: inclusion probability and census case") {
    StratumFrame frame = synthetic_frame({50});
    SelectedArea area{0, 0.5, 0, 50};

    SUBCASE("n_jh = 5 of 50 gives p = 0.1, combined 0.05") {
        Rng rng(6);
        DwellingSelection sel = select_dwellings(frame, area, 5, rng);
        CHECK(sel.dwellings.size() == 5);
        for (const auto& d : sel.dwellings) {
            CHECK(d.p_given_area == doctest::Approx(0.1).epsilon(1e-12));
            CHECK(area.p_area * d.p_given_area == doctest::Approx(0.05).epsilon(1e-12));
        }
    }

    SUBCASE("census selects every dwelling with probability one") {
        Rng rng(7);
        DwellingSelection sel = select_dwellings(frame, area, 50, rng);
        CHECK(sel.dwellings.size() == 50);
        for (const auto& d : sel.dwellings) CHECK(d.p_given_area == 1.0);
    }

    SUBCASE("requesting more dwellings than available is an error") {
        Rng rng(8);
        CHECK_THROWS_AS(select_dwellings(frame, area, 51, rng), invalid_domain_error);
    }

    SUBCASE("Monte Carlo inclusion frequency within 0.02") {
        Rng rng(9);
        int hits = 0;
        const int reps = 20000;
        for (int r = 0; r < reps; ++r) {
            DwellingSelection sel = select_dwellings(frame, area, 5, rng);
            for (const auto& d : sel.dwellings)
                if (d.ref.building_index == 17) ++hits;
        }
        CHECK(std::abs(static_cast<double>(hits) / reps - 0.1) < 0.02);
    }
}

TEST_CASE("survey run: census identity, aggregation, Eq (1) consistency") {
    SUBCASE("census reproduces the true building marks") {
        Population pop = generate_population(homogeneous_config(1.0), 21);
        MarkedSample sample = run_survey(pop, census_design(), 5);
        REQUIRE(sample.buildings.size() == pop.buildings.size());
        std::map<long, long> truth;
        for (const auto& b : pop.buildings) truth[b.id] = b.total_unemployed();
        for (const auto& b : sample.buildings) {
            CHECK(b.mark == truth.at(b.id));
            CHECK(b.p_area == 1.0);
            CHECK(b.p_dwel == 1.0);
        }
    }

    SUBCASE("marks aggregate the selected dwellings of a building") {
        Population pop = tiny_population({{1, 0, 2}, {5}});
        MarkedSample sample = run_survey(pop, census_design(), 6);
        REQUIRE(sample.buildings.size() == 2);
        CHECK(sample.buildings[0].mark == 3);
        CHECK(sample.buildings[1].mark == 5);
    }

    SUBCASE("sample size tracks the design arithmetic") {
        Population pop = generate_population(homogeneous_config(2.0), 31);
        DesignSpec design;
        design.strata = {{0, 12, 3, std::nullopt}};
        DesignDraw draw;
        MarkedSample sample = run_survey(pop, design, 7, &draw);
        REQUIRE(draw.strata.size() == 1);
        std::size_t n_areas = draw.strata[0].areas.areas.size();
        CHECK(n_areas <= 12);
        std::size_t n_dwellings = 0;
        for (const auto& per : draw.strata[0].per_area) n_dwellings += per.dwellings.size();
        // n_jh = 3 per selected area, +-1 slack per area.
        CHECK(n_dwellings >= 2 * n_areas);
        CHECK(n_dwellings <= 4 * n_areas);
    }

    SUBCASE("stored inclusion pair is consistent and deterministic") {
        Population pop = generate_population(homogeneous_config(2.0), 41);
        DesignSpec design;
        design.strata = {{0, 8, 2, std::nullopt}};
        MarkedSample a = run_survey(pop, design, 9);
        MarkedSample b = run_survey(pop, design, 9);
        REQUIRE(a.buildings.size() == b.buildings.size());
        for (std::size_t i = 0; i < a.buildings.size(); ++i) {
            CHECK(a.buildings[i].id == b.buildings[i].id);
            CHECK(a.buildings[i].mark == b.buildings[i].mark);
            CHECK(a.buildings[i].p_area == b.buildings[i].p_area);
            CHECK(a.buildings[i].p_dwel == b.buildings[i].p_dwel);
            CHECK(a.buildings[i].p_area > 0.0);
            CHECK(a.buildings[i].p_area <= 1.0);
            CHECK(a.buildings[i].p_dwel > 0.0);
            CHECK(a.buildings[i].p_dwel <= 1.0);
        }
        a.validate();
    }
}

TEST_CASE("Horvitz-Thompson estimator") {
    SUBCASE("hand-computed total") {
        MarkedSample s;
        double marks[3] = {2, 0, 1};
        double pa[3] = {0.5, 0.5, 0.25};
        for (int i = 0; i < 3; ++i) {
            MarkedSample::Building b;
            b.id = i;
            b.loc = {0.5 + i, 0.5};
            b.mark = static_cast<long>(marks[i]);
            b.p_area = pa[i];
            b.p_dwel = 1.0;
            s.buildings.push_back(b);
        }
        HtEstimate est = ht_estimate(s, make_rectangle(0, 0, 4, 1));
        CHECK(est.total == doctest::Approx(8.0).epsilon(1e-12));
        CHECK(!est.empty);
    }

    SUBCASE("census total equals the plain sum") {
        Population pop = generate_population(homogeneous_config(1.5), 51);
        MarkedSample sample = run_survey(pop, census_design(), 10);
        HtEstimate est = ht_estimate(sample, pop.domain);
        CHECK(est.total == doctest::Approx(static_cast<double>(pop.total_unemployed()))
                               .epsilon(1e-12));
        CHECK(est.variance == 0.0); // (1-p)=0 for every term
    }

    SUBCASE("empty region flagged") {
        Population pop = generate_population(homogeneous_config(1.0), 61);
        MarkedSample sample = run_survey(pop, census_design(), 11);
        HtEstimate est = ht_estimate(sample, make_rectangle(100, 100, 101, 101));
        CHECK(est.empty);
        CHECK(est.total == 0.0);
        CHECK(est.variance == 0.0);
    }

    SUBCASE("replicate surveys are nearly unbiased for the national total") {
        Population pop = generate_population(homogeneous_config(2.2), 71);
        double truth = static_cast<double>(pop.total_unemployed());
        REQUIRE(truth > 100.0);
        DesignSpec design;
        design.strata = {{0, 10, 3, std::nullopt}};
        double sum = 0.0;
        const int reps = 300;
        for (int r = 0; r < reps; ++r) {
            MarkedSample sample = run_survey(pop, design, 1000 + r);
            sum += ht_estimate(sample, pop.domain).total;
        }
        double rel_bias = std::abs(sum / reps - truth) / truth;
        CHECK(rel_bias < 0.04);
    }
}

TEST_CASE("kernel smoothing") {
    DomainPolygon square = make_rectangle(0, 0, 4, 4);
    GridSpec grid = make_grid(square, 1.0);

    SUBCASE("single point gives a constant surface") {
        Surface s = kernel_smooth({{1.0, 1.0}}, {7.0}, 0.5, grid);
        for (double v : s.values) CHECK(v == doctest::Approx(7.0).epsilon(1e-12));
    }

    SUBCASE("equidistant cell averages two point values") {
        // Points symmetric about the cell center (2.5, 0.5).
        Surface s = kernel_smooth({{1.5, 0.5}, {3.5, 0.5}}, {0.0, 10.0}, 1.0, grid);
        long idx = grid.cell_index({2.5, 0.5});
        REQUIRE(idx >= 0);
        CHECK(s.values[static_cast<std::size_t>(idx)] == doctest::Approx(5.0).epsilon(1e-9));
    }

    SUBCASE("vanishing bandwidth localizes to the containing cell's point") {
        Surface s = kernel_smooth({{0.5, 0.5}, {3.5, 3.5}}, {1.0, 9.0}, 1e-6, grid);
        CHECK(s.value_at({0.5, 0.5}) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(s.value_at({3.5, 3.5}) == doctest::Approx(9.0).epsilon(1e-9));
        // Distant cells fall back to the global mean, flagged invalid.
        CHECK(!s.valid_at({2.5, 0.5}));
        CHECK(s.value_at({2.5, 0.5}) == doctest::Approx(5.0).epsilon(1e-9));
    }

    SUBCASE("values stay inside the data range on valid cells") {
        Rng rng(12);
        std::vector<Vec2> pts;
        std::vector<double> vals;
        for (int i = 0; i < 40; ++i) {
            pts.push_back({rng.uniform(0, 4), rng.uniform(0, 4)});
            vals.push_back(rng.uniform(-3, 5));
        }
        Surface s = kernel_smooth(pts, vals, 0.8, grid);
        double lo = *std::min_element(vals.begin(), vals.end());
        double hi = *std::max_element(vals.begin(), vals.end());
        for (std::size_t i = 0; i < s.values.size(); ++i)
            if (s.valid[i]) {
                CHECK(s.values[i] >= lo - 1e-12);
                CHECK(s.values[i] <= hi + 1e-12);
            }
    }

    SUBCASE("bad inputs rejected") {
        CHECK_THROWS_AS(kernel_smooth({}, {}, 1.0, grid), invalid_domain_error);
        CHECK_THROWS_AS(kernel_smooth({{1, 1}}, {1.0}, 0.0, grid), invalid_domain_error);
    }
}
