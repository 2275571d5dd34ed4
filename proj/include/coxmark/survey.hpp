#pragma once

#include "coxmark/geometry.hpp"
#include "coxmark/model.hpp"
#include "coxmark/spde.hpp"
#include "coxmark/surface.hpp"

#include <optional>
#include <string>
#include <vector>

namespace coxmark {

struct Person {
    bool unemployed = false;
    double edu = 2.0;
    double age = 40.0;
};

struct Dwelling {
    std::vector<Person> people;
    long unemployed_count = 0; // dwelling-level survey response
};

struct PopBuilding {
    long id = 0;
    Vec2 loc;
    int stratum = -1;
    long cell = -1; // primary-unit cell containing the building
    std::vector<Dwelling> dwellings;
    double iefp = 0.0;
    double lambda2_true = 0.0;

    long n_dwellings() const { return static_cast<long>(dwellings.size()); }
    long n_people() const;
    long total_unemployed() const;
    double edu_median() const; // over all inhabitants
    double age_mean() const;
};

struct Stratum {
    int id = 0;
    DomainPolygon polygon;
};

// Synthetic population with its generating truth retained for oracle checks.
struct Population {
    DomainPolygon domain;
    std::vector<Stratum> strata;
    GridSpec cells; // primary-unit grid
    std::vector<PopBuilding> buildings;
    std::vector<double> cell_log_lambda1; // truth, per grid cell
    long total_unemployed() const;
    long unemployed_in(const DomainPolygon& region) const;
};

struct CovariateConfig {
    double base = 0.0;
    double grad_x = 0.0; // linear trend per km
    double grad_y = 0.0;
    double sd = 0.0;
};

struct PopulationConfig {
    DomainPolygon domain;
    std::vector<Stratum> strata; // must cover the domain
    double cell_size = 1.0;

    // Point-process truth: log lambda1*(s) = log_lambda1 + W(s)
    double log_lambda1 = 3.0;
    bool use_field = true;
    double sigma1 = 1.0;
    double rho1 = 2.0;
    double field_mesh_edge = 1.0;

    // Mark truth: log lambda2*(s) = alpha2 + offset2 + theta'z + scale * field
    double alpha2 = -1.0;
    bool use_offset2 = true;
    double theta_nind = 0.0;
    double theta_edu = 0.0;
    double theta_age = 0.0;
    double theta_iefp = 0.0;
    bool marks_use_field = true;
    double field_scale = 1.0;        // applied to W in the mark model
    bool independent_fields = false; // separate field for marks
    double sigma2 = 1.0;
    double rho2 = 2.0;

    double dwellings_per_building_mean = 1.0; // 1 + Poisson(mean - 1)
    double people_per_dwelling_mean = 2.5;    // 1 + Poisson(mean - 1)
    CovariateConfig edu{2.0, 0.0, 0.0, 0.6};
    CovariateConfig age{45.0, 0.0, 0.0, 10.0};
    CovariateConfig iefp{0.10, 0.0, 0.0, 0.05};
};

Population generate_population(const PopulationConfig& cfg, std::uint64_t seed);

// Two-stage stratified systematic design. Primary units are grid cells
// selected along the coordinate-sorted dwelling frame; dwellings are then
// selected systematically within each selected area. If n_h is set the
// first-stage interval is A_h/n_h (the literal survey description); otherwise
// it is A_h/s_h, the reading consistent with the selection-probability formula.
struct StratumDesign {
    int stratum_id = 0;
    int s_h = 1;  // first-stage positions
    int n_jh = 1; // dwellings per selected area
    std::optional<long> n_h;
};
struct DesignSpec {
    std::vector<StratumDesign> strata;
};

// One dwelling in the sorted stratum frame.
struct DwellingRef {
    long building_index = 0; // into Population::buildings
    int dwelling_index = 0;
    long area_id = 0; // grid cell
};
// Frame sorted so every area's dwellings are contiguous.
struct StratumFrame {
    int stratum_id = 0;
    std::vector<DwellingRef> dwellings;
};

StratumFrame build_stratum_frame(const Population& pop, int stratum_id);

struct SelectedArea {
    long area_id = 0;
    double p_area = 0.0; // p_jh
    std::size_t first = 0, count = 0; // dwelling span in the frame
};
struct AreaSelection {
    double interval = 0.0; // K_h
    double start = 0.0;    // u_h
    std::vector<SelectedArea> areas;
};

AreaSelection select_areas(const StratumFrame& frame, int s_h, Rng& rng,
                           std::optional<long> n_h = std::nullopt);

struct SelectedDwelling {
    DwellingRef ref;
    double p_given_area = 0.0; // n_jh / A_jh
};
struct DwellingSelection {
    double interval = 0.0; // K_jh
    double start = 0.0;    // u_jh
    std::vector<SelectedDwelling> dwellings;
};

DwellingSelection select_dwellings(const StratumFrame& frame, const SelectedArea& area, int n_jh,
                                   Rng& rng);

// Full per-draw record of the design realization.
struct DesignDraw {
    struct StratumDraw {
        int stratum_id = 0;
        AreaSelection areas;
        std::vector<DwellingSelection> per_area;
    };
    std::vector<StratumDraw> strata;
};

MarkedSample run_survey(const Population& pop, const DesignSpec& design, std::uint64_t seed,
                        DesignDraw* draw_out = nullptr);

struct HtEstimate {
    double total = 0.0;
    double variance = 0.0; // with-replacement approximation
    bool empty = false;
};

HtEstimate ht_estimate(const MarkedSample& sample, const DomainPolygon& region);

} // namespace coxmark
