#pragma once

#include "coxmark/inference.hpp"
#include "coxmark/mesh.hpp"
#include "coxmark/model.hpp"
#include "coxmark/surface.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace coxmark {

// Per-pixel covariate and offset surfaces consumed by prediction. Covariates
// are keyed by the fixed-effect names of the fitted model.
struct SurfaceBundle {
    std::optional<Surface> offset1;
    std::optional<Surface> offset2;
    std::map<std::string, Surface> covariates;
};

// Per-draw, per-pixel intensities on the prediction grid, plus the thinning
// corrections applied so far (1 before thinning_correct).
struct PixelField {
    GridSpec grid;
    std::vector<long> cells; // grid indices of domain pixels, ascending
    Eigen::MatrixXd lambda1; // n_draws x n_pixels
    Eigen::MatrixXd lambda2;
    std::vector<double> p_area;
    std::vector<double> p_dwel;
    bool corrected = false;

    double pixel_area() const { return grid.cell_area(); }
};

struct AreaEstimate {
    std::string region_id;
    double mean = 0.0;
    double var_between = 0.0;
    double var_within = 0.0;
    double var_total = 0.0;
    double cv = 0.0;
    double lo95 = 0.0, hi95 = 0.0;         // interval of the per-draw means
    double pred_lo = 0.0, pred_hi = 0.0;   // full predictive interval
    bool empty = false;
    std::optional<double> direct_total;
    std::optional<double> direct_sd;
};

struct ComparisonRow {
    std::string region_id;
    bool available = false; // direct estimate exists
    double difference = 0.0;
    double sd_ratio = 0.0; // direct_sd / sd_between
    double cv_model = 0.0;
    double cv_direct = 0.0;
    bool covered = false; // direct total inside the model interval
};

struct ResidualRow {
    std::string region_id;
    double observed = 0.0;
    double fitted = 0.0;
    double residual = 0.0;
    bool infinite = false;
};

PixelField pixel_intensities(const PosteriorDraws& draws, const JointModel& model,
                             const Mesh& mesh, const GridSpec& grid,
                             const SurfaceBundle& surfaces);

PixelField thinning_correct(const PixelField& field, const Surface& p_area_surface,
                            const Surface& p_dwel_surface);

AreaEstimate area_moments(const PixelField& field, const DomainPolygon& region,
                          const std::string& region_id, std::uint64_t seed);

std::vector<ComparisonRow> compare_direct(
    const std::vector<AreaEstimate>& model_est,
    const std::vector<std::pair<std::string, std::pair<double, double>>>& direct);

std::vector<ResidualRow> pearson_residuals(const std::vector<AreaEstimate>& estimates,
                                           const std::vector<std::pair<std::string, double>>& observed);

} // namespace coxmark
