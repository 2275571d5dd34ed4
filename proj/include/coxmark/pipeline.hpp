#pragma once

#include "coxmark/inference.hpp"
#include "coxmark/io.hpp"
#include "coxmark/predict.hpp"
#include "coxmark/survey.hpp"

#include <string>
#include <vector>

namespace coxmark {

struct FitOptions {
    double mesh_max_edge = 1.0;
    double mesh_cutoff = 0.1;
    ModelSpec model;
    HyperGrid grid; // empty center -> data-scale defaults per axis
    std::size_t n_draws = 1000;
    std::uint64_t seed = 1;
    // Areas carrying no survey information (hold-out validation): their
    // quadrature exposure is zeroed so the point process is integrated only
    // over the surveyed part of the domain.
    std::vector<DomainPolygon> masked_regions;
};

struct FitResult {
    Mesh mesh;
    QuadratureWeights weights;
    JointModel model;
    HyperPosterior hyper;
    PosteriorDraws draws;
};

FitResult fit_pipeline(const DomainPolygon& domain, const MarkedSample& sample,
                       const Surface* offset1, const FitOptions& opt);

struct PredictOptions {
    double pixel_cell = 1.0;
    double bandwidth = 2.0;
    bool thinning = true;
    // Real-data mode where only the combined inclusion probability is known:
    // p_area is treated as 1 and p_dwel carries the combined p.
    bool combined_p_only = false;
    std::uint64_t seed = 1;
    bool attach_direct = true; // fill HT direct estimates per region
    // When set, these exact design probabilities replace the sample-kernel
    // estimates (the survey-estimated ones carry selection bias).
    const Surface* exact_p_area = nullptr;
    const Surface* exact_p_dwel = nullptr;
};

struct PredictResult {
    PixelField field; // thinning-corrected when requested
    std::vector<AreaEstimate> estimates;
    Surface p_area_surface;
    Surface p_dwel_surface;
};

PredictResult predict_pipeline(const FitResult& fit, const DomainPolygon& domain,
                               const MarkedSample& sample, const Surface* offset1,
                               const std::vector<Region>& regions, const PredictOptions& opt);

struct HoldoutRow {
    std::string region_id;
    double true_total = 0.0;
    double held_mean = 0.0, held_lo = 0.0, held_hi = 0.0;
    bool held_covered = false;
    double full_mean = 0.0, full_lo = 0.0, full_hi = 0.0;
    bool full_covered = false;
};

struct HoldoutReport {
    std::vector<HoldoutRow> rows;
    double coverage = 0.0; // held-out predictive 95% intervals vs true totals
    std::size_t k = 0;
};

struct HoldoutOptions {
    std::size_t k = 26;
    FitOptions fit;
    PredictOptions predict;
};

HoldoutReport holdout_validate(const Population& pop, const std::vector<Region>& regions,
                               const DesignSpec& design, const HoldoutOptions& opt,
                               std::uint64_t seed);

// Log population density smoothed from stratum centroids; the point-process
// offset surface.
Surface population_density_offset(const Population& pop, const GridSpec& grid, double bandwidth);

// Covariate, offset2 and inclusion-probability surfaces estimated from the
// sample by kernel smoothing.
SurfaceBundle sample_surfaces(const MarkedSample& sample, const JointModel& model,
                              const Surface* offset1, const GridSpec& grid, double bandwidth);
Surface inclusion_surface(const MarkedSample& sample, bool dwelling_stage, bool combined,
                          const GridSpec& grid, double bandwidth);

// Exact per-cell inclusion probabilities implied by the design and the frame;
// cells without dwellings fall back to the stratum mean and are flagged.
std::pair<Surface, Surface> design_p_surfaces(const Population& pop, const DesignSpec& design,
                                              const GridSpec& grid);

Vec2 polygon_centroid(const DomainPolygon& poly);

} // namespace coxmark
