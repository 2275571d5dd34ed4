#include "coxmark/pipeline.hpp"
#include "coxmark/errors.hpp"
#include "coxmark/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace coxmark {

Vec2 polygon_centroid(const DomainPolygon& poly) {
    const auto& r = poly.vertices;
    double a = 0.0, cx = 0.0, cy = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const Vec2& p = r[i];
        const Vec2& q = r[(i + 1) % r.size()];
        double w = p.x * q.y - q.x * p.y;
        a += w;
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    a *= 0.5;
    return {cx / (6.0 * a), cy / (6.0 * a)};
}

FitResult fit_pipeline(const DomainPolygon& domain, const MarkedSample& sample,
                       const Surface* offset1, const FitOptions& opt) {
    FitResult fit;
    fit.mesh = build_mesh(domain, opt.mesh_max_edge, opt.mesh_cutoff);
    fit.weights = dual_weights(fit.mesh, domain);
    fit.model = assemble_joint_model(fit.mesh, fit.weights, sample, offset1, opt.model);
    if (!opt.masked_regions.empty()) {
        for (auto& row : fit.model.points.rows)
            for (const auto& mask : opt.masked_regions)
                if (mask.contains(row.loc)) {
                    row.exposure = 0.0;
                    break;
                }
    }

    HyperGrid grid = opt.grid;
    if (grid.center.empty() && fit.model.hyper_dim() > 0) {
        Vec2 lo, hi;
        domain.bounding_box(lo, hi);
        double diameter = dist(lo, hi);
        for (int f = 0; f < fit.model.n_fields; ++f) {
            const PcPrior& pc = f == 0 ? opt.model.pc_points : opt.model.pc_marks;
            double rho_center = std::clamp(pc.rho0, 0.05 * diameter, 0.5 * diameter);
            grid.center.push_back(std::log(rho_center));
            grid.center.push_back(std::log(pc.sigma0));
            grid.step.push_back(0.35);
            grid.step.push_back(0.30);
        }
        if (opt.model.variant == LatentVariant::SCALED_W) {
            grid.center.push_back(1.0);
            grid.step.push_back(0.5);
        }
    }
    fit.hyper = explore_hyper(fit.model, grid);
    fit.draws = sample_posterior(fit.model, fit.hyper, opt.n_draws,
                                 derive_seed(opt.seed, "posterior-draws"));
    return fit;
}

Surface population_density_offset(const Population& pop, const GridSpec& grid, double bandwidth) {
    std::vector<Vec2> centroids;
    std::vector<double> log_density;
    for (const auto& s : pop.strata) {
        long people = 0;
        for (const auto& b : pop.buildings)
            if (b.stratum == s.id) people += b.n_people();
        double area = s.polygon.area();
        centroids.push_back(polygon_centroid(s.polygon));
        log_density.push_back(std::log(std::max(1e-12, static_cast<double>(people) / area)));
    }
    return kernel_smooth(centroids, log_density, bandwidth, grid);
}

Surface inclusion_surface(const MarkedSample& sample, bool dwelling_stage, bool combined,
                          const GridSpec& grid, double bandwidth) {
    std::vector<Vec2> pts;
    std::vector<double> vals;
    for (const auto& b : sample.buildings) {
        pts.push_back(b.loc);
        if (combined)
            vals.push_back(b.p_area * b.p_dwel);
        else
            vals.push_back(dwelling_stage ? b.p_dwel : b.p_area);
    }
    return kernel_smooth(pts, vals, bandwidth, grid);
}

std::pair<Surface, Surface> design_p_surfaces(const Population& pop, const DesignSpec& design,
                                              const GridSpec& grid) {
    Surface pa, pd;
    pa.grid = grid;
    pd.grid = grid;
    pa.values.assign(grid.size(), 1.0);
    pd.values.assign(grid.size(), 1.0);
    pa.valid.assign(grid.size(), 0);
    pd.valid.assign(grid.size(), 0);

    double pa_sum = 0.0, pd_sum = 0.0;
    long n_areas = 0;
    for (const auto& sd : design.strata) {
        StratumFrame frame = build_stratum_frame(pop, sd.stratum_id);
        if (frame.dwellings.empty()) continue;
        long positions = sd.n_h ? *sd.n_h : static_cast<long>(sd.s_h);
        positions = std::clamp<long>(positions, 1, static_cast<long>(frame.dwellings.size()));
        double interval = static_cast<double>(frame.dwellings.size()) /
                          static_cast<double>(positions);
        std::map<long, long> span;
        for (const auto& d : frame.dwellings) span[d.area_id]++;
        for (const auto& [area, a_jh] : span) {
            // The population's primary-unit grid may differ from the target
            // grid; map through the cell center.
            int ix = static_cast<int>(area % pop.cells.nx);
            int iy = static_cast<int>(area / pop.cells.nx);
            long cell = grid.cell_index(pop.cells.center(ix, iy));
            if (cell < 0) continue;
            double p_area = std::min(1.0, static_cast<double>(a_jh) / interval);
            double p_dwel = std::min(1.0, static_cast<double>(sd.n_jh) /
                                              static_cast<double>(a_jh));
            pa.values[static_cast<std::size_t>(cell)] = p_area;
            pd.values[static_cast<std::size_t>(cell)] = p_dwel;
            pa.valid[static_cast<std::size_t>(cell)] = 1;
            pd.valid[static_cast<std::size_t>(cell)] = 1;
            pa_sum += p_area;
            pd_sum += p_dwel;
            ++n_areas;
        }
    }
    if (n_areas > 0) {
        pa.global_mean = pa_sum / static_cast<double>(n_areas);
        pd.global_mean = pd_sum / static_cast<double>(n_areas);
        // Dwelling-free cells carry the mean; no points can be observed there.
        for (std::size_t c = 0; c < grid.size(); ++c)
            if (!pa.valid[c]) {
                pa.values[c] = pa.global_mean;
                pd.values[c] = pd.global_mean;
            }
    } else {
        pa.global_mean = 1.0;
        pd.global_mean = 1.0;
    }
    return {pa, pd};
}

SurfaceBundle sample_surfaces(const MarkedSample& sample, const JointModel& model,
                              const Surface* offset1, const GridSpec& grid, double bandwidth) {
    SurfaceBundle bundle;
    if (offset1) bundle.offset1 = *offset1;
    std::vector<Vec2> pts;
    for (const auto& b : sample.buildings) pts.push_back(b.loc);
    auto smooth_of = [&](auto&& get) {
        std::vector<double> vals;
        for (const auto& b : sample.buildings) vals.push_back(get(b));
        return kernel_smooth(pts, vals, bandwidth, grid);
    };
    if (model.use_offset2) {
        // Smooth the people count itself and log afterwards; smoothing the log
        // would give a geometric mean and bias the predicted totals downward.
        Surface people =
            smooth_of([](const MarkedSample::Building& b) { return std::exp(b.offset2); });
        for (auto& v : people.values) v = std::log(std::max(1e-12, v));
        people.global_mean = std::log(std::max(1e-12, people.global_mean));
        bundle.offset2 = std::move(people);
    }
    for (std::size_t j = 2; j < model.fixed_names.size(); ++j) {
        const std::string& name = model.fixed_names[j];
        if (name == "nind")
            bundle.covariates[name] =
                smooth_of([](const MarkedSample::Building& b) { return b.nind; });
        else if (name == "edu")
            bundle.covariates[name] =
                smooth_of([](const MarkedSample::Building& b) { return b.edu; });
        else if (name == "age")
            bundle.covariates[name] =
                smooth_of([](const MarkedSample::Building& b) { return b.age; });
        else if (name == "iefp")
            bundle.covariates[name] =
                smooth_of([](const MarkedSample::Building& b) { return b.iefp; });
        else
            throw invalid_domain_error("no surface rule for covariate '" + name + "'");
    }
    return bundle;
}

PredictResult predict_pipeline(const FitResult& fit, const DomainPolygon& domain,
                               const MarkedSample& sample, const Surface* offset1,
                               const std::vector<Region>& regions, const PredictOptions& opt) {
    PredictResult out;
    GridSpec grid = make_grid(domain, opt.pixel_cell);
    SurfaceBundle surfaces = sample_surfaces(sample, fit.model, offset1, grid, opt.bandwidth);
    PixelField raw = pixel_intensities(fit.draws, fit.model, fit.mesh, grid, surfaces);
    if (opt.thinning) {
        if (opt.exact_p_area && opt.exact_p_dwel) {
            out.p_area_surface = *opt.exact_p_area;
            out.p_dwel_surface = *opt.exact_p_dwel;
        } else if (opt.combined_p_only) {
            Surface ones = inclusion_surface(sample, false, true, grid, opt.bandwidth);
            // p_area == 1, combined probability carried by the dwelling stage
            Surface unit = ones;
            std::fill(unit.values.begin(), unit.values.end(), 1.0);
            unit.global_mean = 1.0;
            out.p_area_surface = unit;
            out.p_dwel_surface = ones;
        } else {
            out.p_area_surface = inclusion_surface(sample, false, false, grid, opt.bandwidth);
            out.p_dwel_surface = inclusion_surface(sample, true, false, grid, opt.bandwidth);
        }
        out.field = thinning_correct(raw, out.p_area_surface, out.p_dwel_surface);
    } else {
        out.field = std::move(raw);
    }

    for (const auto& r : regions) {
        AreaEstimate est = area_moments(out.field, r.polygon, r.id, opt.seed);
        if (opt.attach_direct) {
            HtEstimate ht = ht_estimate(sample, r.polygon);
            if (!ht.empty) {
                est.direct_total = ht.total;
                est.direct_sd = std::sqrt(ht.variance);
            }
        }
        out.estimates.push_back(std::move(est));
    }
    return out;
}

HoldoutReport holdout_validate(const Population& pop, const std::vector<Region>& regions,
                               const DesignSpec& design, const HoldoutOptions& opt,
                               std::uint64_t seed) {
    if (opt.k > regions.size())
        throw invalid_domain_error("holdout k=" + std::to_string(opt.k) + " exceeds " +
                                   std::to_string(regions.size()) + " regions");

    MarkedSample sample = run_survey(pop, design, derive_seed(seed, "holdout-survey"));

    // Random distinct regions, Fisher-Yates on the index list.
    std::vector<std::size_t> idx(regions.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed, "holdout-regions"));
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    std::set<std::size_t> held(idx.begin(), idx.begin() + static_cast<long>(opt.k));

    MarkedSample reduced;
    for (const auto& b : sample.buildings) {
        bool inside_held = false;
        for (std::size_t h : held)
            if (regions[h].polygon.contains(b.loc)) inside_held = true;
        if (!inside_held) reduced.buildings.push_back(b);
    }
    if (reduced.buildings.empty())
        throw invalid_domain_error("holdout removed every sampled building");

    GridSpec grid = make_grid(pop.domain, opt.predict.pixel_cell);
    Surface offset1 = population_density_offset(pop, grid, opt.predict.bandwidth);
    const Surface* off1 = opt.fit.model.use_offset1 ? &offset1 : nullptr;

    // Inclusion probabilities are design constants (Eq.-(1) quantities), so
    // validation corrects with the exact per-area values instead of the
    // selection-biased sample-kernel estimates.
    auto [pa_exact, pd_exact] = design_p_surfaces(pop, design, grid);
    PredictOptions popt = opt.predict;
    popt.exact_p_area = &pa_exact;
    popt.exact_p_dwel = &pd_exact;

    FitResult full_fit = fit_pipeline(pop.domain, sample, off1, opt.fit);
    PredictResult full_pred = predict_pipeline(full_fit, pop.domain, sample, off1, regions, popt);

    const MarkedSample& held_sample = opt.k == 0 ? sample : reduced;
    FitOptions held_opt = opt.fit;
    for (std::size_t h : held) held_opt.masked_regions.push_back(regions[h].polygon);
    FitResult held_fit = opt.k == 0 ? std::move(full_fit)
                                    : fit_pipeline(pop.domain, held_sample, off1, held_opt);
    PredictResult held_pred =
        opt.k == 0 ? full_pred
                   : predict_pipeline(held_fit, pop.domain, held_sample, off1, regions, popt);

    HoldoutReport report;
    report.k = opt.k;
    std::vector<std::size_t> report_regions;
    if (opt.k == 0) {
        for (std::size_t i = 0; i < regions.size(); ++i) report_regions.push_back(i);
    } else {
        report_regions.assign(held.begin(), held.end());
    }

    std::size_t covered = 0;
    for (std::size_t i : report_regions) {
        HoldoutRow row;
        row.region_id = regions[i].id;
        row.true_total = static_cast<double>(pop.unemployed_in(regions[i].polygon));
        const AreaEstimate& he = held_pred.estimates[i];
        const AreaEstimate& fe = full_pred.estimates[i];
        row.held_mean = he.mean;
        row.held_lo = he.pred_lo;
        row.held_hi = he.pred_hi;
        row.held_covered = row.true_total >= he.pred_lo && row.true_total <= he.pred_hi;
        row.full_mean = fe.mean;
        row.full_lo = fe.pred_lo;
        row.full_hi = fe.pred_hi;
        row.full_covered = row.true_total >= fe.pred_lo && row.true_total <= fe.pred_hi;
        covered += row.held_covered ? 1 : 0;
        report.rows.push_back(std::move(row));
    }
    report.coverage = report.rows.empty()
                          ? 0.0
                          : static_cast<double>(covered) / static_cast<double>(report.rows.size());
    return report;
}

} // namespace coxmark
