#include "coxmark/predict.hpp"
#include "coxmark/errors.hpp"
#include "coxmark/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace coxmark {

PixelField pixel_intensities(const PosteriorDraws& draws, const JointModel& model,
                             const Mesh& mesh, const GridSpec& grid,
                             const SurfaceBundle& surfaces) {
    PixelField field;
    field.grid = grid;
    for (std::size_t c = 0; c < grid.size(); ++c)
        if (grid.inside[c]) field.cells.push_back(static_cast<long>(c));

    const std::size_t n_pix = field.cells.size();
    const std::size_t n_draws = draws.n_draws();
    std::vector<Vec2> centers(n_pix);
    for (std::size_t p = 0; p < n_pix; ++p) {
        long c = field.cells[p];
        centers[p] = grid.center(static_cast<int>(c % grid.nx), static_cast<int>(c / grid.nx));
    }
    Projector proj = barycentric_projector(mesh, centers);

    // Per-pixel offsets and covariates; a pixel without surface support is an
    // error per the prediction contract.
    auto lookup = [&](const Surface& s, Vec2 p, const char* what) {
        long idx = s.grid.cell_index(p);
        if (idx < 0)
            throw invalid_domain_error(std::string("surface '") + what +
                                       "' does not cover pixel at (" + std::to_string(p.x) + "," +
                                       std::to_string(p.y) + ")");
        return s.values[static_cast<std::size_t>(idx)];
    };
    std::vector<double> off1(n_pix, 0.0), off2(n_pix, 0.0);
    std::vector<std::vector<double>> z(model.fixed_names.size() > 2 ? model.fixed_names.size() - 2
                                                                    : 0);
    for (auto& v : z) v.assign(n_pix, 0.0);
    for (std::size_t p = 0; p < n_pix; ++p) {
        if (surfaces.offset1) off1[p] = lookup(*surfaces.offset1, centers[p], "offset1");
        if (surfaces.offset2) off2[p] = lookup(*surfaces.offset2, centers[p], "offset2");
        for (std::size_t j = 2; j < model.fixed_names.size(); ++j) {
            auto it = surfaces.covariates.find(model.fixed_names[j]);
            if (it == surfaces.covariates.end())
                throw invalid_domain_error("missing covariate surface '" + model.fixed_names[j] +
                                           "'");
            z[j - 2][p] = lookup(it->second, centers[p], model.fixed_names[j].c_str());
        }
    }

    field.lambda1.resize(static_cast<Eigen::Index>(n_draws), static_cast<Eigen::Index>(n_pix));
    field.lambda2.resize(static_cast<Eigen::Index>(n_draws), static_cast<Eigen::Index>(n_pix));
    field.p_area.assign(n_pix, 1.0);
    field.p_dwel.assign(n_pix, 1.0);

    const int a1 = model.fixed_index("alpha1");
    const int a2 = model.fixed_index("alpha2");
    for (std::size_t k = 0; k < n_draws; ++k) {
        Eigen::VectorXd latent = draws.latent.row(static_cast<Eigen::Index>(k)).transpose();
        const auto [mark_field, mark_scale] = model.mark_field(draws.hyper_of(k));
        Eigen::VectorXd w_points = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_pix));
        Eigen::VectorXd w_marks = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_pix));
        if (model.n_fields >= 1)
            w_points = proj.A * latent.segment(static_cast<Eigen::Index>(model.field_offset(0)),
                                               static_cast<Eigen::Index>(model.n_nodes));
        if (mark_field >= 0 && mark_scale != 0.0)
            w_marks = mark_scale *
                      (proj.A * latent.segment(static_cast<Eigen::Index>(model.field_offset(mark_field)),
                                               static_cast<Eigen::Index>(model.n_nodes)));
        for (std::size_t p = 0; p < n_pix; ++p) {
            double eta1 = latent[a1] + off1[p] + w_points[static_cast<Eigen::Index>(p)];
            double eta2 = latent[a2] + off2[p] + w_marks[static_cast<Eigen::Index>(p)];
            for (std::size_t j = 0; j < z.size(); ++j)
                eta2 += latent[static_cast<Eigen::Index>(model.fixed_offset() + 2 + j)] * z[j][p];
            field.lambda1(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p)) =
                std::exp(eta1);
            field.lambda2(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p)) =
                std::exp(eta2);
        }
    }
    return field;
}

PixelField thinning_correct(const PixelField& field, const Surface& p_area_surface,
                            const Surface& p_dwel_surface) {
    PixelField out = field;
    const std::size_t n_pix = field.cells.size();
    for (std::size_t p = 0; p < n_pix; ++p) {
        long c = field.cells[p];
        Vec2 center = field.grid.center(static_cast<int>(c % field.grid.nx),
                                        static_cast<int>(c / field.grid.nx));
        double pa = p_area_surface.value_at(center);
        double pd = p_dwel_surface.value_at(center);
        if (!(pa > 0.0) || pa > 1.0 + 1e-12 || !(pd > 0.0) || pd > 1.0 + 1e-12)
            throw invalid_domain_error("thinning probability outside (0,1] at pixel (" +
                                       std::to_string(center.x) + "," + std::to_string(center.y) +
                                       "): p_area=" + std::to_string(pa) +
                                       " p_dwel=" + std::to_string(pd));
        out.p_area[p] = pa;
        out.p_dwel[p] = pd;
        out.lambda1.col(static_cast<Eigen::Index>(p)) /= pa;
        out.lambda2.col(static_cast<Eigen::Index>(p)) /= pd;
    }
    out.corrected = true;
    return out;
}

AreaEstimate area_moments(const PixelField& field, const DomainPolygon& region,
                          const std::string& region_id, std::uint64_t seed) {
    AreaEstimate est;
    est.region_id = region_id;

    std::vector<std::size_t> in_region;
    for (std::size_t p = 0; p < field.cells.size(); ++p) {
        long c = field.cells[p];
        Vec2 center = field.grid.center(static_cast<int>(c % field.grid.nx),
                                        static_cast<int>(c / field.grid.nx));
        if (region.contains(center)) in_region.push_back(p);
    }
    if (in_region.empty()) {
        est.empty = true;
        return est;
    }

    const std::size_t n_draws = static_cast<std::size_t>(field.lambda1.rows());
    const double cell_area = field.pixel_area();
    std::vector<double> inner_mean(n_draws, 0.0), inner_var(n_draws, 0.0);
    for (std::size_t k = 0; k < n_draws; ++k) {
        double m = 0.0, v = 0.0;
        for (std::size_t p : in_region) {
            double l1 = field.lambda1(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
            double l2 = field.lambda2(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
            m += cell_area * l1 * l2;
            v += cell_area * (l1 * l2 + l1 * l2 * l2);
        }
        inner_mean[k] = m;
        inner_var[k] = v;
    }

    double mean = 0.0;
    for (double m : inner_mean) mean += m;
    mean /= static_cast<double>(n_draws);
    double vb = 0.0;
    for (double m : inner_mean) vb += (m - mean) * (m - mean);
    vb = n_draws > 1 ? vb / static_cast<double>(n_draws - 1) : 0.0;
    double vw = 0.0;
    for (double v : inner_var) vw += v;
    vw /= static_cast<double>(n_draws);

    est.mean = mean;
    est.var_between = vb;
    est.var_within = vw;
    est.var_total = vb + vw;
    est.cv = mean != 0.0 ? std::sqrt(est.var_total) / mean : 0.0;

    auto quantile = [](std::vector<double> v, double q) {
        std::sort(v.begin(), v.end());
        double pos = q * static_cast<double>(v.size() - 1);
        std::size_t lo = static_cast<std::size_t>(pos);
        std::size_t hi = std::min(lo + 1, v.size() - 1);
        double f = pos - static_cast<double>(lo);
        return (1.0 - f) * v[lo] + f * v[hi];
    };
    est.lo95 = quantile(inner_mean, 0.025);
    est.hi95 = quantile(inner_mean, 0.975);

    // Predictive interval: simulate the compound process once per draw.
    Rng rng(derive_seed(seed, region_id));
    std::vector<double> totals(n_draws, 0.0);
    for (std::size_t k = 0; k < n_draws; ++k) {
        double total = 0.0;
        for (std::size_t p : in_region) {
            double l1 = field.lambda1(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
            double l2 = field.lambda2(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
            long n_points = rng.poisson(cell_area * l1);
            if (n_points > 0)
                total += static_cast<double>(rng.poisson(static_cast<double>(n_points) * l2));
        }
        totals[k] = total;
    }
    est.pred_lo = quantile(totals, 0.025);
    est.pred_hi = quantile(totals, 0.975);
    return est;
}

std::vector<ComparisonRow> compare_direct(
    const std::vector<AreaEstimate>& model_est,
    const std::vector<std::pair<std::string, std::pair<double, double>>>& direct) {
    std::vector<ComparisonRow> out;
    for (const auto& est : model_est) {
        ComparisonRow row;
        row.region_id = est.region_id;
        const std::pair<double, double>* d = nullptr;
        for (const auto& [id, val] : direct)
            if (id == est.region_id) d = &val;
        if (d == nullptr) {
            row.available = false;
            row.cv_model = est.cv;
            out.push_back(row);
            continue;
        }
        row.available = true;
        row.difference = est.mean - d->first;
        row.sd_ratio = est.var_between > 0.0 ? d->second / std::sqrt(est.var_between) : 0.0;
        row.cv_model = est.cv;
        row.cv_direct = d->first != 0.0 ? d->second / d->first : 0.0;
        row.covered = d->first >= est.lo95 && d->first <= est.hi95;
        out.push_back(row);
    }
    for (const auto& [id, val] : direct) {
        bool matched = false;
        for (const auto& est : model_est) matched = matched || est.region_id == id;
        if (!matched)
            throw invalid_domain_error("direct estimate for unknown region '" + id + "'");
    }
    return out;
}

std::vector<ResidualRow> pearson_residuals(
    const std::vector<AreaEstimate>& estimates,
    const std::vector<std::pair<std::string, double>>& observed) {
    std::vector<ResidualRow> out;
    for (const auto& [id, obs] : observed) {
        const AreaEstimate* est = nullptr;
        for (const auto& e : estimates)
            if (e.region_id == id) est = &e;
        if (est == nullptr)
            throw invalid_domain_error("no estimate for region '" + id + "'");
        ResidualRow row;
        row.region_id = id;
        row.observed = obs;
        row.fitted = est->mean;
        if (est->var_total > 0.0) {
            row.residual = (obs - est->mean) / std::sqrt(est->var_total);
        } else if (obs == est->mean) {
            row.residual = 0.0;
        } else {
            row.infinite = true;
            row.residual = obs > est->mean ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity();
        }
        out.push_back(row);
    }
    return out;
}

} // namespace coxmark
