#include "coxmark/survey.hpp"
#include "coxmark/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace coxmark {

long PopBuilding::n_people() const {
    long n = 0;
    for (const auto& d : dwellings) n += static_cast<long>(d.people.size());
    return n;
}

long PopBuilding::total_unemployed() const {
    long n = 0;
    for (const auto& d : dwellings) n += d.unemployed_count;
    return n;
}

double PopBuilding::edu_median() const {
    std::vector<double> v;
    for (const auto& d : dwellings)
        for (const auto& p : d.people) v.push_back(p.edu);
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double PopBuilding::age_mean() const {
    double s = 0.0;
    long n = 0;
    for (const auto& d : dwellings)
        for (const auto& p : d.people) {
            s += p.age;
            ++n;
        }
    return n > 0 ? s / static_cast<double>(n) : 0.0;
}

long Population::total_unemployed() const {
    long n = 0;
    for (const auto& b : buildings) n += b.total_unemployed();
    return n;
}

long Population::unemployed_in(const DomainPolygon& region) const {
    long n = 0;
    for (const auto& b : buildings)
        if (region.contains(b.loc)) n += b.total_unemployed();
    return n;
}

namespace {

double covariate_draw(const CovariateConfig& c, Vec2 loc, Rng& rng) {
    return c.base + c.grad_x * loc.x + c.grad_y * loc.y + (c.sd > 0.0 ? rng.normal(0.0, c.sd) : 0.0);
}

int stratum_of(const std::vector<Stratum>& strata, Vec2 p) {
    for (const auto& s : strata)
        if (s.polygon.contains(p)) return s.id;
    return -1;
}

} // namespace

Population generate_population(const PopulationConfig& cfg, std::uint64_t seed) {
    if (cfg.strata.empty()) throw invalid_domain_error("population config needs strata");
    if (!(cfg.dwellings_per_building_mean >= 1.0) || !(cfg.people_per_dwelling_mean >= 1.0))
        throw invalid_domain_error("dwelling and people means must be >= 1");
    if (!(cfg.cell_size > 0.0)) throw invalid_domain_error("cell size must be positive");

    Population pop;
    pop.domain = cfg.domain;
    pop.domain.validate();
    pop.strata = cfg.strata;
    pop.cells = make_grid(pop.domain, cfg.cell_size);

    // Truth fields at cell centers, via a GMRF on a coarse simulation mesh.
    const std::size_t n_cells = pop.cells.size();
    std::vector<double> w1(n_cells, 0.0), w2(n_cells, 0.0);
    if (cfg.use_field) {
        Mesh fmesh = build_mesh(pop.domain, cfg.field_mesh_edge, cfg.field_mesh_edge / 8.0);
        FemMatrices fem = fem_matrices(fmesh);
        std::vector<Vec2> centers;
        centers.reserve(n_cells);
        for (int iy = 0; iy < pop.cells.ny; ++iy)
            for (int ix = 0; ix < pop.cells.nx; ++ix) centers.push_back(pop.cells.center(ix, iy));
        Projector proj = barycentric_projector(fmesh, centers);

        SparsePrecision q1 = precision(to_spde({cfg.sigma1, cfg.rho1}), fem);
        Eigen::MatrixXd draw1 = sample_gmrf(q1, 1, derive_seed(seed, "truth-field-1"));
        Eigen::VectorXd at_cells = proj.A * draw1.row(0).transpose();
        for (std::size_t i = 0; i < n_cells; ++i) w1[i] = at_cells[static_cast<Eigen::Index>(i)];

        if (cfg.independent_fields) {
            SparsePrecision q2 = precision(to_spde({cfg.sigma2, cfg.rho2}), fem);
            Eigen::MatrixXd draw2 = sample_gmrf(q2, 1, derive_seed(seed, "truth-field-2"));
            Eigen::VectorXd at2 = proj.A * draw2.row(0).transpose();
            for (std::size_t i = 0; i < n_cells; ++i) w2[i] = at2[static_cast<Eigen::Index>(i)];
        }
    }

    pop.cell_log_lambda1.assign(n_cells, -std::numeric_limits<double>::infinity());
    Rng rng(derive_seed(seed, "population"));
    long next_id = 0;
    for (int iy = 0; iy < pop.cells.ny; ++iy) {
        for (int ix = 0; ix < pop.cells.nx; ++ix) {
            std::size_t cell = static_cast<std::size_t>(iy) * pop.cells.nx + ix;
            if (!pop.cells.inside[cell]) continue;
            double log_l1 = cfg.log_lambda1 + w1[cell];
            if (!std::isfinite(log_l1) || log_l1 > 25.0)
                throw invalid_domain_error("infeasible point intensity in cell " +
                                           std::to_string(cell));
            pop.cell_log_lambda1[cell] = log_l1;
            double rate = std::exp(log_l1) * pop.cells.cell_area();
            long n_b = rng.poisson(rate);
            Vec2 c = pop.cells.center(ix, iy);
            double half = 0.5 * pop.cells.cell;
            for (long k = 0; k < n_b; ++k) {
                PopBuilding b;
                b.id = next_id++;
                b.loc = {c.x + rng.uniform(-half, half), c.y + rng.uniform(-half, half)};
                b.cell = static_cast<long>(cell);
                b.stratum = stratum_of(pop.strata, b.loc);
                if (b.stratum < 0) b.stratum = stratum_of(pop.strata, c);
                if (b.stratum < 0)
                    throw invalid_domain_error("building outside every stratum at cell " +
                                               std::to_string(cell));

                long nd = 1 + rng.poisson(cfg.dwellings_per_building_mean - 1.0);
                b.dwellings.resize(static_cast<std::size_t>(nd));
                double edu_center = covariate_draw(cfg.edu, b.loc, rng);
                for (auto& dw : b.dwellings) {
                    long np = 1 + rng.poisson(cfg.people_per_dwelling_mean - 1.0);
                    dw.people.resize(static_cast<std::size_t>(np));
                    for (auto& person : dw.people) {
                        person.edu = std::clamp(std::round(edu_center + rng.normal(0.0, 0.5)),
                                                1.0, 3.0);
                        person.age = std::max(15.0, covariate_draw(cfg.age, b.loc, rng));
                    }
                }
                b.iefp = std::clamp(covariate_draw(cfg.iefp, b.loc, rng), 0.0, 1.0);

                double log_l2 = cfg.alpha2;
                if (cfg.use_offset2) log_l2 += std::log(static_cast<double>(b.n_people()));
                log_l2 += cfg.theta_nind * static_cast<double>(b.n_people());
                log_l2 += cfg.theta_edu * b.edu_median();
                log_l2 += cfg.theta_age * b.age_mean();
                log_l2 += cfg.theta_iefp * b.iefp;
                if (cfg.use_field && cfg.marks_use_field)
                    log_l2 += cfg.independent_fields ? w2[cell] : cfg.field_scale * w1[cell];
                if (!std::isfinite(log_l2) || log_l2 > 25.0)
                    throw invalid_domain_error("infeasible mark intensity at building " +
                                               std::to_string(b.id));
                b.lambda2_true = std::exp(log_l2);
                long y = rng.poisson(b.lambda2_true);
                // Spread the unemployed count over the dwellings.
                for (long u = 0; u < y; ++u) {
                    auto& dw = b.dwellings[rng.uniform_index(b.dwellings.size())];
                    dw.unemployed_count += 1;
                }
                for (auto& dw : b.dwellings) {
                    long flagged = 0;
                    for (auto& person : dw.people) {
                        if (flagged < dw.unemployed_count) {
                            person.unemployed = true;
                            ++flagged;
                        }
                    }
                }
                pop.buildings.push_back(std::move(b));
            }
        }
    }
    return pop;
}

StratumFrame build_stratum_frame(const Population& pop, int stratum_id) {
    Vec2 lo, hi;
    pop.domain.bounding_box(lo, hi);
    struct Entry {
        std::uint64_t area_key;
        std::uint64_t building_key;
        long building_index;
        int dwelling_index;
        long area_id;
    };
    std::vector<Entry> entries;
    for (std::size_t bi = 0; bi < pop.buildings.size(); ++bi) {
        const auto& b = pop.buildings[bi];
        if (b.stratum != stratum_id) continue;
        int ix = static_cast<int>(b.cell % pop.cells.nx);
        int iy = static_cast<int>(b.cell / pop.cells.nx);
        std::uint64_t area_key = morton_key(pop.cells.center(ix, iy), lo, hi);
        std::uint64_t bkey = morton_key(b.loc, lo, hi);
        for (int di = 0; di < static_cast<int>(b.dwellings.size()); ++di)
            entries.push_back({area_key, bkey, static_cast<long>(bi), di, b.cell});
    }
    // Sorting by the area cell's Morton key first keeps every area contiguous
    // in the frame, which makes the systematic inclusion probability exact.
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.area_key != b.area_key) return a.area_key < b.area_key;
        if (a.area_id != b.area_id) return a.area_id < b.area_id;
        if (a.building_key != b.building_key) return a.building_key < b.building_key;
        if (a.building_index != b.building_index) return a.building_index < b.building_index;
        return a.dwelling_index < b.dwelling_index;
    });
    StratumFrame frame;
    frame.stratum_id = stratum_id;
    frame.dwellings.reserve(entries.size());
    for (const auto& e : entries)
        frame.dwellings.push_back({e.building_index, e.dwelling_index, e.area_id});
    return frame;
}

AreaSelection select_areas(const StratumFrame& frame, int s_h, Rng& rng, std::optional<long> n_h) {
    const long a_h = static_cast<long>(frame.dwellings.size());
    if (a_h == 0) throw invalid_domain_error("select_areas: empty stratum frame");
    if (s_h < 1) throw invalid_domain_error("select_areas: s_h must be >= 1");
    long positions = n_h ? *n_h : static_cast<long>(s_h);
    positions = std::clamp<long>(positions, 1, a_h);

    AreaSelection sel;
    sel.interval = static_cast<double>(a_h) / static_cast<double>(positions);
    sel.start = rng.uniform_pos() * sel.interval; // u in (0, K]

    // Span of each area in the frame (areas are contiguous).
    std::map<long, std::pair<std::size_t, std::size_t>> spans; // area -> (first, count)
    for (std::size_t i = 0; i < frame.dwellings.size(); ++i) {
        long a = frame.dwellings[i].area_id;
        auto it = spans.find(a);
        if (it == spans.end())
            spans[a] = {i, 1};
        else
            it->second.second += 1;
    }

    std::vector<long> hit_areas;
    for (double pos = sel.start; pos <= static_cast<double>(a_h) + 1e-9; pos += sel.interval) {
        long idx = static_cast<long>(std::ceil(pos)) - 1; // 0-based dwelling index
        if (idx < 0) idx = 0;
        if (idx >= a_h) break;
        hit_areas.push_back(frame.dwellings[static_cast<std::size_t>(idx)].area_id);
    }
    std::sort(hit_areas.begin(), hit_areas.end());
    hit_areas.erase(std::unique(hit_areas.begin(), hit_areas.end()), hit_areas.end());

    for (long a : hit_areas) {
        auto [first, count] = spans.at(a);
        SelectedArea s;
        s.area_id = a;
        s.first = first;
        s.count = count;
        double p = static_cast<double>(count) / sel.interval;
        s.p_area = std::min(1.0, p);
        sel.areas.push_back(s);
    }
    return sel;
}

DwellingSelection select_dwellings(const StratumFrame& frame, const SelectedArea& area, int n_jh,
                                   Rng& rng) {
    const long a_jh = static_cast<long>(area.count);
    if (n_jh < 1 || n_jh > a_jh)
        throw invalid_domain_error("select_dwellings: n_jh=" + std::to_string(n_jh) +
                                   " outside [1, " + std::to_string(a_jh) + "]");
    DwellingSelection sel;
    sel.interval = static_cast<double>(a_jh) / static_cast<double>(n_jh);
    sel.start = rng.uniform_pos() * sel.interval;
    double p = static_cast<double>(n_jh) / static_cast<double>(a_jh);
    for (double pos = sel.start; pos <= static_cast<double>(a_jh) + 1e-9; pos += sel.interval) {
        long idx = static_cast<long>(std::ceil(pos)) - 1;
        if (idx < 0) idx = 0;
        if (idx >= a_jh) break;
        sel.dwellings.push_back({frame.dwellings[area.first + static_cast<std::size_t>(idx)], p});
    }
    return sel;
}

MarkedSample run_survey(const Population& pop, const DesignSpec& design, std::uint64_t seed,
                        DesignDraw* draw_out) {
    MarkedSample sample;
    DesignDraw draw;
    Rng rng(derive_seed(seed, "survey"));

    struct Surveyed {
        long mark = 0;
        std::vector<const Person*> people;
        double p_area = 0.0, p_dwel = 0.0;
    };
    std::map<long, Surveyed> by_building; // keyed by building index for determinism

    for (const auto& sd : design.strata) {
        StratumFrame frame = build_stratum_frame(pop, sd.stratum_id);
        if (frame.dwellings.empty())
            throw invalid_domain_error("design references empty stratum " +
                                       std::to_string(sd.stratum_id));
        DesignDraw::StratumDraw sdraw;
        sdraw.stratum_id = sd.stratum_id;
        sdraw.areas = select_areas(frame, sd.s_h, rng, sd.n_h);
        for (const auto& area : sdraw.areas.areas) {
            int n_jh = static_cast<int>(std::min<long>(sd.n_jh, static_cast<long>(area.count)));
            DwellingSelection dsel = select_dwellings(frame, area, n_jh, rng);
            for (const auto& sw : dsel.dwellings) {
                const auto& b = pop.buildings[static_cast<std::size_t>(sw.ref.building_index)];
                const auto& dw = b.dwellings[static_cast<std::size_t>(sw.ref.dwelling_index)];
                auto& agg = by_building[sw.ref.building_index];
                agg.mark += dw.unemployed_count;
                for (const auto& person : dw.people) agg.people.push_back(&person);
                agg.p_area = area.p_area;
                agg.p_dwel = sw.p_given_area;
            }
            sdraw.per_area.push_back(std::move(dsel));
        }
        draw.strata.push_back(std::move(sdraw));
    }

    for (const auto& [bi, agg] : by_building) {
        const auto& b = pop.buildings[static_cast<std::size_t>(bi)];
        MarkedSample::Building row;
        row.id = b.id;
        row.loc = b.loc;
        row.mark = agg.mark;
        row.nind = static_cast<double>(agg.people.size());
        std::vector<double> edus;
        double age_sum = 0.0;
        for (const Person* person : agg.people) {
            edus.push_back(person->edu);
            age_sum += person->age;
        }
        std::sort(edus.begin(), edus.end());
        std::size_t n = edus.size();
        row.edu = n == 0 ? 0.0 : (n % 2 == 1 ? edus[n / 2] : 0.5 * (edus[n / 2 - 1] + edus[n / 2]));
        row.age = n == 0 ? 0.0 : age_sum / static_cast<double>(n);
        row.iefp = b.iefp;
        row.offset2 = std::log(std::max(1.0, row.nind));
        row.p_area = agg.p_area;
        row.p_dwel = agg.p_dwel;
        sample.buildings.push_back(std::move(row));
    }
    if (draw_out) *draw_out = std::move(draw);
    return sample;
}

HtEstimate ht_estimate(const MarkedSample& sample, const DomainPolygon& region) {
    HtEstimate est;
    bool any = false;
    for (const auto& b : sample.buildings) {
        if (!region.contains(b.loc)) continue;
        any = true;
        double p = b.p_area * b.p_dwel;
        if (!(p > 0.0))
            throw invalid_domain_error("zero inclusion probability at building " +
                                       std::to_string(b.id));
        double y = static_cast<double>(b.mark);
        est.total += y / p;
        est.variance += (1.0 - p) / (p * p) * y * y;
    }
    est.empty = !any;
    return est;
}

} // namespace coxmark
