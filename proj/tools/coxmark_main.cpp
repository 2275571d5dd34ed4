// coxmark: marked log-Gaussian Cox process estimation of unemployment totals
// from a simulated two-stage labor force survey.
//
// Subcommands: synth, sample, fit, select, predict, validate, compare.

#include "coxmark/errors.hpp"
#include "coxmark/io.hpp"
#include "coxmark/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

using nlohmann::json;
namespace fs = std::filesystem;
using namespace coxmark;

namespace {

struct Cli {
    std::string config_path;
    std::optional<std::uint64_t> seed_flag;
    std::optional<std::string> out_flag;
    std::optional<int> workers_flag;

    json config;
    std::uint64_t seed = 0;
    std::string out_dir;
    FileStamp stamp;

    json at(const std::string& key) const {
        if (!config.contains(key)) throw io_error("config missing section '" + key + "'");
        return config.at(key);
    }
    std::string path(const std::string& key, bool must_exist) const {
        const json& paths = at("paths");
        if (!paths.contains(key)) throw io_error("config paths missing '" + key + "'");
        std::string p = paths.at(key).get<std::string>();
        if (must_exist && !fs::exists(p)) throw io_error("file not found: " + p);
        return p;
    }
    std::string out_path(const std::string& name) const { return out_dir + "/" + name; }
};

void load_config(Cli& cli) {
    std::ifstream in(cli.config_path);
    if (!in) throw io_error("cannot open config: " + cli.config_path);
    try {
        in >> cli.config;
    } catch (const std::exception& e) {
        throw io_error("cannot parse config JSON: " + std::string(e.what()));
    }
    if (cli.seed_flag)
        cli.seed = *cli.seed_flag;
    else if (cli.config.contains("seed"))
        cli.seed = cli.config.at("seed").get<std::uint64_t>();
    else
        throw io_error("no seed: pass --seed or set \"seed\" in the config "
                       "(wall-clock defaults are not supported)");
    if (cli.out_flag)
        cli.out_dir = *cli.out_flag;
    else if (cli.config.contains("paths") && cli.config.at("paths").contains("out_dir"))
        cli.out_dir = cli.config.at("paths").at("out_dir").get<std::string>();
    else
        cli.out_dir = ".";
    fs::create_directories(cli.out_dir);
    if (cli.workers_flag) cli.config["grid"]["workers"] = *cli.workers_flag;

    json canonical = cli.config;
    canonical["seed"] = cli.seed;
    cli.stamp.config_hash = hash_string(canonical.dump());
    cli.stamp.seed = cli.seed;
}

PcPrior prior_from_config(const json& cfg) {
    PcPrior pc;
    if (cfg.contains("prior")) {
        const json& p = cfg.at("prior");
        pc.rho0 = p.value("rho0", pc.rho0);
        pc.alpha_rho = p.value("alpha_rho", pc.alpha_rho);
        pc.sigma0 = p.value("sigma0", pc.sigma0);
        pc.alpha_sigma = p.value("alpha_sigma", pc.alpha_sigma);
    }
    return pc;
}

ModelSpec model_from_config(const json& cfg, const json& model_cfg) {
    ModelSpec spec;
    spec.variant = variant_from_string(model_cfg.value("variant", "shared"));
    if (model_cfg.contains("covariates"))
        for (const auto& c : model_cfg.at("covariates"))
            spec.mark_covariates.push_back(c.get<std::string>());
    spec.use_offset1 = model_cfg.value("use_offset1", true);
    spec.use_offset2 = model_cfg.value("use_offset2", true);
    spec.pc_points = prior_from_config(cfg);
    spec.pc_marks = spec.pc_points;
    if (cfg.contains("prior"))
        spec.fixed_effect_variance =
            cfg.at("prior").value("fixed_effect_variance", spec.fixed_effect_variance);
    return spec;
}

FitOptions fit_options_from_config(const Cli& cli, const json& model_cfg) {
    FitOptions opt;
    const json& mesh = cli.at("mesh");
    opt.mesh_max_edge = mesh.at("max_edge").get<double>();
    opt.mesh_cutoff = mesh.at("cutoff").get<double>();
    opt.model = model_from_config(cli.config, model_cfg);
    if (cli.config.contains("grid")) {
        const json& g = cli.config.at("grid");
        opt.grid.n_steps = g.value("n_steps", 3);
        opt.grid.n_workers = g.value("workers", 1);
        if (g.contains("center"))
            for (const auto& v : g.at("center")) opt.grid.center.push_back(v.get<double>());
        if (g.contains("step"))
            for (const auto& v : g.at("step")) opt.grid.step.push_back(v.get<double>());
    }
    opt.n_draws = cli.config.value("draws", 1000);
    opt.seed = derive_seed(cli.seed, "fit");
    return opt;
}

PredictOptions predict_options_from_config(const Cli& cli) {
    PredictOptions opt;
    if (cli.config.contains("predict")) {
        const json& p = cli.config.at("predict");
        opt.pixel_cell = p.value("pixel_cell", 1.0);
        opt.bandwidth = p.value("bandwidth", 2.0);
        opt.thinning = p.value("thinning", true);
        opt.combined_p_only = p.value("combined_p_only", false);
    }
    opt.seed = derive_seed(cli.seed, "predict");
    if (opt.combined_p_only)
        std::cerr << "note: combined-p mode active, p_dwel approximated by the combined "
                     "inclusion probability\n";
    return opt;
}

CovariateConfig covariate_from_json(const json& j, CovariateConfig dflt) {
    CovariateConfig c = dflt;
    c.base = j.value("base", c.base);
    c.grad_x = j.value("grad_x", c.grad_x);
    c.grad_y = j.value("grad_y", c.grad_y);
    c.sd = j.value("sd", c.sd);
    return c;
}

std::vector<Region> rect_partition(const DomainPolygon& domain, int nx, int ny,
                                   const std::string& prefix) {
    Vec2 lo, hi;
    domain.bounding_box(lo, hi);
    std::vector<Region> out;
    double dx = (hi.x - lo.x) / nx, dy = (hi.y - lo.y) / ny;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            Region r;
            r.id = prefix + std::to_string(j * nx + i);
            r.polygon = make_rectangle(lo.x + i * dx, lo.y + j * dy, lo.x + (i + 1) * dx,
                                       lo.y + (j + 1) * dy);
            out.push_back(std::move(r));
        }
    return out;
}

PopulationConfig population_config(const Cli& cli, const DomainPolygon& domain,
                                   const std::vector<Region>& strata_regions) {
    const json& s = cli.at("synth");
    PopulationConfig cfg;
    cfg.domain = domain;
    for (std::size_t i = 0; i < strata_regions.size(); ++i)
        cfg.strata.push_back({static_cast<int>(i), strata_regions[i].polygon});
    cfg.cell_size = s.value("cell_size", 1.0);
    cfg.log_lambda1 = s.value("log_lambda1", 3.0);
    cfg.use_field = s.value("use_field", true);
    cfg.sigma1 = s.value("sigma1", 1.0);
    cfg.rho1 = s.value("rho1", 2.0);
    cfg.field_mesh_edge = s.value("field_mesh_edge", 1.0);
    cfg.alpha2 = s.value("alpha2", -1.0);
    cfg.use_offset2 = s.value("use_offset2", true);
    if (s.contains("theta")) {
        const json& t = s.at("theta");
        cfg.theta_nind = t.value("nind", 0.0);
        cfg.theta_edu = t.value("edu", 0.0);
        cfg.theta_age = t.value("age", 0.0);
        cfg.theta_iefp = t.value("iefp", 0.0);
    }
    cfg.marks_use_field = s.value("marks_use_field", true);
    cfg.field_scale = s.value("field_scale", 1.0);
    cfg.independent_fields = s.value("independent_fields", false);
    cfg.sigma2 = s.value("sigma2", 1.0);
    cfg.rho2 = s.value("rho2", 2.0);
    cfg.dwellings_per_building_mean = s.value("dwellings_per_building_mean", 1.0);
    cfg.people_per_dwelling_mean = s.value("people_per_dwelling_mean", 2.5);
    if (s.contains("covariates")) {
        const json& c = s.at("covariates");
        if (c.contains("edu")) cfg.edu = covariate_from_json(c.at("edu"), cfg.edu);
        if (c.contains("age")) cfg.age = covariate_from_json(c.at("age"), cfg.age);
        if (c.contains("iefp")) cfg.iefp = covariate_from_json(c.at("iefp"), cfg.iefp);
    }
    return cfg;
}

DesignSpec design_from_config(const Cli& cli) {
    DesignSpec design;
    const json& d = cli.at("design");
    for (const auto& s : d.at("strata")) {
        StratumDesign sd;
        sd.stratum_id = s.at("stratum_id").get<int>();
        sd.s_h = s.at("s_h").get<int>();
        sd.n_jh = s.at("n_jh").get<int>();
        if (s.contains("n_h") && !s.at("n_h").is_null()) sd.n_h = s.at("n_h").get<long>();
        design.strata.push_back(sd);
    }
    return design;
}

// Strata and regions the synth step wrote (regenerated deterministically).
struct World {
    DomainPolygon domain;
    std::vector<Region> strata;
    std::vector<Region> regions;
    Population pop;
    Surface offset1;
};

World rebuild_world(const Cli& cli) {
    World w;
    w.domain = read_geojson_polygon(cli.path("domain", true));
    const json& s = cli.at("synth");
    w.strata = rect_partition(w.domain, s.value("strata_nx", 1), s.value("strata_ny", 1), "S");
    w.regions =
        rect_partition(w.domain, s.value("regions_nx", 4), s.value("regions_ny", 4), "R");
    w.pop = generate_population(population_config(cli, w.domain, w.strata),
                                derive_seed(cli.seed, "synth"));
    double bw = s.value("offset1_bandwidth", 3.0);
    w.offset1 = population_density_offset(
        w.pop, make_grid(w.domain, s.value("cell_size", 1.0)), bw);
    return w;
}

int cmd_synth(Cli& cli) {
    World w = rebuild_world(cli);
    write_population_csv(cli.out_path("population.csv"), w.pop, cli.stamp);
    write_geojson_regions(cli.out_path("strata.geojson"), w.strata, cli.stamp);
    write_geojson_regions(cli.out_path("regions.geojson"), w.regions, cli.stamp);
    write_surface_csv(cli.out_path("surface_offset1.csv"), w.offset1, cli.stamp);

    // Truth covariate surfaces, kernel-smoothed from the population.
    std::vector<Vec2> pts;
    for (const auto& b : w.pop.buildings) pts.push_back(b.loc);
    const json& s = cli.at("synth");
    double bw = s.value("covariate_bandwidth", 2.0);
    GridSpec grid = make_grid(w.domain, s.value("cell_size", 1.0));
    auto write_cov = [&](const std::string& name, auto&& get) {
        std::vector<double> vals;
        for (const auto& b : w.pop.buildings) vals.push_back(get(b));
        write_surface_csv(cli.out_path("surface_" + name + ".csv"),
                          kernel_smooth(pts, vals, bw, grid), cli.stamp);
    };
    write_cov("edu", [](const PopBuilding& b) { return b.edu_median(); });
    write_cov("age", [](const PopBuilding& b) { return b.age_mean(); });
    write_cov("iefp", [](const PopBuilding& b) { return b.iefp; });
    write_cov("nind", [](const PopBuilding& b) { return static_cast<double>(b.n_people()); });

    std::cout << "synth: " << w.pop.buildings.size() << " buildings, "
              << w.pop.total_unemployed() << " unemployed, " << w.strata.size() << " strata, "
              << w.regions.size() << " regions -> " << cli.out_dir << "\n";
    return 0;
}

int cmd_sample(Cli& cli) {
    World w = rebuild_world(cli);
    DesignSpec design = design_from_config(cli);
    DesignDraw draw;
    MarkedSample sample = run_survey(w.pop, design, derive_seed(cli.seed, "survey"), &draw);
    write_sample_csv(cli.out_path("sample.csv"), sample, cli.stamp);
    long n_areas = 0;
    for (const auto& s : draw.strata) n_areas += static_cast<long>(s.areas.areas.size());
    std::cout << "sample: " << sample.buildings.size() << " buildings from " << n_areas
              << " areas -> " << cli.out_path("sample.csv") << "\n";
    return 0;
}

FitResult run_fit(Cli& cli, const DomainPolygon& domain, const MarkedSample& sample,
                  const Surface* offset1, const json& model_cfg) {
    FitOptions opt = fit_options_from_config(cli, model_cfg);
    return fit_pipeline(domain, sample, opt.model.use_offset1 ? offset1 : nullptr, opt);
}

int cmd_fit(Cli& cli) {
    DomainPolygon domain = read_geojson_polygon(cli.path("domain", true));
    MarkedSample sample = read_sample_csv(cli.path("sample", true));
    Surface offset1;
    bool have_offset1 = false;
    const json& model_cfg = cli.at("model");
    if (model_cfg.value("use_offset1", true)) {
        offset1 = read_surface_csv(cli.path("offset1_surface", true));
        have_offset1 = true;
    }
    FitResult fit = run_fit(cli, domain, sample, have_offset1 ? &offset1 : nullptr, model_cfg);
    write_fit_json(cli.out_path("fit.json"), fit.model, fit.hyper, fit.draws, cli.stamp);
    if (cli.config.value("write_draws", false))
        write_draws_bin(cli.out_path("draws.bin"), fit.draws);
    std::cout << "fit: " << fit.model.n_nodes << " mesh nodes, " << fit.hyper.points.size()
              << " grid points, " << fit.draws.n_draws() << " draws -> "
              << cli.out_path("fit.json") << "\n";
    return 0;
}

std::string formula_string(const ModelSpec& spec) {
    std::string f1 = "alpha1";
    if (spec.use_offset1) f1 += " + offset1";
    std::string f2 = "alpha2";
    if (spec.use_offset2) f2 += " + offset2";
    for (const auto& c : spec.mark_covariates) f2 += " + " + c;
    switch (spec.variant) {
        case LatentVariant::NONE: break;
        case LatentVariant::POINTS_ONLY_W: f1 += " + W"; break;
        case LatentVariant::SHARED_W: f1 += " + W"; f2 += " + W"; break;
        case LatentVariant::SCALED_W: f1 += " + W"; f2 += " + a3*W"; break;
        case LatentVariant::INDEPENDENT_W1_W2: f1 += " + W1"; f2 += " + W2"; break;
    }
    return f1 + " ; " + f2;
}

int cmd_select(Cli& cli) {
    if (!cli.config.contains("select") || !cli.config.at("select").contains("variants"))
        throw io_error("config missing select.variants");
    const json& variants = cli.config.at("select").at("variants");
    if (variants.size() < 2)
        throw io_error("select needs at least 2 variants, got " +
                       std::to_string(variants.size()));

    DomainPolygon domain = read_geojson_polygon(cli.path("domain", true));
    MarkedSample sample = read_sample_csv(cli.path("sample", true));
    Surface offset1;
    bool have_offset1 = fs::exists(cli.config.at("paths").value("offset1_surface", ""));
    if (have_offset1) offset1 = read_surface_csv(cli.path("offset1_surface", true));

    struct Row {
        std::string formula;
        ModelScore score;
    };
    std::vector<Row> rows;
    for (const auto& v : variants) {
        FitResult fit = run_fit(cli, domain, sample, have_offset1 ? &offset1 : nullptr, v);
        ModelScore score = model_score(fit.model, fit.draws);
        ModelSpec spec = model_from_config(cli.config, v);
        rows.push_back({formula_string(spec), score});
        std::cout << "select: " << rows.back().formula << "  DIC=" << score.dic
                  << " WAIC=" << score.waic << "\n";
    }
    std::sort(rows.begin(), rows.end(),
              [](const Row& a, const Row& b) { return a.score.dic < b.score.dic; });
    std::ofstream out(cli.out_path("select.csv"), std::ios::binary);
    out << cli.stamp.line() << "formula,dic,waic,p_dic,p_waic\n";
    char buf[64];
    for (const auto& r : rows) {
        auto num = [&](double v) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            return std::string(buf);
        };
        out << '"' << r.formula << "\"," << num(r.score.dic) << ',' << num(r.score.waic) << ','
            << num(r.score.p_dic) << ',' << num(r.score.p_waic) << '\n';
    }
    std::cout << "select: table -> " << cli.out_path("select.csv") << "\n";
    return 0;
}

int cmd_predict(Cli& cli) {
    DomainPolygon domain = read_geojson_polygon(cli.path("domain", true));
    std::vector<Region> regions = read_geojson_regions(cli.path("regions", true));
    MarkedSample sample = read_sample_csv(cli.path("sample", true));
    const json& model_cfg = cli.at("model");
    Surface offset1;
    bool have_offset1 = false;
    if (model_cfg.value("use_offset1", true)) {
        offset1 = read_surface_csv(cli.path("offset1_surface", true));
        have_offset1 = true;
    }
    FitResult fit = run_fit(cli, domain, sample, have_offset1 ? &offset1 : nullptr, model_cfg);
    PredictOptions popt = predict_options_from_config(cli);
    PredictResult pred = predict_pipeline(fit, domain, sample,
                                          have_offset1 ? &offset1 : nullptr, regions, popt);
    write_estimates_csv(cli.out_path("estimates.csv"), pred.estimates, cli.stamp);
    write_intensity_grid_csv(cli.out_path("intensity_grid.csv"), pred.field, cli.stamp);
    std::cout << "predict: " << pred.estimates.size() << " regions -> "
              << cli.out_path("estimates.csv") << "\n";
    return 0;
}

int cmd_validate(Cli& cli) {
    World w = rebuild_world(cli);
    DesignSpec design = design_from_config(cli);
    HoldoutOptions opt;
    opt.k = cli.config.contains("validate") ? cli.config.at("validate").value("k", 26) : 26;
    opt.fit = fit_options_from_config(cli, cli.at("model"));
    opt.predict = predict_options_from_config(cli);
    HoldoutReport report =
        holdout_validate(w.pop, w.regions, design, opt, derive_seed(cli.seed, "validate"));

    std::ofstream out(cli.out_path("validation.csv"), std::ios::binary);
    out << cli.stamp.line()
        << "region_id,true_total,held_mean,held_lo,held_hi,held_covered,full_mean,full_lo,"
           "full_hi,full_covered\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& r : report.rows)
        out << r.region_id << ',' << num(r.true_total) << ',' << num(r.held_mean) << ','
            << num(r.held_lo) << ',' << num(r.held_hi) << ',' << (r.held_covered ? 1 : 0) << ','
            << num(r.full_mean) << ',' << num(r.full_lo) << ',' << num(r.full_hi) << ','
            << (r.full_covered ? 1 : 0) << '\n';
    std::cout << "validate: k=" << report.k << " coverage=" << report.coverage << " -> "
              << cli.out_path("validation.csv") << "\n";
    return 0;
}

int cmd_compare(Cli& cli) {
    DomainPolygon domain = read_geojson_polygon(cli.path("domain", true));
    std::vector<Region> regions = read_geojson_regions(cli.path("regions", true));
    MarkedSample sample = read_sample_csv(cli.path("sample", true));
    const json& model_cfg = cli.at("model");
    Surface offset1;
    bool have_offset1 = false;
    if (model_cfg.value("use_offset1", true)) {
        offset1 = read_surface_csv(cli.path("offset1_surface", true));
        have_offset1 = true;
    }
    FitResult fit = run_fit(cli, domain, sample, have_offset1 ? &offset1 : nullptr, model_cfg);
    PredictOptions popt = predict_options_from_config(cli);
    PredictResult pred = predict_pipeline(fit, domain, sample,
                                          have_offset1 ? &offset1 : nullptr, regions, popt);

    std::vector<std::pair<std::string, std::pair<double, double>>> direct;
    for (const auto& r : regions) {
        HtEstimate ht = ht_estimate(sample, r.polygon);
        if (!ht.empty) direct.push_back({r.id, {ht.total, std::sqrt(ht.variance)}});
    }
    std::vector<ComparisonRow> rows = compare_direct(pred.estimates, direct);

    std::ofstream out(cli.out_path("comparison.csv"), std::ios::binary);
    out << cli.stamp.line()
        << "region_id,available,model_mean,direct_total,difference,sd_ratio,cv_model,cv_direct,"
           "covered\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& c = rows[i];
        const auto& e = pred.estimates[i];
        out << c.region_id << ',' << (c.available ? 1 : 0) << ',' << num(e.mean) << ',';
        if (c.available)
            out << num(e.direct_total.value_or(0.0)) << ',' << num(c.difference) << ','
                << num(c.sd_ratio) << ',' << num(c.cv_model) << ',' << num(c.cv_direct) << ','
                << (c.covered ? 1 : 0);
        else
            out << ",,," << num(c.cv_model) << ",,";
        out << '\n';
    }
    std::cout << "compare: " << rows.size() << " regions (" << direct.size()
              << " with direct estimates) -> " << cli.out_path("comparison.csv") << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"marked log-Gaussian Cox process unemployment estimation"};
    app.require_subcommand(1);

    Cli cli;
    app.add_option("-c,--config", cli.config_path, "JSON run configuration")->required();
    std::uint64_t seed_val = 0;
    auto* seed_opt = app.add_option("--seed", seed_val, "master seed (overrides config)");
    std::string out_val;
    auto* out_opt = app.add_option("--out", out_val, "output directory (overrides config)");
    int workers_val = 1;
    auto* workers_opt = app.add_option("--workers", workers_val, "hyper-grid worker threads");

    auto* synth = app.add_subcommand("synth", "generate a synthetic population and surfaces");
    auto* sample = app.add_subcommand("sample", "draw the two-stage survey sample");
    auto* fit = app.add_subcommand("fit", "fit the marked LGCP model");
    auto* select = app.add_subcommand("select", "score model variants by DIC/WAIC");
    auto* predict = app.add_subcommand("predict", "regional estimates from the fitted model");
    auto* validate = app.add_subcommand("validate", "hold-out validation and residuals");
    auto* compare = app.add_subcommand("compare", "model vs direct Horvitz-Thompson table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*seed_opt) cli.seed_flag = seed_val;
        if (*out_opt) cli.out_flag = out_val;
        if (*workers_opt) cli.workers_flag = workers_val;
        load_config(cli);
        if (*synth) return cmd_synth(cli);
        if (*sample) return cmd_sample(cli);
        if (*fit) return cmd_fit(cli);
        if (*select) return cmd_select(cli);
        if (*predict) return cmd_predict(cli);
        if (*validate) return cmd_validate(cli);
        if (*compare) return cmd_compare(cli);
        return 2;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const invalid_domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nonconvergence_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 1;
    }
}
