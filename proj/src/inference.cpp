#include "coxmark/inference.hpp"
#include "coxmark/errors.hpp"
#include "coxmark/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <string>

namespace coxmark {

namespace {

struct PriorPrecision {
    Eigen::SparseMatrix<double> Q;
    double log_det = 0.0;
};

PriorPrecision prior_precision(const JointModel& model, const HyperParams& hyper) {
    if (hyper.fields.size() != static_cast<std::size_t>(model.n_fields))
        throw invalid_domain_error("hyperparameters carry " +
                                   std::to_string(hyper.fields.size()) + " fields, model has " +
                                   std::to_string(model.n_fields));
    const Eigen::Index d = static_cast<Eigen::Index>(model.dim());
    std::vector<Eigen::Triplet<double>> trips;
    PriorPrecision out;
    for (int f = 0; f < model.n_fields; ++f) {
        InterpretableParams ip{std::exp(hyper.fields[f].log_sigma),
                               std::exp(hyper.fields[f].log_rho)};
        SparsePrecision q = precision(to_spde(ip), model.fem);
        out.log_det += SparseChol(q.Q).log_det();
        const Eigen::Index base = static_cast<Eigen::Index>(model.field_offset(f));
        for (int k = 0; k < q.Q.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(q.Q, k); it; ++it)
                trips.emplace_back(base + it.row(), base + it.col(), it.value());
    }
    const double fixed_prec = 1.0 / model.v0;
    for (std::size_t j = 0; j < model.fixed_names.size(); ++j) {
        Eigen::Index idx = static_cast<Eigen::Index>(model.fixed_offset() + j);
        trips.emplace_back(idx, idx, fixed_prec);
        out.log_det += std::log(fixed_prec);
    }
    out.Q.resize(d, d);
    out.Q.setFromTriplets(trips.begin(), trips.end());
    return out;
}

double penalized_objective(const JointModel& model, const HyperParams& hyper,
                           const PriorPrecision& prior, const Eigen::VectorXd& x) {
    double quad = x.dot(prior.Q * x);
    return joint_loglik(model, x, hyper) - 0.5 * quad;
}

GaussianApprox inner_mode_impl(const JointModel& model, const HyperParams& hyper,
                               const PriorPrecision& prior, const Eigen::VectorXd* init) {
    const Eigen::Index d = static_cast<Eigen::Index>(model.dim());
    Eigen::VectorXd x = (init && init->size() == d) ? *init : Eigen::VectorXd::Zero(d);

    const int max_iter = 100;
    const int max_halvings = 30;
    double obj = penalized_objective(model, hyper, prior, x);
    if (!std::isfinite(obj)) {
        x.setZero();
        obj = penalized_objective(model, hyper, prior, x);
    }

    GaussianApprox ga;
    for (int iter = 0; iter < max_iter; ++iter) {
        LoglikDerivatives der = loglik_grad_hess(model, x, hyper);
        Eigen::VectorXd grad = der.gradient - prior.Q * x;
        double gnorm = grad.norm();
        Eigen::SparseMatrix<double> prec = prior.Q + der.neg_hessian;

        if (gnorm < 1e-6 * (1.0 + x.norm())) {
            SparseChol chol(prec);
            ga.mode = x;
            ga.precision = prec;
            ga.log_det_half = 0.5 * chol.log_det();
            ga.converged = true;
            ga.iterations = iter;
            ga.loglik_at_mode = der.value;
            ga.prior_quad_at_mode = x.dot(prior.Q * x);
            ga.prior_log_det = prior.log_det;
            return ga;
        }

        SparseChol chol(prec);
        Eigen::VectorXd delta = chol.solve(grad);
        double t = 1.0;
        bool accepted = false;
        for (int h = 0; h <= max_halvings; ++h) {
            Eigen::VectorXd trial = x + t * delta;
            double trial_obj = penalized_objective(model, hyper, prior, trial);
            if (std::isfinite(trial_obj) && trial_obj >= obj - 1e-14 * std::abs(obj)) {
                x = trial;
                obj = trial_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted)
            throw nonconvergence_error(
                "inner Newton line search failed after " + std::to_string(max_halvings) +
                    " halvings at iteration " + std::to_string(iter),
                std::vector<double>(x.data(), x.data() + x.size()));
    }
    throw nonconvergence_error("inner Newton did not converge in 100 iterations",
                               std::vector<double>(x.data(), x.data() + x.size()));
}

// Hyperprior terms: PC prior per field with the log-scale Jacobian, and a
// Gaussian prior on the mark-field scale.
double log_hyper_prior(const JointModel& model, const HyperParams& hyper) {
    double lp = 0.0;
    for (int f = 0; f < model.n_fields; ++f) {
        double rho = std::exp(hyper.fields[f].log_rho);
        double sigma = std::exp(hyper.fields[f].log_sigma);
        const PcPrior& pc = (f == 0) ? model.pc_points : model.pc_marks;
        lp += pc_log_prior({sigma, rho}, pc);
        lp += hyper.fields[f].log_rho + hyper.fields[f].log_sigma; // Jacobian
    }
    if (model.variant == LatentVariant::SCALED_W) {
        if (!hyper.field_scale)
            throw invalid_domain_error("SCALED_W requires the field-scale hyperparameter");
        double a = *hyper.field_scale;
        lp += -0.5 * std::log(2.0 * M_PI * model.v0) - 0.5 * a * a / model.v0;
    }
    return lp;
}

} // namespace

GaussianApprox inner_mode(const JointModel& model, const HyperParams& hyper,
                          const Eigen::VectorXd* init) {
    PriorPrecision prior = prior_precision(model, hyper);
    return inner_mode_impl(model, hyper, prior, init);
}

double log_marginal_hyper(const JointModel& model, const HyperParams& hyper,
                          const GaussianApprox& approx) {
    double core = approx.loglik_at_mode - 0.5 * approx.prior_quad_at_mode +
                  0.5 * approx.prior_log_det - approx.log_det_half;
    return core + log_hyper_prior(model, hyper);
}

double log_marginal_hyper(const JointModel& model, const HyperParams& hyper) {
    return log_marginal_hyper(model, hyper, inner_mode(model, hyper));
}

HyperParams hyper_from_axes(const JointModel& model, const std::vector<double>& axes) {
    if (axes.size() != model.hyper_dim())
        throw invalid_domain_error("hyper axis vector has wrong dimension");
    HyperParams h;
    for (int f = 0; f < model.n_fields; ++f)
        h.fields.push_back({axes[2 * f], axes[2 * f + 1]});
    if (model.variant == LatentVariant::SCALED_W) h.field_scale = axes[2 * model.n_fields];
    return h;
}

std::vector<double> hyper_to_axes(const JointModel& model, const HyperParams& hyper) {
    std::vector<double> axes;
    for (const auto& f : hyper.fields) {
        axes.push_back(f.log_rho);
        axes.push_back(f.log_sigma);
    }
    if (model.variant == LatentVariant::SCALED_W)
        axes.push_back(hyper.field_scale.value_or(0.0));
    return axes;
}

HyperPosterior explore_hyper(const JointModel& model, const HyperGrid& grid) {
    const std::size_t d = model.hyper_dim();
    HyperPosterior out;
    out.grid = grid;

    if (d == 0) {
        HyperParams h;
        GaussianApprox ga = inner_mode(model, h);
        HyperPosterior::Point p;
        p.hyper = h;
        p.log_post = log_marginal_hyper(model, h, ga);
        p.weight = 1.0;
        p.mode = ga.mode;
        p.ok = true;
        p.iterations = ga.iterations;
        out.points.push_back(std::move(p));
        return out;
    }

    if (grid.center.size() != d || grid.step.size() != d)
        throw invalid_domain_error("hyper grid center/step dimension mismatch (need " +
                                   std::to_string(d) + " axes)");

    struct Eval {
        bool ok = false;
        double log_post = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd mode;
        int iterations = 0;
    };
    std::map<std::vector<int>, Eval> cache;

    auto axes_of = [&](const std::vector<int>& key) {
        std::vector<double> axes(d);
        for (std::size_t i = 0; i < d; ++i) axes[i] = grid.center[i] + key[i] * grid.step[i];
        return axes;
    };
    auto warm_start = [&](const std::vector<int>& key) -> const Eigen::VectorXd* {
        const Eigen::VectorXd* best = nullptr;
        long best_dist = std::numeric_limits<long>::max();
        for (const auto& [k, ev] : cache) {
            if (!ev.ok) continue;
            long dist = 0;
            for (std::size_t i = 0; i < d; ++i) dist += std::abs(k[i] - key[i]);
            if (dist < best_dist) {
                best_dist = dist;
                best = &ev.mode;
            }
        }
        return best;
    };
    auto evaluate_at = [&](const std::vector<int>& key, const Eigen::VectorXd* init) {
        Eval ev;
        try {
            HyperParams h = hyper_from_axes(model, axes_of(key));
            PriorPrecision prior = prior_precision(model, h);
            GaussianApprox ga = inner_mode_impl(model, h, prior, init);
            ev.ok = true;
            ev.log_post = log_marginal_hyper(model, h, ga);
            ev.mode = std::move(ga.mode);
            ev.iterations = ga.iterations;
        } catch (const std::exception&) {
            ev.ok = false;
        }
        return ev;
    };
    auto evaluate = [&](const std::vector<int>& key) -> const Eval& {
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        Eval ev = evaluate_at(key, warm_start(key));
        return cache.emplace(key, std::move(ev)).first->second;
    };

    // Locate the grid center by coordinate ascent on the lattice.
    std::vector<int> cur(d, 0);
    evaluate(cur);
    for (int move = 0; move < grid.max_ascent; ++move) {
        std::vector<int> best = cur;
        double best_lp = evaluate(cur).log_post;
        for (std::size_t i = 0; i < d; ++i)
            for (int dir : {+1, -1}) {
                std::vector<int> k = cur;
                k[i] += dir;
                double lp = evaluate(k).log_post;
                if (lp > best_lp) {
                    best_lp = lp;
                    best = k;
                }
            }
        if (best == cur) break;
        cur = best;
    }

    // Full expansion +-n_steps per axis around the located center.
    std::vector<std::vector<int>> keys;
    std::vector<int> key(d, 0);
    const int n = grid.n_steps;
    std::function<void(std::size_t)> build = [&](std::size_t axis) {
        if (axis == d) {
            std::vector<int> k(d);
            for (std::size_t i = 0; i < d; ++i) k[i] = cur[i] + key[i];
            keys.push_back(k);
            return;
        }
        for (int off = -n; off <= n; ++off) {
            key[axis] = off;
            build(axis + 1);
        }
    };
    build(0);

    std::vector<std::vector<int>> todo;
    for (const auto& k : keys)
        if (!cache.count(k)) todo.push_back(k);

    if (grid.n_workers > 1 && todo.size() > 1) {
        // Warm starts come from the ascent-phase cache only, so results do not
        // depend on worker scheduling.
        std::vector<const Eigen::VectorXd*> inits(todo.size());
        for (std::size_t i = 0; i < todo.size(); ++i) inits[i] = warm_start(todo[i]);
        std::vector<Eval> results(todo.size());
        std::size_t workers = std::min<std::size_t>(grid.n_workers, todo.size());
        std::vector<std::future<void>> futs;
        std::atomic<std::size_t> next{0};
        for (std::size_t w = 0; w < workers; ++w)
            futs.push_back(std::async(std::launch::async, [&]() {
                for (;;) {
                    std::size_t i = next.fetch_add(1);
                    if (i >= todo.size()) break;
                    results[i] = evaluate_at(todo[i], inits[i]);
                }
            }));
        for (auto& f : futs) f.get();
        for (std::size_t i = 0; i < todo.size(); ++i) cache.emplace(todo[i], std::move(results[i]));
    } else {
        for (const auto& k : todo) evaluate(k);
    }

    double max_lp = -std::numeric_limits<double>::infinity();
    for (const auto& k : keys) {
        const Eval& ev = cache.at(k);
        if (ev.ok) max_lp = std::max(max_lp, ev.log_post);
    }
    if (!std::isfinite(max_lp))
        throw numerical_error("hyperparameter exploration failed at every grid point");

    double total = 0.0;
    for (const auto& k : keys) {
        const Eval& ev = cache.at(k);
        HyperPosterior::Point p;
        p.hyper = hyper_from_axes(model, axes_of(k));
        p.ok = ev.ok;
        if (!ev.ok) {
            ++out.n_failed;
            continue;
        }
        p.log_post = ev.log_post;
        p.weight = std::exp(ev.log_post - max_lp);
        p.mode = ev.mode;
        p.iterations = ev.iterations;
        total += p.weight;
        out.points.push_back(std::move(p));
    }
    for (auto& p : out.points) p.weight /= total;
    return out;
}

PosteriorDraws sample_posterior(const JointModel& model, const HyperPosterior& hp, std::size_t n,
                                std::uint64_t seed) {
    if (hp.points.empty()) throw invalid_domain_error("sample_posterior: empty hyper posterior");
    if (n < 1) throw invalid_domain_error("sample_posterior: need at least one draw");

    PosteriorDraws out;
    out.seed = seed;
    const Eigen::Index d = static_cast<Eigen::Index>(model.dim());
    out.latent.resize(static_cast<Eigen::Index>(n), d);
    out.hyper_index.resize(n);
    for (const auto& p : hp.points) {
        out.support.push_back(p.hyper);
        out.support_weights.push_back(p.weight);
    }

    std::vector<double> cumw(hp.points.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < hp.points.size(); ++i) {
        acc += hp.points[i].weight;
        cumw[i] = acc;
    }

    // Precision is rebuilt lazily per selected configuration from its cached
    // mode; the exploration phase does not retain factorizations.
    std::map<int, std::unique_ptr<SparseChol>> factors;
    auto factor_of = [&](int c) -> SparseChol& {
        auto it = factors.find(c);
        if (it == factors.end()) {
            const auto& p = hp.points[c];
            PriorPrecision prior = prior_precision(model, p.hyper);
            LoglikDerivatives der = loglik_grad_hess(model, p.mode, p.hyper);
            Eigen::SparseMatrix<double> prec = prior.Q + der.neg_hessian;
            it = factors.emplace(c, std::make_unique<SparseChol>(prec)).first;
        }
        return *it->second;
    };

    Rng rng(seed);
    Eigen::VectorXd z(d);
    for (std::size_t k = 0; k < n; ++k) {
        int c = static_cast<int>(rng.categorical(cumw));
        out.hyper_index[k] = c;
        for (Eigen::Index i = 0; i < d; ++i) z[i] = rng.normal();
        out.latent.row(static_cast<Eigen::Index>(k)) =
            (hp.points[c].mode + factor_of(c).unwhiten(z)).transpose();
    }
    return out;
}

std::pair<double, double> dic_combine(double mean_deviance, double plugin_deviance) {
    double p_dic = mean_deviance - plugin_deviance;
    return {mean_deviance + p_dic, p_dic};
}

std::pair<double, double> dic(const JointModel& model, const PosteriorDraws& draws) {
    const std::size_t n = draws.n_draws();
    if (n == 0) throw invalid_domain_error("dic: no draws");
    double dbar = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        dbar += -2.0 * joint_loglik(model, draws.latent.row(k).transpose(), draws.hyper_of(k));
    dbar /= static_cast<double>(n);

    Eigen::VectorXd mean_latent = draws.latent.colwise().mean().transpose();
    HyperParams mean_hyper;
    if (model.n_fields > 0 || model.variant == LatentVariant::SCALED_W) {
        std::vector<double> axes(model.hyper_dim(), 0.0);
        for (std::size_t i = 0; i < draws.support.size(); ++i) {
            std::vector<double> a = hyper_to_axes(model, draws.support[i]);
            for (std::size_t j = 0; j < axes.size(); ++j)
                axes[j] += draws.support_weights[i] * a[j];
        }
        mean_hyper = hyper_from_axes(model, axes);
    }
    double dhat = -2.0 * joint_loglik(model, mean_latent, mean_hyper);
    return dic_combine(dbar, dhat);
}

std::pair<double, double> waic(const JointModel& model, const PosteriorDraws& draws) {
    const std::size_t n = draws.n_draws();
    if (n == 0) throw invalid_domain_error("waic: no draws");
    std::vector<std::vector<double>> lpd; // [draw][row]
    lpd.reserve(n);
    for (std::size_t k = 0; k < n; ++k)
        lpd.push_back(loglik_rows(model, draws.latent.row(k).transpose(), draws.hyper_of(k)));

    const std::size_t rows = lpd.front().size();
    double lppd = 0.0, p_waic = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, lpd[k][i]);
        double se = 0.0, mean = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            se += std::exp(lpd[k][i] - mx);
            mean += lpd[k][i];
        }
        mean /= static_cast<double>(n);
        lppd += mx + std::log(se / static_cast<double>(n));
        if (n > 1) {
            double var = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                var += (lpd[k][i] - mean) * (lpd[k][i] - mean);
            p_waic += var / static_cast<double>(n - 1);
        }
    }
    return {-2.0 * (lppd - p_waic), p_waic};
}

ModelScore model_score(const JointModel& model, const PosteriorDraws& draws) {
    ModelScore s;
    auto [d, pd] = dic(model, draws);
    auto [w, pw] = waic(model, draws);
    s.dic = d;
    s.p_dic = pd;
    s.waic = w;
    s.p_waic = pw;
    return s;
}

CoordSummary summarize_coordinate(const PosteriorDraws& draws, std::size_t coord) {
    const std::size_t n = draws.n_draws();
    std::vector<double> v(n);
    for (std::size_t k = 0; k < n; ++k) v[k] = draws.latent(static_cast<Eigen::Index>(k),
                                                            static_cast<Eigen::Index>(coord));
    CoordSummary s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    s.sd = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
    std::sort(v.begin(), v.end());
    auto quantile = [&](double q) {
        double pos = q * static_cast<double>(n - 1);
        std::size_t lo = static_cast<std::size_t>(pos);
        std::size_t hi = std::min(lo + 1, n - 1);
        double f = pos - static_cast<double>(lo);
        return (1.0 - f) * v[lo] + f * v[hi];
    };
    s.q025 = quantile(0.025);
    s.q975 = quantile(0.975);
    return s;
}

} // namespace coxmark
