#pragma once

#include "coxmark/model.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace coxmark {

// Gaussian approximation of the latent posterior at one hyperparameter
// configuration: Newton mode and the precision (prior + negative likelihood
// Hessian) at that mode.
struct GaussianApprox {
    Eigen::VectorXd mode;
    Eigen::SparseMatrix<double> precision;
    double log_det_half = 0.0; // 0.5 * logdet(precision)
    bool converged = false;
    int iterations = 0;

    double loglik_at_mode = 0.0;
    double prior_quad_at_mode = 0.0; // mode' Q_prior mode
    double prior_log_det = 0.0;      // logdet(Q_prior)
};

// Axis-aligned exploration lattice over the hyperparameter vector
// (log rho, log sigma per field, then the mark-field scale when present).
struct HyperGrid {
    std::vector<double> center;
    std::vector<double> step;
    int n_steps = 3;     // half-width; 2*n_steps+1 points per axis
    int max_ascent = 60; // coordinate-ascent moves to locate the grid center
    int n_workers = 1;
};

struct HyperPosterior {
    struct Point {
        HyperParams hyper;
        double log_post = 0.0; // unnormalized
        double weight = 0.0;
        Eigen::VectorXd mode;  // inner-mode cache reused by the sampler
        bool ok = false;
        int iterations = 0;
    };
    std::vector<Point> points;
    HyperGrid grid;
    std::size_t n_failed = 0;
};

struct PosteriorDraws {
    Eigen::MatrixXd latent; // n_draws x model.dim()
    std::vector<int> hyper_index;
    std::vector<HyperParams> support;
    std::vector<double> support_weights;
    std::uint64_t seed = 0;

    std::size_t n_draws() const { return static_cast<std::size_t>(latent.rows()); }
    const HyperParams& hyper_of(std::size_t k) const { return support[hyper_index[k]]; }
};

struct ModelScore {
    double dic = 0.0;
    double p_dic = 0.0;
    double waic = 0.0;
    double p_waic = 0.0;
};

// Newton maximization of the latent log-posterior for fixed hyperparameters.
// Converges when gradient norm < 1e-6 * (1 + |mode|). Throws
// nonconvergence_error (carrying the last iterate) after 100 iterations or a
// failed 30-halving line search.
GaussianApprox inner_mode(const JointModel& model, const HyperParams& hyper,
                          const Eigen::VectorXd* init = nullptr);

// Laplace log marginal of the data for fixed hyperparameters, plus the
// hyperprior terms, i.e. the unnormalized log posterior over hyperparameters.
double log_marginal_hyper(const JointModel& model, const HyperParams& hyper);
double log_marginal_hyper(const JointModel& model, const HyperParams& hyper,
                          const GaussianApprox& approx);

HyperPosterior explore_hyper(const JointModel& model, const HyperGrid& grid);

PosteriorDraws sample_posterior(const JointModel& model, const HyperPosterior& hp,
                                std::size_t n = 1000, std::uint64_t seed = 1);

std::pair<double, double> dic(const JointModel& model, const PosteriorDraws& draws);
std::pair<double, double> waic(const JointModel& model, const PosteriorDraws& draws);
ModelScore model_score(const JointModel& model, const PosteriorDraws& draws);

// DIC arithmetic in one place: (dic, p_dic) from the posterior mean deviance
// and the plug-in deviance.
std::pair<double, double> dic_combine(double mean_deviance, double plugin_deviance);

// Posterior summary of one latent coordinate from draws.
struct CoordSummary {
    double mean = 0.0, sd = 0.0, q025 = 0.0, q975 = 0.0;
};
CoordSummary summarize_coordinate(const PosteriorDraws& draws, std::size_t coord);

// Axis-vector encoding of HyperParams used by the exploration lattice.
HyperParams hyper_from_axes(const JointModel& model, const std::vector<double>& axes);
std::vector<double> hyper_to_axes(const JointModel& model, const HyperParams& hyper);

} // namespace coxmark
