#include "coxmark/spde.hpp"
#include "coxmark/errors.hpp"

#include <cmath>
#include <string>

namespace coxmark {

double PcPrior::rate_rho() const { return -std::log(alpha_rho) * rho0; }
double PcPrior::rate_sigma() const { return -std::log(alpha_sigma) / sigma0; }

SpdeParams to_spde(const InterpretableParams& p) {
    if (!(p.sigma > 0.0) || !(p.rho > 0.0) || !std::isfinite(p.sigma) || !std::isfinite(p.rho))
        throw invalid_domain_error("to_spde requires positive finite sigma and rho");
    double kappa = std::sqrt(8.0) / p.rho;
    double tau = 1.0 / (2.0 * p.sigma * kappa * std::sqrt(M_PI));
    return {tau, kappa};
}

InterpretableParams from_spde(const SpdeParams& p) {
    if (!(p.tau > 0.0) || !(p.kappa > 0.0) || !std::isfinite(p.tau) || !std::isfinite(p.kappa))
        throw invalid_domain_error("from_spde requires positive finite tau and kappa");
    double sigma = std::sqrt(1.0 / (4.0 * M_PI * p.kappa * p.kappa * p.tau * p.tau));
    double rho = std::sqrt(8.0) / p.kappa;
    return {sigma, rho};
}

SparsePrecision precision(const SpdeParams& p, const FemMatrices& fem) {
    const Eigen::Index n = fem.c_diag.size();
    Eigen::VectorXd c_inv = fem.c_diag.cwiseInverse();

    Eigen::SparseMatrix<double> c(n, n);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) trips.emplace_back(i, i, fem.c_diag[i]);
    c.setFromTriplets(trips.begin(), trips.end());

    Eigen::SparseMatrix<double> gcg = fem.g * c_inv.asDiagonal() * fem.g;
    double k2 = p.kappa * p.kappa;
    SparsePrecision out;
    out.Q = (p.tau * p.tau) * (k2 * k2 * c + 2.0 * k2 * fem.g + gcg);
    out.Q.makeCompressed();
    return out;
}

double pc_log_prior(const InterpretableParams& p, const PcPrior& prior) {
    if (!(p.sigma > 0.0) || !(p.rho > 0.0))
        throw invalid_domain_error("pc_log_prior requires positive sigma and rho");
    double r = prior.rate_rho();
    double s = prior.rate_sigma();
    return std::log(r) + std::log(s) - 2.0 * std::log(p.rho) - r / p.rho - s * p.sigma;
}

SparseChol::SparseChol(const Eigen::SparseMatrix<double>& q) {
    solver_.compute(q);
    if (solver_.info() != Eigen::Success)
        throw numerical_error("sparse Cholesky factorization failed");
    const auto& d = solver_.vectorD();
    double min_pivot = d.minCoeff();
    if (!(min_pivot > 0.0))
        throw numerical_error("precision matrix numerically degenerate, min pivot " +
                              std::to_string(min_pivot));
    log_det_ = d.array().log().sum();
}

Eigen::VectorXd SparseChol::solve(const Eigen::VectorXd& b) const { return solver_.solve(b); }

Eigen::VectorXd SparseChol::unwhiten(const Eigen::VectorXd& z) const {
    // Q = P^T L D L^T P  =>  x = P^T L^{-T} D^{-1/2} z has covariance Q^{-1}.
    Eigen::VectorXd y = solver_.vectorD().cwiseSqrt().cwiseInverse().asDiagonal() * z;
    y = solver_.matrixU().solve(y); // U = L^T
    return solver_.permutationPinv() * y;
}

Eigen::MatrixXd sample_gmrf(const SparsePrecision& q, std::size_t n, std::uint64_t seed) {
    SparseChol chol(q.Q);
    const Eigen::Index dim = q.Q.rows();
    Rng rng(seed);
    Eigen::MatrixXd draws(static_cast<Eigen::Index>(n), dim);
    Eigen::VectorXd z(dim);
    for (std::size_t k = 0; k < n; ++k) {
        for (Eigen::Index i = 0; i < dim; ++i) z[i] = rng.normal();
        draws.row(static_cast<Eigen::Index>(k)) = chol.unwhiten(z).transpose();
    }
    return draws;
}

} // namespace coxmark
