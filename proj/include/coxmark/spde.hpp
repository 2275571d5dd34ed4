#pragma once

#include "coxmark/mesh.hpp"
#include "coxmark/rng.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace coxmark {

// Raw SPDE parameters of the Matern nu=1 field.
struct SpdeParams {
    double tau;
    double kappa; // 1/km
};

// Interpretable parameterization: marginal standard deviation and range (km).
struct InterpretableParams {
    double sigma;
    double rho;
};

// Joint penalized-complexity prior on (rho, sigma), specified through tail
// probabilities at the base points rho0 and sigma0.
struct PcPrior {
    double rho0 = 400.0;
    double alpha_rho = 0.5;
    double sigma0 = 1.0;
    double alpha_sigma = 0.5;

    double rate_rho() const;   // R = -log(alpha_rho) * rho0
    double rate_sigma() const; // S = -log(alpha_sigma) / sigma0
};

struct SparsePrecision {
    Eigen::SparseMatrix<double> Q;
};

SpdeParams to_spde(const InterpretableParams& p);
InterpretableParams from_spde(const SpdeParams& p);

// Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G), lumped C.
SparsePrecision precision(const SpdeParams& p, const FemMatrices& fem);

double pc_log_prior(const InterpretableParams& p, const PcPrior& prior);

// Draws w ~ N(0, Q^{-1}) via sparse LDLT with a fill-reducing permutation.
// Rows are draws; deterministic per seed.
Eigen::MatrixXd sample_gmrf(const SparsePrecision& q, std::size_t n, std::uint64_t seed);

// Factorization helper shared with the inference engine. Throws
// numerical_error (reporting the minimum pivot) if Q is not positive definite.
class SparseChol {
public:
    explicit SparseChol(const Eigen::SparseMatrix<double>& q);
    double log_det() const { return log_det_; }
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
    // x = mode-free zero-mean draw: P^T L^{-T} D^{-1/2} z with z ~ N(0, I).
    Eigen::VectorXd unwhiten(const Eigen::VectorXd& z) const;

private:
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
    double log_det_ = 0.0;
};

} // namespace coxmark
