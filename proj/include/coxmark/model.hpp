#pragma once

#include "coxmark/mesh.hpp"
#include "coxmark/spde.hpp"
#include "coxmark/surface.hpp"

#include <optional>
#include <string>
#include <vector>

namespace coxmark {

// Geo-referenced survey sample: one row per residential building with the
// aggregated unemployed count, building covariates, offset, inclusion pair.
struct MarkedSample {
    struct Building {
        long id = 0;
        Vec2 loc;
        long mark = 0;     // unemployed count, >= 0
        double nind = 0.0; // surveyed individuals in the building
        double edu = 0.0;  // median education level, 1..3 used as numeric
        double age = 0.0;  // mean age
        double iefp = 0.0; // registered-unemployed proportion
        double offset2 = 0.0; // log people per building
        double p_area = 1.0;  // first-stage inclusion probability
        double p_dwel = 1.0;  // dwelling-within-area inclusion probability
    };
    std::vector<Building> buildings;

    void validate() const; // marks >= 0, probabilities in (0,1]
};

// Spatial random-effect structure of the joint model. The three variants of
// the model-comparison table plus the field-free and points-only reductions
// needed to express every row of that table.
enum class LatentVariant { NONE, POINTS_ONLY_W, SHARED_W, SCALED_W, INDEPENDENT_W1_W2 };

LatentVariant variant_from_string(const std::string& s);
std::string variant_to_string(LatentVariant v);

// Hyperparameters explored on the grid: (log rho, log sigma) per field and,
// for SCALED_W only, the scale applied to the shared field in the mark model.
struct FieldHyper {
    double log_rho = 0.0;
    double log_sigma = 0.0;
};
struct HyperParams {
    std::vector<FieldHyper> fields;
    std::optional<double> field_scale; // SCALED_W only; may be negative
};

// Formula choices for one fit.
struct ModelSpec {
    LatentVariant variant = LatentVariant::SHARED_W;
    std::vector<std::string> mark_covariates; // subset of nind, edu, age, iefp
    bool use_offset1 = true;
    bool use_offset2 = true;
    double fixed_effect_variance = 1000.0;
    PcPrior pc_points;
    PcPrior pc_marks;
};

// Point-process pseudo-data: mesh nodes carry count 0 with their dual weight
// as exposure, observed buildings carry count 1 with exposure 0.
struct PointPseudoData {
    struct Row {
        Vec2 loc;
        double count = 0.0;
        double exposure = 0.0;
        double offset1 = 0.0;
        int node_idx[3] = {-1, -1, -1};
        double node_w[3] = {0.0, 0.0, 0.0};
        int nnz = 0;
    };
    std::vector<Row> rows;
    std::size_t n_dropped = 0; // sample locations outside the mesh
};

struct MarkData {
    struct Row {
        long building_id = 0;
        double y = 0.0;
        double offset2 = 0.0;
        std::vector<double> z; // covariate values, order of ModelSpec
        int node_idx[3] = {-1, -1, -1};
        double node_w[3] = {0.0, 0.0, 0.0};
        int nnz = 0;
    };
    std::vector<Row> rows;
};

// Assembled joint model. Latent vector layout: field blocks (n_nodes each)
// followed by the fixed effects; fixed_names gives their order.
struct JointModel {
    std::size_t n_nodes = 0;
    int n_fields = 0;
    LatentVariant variant = LatentVariant::SHARED_W;
    std::vector<std::string> fixed_names;
    double v0 = 1000.0;
    bool use_offset2 = true;

    PointPseudoData points;
    MarkData marks;

    // Synthetic Gaussian observations on the latent vector; calibration tests
    // use these to compare against closed-form Gaussian results.
    struct GaussRow {
        std::vector<std::pair<int, double>> coef;
        double obs = 0.0;
        double prec = 1.0;
    };
    std::vector<GaussRow> gauss_rows;

    FemMatrices fem;
    PcPrior pc_points;
    PcPrior pc_marks;

    std::size_t dim() const { return n_fields * n_nodes + fixed_names.size(); }
    std::size_t field_offset(int f) const { return static_cast<std::size_t>(f) * n_nodes; }
    std::size_t fixed_offset() const { return static_cast<std::size_t>(n_fields) * n_nodes; }
    int fixed_index(const std::string& name) const; // -1 when absent
    std::size_t hyper_dim() const;
    // Field block and scale the mark rows load, given the variant.
    std::pair<int, double> mark_field(const HyperParams& hyper) const;
};

PointPseudoData assemble_point_pseudodata(const Mesh& mesh, const QuadratureWeights& weights,
                                          const MarkedSample& sample,
                                          const Surface* offset1_surface);

MarkData assemble_mark_data(const MarkedSample& sample, const std::vector<std::string>& covariates,
                            const Mesh& mesh);

JointModel assemble_joint_model(const Mesh& mesh, const QuadratureWeights& weights,
                                const MarkedSample& sample, const Surface* offset1_surface,
                                const ModelSpec& spec);

double joint_loglik(const JointModel& model, const Eigen::VectorXd& latent,
                    const HyperParams& hyper);

struct LoglikDerivatives {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::SparseMatrix<double> neg_hessian;
};
LoglikDerivatives loglik_grad_hess(const JointModel& model, const Eigen::VectorXd& latent,
                                   const HyperParams& hyper);

// Per-row log densities in row order (point rows, mark rows, gauss rows);
// the WAIC computation consumes these.
std::vector<double> loglik_rows(const JointModel& model, const Eigen::VectorXd& latent,
                                const HyperParams& hyper);

} // namespace coxmark
