#include "coxmark/model.hpp"
#include "coxmark/errors.hpp"

#include <cmath>
#include <string>

namespace coxmark {

void MarkedSample::validate() const {
    for (const auto& b : buildings) {
        if (b.mark < 0)
            throw invalid_domain_error("building " + std::to_string(b.id) + " has negative mark");
        if (!(b.p_area > 0.0 && b.p_area <= 1.0) || !(b.p_dwel > 0.0 && b.p_dwel <= 1.0))
            throw invalid_domain_error("building " + std::to_string(b.id) +
                                       " has inclusion probability outside (0,1]");
    }
}

LatentVariant variant_from_string(const std::string& s) {
    if (s == "none") return LatentVariant::NONE;
    if (s == "points_only") return LatentVariant::POINTS_ONLY_W;
    if (s == "shared") return LatentVariant::SHARED_W;
    if (s == "scaled") return LatentVariant::SCALED_W;
    if (s == "independent") return LatentVariant::INDEPENDENT_W1_W2;
    throw io_error("unknown latent variant '" + s + "'");
}

std::string variant_to_string(LatentVariant v) {
    switch (v) {
        case LatentVariant::NONE: return "none";
        case LatentVariant::POINTS_ONLY_W: return "points_only";
        case LatentVariant::SHARED_W: return "shared";
        case LatentVariant::SCALED_W: return "scaled";
        case LatentVariant::INDEPENDENT_W1_W2: return "independent";
    }
    return "?";
}

int JointModel::fixed_index(const std::string& name) const {
    for (std::size_t i = 0; i < fixed_names.size(); ++i)
        if (fixed_names[i] == name) return static_cast<int>(fixed_offset() + i);
    return -1;
}

std::size_t JointModel::hyper_dim() const {
    return 2 * static_cast<std::size_t>(n_fields) +
           (variant == LatentVariant::SCALED_W ? 1 : 0);
}

std::pair<int, double> JointModel::mark_field(const HyperParams& hyper) const {
    switch (variant) {
        case LatentVariant::NONE:
        case LatentVariant::POINTS_ONLY_W:
            return {-1, 0.0};
        case LatentVariant::SHARED_W:
            return {0, 1.0};
        case LatentVariant::SCALED_W:
            if (!hyper.field_scale)
                throw invalid_domain_error("SCALED_W requires the field-scale hyperparameter");
            return {0, *hyper.field_scale};
        case LatentVariant::INDEPENDENT_W1_W2:
            return {1, 1.0};
    }
    return {-1, 0.0};
}

namespace {

double covariate_value(const MarkedSample::Building& b, const std::string& name) {
    if (name == "nind") return b.nind;
    if (name == "edu") return b.edu;
    if (name == "age") return b.age;
    if (name == "iefp") return b.iefp;
    throw io_error("unknown mark covariate '" + name + "'");
}

} // namespace

PointPseudoData assemble_point_pseudodata(const Mesh& mesh, const QuadratureWeights& weights,
                                          const MarkedSample& sample,
                                          const Surface* offset1_surface) {
    if (sample.buildings.empty())
        throw invalid_domain_error("assemble_point_pseudodata: empty sample");
    if (weights.beta.size() != mesh.nodes.size())
        throw assembly_error("quadrature weight count does not match mesh nodes");

    PointPseudoData out;
    out.rows.reserve(mesh.nodes.size() + sample.buildings.size());
    auto offset1 = [&](Vec2 p) { return offset1_surface ? offset1_surface->value_at(p) : 0.0; };

    for (std::size_t i = 0; i < mesh.nodes.size(); ++i) {
        PointPseudoData::Row r;
        r.loc = mesh.nodes[i];
        r.count = 0.0;
        r.exposure = weights.beta[i];
        r.offset1 = offset1(r.loc);
        r.node_idx[0] = static_cast<int>(i);
        r.node_w[0] = 1.0;
        r.nnz = 1;
        out.rows.push_back(r);
    }

    TriangleLocator locator(mesh);
    for (const auto& b : sample.buildings) {
        std::array<double, 3> bary{};
        int t = locator.locate(b.loc, bary);
        if (t < 0) {
            ++out.n_dropped;
            continue;
        }
        PointPseudoData::Row r;
        r.loc = b.loc;
        r.count = 1.0;
        r.exposure = 0.0;
        r.offset1 = offset1(b.loc);
        const auto& tr = mesh.triangles[t];
        for (int k = 0; k < 3; ++k) {
            r.node_idx[k] = tr[k];
            r.node_w[k] = bary[k];
        }
        r.nnz = 3;
        out.rows.push_back(r);
    }
    return out;
}

MarkData assemble_mark_data(const MarkedSample& sample, const std::vector<std::string>& covariates,
                            const Mesh& mesh) {
    if (sample.buildings.empty()) throw invalid_domain_error("assemble_mark_data: empty sample");
    MarkData out;
    out.rows.reserve(sample.buildings.size());
    TriangleLocator locator(mesh);
    std::string missing;
    for (const auto& b : sample.buildings) {
        std::array<double, 3> bary{};
        int t = locator.locate(b.loc, bary);
        if (t < 0) continue; // dropped consistently with the point rows
        MarkData::Row r;
        r.building_id = b.id;
        r.y = static_cast<double>(b.mark);
        r.offset2 = b.offset2;
        for (const auto& name : covariates) {
            double v = covariate_value(b, name);
            if (!std::isfinite(v)) missing += (missing.empty() ? "" : ",") + std::to_string(b.id);
            r.z.push_back(v);
        }
        const auto& tr = mesh.triangles[t];
        for (int k = 0; k < 3; ++k) {
            r.node_idx[k] = tr[k];
            r.node_w[k] = bary[k];
        }
        r.nnz = 3;
        out.rows.push_back(r);
    }
    if (!missing.empty())
        throw assembly_error("missing covariate values for building ids: " + missing);
    return out;
}

JointModel assemble_joint_model(const Mesh& mesh, const QuadratureWeights& weights,
                                const MarkedSample& sample, const Surface* offset1_surface,
                                const ModelSpec& spec) {
    sample.validate();
    JointModel m;
    m.variant = spec.variant;
    m.n_nodes = mesh.nodes.size();
    switch (spec.variant) {
        case LatentVariant::NONE: m.n_fields = 0; break;
        case LatentVariant::INDEPENDENT_W1_W2: m.n_fields = 2; break;
        default: m.n_fields = 1; break;
    }
    m.fixed_names.push_back("alpha1");
    m.fixed_names.push_back("alpha2");
    for (const auto& c : spec.mark_covariates) m.fixed_names.push_back(c);
    m.v0 = spec.fixed_effect_variance;
    if (!(m.v0 > 0.0)) throw invalid_domain_error("fixed-effect prior variance must be positive");

    m.points = assemble_point_pseudodata(mesh, weights, sample,
                                         spec.use_offset1 ? offset1_surface : nullptr);
    m.marks = assemble_mark_data(sample, spec.mark_covariates, mesh);
    m.use_offset2 = spec.use_offset2;
    if (!spec.use_offset2)
        for (auto& r : m.marks.rows) r.offset2 = 0.0;

    m.fem = fem_matrices(mesh);
    m.pc_points = spec.pc_points;
    m.pc_marks = spec.pc_marks;
    return m;
}

namespace {

// Row coefficient vector in the latent layout; at most 3 field entries plus
// the fixed-effect entries.
struct RowCoef {
    static constexpr int kCap = 24;
    int idx[kCap];
    double w[kCap];
    int n = 0;
    void add(int i, double v) {
        if (n >= kCap) throw assembly_error("likelihood row exceeds coefficient capacity");
        idx[n] = i;
        w[n] = v;
        ++n;
    }
};

inline double row_eta(const RowCoef& c, const Eigen::VectorXd& latent, double offset) {
    double eta = offset;
    for (int k = 0; k < c.n; ++k) eta += c.w[k] * latent[c.idx[k]];
    return eta;
}

template <typename RowFn>
void for_each_row(const JointModel& model, const HyperParams& hyper, RowFn&& fn) {
    const int alpha1 = model.fixed_index("alpha1");
    const int alpha2 = model.fixed_index("alpha2");
    const int point_field = model.n_fields >= 1 ? 0 : -1;
    const auto [mark_field, mark_scale] = model.mark_field(hyper);

    for (std::size_t i = 0; i < model.points.rows.size(); ++i) {
        const auto& r = model.points.rows[i];
        RowCoef c;
        if (point_field >= 0)
            for (int k = 0; k < r.nnz; ++k)
                c.add(static_cast<int>(model.field_offset(point_field)) + r.node_idx[k],
                      r.node_w[k]);
        c.add(alpha1, 1.0);
        fn(0, i, c, r.offset1);
    }
    for (std::size_t i = 0; i < model.marks.rows.size(); ++i) {
        const auto& r = model.marks.rows[i];
        RowCoef c;
        if (mark_field >= 0 && mark_scale != 0.0)
            for (int k = 0; k < r.nnz; ++k)
                c.add(static_cast<int>(model.field_offset(mark_field)) + r.node_idx[k],
                      mark_scale * r.node_w[k]);
        c.add(alpha2, 1.0);
        for (std::size_t j = 0; j < r.z.size(); ++j)
            c.add(static_cast<int>(model.fixed_offset() + 2 + j), r.z[j]);
        fn(1, i, c, r.offset2);
    }
    for (std::size_t i = 0; i < model.gauss_rows.size(); ++i) {
        const auto& r = model.gauss_rows[i];
        RowCoef c;
        for (const auto& [idx, w] : r.coef) c.add(idx, w);
        fn(2, i, c, 0.0);
    }
}

void check_dim(const JointModel& model, const Eigen::VectorXd& latent) {
    if (static_cast<std::size_t>(latent.size()) != model.dim())
        throw invalid_domain_error("latent vector has dimension " +
                                   std::to_string(latent.size()) + ", model expects " +
                                   std::to_string(model.dim()));
}

constexpr double kHalfLog2Pi = 0.9189385332046727; // 0.5*log(2*pi)

} // namespace

double joint_loglik(const JointModel& model, const Eigen::VectorXd& latent,
                    const HyperParams& hyper) {
    check_dim(model, latent);
    double value = 0.0;
    for_each_row(model, hyper, [&](int family, std::size_t i, const RowCoef& c, double offset) {
        double eta = row_eta(c, latent, offset);
        if (!std::isfinite(eta))
            throw numerical_error("non-finite linear predictor at row " + std::to_string(i) +
                                  " (family " + std::to_string(family) + ")");
        if (family == 0) {
            const auto& r = model.points.rows[i];
            value += r.count * eta - r.exposure * std::exp(eta);
        } else if (family == 1) {
            const auto& r = model.marks.rows[i];
            value += r.y * eta - std::exp(eta) - std::lgamma(r.y + 1.0);
        } else {
            const auto& r = model.gauss_rows[i];
            double resid = r.obs - eta;
            value += 0.5 * std::log(r.prec) - kHalfLog2Pi - 0.5 * r.prec * resid * resid;
        }
    });
    return value;
}

LoglikDerivatives loglik_grad_hess(const JointModel& model, const Eigen::VectorXd& latent,
                                   const HyperParams& hyper) {
    check_dim(model, latent);
    LoglikDerivatives out;
    const Eigen::Index d = latent.size();
    out.gradient = Eigen::VectorXd::Zero(d);
    std::vector<Eigen::Triplet<double>> trips;
    double value = 0.0;

    for_each_row(model, hyper, [&](int family, std::size_t i, const RowCoef& c, double offset) {
        double eta = row_eta(c, latent, offset);
        if (!std::isfinite(eta))
            throw numerical_error("non-finite linear predictor at row " + std::to_string(i) +
                                  " (family " + std::to_string(family) + ")");
        double resid = 0.0, curv = 0.0;
        if (family == 0) {
            const auto& r = model.points.rows[i];
            double lam = std::exp(eta);
            value += r.count * eta - r.exposure * lam;
            resid = r.count - r.exposure * lam;
            curv = r.exposure * lam;
        } else if (family == 1) {
            const auto& r = model.marks.rows[i];
            double lam = std::exp(eta);
            value += r.y * eta - lam - std::lgamma(r.y + 1.0);
            resid = r.y - lam;
            curv = lam;
        } else {
            const auto& r = model.gauss_rows[i];
            double e = r.obs - eta;
            value += 0.5 * std::log(r.prec) - kHalfLog2Pi - 0.5 * r.prec * e * e;
            resid = r.prec * e;
            curv = r.prec;
        }
        for (int a = 0; a < c.n; ++a) {
            out.gradient[c.idx[a]] += resid * c.w[a];
            if (curv != 0.0)
                for (int b = 0; b < c.n; ++b)
                    trips.emplace_back(c.idx[a], c.idx[b], curv * c.w[a] * c.w[b]);
        }
    });

    out.value = value;
    out.neg_hessian.resize(d, d);
    out.neg_hessian.setFromTriplets(trips.begin(), trips.end());
    return out;
}

std::vector<double> loglik_rows(const JointModel& model, const Eigen::VectorXd& latent,
                                const HyperParams& hyper) {
    check_dim(model, latent);
    std::vector<double> rows;
    rows.reserve(model.points.rows.size() + model.marks.rows.size() + model.gauss_rows.size());
    for_each_row(model, hyper, [&](int family, std::size_t i, const RowCoef& c, double offset) {
        double eta = row_eta(c, latent, offset);
        if (family == 0) {
            const auto& r = model.points.rows[i];
            rows.push_back(r.count * eta - r.exposure * std::exp(eta));
        } else if (family == 1) {
            const auto& r = model.marks.rows[i];
            rows.push_back(r.y * eta - std::exp(eta) - std::lgamma(r.y + 1.0));
        } else {
            const auto& r = model.gauss_rows[i];
            double e = r.obs - eta;
            rows.push_back(0.5 * std::log(r.prec) - kHalfLog2Pi - 0.5 * r.prec * e * e);
        }
    });
    return rows;
}

} // namespace coxmark
