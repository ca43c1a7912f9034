#include "mema/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "mema/csv.hpp"
#include "mema/error.hpp"
#include "mema/random.hpp"

namespace mema {

CorruptionPlan CorruptionPlan::univariate(const std::map<std::string, double>& phi_sd, std::uint64_t seed) {
    CorruptionPlan plan;
    plan.seed = seed;
    for (const auto& [id, sd] : phi_sd) {
        if (!(sd >= 0.0)) throw Error(ErrorCode::DomainError, "phi for study '" + id + "' must be nonnegative");
        plan.phi[id] = Eigen::MatrixXd::Constant(1, 1, sd * sd);
    }
    return plan;
}

double CorruptionPlan::phi_sd(const std::string& study_id) const {
    auto it = phi.find(study_id);
    if (it == phi.end()) return 0.0;
    if (it->second.rows() != 1) throw Error(ErrorCode::DimensionMismatch, "plan is not univariate");
    return std::sqrt(it->second(0, 0));
}

void validate(const CorruptionPlan& plan) {
    for (const auto& [id, m] : plan.phi) {
        if (m.rows() != m.cols() || m.rows() == 0) {
            throw Error(ErrorCode::DimensionMismatch, "Phi for study '" + id + "' is not square");
        }
        if (!m.allFinite()) throw Error(ErrorCode::DomainError, "Phi for study '" + id + "' has non-finite entries");
        const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
        if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
            throw Error(ErrorCode::NotPSD, "Phi for study '" + id + "' is not symmetric");
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
        if (eig.eigenvalues().minCoeff() < -1e-12 * scale) {
            throw Error(ErrorCode::NotPSD, "Phi for study '" + id + "' is not positive semidefinite");
        }
    }
}

CorruptionPlan parse_plan(const std::string& text, std::uint64_t seed, const std::string& source) {
    const csv::Table t = csv::parse(text, source);
    const std::size_t id_col = t.require_column("study_id");
    CorruptionPlan plan;
    plan.seed = seed;
    if (auto col = t.column("phi")) {
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const double sd = csv::to_double(t, r, *col);
            if (!(sd >= 0.0)) {
                throw Error(ErrorCode::ParseError, csv::location(t, r, *col) + ": phi must be nonnegative");
            }
            plan.phi[t.rows[r][id_col]] = Eigen::MatrixXd::Constant(1, 1, sd * sd);
        }
        return plan;
    }
    // Row-major phi_ij columns.
    int q = 0;
    while (t.column("phi_" + std::to_string(q + 1) + std::to_string(q + 1))) ++q;
    if (q == 0) throw Error(ErrorCode::SchemaError, source + ": expected a 'phi' or 'phi_11' column");
    std::vector<std::size_t> cols;
    for (int i = 1; i <= q; ++i) {
        for (int j = 1; j <= q; ++j) cols.push_back(t.require_column("phi_" + std::to_string(i) + std::to_string(j)));
    }
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        Eigen::MatrixXd m(q, q);
        for (int i = 0; i < q; ++i) {
            for (int j = 0; j < q; ++j) m(i, j) = csv::to_double(t, r, cols[static_cast<std::size_t>(i * q + j)]);
        }
        plan.phi[t.rows[r][id_col]] = m;
    }
    validate(plan);
    return plan;
}

CorruptionPlan load_plan(const std::filesystem::path& path, std::uint64_t seed) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_plan(text.str(), seed, path.string());
}

std::string format_plan(const CorruptionPlan& plan) {
    std::ostringstream out;
    const bool univariate =
        std::all_of(plan.phi.begin(), plan.phi.end(), [](const auto& kv) { return kv.second.rows() == 1; });
    if (univariate) {
        out << "study_id,phi\n";
        for (const auto& [id, m] : plan.phi) out << id << ',' << csv::format_double(std::sqrt(m(0, 0))) << '\n';
        return out.str();
    }
    const Eigen::Index q = plan.phi.begin()->second.rows();
    out << "study_id";
    for (Eigen::Index i = 1; i <= q; ++i) {
        for (Eigen::Index j = 1; j <= q; ++j) out << ",phi_" << i << j;
    }
    out << '\n';
    for (const auto& [id, m] : plan.phi) {
        if (m.rows() != q) throw Error(ErrorCode::DimensionMismatch, "plan mixes covariance dimensions");
        out << id;
        for (Eigen::Index i = 0; i < q; ++i) {
            for (Eigen::Index j = 0; j < q; ++j) out << ',' << csv::format_double(m(i, j));
        }
        out << '\n';
    }
    return out.str();
}

IpdDataset corrupt_ipd(const IpdDataset& data, const CorruptionPlan& plan) {
    validate(plan);
    IpdDataset out = data;
    for (auto& study : out.studies) {
        auto it = plan.phi.find(study.study_id);
        if (it == plan.phi.end()) {
            throw Error(ErrorCode::MissingField, "corruption plan has no entry for study '" + study.study_id + "'");
        }
        const Eigen::MatrixXd& phi = it->second;
        if (phi.rows() != data.q) {
            throw Error(ErrorCode::DimensionMismatch, "Phi for study '" + study.study_id + "' is " +
                                                          std::to_string(phi.rows()) + "x" +
                                                          std::to_string(phi.cols()) + " but Q = " +
                                                          std::to_string(data.q));
        }
        if (phi.isZero(0.0)) continue;
        Rng rng = Rng::for_key(plan.seed, study.study_id);
        const Eigen::VectorXd zero = Eigen::VectorXd::Zero(data.q);
        for (Eigen::Index j = 0; j < study.x.rows(); ++j) {
            study.x.row(j) += mvn_draw(rng, zero, phi).transpose();
        }
    }
    return out;
}

RegressionFit fit_regression(const IpdStudy& study) {
    const Eigen::Index n = study.x.rows();
    const Eigen::Index p = study.x.cols() + 1;
    if (n < p + 1) {
        throw Error(ErrorCode::DomainError, "study '" + study.study_id + "' has n = " + std::to_string(n) +
                                                " but needs at least " + std::to_string(p + 1) + " rows");
    }
    Eigen::MatrixXd design(n, p);
    design.col(0).setOnes();
    design.rightCols(p - 1) = study.x;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) throw Error(ErrorCode::SingularDesign, "design matrix of study '" + study.study_id + "' is rank-deficient");

    RegressionFit fit;
    fit.study_id = study.study_id;
    fit.n = static_cast<long>(n);
    fit.coef = qr.solve(study.y);
    const Eigen::VectorXd resid = study.y - design * fit.coef;
    fit.sigma2 = resid.squaredNorm() / static_cast<double>(n - p);
    const Eigen::MatrixXd xtx = design.transpose() * design;
    fit.cov = xtx.ldlt().solve(Eigen::MatrixXd::Identity(p, p)) * fit.sigma2;
    return fit;
}

std::vector<RegressionFit> refit_regressions(const IpdDataset& data) {
    std::vector<RegressionFit> out;
    out.reserve(data.studies.size());
    for (const auto& s : data.studies) out.push_back(fit_regression(s));
    return out;
}

std::vector<StudySummary> refit_summaries(const IpdDataset& data, const std::set<std::string>& clean_ids) {
    if (data.q != 1) throw Error(ErrorCode::DimensionMismatch, "summaries need Q = 1, got Q = " + std::to_string(data.q));
    std::vector<StudySummary> out;
    for (const auto& s : data.studies) {
        const RegressionFit f = fit_regression(s);
        StudySummary sum;
        sum.study_id = s.study_id;
        sum.n = s.n();
        sum.alpha_hat = f.coef(0);
        sum.beta_hat = f.coef(1);
        sum.se_alpha = std::sqrt(f.cov(0, 0));
        sum.se_beta = std::sqrt(f.cov(1, 1));
        sum.sigma2_hat = f.sigma2;
        sum.known_clean = clean_ids.contains(s.study_id);
        out.push_back(std::move(sum));
    }
    return out;
}

SimulatedMeta simulate_meta(const SimulationTruth& truth, const std::vector<long>& sizes,
                            const std::vector<StudyMoments>& moments, const CorruptionPlan& plan, std::uint64_t seed) {
    if (!(truth.tau >= 0.0) || !(truth.omega >= 0.0)) {
        throw Error(ErrorCode::DomainError, "between-study standard deviations must be nonnegative");
    }
    if (!(std::abs(truth.rho) <= 1.0)) throw Error(ErrorCode::DomainError, "correlation must lie in [-1, 1]");
    if (sizes.size() != moments.size()) throw Error(ErrorCode::LengthMismatch, "sizes and moments differ in length");

    Eigen::Matrix2d between;
    between << truth.omega * truth.omega, truth.rho * truth.omega * truth.tau, truth.rho * truth.omega * truth.tau,
        truth.tau * truth.tau;
    const Eigen::VectorXd centre = Eigen::Vector2d(truth.xi, truth.theta);

    SimulatedMeta out;
    out.clean.q = 1;
    CorruptionPlan full = plan;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        if (sizes[k] < 3) throw Error(ErrorCode::DomainError, "study sizes must be at least 3");
        const std::string id = std::to_string(k + 1);
        Rng rng = Rng::for_key(seed, "simulate:" + id);
        const Eigen::Vector2d ab = mvn_draw(rng, centre, between);
        out.coefficients.push_back(ab);
        IpdStudy s;
        s.study_id = id;
        s.y.resize(sizes[k]);
        s.x.resize(sizes[k], 1);
        for (long j = 0; j < sizes[k]; ++j) {
            const double x = rng.normal(moments[k].mu, moments[k].lambda);
            s.x(j, 0) = x;
            s.y(j) = rng.normal(ab(0) + ab(1) * x, moments[k].sigma);
        }
        out.clean.studies.push_back(std::move(s));
        if (!full.phi.contains(id)) full.phi[id] = Eigen::MatrixXd::Zero(1, 1);
    }
    out.corrupted = corrupt_ipd(out.clean, full);
    return out;
}

SimulatedMulti simulate_multi(const Eigen::VectorXd& theta, const Eigen::VectorXd& tau,
                              const std::vector<MultiStudyDesign>& designs, const CorruptionPlan& plan,
                              std::uint64_t seed) {
    const Eigen::Index q = theta.size() - 1;
    if (q < 1 || tau.size() != theta.size()) throw Error(ErrorCode::DimensionMismatch, "theta and tau must have length Q + 1 >= 2");
    if ((tau.array() < 0.0).any()) throw Error(ErrorCode::DomainError, "tau must be nonnegative");
    const Eigen::MatrixXd t_cov = tau.array().square().matrix().asDiagonal();

    SimulatedMulti out;
    out.clean.q = static_cast<int>(q);
    CorruptionPlan full = plan;
    for (std::size_t k = 0; k < designs.size(); ++k) {
        const auto& d = designs[k];
        if (d.mu.size() != q || d.lambda.rows() != q || d.lambda.cols() != q) {
            throw Error(ErrorCode::DimensionMismatch, "study design does not match Q");
        }
        if (d.n < q + 2) throw Error(ErrorCode::DomainError, "study sizes must be at least Q + 2");
        const std::string id = std::to_string(k + 1);
        Rng rng = Rng::for_key(seed, "simulate:" + id);
        const Eigen::VectorXd b = mvn_draw(rng, theta, t_cov);
        out.coefficients.push_back(b);
        IpdStudy s;
        s.study_id = id;
        s.y.resize(d.n);
        s.x.resize(d.n, q);
        for (long j = 0; j < d.n; ++j) {
            const Eigen::VectorXd x = mvn_draw(rng, d.mu, d.lambda);
            s.x.row(j) = x.transpose();
            s.y(j) = rng.normal(b(0) + b.tail(q).dot(x), d.sigma);
        }
        out.clean.studies.push_back(std::move(s));
        if (!full.phi.contains(id)) full.phi[id] = Eigen::MatrixXd::Zero(q, q);
    }
    out.corrupted = corrupt_ipd(out.clean, full);
    return out;
}

}  // namespace mema
