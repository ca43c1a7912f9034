#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mema/study_data.hpp"

namespace mema {

/// Per-study measurement-error covariance Phi (Q x Q). A univariate plan
/// stores phi^2 as a 1 x 1 matrix.
struct CorruptionPlan {
    std::map<std::string, Eigen::MatrixXd> phi;
    std::uint64_t seed = 0;

    static CorruptionPlan univariate(const std::map<std::string, double>& phi_sd, std::uint64_t seed);
    /// Study-level error s.d. for a Q = 1 plan.
    double phi_sd(const std::string& study_id) const;
};

/// Throws NotPSD for asymmetric or indefinite Phi, DomainError for NaNs.
void validate(const CorruptionPlan& plan);

/// CSV with header `study_id,phi` or `study_id,phi_11,phi_12,...` (row-major).
CorruptionPlan parse_plan(const std::string& text, std::uint64_t seed, const std::string& source = "<string>");
CorruptionPlan load_plan(const std::filesystem::path& path, std::uint64_t seed);
std::string format_plan(const CorruptionPlan& plan);

/// Adds independent N(0, Phi^[k]) noise to every covariate row. Noise for a
/// study is drawn from the substream keyed by (plan.seed, study_id).
IpdDataset corrupt_ipd(const IpdDataset& data, const CorruptionPlan& plan);

/// OLS fit of y on [1, X] for one study.
struct RegressionFit {
    std::string study_id;
    long n = 0;
    Eigen::VectorXd coef;  // intercept first
    Eigen::MatrixXd cov;   // (X'X)^-1 sigma2
    double sigma2 = 0.0;   // residual variance, divisor n - Q - 1
};

RegressionFit fit_regression(const IpdStudy& study);
std::vector<RegressionFit> refit_regressions(const IpdDataset& data);

/// Simple-regression summaries (Q must be 1). Studies in clean_ids are
/// flagged known_clean.
std::vector<StudySummary> refit_summaries(const IpdDataset& data, const std::set<std::string>& clean_ids = {});

struct SimulationTruth {
    double xi = 0.0;
    double theta = 0.0;
    double omega = 0.0;
    double tau = 0.0;
    double rho = 0.0;
};

struct SimulatedMeta {
    IpdDataset clean;
    IpdDataset corrupted;
    std::vector<Eigen::Vector2d> coefficients;  // drawn (alpha, beta) per study
};

/// Generates K = sizes.size() studies with ids "1".."K": (alpha, beta) from
/// the between-study bivariate Normal, X ~ N(mu, lambda^2), Y | X ~
/// N(alpha + beta X, sigma^2), then applies the plan (which may omit
/// studies; those are left clean).
SimulatedMeta simulate_meta(const SimulationTruth& truth, const std::vector<long>& sizes,
                            const std::vector<StudyMoments>& moments, const CorruptionPlan& plan, std::uint64_t seed);

/// Multivariate analogue: beta^[k] ~ MVN(theta, diag(tau^2)), X rows ~
/// MVN(mu^[k], Lambda^[k]), Y ~ N([1 X] beta, sigma^2).
struct MultiStudyDesign {
    long n = 0;
    Eigen::VectorXd mu;
    Eigen::MatrixXd lambda;
    double sigma = 1.0;
};

struct SimulatedMulti {
    IpdDataset clean;
    IpdDataset corrupted;
    std::vector<Eigen::VectorXd> coefficients;
};

SimulatedMulti simulate_multi(const Eigen::VectorXd& theta, const Eigen::VectorXd& tau,
                              const std::vector<MultiStudyDesign>& designs, const CorruptionPlan& plan,
                              std::uint64_t seed);

}  // namespace mema
