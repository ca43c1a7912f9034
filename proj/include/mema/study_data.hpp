#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mema {

/// One study's reported simple-linear-regression output.
///
/// The bivariate fields (intercept, its standard error and the residual
/// variance) are either all present or all absent. `phi` and `gamma` are
/// optional reference values for the measurement-error s.d. and attenuation
/// factor when they are known, e.g. for a deliberately corrupted dataset.
struct StudySummary {
    std::string study_id;
    int n = 0;
    double beta_hat = 0.0;
    double se_beta = 0.0;
    std::optional<double> alpha_hat;
    std::optional<double> se_alpha;
    std::optional<double> sigma2_hat;
    bool known_clean = false;
    std::optional<double> phi;
    std::optional<double> gamma;

    bool has_bivariate() const noexcept { return alpha_hat && se_alpha && sigma2_hat; }

    friend bool operator==(const StudySummary&, const StudySummary&) = default;
};

/// Throws DomainError if any StudySummary invariant is violated.
void validate(const StudySummary& s);

/// Exposure/outcome moments implied by a summary: residual s.d. sigma,
/// exposure s.d. lambda, exposure mean mu.
struct StudyMoments {
    double sigma = 0.0;
    double lambda = 0.0;
    double mu = 0.0;
};

/// Recovers (sigma, lambda, mu) from the reported standard errors. mu is the
/// nonnegative root. Throws MissingField without bivariate fields and
/// NegativeRadicand when the standard errors are mutually inconsistent.
StudyMoments recover_moments(const StudySummary& study);

/// Large-sample covariance of (alpha_hat, beta_hat) for a study of size n with
/// the given moments.
Eigen::Matrix2d sampling_covariance(const StudyMoments& m, int n);

/// Standard errors (se_alpha, se_beta) predicted by the moments.
std::pair<double, double> predicted_standard_errors(const StudyMoments& m, int n);

std::vector<StudySummary> load_summaries(const std::filesystem::path& path);
std::vector<StudySummary> parse_summaries(const std::string& text);
void save_summaries(const std::filesystem::path& path, const std::vector<StudySummary>& studies);
std::string format_summaries(const std::vector<StudySummary>& studies);

/// Individual-participant data for one study: outcomes and an n x Q
/// covariate matrix (no intercept column).
struct IpdStudy {
    std::string study_id;
    Eigen::VectorXd y;
    Eigen::MatrixXd x;

    int n() const noexcept { return static_cast<int>(y.size()); }
};

struct IpdDataset {
    int q = 0;
    std::vector<IpdStudy> studies;

    const IpdStudy* find(const std::string& id) const;
};

/// Long format `study_id,y,x1,...,xQ`; studies keep first-appearance order.
IpdDataset load_ipd(const std::filesystem::path& path);
IpdDataset parse_ipd(const std::string& text);
void save_ipd(const std::filesystem::path& path, const IpdDataset& data);
std::string format_ipd(const IpdDataset& data);

}  // namespace mema
