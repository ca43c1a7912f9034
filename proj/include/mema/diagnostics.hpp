#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mema/priors.hpp"
#include "mema/study_data.hpp"
#include "mema/summary.hpp"

namespace mema {

/// Prior-posterior overlap with both densities tabulated on a shared grid.
struct PpoReport {
    std::string parameter;
    double overlap = 0.0;  // percent
    std::vector<double> grid;
    std::vector<double> prior_density;
    std::vector<double> posterior_density;
};

/// Gaussian-kernel density estimate with Silverman's bandwidth.
class Kde {
public:
    explicit Kde(std::vector<double> draws);
    /// Reflects the kernels at finite bounds so no mass leaks outside [lo, hi].
    Kde(std::vector<double> draws, double lower_bound, double upper_bound);
    double bandwidth() const { return h_; }
    double lo() const { return sorted_.front(); }
    double hi() const { return sorted_.back(); }
    double operator()(double x) const;

private:
    double sum_near(double x) const;

    std::vector<double> sorted_;
    double h_ = 0.0;
    double lower_ = -std::numeric_limits<double>::infinity();
    double upper_ = std::numeric_limits<double>::infinity();
};

double silverman_bandwidth(std::span<const double> draws);

/// Overlap of an analytic prior density with a KDE of at least 1000 posterior
/// draws (InsufficientDraws otherwise). The grid has at least 512 points over
/// the union of the prior's central 99.99% and the draws' range, refined
/// where either density has its mass. When the prior's support is bounded
/// and holds every draw, the KDE is reflected at the bounds.
PpoReport ppo(const std::string& parameter, const PriorSpec& prior, std::span<const double> posterior_draws);

/// Same with the prior also given by draws (KDE of both).
PpoReport ppo_from_draws(const std::string& parameter, std::span<const double> prior_draws,
                         std::span<const double> posterior_draws);

/// Trapezoid rule on a sorted grid.
double trapezoid(std::span<const double> x, std::span<const double> y);

struct CorrelationTest {
    double correlation = 0.0;
    double p_value = 1.0;  // two-sided permutation p-value
    int permutations = 0;
};

double pearson(std::span<const double> x, std::span<const double> y);

/// Correlation between the slopes and the squared exposure s.d. of each study,
/// with a permutation p-value. Needs K >= 4 studies with bivariate fields;
/// DegenerateInput when either variable is constant.
CorrelationTest het_error_test(const std::vector<StudySummary>& studies, int permutations = 10000,
                               std::uint64_t seed = 1);

struct ForestRow {
    std::string study_id;
    double estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    bool clean = false;
};

struct ForestDiamond {
    std::string label;
    double median = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

struct ForestData {
    std::vector<ForestRow> rows;
    std::vector<ForestDiamond> diamonds;
};

/// Rows ordered by study id (numerically when every id is an integer), bars
/// at estimate +- 1.96 se, one diamond per labelled theta summary.
ForestData forest(const std::vector<StudySummary>& studies,
                  const std::vector<std::pair<std::string, ParameterSummary>>& fits);

std::string forest_csv(const ForestData& data);
/// Clean studies as filled squares, error-prone ones as empty squares.
std::string forest_svg(const ForestData& data);

}  // namespace mema
