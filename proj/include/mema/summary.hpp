#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mema {

/// Retained draws, one (draws x parameters) matrix per chain.
struct Draws {
    std::vector<std::string> names;
    std::vector<Eigen::MatrixXd> chains;

    std::size_t parameter_index(const std::string& name) const;
    std::size_t draws_per_chain() const { return chains.empty() ? 0 : static_cast<std::size_t>(chains.front().rows()); }
    std::size_t total_draws() const { return chains.size() * draws_per_chain(); }
    /// All chains concatenated for one parameter.
    std::vector<double> pooled(const std::string& name) const;
    std::vector<double> pooled(std::size_t index) const;
    std::vector<std::vector<double>> per_chain(std::size_t index) const;
};

struct ParameterSummary {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double median = 0.0;
    double q025 = 0.0;
    double q975 = 0.0;
    double ess = 0.0;
    double rhat = 1.0;
};

struct PosteriorSummary {
    std::vector<ParameterSummary> parameters;
    Draws draws;
    /// Post-burn-in acceptance rate of each sampler block, per chain.
    std::vector<std::string> block_names;
    std::vector<std::vector<double>> acceptance;
    std::vector<std::string> warnings;

    const ParameterSummary& at(const std::string& name) const;
    bool has(const std::string& name) const;
};

/// Per-parameter summaries. Requires at least 2 chains with at least 100
/// draws each (InsufficientDraws otherwise).
PosteriorSummary summarize(Draws draws);

/// Linear-interpolation (type 7) quantile of unsorted values.
double quantile(std::vector<double> values, double p);
double quantile_sorted(std::span<const double> sorted, double p);

/// Split R-hat over equal-length chains.
double split_rhat(const std::vector<std::vector<double>>& chains);

/// Multi-chain effective sample size with Geyer's initial positive sequence.
double effective_sample_size(const std::vector<std::vector<double>>& chains);

/// Monte Carlo standard error of the posterior mean and of a quantile.
double mcse_mean(const std::vector<std::vector<double>>& chains);
double mcse_quantile(const std::vector<std::vector<double>>& chains, double p);

}  // namespace mema
