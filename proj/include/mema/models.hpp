#pragma once

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mema/corruption.hpp"
#include "mema/mcmc.hpp"
#include "mema/priors.hpp"
#include "mema/study_data.hpp"

namespace mema {

enum class ModelKind { UniMA, BiMA, UniBMEMA, BiBMEMA, MultiIPD, MultiMA };

enum class GammaPrior {
    Uniform01,       // gamma ~ Uniform(0, 1) for error-prone studies
    InvGammaOnPhi2,  // phi^2 ~ Inv-Gamma(zeta1, zeta2) on (0, lambda*^2), zeta ~ Exp(delta)
};

/// How the phi^2 prior is restricted to (0, lambda*^2).
enum class Truncation {
    Unnormalized,  // density set to zero outside the range
    Normalized,    // additionally divided by Pr(phi^2 < lambda*^2 | zeta)
};

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);
std::string to_string(GammaPrior prior);
GammaPrior parse_gamma_prior(const std::string& text);
std::string to_string(Truncation t);
Truncation parse_truncation(const std::string& text);

/// Priors for the hierarchical parameters. Defaults: wide Normals (variance
/// 100) for means, half-Cauchy(0, 2) for standard deviations, Uniform(-1, 1)
/// for the intercept/slope correlation.
struct PriorSet {
    PriorSpec theta = prior::Normal{0.0, 100.0};
    PriorSpec xi = prior::Normal{0.0, 100.0};
    PriorSpec tau = prior::HalfCauchy{0.0, 2.0};
    PriorSpec omega = prior::HalfCauchy{0.0, 2.0};
    PriorSpec rho = prior::Uniform{-1.0, 1.0};
    PriorSpec sigma = prior::HalfCauchy{0.0, 2.0};
    PriorSpec mu = prior::Normal{0.0, 100.0};
};

struct ModelSpec {
    ModelKind kind = ModelKind::UniMA;
    /// Gold-standard study ids. When unset, taken from the known_clean flags.
    std::optional<std::set<std::string>> k_prime_ids;
    std::optional<GammaPrior> gamma_prior;  // default: Uniform01 for uniBMEMA, InvGammaOnPhi2 otherwise
    double delta = 0.1;
    Truncation truncation = Truncation::Normalized;
    PriorSet priors;

    GammaPrior resolved_gamma_prior() const;
};

/// Throws DomainError on invalid settings.
void validate(const ModelSpec& spec);

/// Gold-standard flags per study for the given spec.
std::vector<bool> gold_standard_flags(const ModelSpec& spec, const std::vector<StudySummary>& studies);

std::unique_ptr<Target> build_uni_bayesma(const std::vector<StudySummary>& studies, const PriorSet& priors = {});
std::unique_ptr<Target> build_bi_bayesma(const std::vector<StudySummary>& studies, const PriorSet& priors = {});
std::unique_ptr<Target> build_uni_bmema(const std::vector<StudySummary>& studies, const ModelSpec& spec);
std::unique_ptr<Target> build_bi_bmema(const std::vector<StudySummary>& studies, const ModelSpec& spec);
/// k_prime_ids must be set explicitly for IPD input.
std::unique_ptr<Target> build_multi_ipd_bmema(const IpdDataset& data, const ModelSpec& spec);
/// Aggregate-data multivariate meta-analysis with plug-in covariances.
std::unique_ptr<Target> build_multi_bayesma(const std::vector<RegressionFit>& fits, const PriorSet& priors = {});

/// Dispatch on spec.kind for summary-level models.
std::unique_ptr<Target> build_model(const ModelSpec& spec, const std::vector<StudySummary>& studies);

}  // namespace mema
