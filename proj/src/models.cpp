#include "mema/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/LU>
#include <boost/math/special_functions/gamma.hpp>

#include "mema/error.hpp"
#include "model_util.hpp"

namespace mema {

using detail::log_normal;
using detail::Transform;

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::UniMA: return "uniMA";
        case ModelKind::BiMA: return "biMA";
        case ModelKind::UniBMEMA: return "uniBMEMA";
        case ModelKind::BiBMEMA: return "biBMEMA";
        case ModelKind::MultiIPD: return "multiIPD";
        case ModelKind::MultiMA: return "multiMA";
    }
    return "unknown";
}

ModelKind parse_model_kind(const std::string& text) {
    for (ModelKind k : {ModelKind::UniMA, ModelKind::BiMA, ModelKind::UniBMEMA, ModelKind::BiBMEMA,
                        ModelKind::MultiIPD, ModelKind::MultiMA}) {
        if (to_string(k) == text) return k;
    }
    throw Error(ErrorCode::SchemaError, "unknown model kind '" + text + "'");
}

std::string to_string(GammaPrior prior) {
    return prior == GammaPrior::Uniform01 ? "Uniform01" : "InvGammaOnPhi2";
}

GammaPrior parse_gamma_prior(const std::string& text) {
    if (text == "Uniform01") return GammaPrior::Uniform01;
    if (text == "InvGammaOnPhi2") return GammaPrior::InvGammaOnPhi2;
    throw Error(ErrorCode::SchemaError, "unknown gamma prior '" + text + "'");
}

std::string to_string(Truncation t) { return t == Truncation::Normalized ? "normalized" : "unnormalized"; }

Truncation parse_truncation(const std::string& text) {
    if (text == "normalized") return Truncation::Normalized;
    if (text == "unnormalized") return Truncation::Unnormalized;
    throw Error(ErrorCode::SchemaError, "unknown truncation '" + text + "'");
}

GammaPrior ModelSpec::resolved_gamma_prior() const {
    if (gamma_prior) return *gamma_prior;
    return kind == ModelKind::UniBMEMA ? GammaPrior::Uniform01 : GammaPrior::InvGammaOnPhi2;
}

void validate(const ModelSpec& spec) {
    if (!(spec.delta > 0.0) || !std::isfinite(spec.delta)) throw Error(ErrorCode::DomainError, "delta must be positive");
    for (const PriorSpec* p : {&spec.priors.theta, &spec.priors.xi, &spec.priors.tau, &spec.priors.omega,
                               &spec.priors.rho, &spec.priors.sigma, &spec.priors.mu}) {
        validate(*p);
        if (std::holds_alternative<prior::InvWishart>(*p)) {
            throw Error(ErrorCode::DomainError, "scalar parameters cannot take an inverse-Wishart prior");
        }
    }
    auto positive = [](const PriorSpec& p, const char* name) {
        if (support(p).lo < 0.0) throw Error(ErrorCode::DomainError, std::string(name) + " prior must be supported on (0, inf)");
    };
    positive(spec.priors.tau, "tau");
    positive(spec.priors.omega, "omega");
    positive(spec.priors.sigma, "sigma");
    const Support r = support(spec.priors.rho);
    if (r.lo < -1.0 || r.hi > 1.0) throw Error(ErrorCode::DomainError, "rho prior must be supported within [-1, 1]");
}

std::vector<bool> gold_standard_flags(const ModelSpec& spec, const std::vector<StudySummary>& studies) {
    std::vector<bool> gold(studies.size());
    if (!spec.k_prime_ids) {
        for (std::size_t k = 0; k < studies.size(); ++k) gold[k] = studies[k].known_clean;
        return gold;
    }
    for (const auto& id : *spec.k_prime_ids) {
        const bool found = std::any_of(studies.begin(), studies.end(), [&](const auto& s) { return s.study_id == id; });
        if (!found) throw Error(ErrorCode::DomainError, "k_prime_ids names unknown study '" + id + "'");
    }
    for (std::size_t k = 0; k < studies.size(); ++k) gold[k] = spec.k_prime_ids->contains(studies[k].study_id);
    return gold;
}

namespace {

const char* kPartialId =
    "no gold-standard studies (k' = 0): theta is only partially identified and the estimate is driven by the "
    "measurement-error prior";

void require_nonempty(const std::vector<StudySummary>& studies) {
    if (studies.empty()) throw Error(ErrorCode::EmptyInput, "no studies supplied");
    for (const auto& s : studies) validate(s);
}

bool is_normal(const PriorSpec& p) { return std::holds_alternative<prior::Normal>(p); }

double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Error-magnitude prior for one error-prone study, on the unconstrained
/// coordinate u. Uniform01: gamma = sigmoid(u). InvGammaOnPhi2: phi^2 =
/// L sigmoid(u) with L = lambda*^2, so gamma = 1 - phi^2 / L = sigmoid(-u).
struct ErrorPrior {
    GammaPrior kind = GammaPrior::Uniform01;
    Truncation truncation = Truncation::Unnormalized;

    double gamma(double u) const { return kind == GammaPrior::Uniform01 ? detail::sigmoid(u) : detail::sigmoid(-u); }
    double phi2(double u, double bound) const { return bound * detail::sigmoid(u); }

    /// log p(u | zeta) including the Jacobian.
    double log_prior(double u, double bound, double zeta1, double zeta2) const {
        const double jac = detail::log_sigmoid(u) + detail::log_sigmoid(-u);
        if (kind == GammaPrior::Uniform01) return jac;
        const double phi2 = bound * detail::sigmoid(u);
        double lp = detail::log_inv_gamma(phi2, zeta1, zeta2) + std::log(bound) + jac;
        if (truncation == Truncation::Normalized) {
            // Pr(phi^2 < L) = Pr(1/phi^2 > 1/L) with 1/phi^2 ~ Gamma(zeta1, rate zeta2).
            lp -= detail::log_gamma_q(zeta1, zeta2 / bound);
        }
        return lp;
    }
};

// ---------------------------------------------------------------------------
// Univariate hierarchical model: beta_hat_k ~ N(gamma_k beta_k, se_k^2),
// beta_k ~ N(theta, tau^2). gamma_k = 1 for gold-standard studies. With every
// study gold-standard this is exactly the univariate BayesMA.

class UniModel final : public Target {
public:
    UniModel(const std::vector<StudySummary>& studies, const std::vector<bool>& gold, const ModelSpec& spec,
             bool warn_partial)
        : priors_(spec.priors),
          theta_t_(Transform::for_prior(spec.priors.theta)),
          tau_t_(Transform::for_prior(spec.priors.tau)),
          delta_(spec.delta),
          warn_partial_(warn_partial) {
        err_.kind = spec.resolved_gamma_prior();
        err_.truncation = spec.truncation;
        k_ = studies.size();
        for (std::size_t k = 0; k < k_; ++k) {
            ids_.push_back(studies[k].study_id);
            y_.push_back(studies[k].beta_hat);
            s2_.push_back(studies[k].se_beta * studies[k].se_beta);
            if (!gold[k]) {
                unclean_.push_back(k);
                double bound = 1.0;
                if (err_.kind == GammaPrior::InvGammaOnPhi2) {
                    const StudyMoments m = recover_moments(studies[k]);
                    bound = m.lambda * m.lambda;
                }
                bound_.push_back(bound);
            }
        }
        beta_off_ = 2;
        u_off_ = beta_off_ + k_;
        has_zeta_ = err_.kind == GammaPrior::InvGammaOnPhi2 && !unclean_.empty();
        zeta_off_ = u_off_ + unclean_.size();
        dim_ = zeta_off_ + (has_zeta_ ? 2 : 0);

        theta_exact_ = is_normal(priors_.theta);
        blocks_.push_back({"theta", {0}, theta_exact_ ? BlockKind::Exact : BlockKind::RandomWalk, 0.1});
        roles_.push_back({Role::Theta, 0});
        blocks_.push_back({"tau", {1}, BlockKind::RandomWalk, 0.5});
        roles_.push_back({Role::Tau, 0});
        Block beta{"beta", {}, BlockKind::Exact};
        for (std::size_t k = 0; k < k_; ++k) beta.coords.push_back(beta_off_ + k);
        blocks_.push_back(beta);
        roles_.push_back({Role::Beta, 0});
        for (std::size_t j = 0; j < unclean_.size(); ++j) {
            const std::string name = (err_.kind == GammaPrior::Uniform01 ? "gamma[" : "phi2[") + ids_[unclean_[j]] + "]";
            blocks_.push_back({name, {u_off_ + j}, BlockKind::RandomWalk, 1.0});
            roles_.push_back({Role::Error, j});
        }
        if (has_zeta_) {
            blocks_.push_back({"zeta1", {zeta_off_}, BlockKind::RandomWalk, 0.5});
            roles_.push_back({Role::Zeta, 0});
            blocks_.push_back({"zeta2", {zeta_off_ + 1}, BlockKind::RandomWalk, 0.5});
            roles_.push_back({Role::Zeta, 1});
            blocks_.push_back({"zeta", {zeta_off_, zeta_off_ + 1}, BlockKind::RandomWalk, 0.5});
            roles_.push_back({Role::Zeta, 2});
        }

        names_ = {"theta", "tau"};
        for (const auto& id : ids_) names_.push_back("beta[" + id + "]");
        for (std::size_t j : unclean_) names_.push_back("gamma[" + ids_[j] + "]");
        if (has_zeta_) {
            for (std::size_t j : unclean_) names_.push_back("phi2[" + ids_[j] + "]");
            names_.push_back("zeta1");
            names_.push_back("zeta2");
        }
    }

    std::size_t dimension() const override { return dim_; }
    const std::vector<Block>& blocks() const override { return blocks_; }
    const std::vector<std::string>& output_names() const override { return names_; }

    double log_density(std::span<const double> z) const override {
        double lp = theta_prior(z) + tau_prior(z) + between(z) + zeta_prior(z);
        for (std::size_t k = 0; k < k_; ++k) lp += likelihood(z, k);
        for (std::size_t j = 0; j < unclean_.size(); ++j) lp += error_prior(z, j);
        return lp;
    }

    double log_density_block(std::size_t b, std::span<const double> z) const override {
        const auto [role, j] = roles_[b];
        switch (role) {
            case Role::Theta: return theta_prior(z) + between(z);
            case Role::Tau: return tau_prior(z) + between(z);
            case Role::Error: return likelihood(z, unclean_[j]) + error_prior(z, j);
            case Role::Zeta: {
                double lp = zeta_prior(z);
                for (std::size_t i = 0; i < unclean_.size(); ++i) lp += error_prior(z, i);
                return lp;
            }
            case Role::Beta: break;
        }
        return log_density(z);
    }

    void draw_exact(std::size_t b, std::span<double> z, Rng& rng) const override {
        const double theta = theta_t_.value(z[0]);
        const double tau2 = sq(tau_t_.value(z[1]));
        if (roles_[b].first == Role::Theta) {
            const auto& p = std::get<prior::Normal>(priors_.theta);
            double sum = 0.0;
            for (std::size_t k = 0; k < k_; ++k) sum += z[beta_off_ + k];
            const double prec = 1.0 / p.variance + static_cast<double>(k_) / tau2;
            const double mean = (p.mean / p.variance + sum / tau2) / prec;
            z[0] = rng.normal(mean, 1.0 / std::sqrt(prec));
            return;
        }
        const auto gammas = gamma_vector(z);
        for (std::size_t k = 0; k < k_; ++k) {
            const double g = gammas[k];
            const double prec = g * g / s2_[k] + 1.0 / tau2;
            const double mean = (g * y_[k] / s2_[k] + theta / tau2) / prec;
            z[beta_off_ + k] = rng.normal(mean, 1.0 / std::sqrt(prec));
        }
    }

    std::vector<double> initial_point(Rng& rng) const override {
        std::vector<double> z(dim_);
        const double ybar = std::accumulate(y_.begin(), y_.end(), 0.0) / static_cast<double>(k_);
        const double se_bar = std::sqrt(std::accumulate(s2_.begin(), s2_.end(), 0.0) / static_cast<double>(k_));
        const double spread = std::max(sd_of(y_), se_bar);
        const double theta = ybar + spread * rng.normal();
        z[0] = theta_t_.unconstrained(clamp_into(theta, support(priors_.theta)));
        z[1] = tau_t_.unconstrained(clamp_into(spread * (0.2 + rng.uniform()), support(priors_.tau)));
        for (std::size_t j = 0; j < unclean_.size(); ++j) {
            z[u_off_ + j] = err_.kind == GammaPrior::Uniform01 ? 0.5 + rng.normal() : -1.0 + rng.normal();
        }
        if (has_zeta_) {
            z[zeta_off_] = std::log(0.5 + 2.5 * rng.uniform());
            z[zeta_off_ + 1] = std::log(0.5 + 2.5 * rng.uniform());
        }
        const auto gammas = gamma_vector(z);
        for (std::size_t k = 0; k < k_; ++k) z[beta_off_ + k] = y_[k] / gammas[k] + std::sqrt(s2_[k]) * rng.normal();
        return z;
    }

    void outputs(std::span<const double> z, std::span<double> out) const override {
        std::size_t i = 0;
        out[i++] = theta_t_.value(z[0]);
        out[i++] = tau_t_.value(z[1]);
        for (std::size_t k = 0; k < k_; ++k) out[i++] = z[beta_off_ + k];
        for (std::size_t j = 0; j < unclean_.size(); ++j) out[i++] = err_.gamma(z[u_off_ + j]);
        if (has_zeta_) {
            for (std::size_t j = 0; j < unclean_.size(); ++j) out[i++] = err_.phi2(z[u_off_ + j], bound_[j]);
            out[i++] = std::exp(z[zeta_off_]);
            out[i++] = std::exp(z[zeta_off_ + 1]);
        }
    }

    std::vector<std::string> warnings() const override {
        if (warn_partial_ && unclean_.size() == k_) return {kPartialId};
        return {};
    }

private:
    enum class Role { Theta, Tau, Beta, Error, Zeta };

    static double sq(double x) { return x * x; }
    static double clamp_into(double v, const Support& s) {
        const double eps = 1e-6 * std::max(1.0, std::abs(v));
        if (std::isfinite(s.lo) && v <= s.lo) v = s.lo + eps;
        if (std::isfinite(s.hi) && v >= s.hi) v = s.hi - eps;
        return v;
    }

    std::vector<double> gamma_vector(std::span<const double> z) const {
        std::vector<double> g(k_, 1.0);
        for (std::size_t j = 0; j < unclean_.size(); ++j) g[unclean_[j]] = err_.gamma(z[u_off_ + j]);
        return g;
    }

    double theta_prior(std::span<const double> z) const {
        return detail::log_prior_transformed(priors_.theta, theta_t_, z[0]);
    }
    double tau_prior(std::span<const double> z) const { return detail::log_prior_transformed(priors_.tau, tau_t_, z[1]); }

    double between(std::span<const double> z) const {
        const double theta = theta_t_.value(z[0]);
        const double tau2 = sq(tau_t_.value(z[1]));
        double lp = 0.0;
        for (std::size_t k = 0; k < k_; ++k) lp += log_normal(z[beta_off_ + k], theta, tau2);
        return lp;
    }

    double likelihood(std::span<const double> z, std::size_t k) const {
        double g = 1.0;
        auto it = std::lower_bound(unclean_.begin(), unclean_.end(), k);
        if (it != unclean_.end() && *it == k) {
            g = err_.gamma(z[u_off_ + static_cast<std::size_t>(it - unclean_.begin())]);
        }
        return log_normal(y_[k], g * z[beta_off_ + k], s2_[k]);
    }

    double error_prior(std::span<const double> z, std::size_t j) const {
        const double z1 = has_zeta_ ? std::exp(z[zeta_off_]) : 0.0;
        const double z2 = has_zeta_ ? std::exp(z[zeta_off_ + 1]) : 0.0;
        return err_.log_prior(z[u_off_ + j], bound_[j], z1, z2);
    }

    double zeta_prior(std::span<const double> z) const {
        if (!has_zeta_) return 0.0;
        double lp = 0.0;
        for (std::size_t i = 0; i < 2; ++i) {
            const double v = std::exp(z[zeta_off_ + i]);
            lp += std::log(delta_) - delta_ * v + z[zeta_off_ + i];
        }
        return lp;
    }

    PriorSet priors_;
    Transform theta_t_, tau_t_;
    ErrorPrior err_;
    double delta_;
    bool warn_partial_;
    bool theta_exact_ = false;
    bool has_zeta_ = false;
    std::size_t k_ = 0, beta_off_ = 0, u_off_ = 0, zeta_off_ = 0, dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<double> y_, s2_;
    std::vector<std::size_t> unclean_;
    std::vector<double> bound_;
    std::vector<Block> blocks_;
    std::vector<std::pair<Role, std::size_t>> roles_;
    std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// Shared pieces of the bivariate models: (xi, theta, omega, tau, rho) on the
// first five coordinates.

struct BivariateHyper {
    PriorSet priors;
    Transform xi_t, theta_t, omega_t, tau_t, rho_t;

    explicit BivariateHyper(const PriorSet& p)
        : priors(p),
          xi_t(Transform::for_prior(p.xi)),
          theta_t(Transform::for_prior(p.theta)),
          omega_t(Transform::for_prior(p.omega)),
          tau_t(Transform::for_prior(p.tau)),
          rho_t(Transform::for_prior(p.rho)) {}

    Eigen::Vector2d centre(std::span<const double> z) const { return {xi_t.value(z[0]), theta_t.value(z[1])}; }

    Eigen::Matrix2d between(std::span<const double> z) const {
        const double om = omega_t.value(z[2]), ta = tau_t.value(z[3]), r = rho_t.value(z[4]);
        Eigen::Matrix2d b;
        b << om * om, r * om * ta, r * om * ta, ta * ta;
        return b;
    }

    double location_prior(std::span<const double> z) const {
        return detail::log_prior_transformed(priors.xi, xi_t, z[0]) +
               detail::log_prior_transformed(priors.theta, theta_t, z[1]);
    }
    double scale_prior(std::span<const double> z) const {
        return detail::log_prior_transformed(priors.omega, omega_t, z[2]) +
               detail::log_prior_transformed(priors.tau, tau_t, z[3]) +
               detail::log_prior_transformed(priors.rho, rho_t, z[4]);
    }
    bool exact_location() const { return is_normal(priors.xi) && is_normal(priors.theta); }

    /// Normal prior on (xi, theta) in canonical form.
    void prior_canonical(Eigen::Matrix2d& prec, Eigen::Vector2d& b) const {
        const auto& px = std::get<prior::Normal>(priors.xi);
        const auto& pt = std::get<prior::Normal>(priors.theta);
        prec = Eigen::Vector2d(1.0 / px.variance, 1.0 / pt.variance).asDiagonal();
        b = Eigen::Vector2d(px.mean / px.variance, pt.mean / pt.variance);
    }

    void add_blocks(std::vector<Block>& blocks) const {
        if (exact_location()) {
            blocks.push_back({"xi_theta", {0, 1}, BlockKind::Exact});
        } else {
            blocks.push_back({"xi", {0}, BlockKind::RandomWalk, 0.3});
            blocks.push_back({"theta", {1}, BlockKind::RandomWalk, 0.1});
        }
        blocks.push_back({"omega", {2}, BlockKind::RandomWalk, 0.5});
        blocks.push_back({"tau", {3}, BlockKind::RandomWalk, 0.5});
        blocks.push_back({"rho", {4}, BlockKind::RandomWalk, 1.0});
    }

    void init(std::span<double> z, const std::vector<double>& a, const std::vector<double>& bvals, Rng& rng) const {
        const double am = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
        const double bm = std::accumulate(bvals.begin(), bvals.end(), 0.0) / static_cast<double>(bvals.size());
        const double as = std::max(sd_of(a), 0.1 * std::abs(am) + 0.05);
        const double bs = std::max(sd_of(bvals), 0.1 * std::abs(bm) + 0.05);
        z[0] = xi_t.unconstrained(am + 0.5 * as * rng.normal());
        z[1] = theta_t.unconstrained(bm + 0.5 * bs * rng.normal());
        z[2] = omega_t.unconstrained(as * (0.2 + rng.uniform()));
        z[3] = tau_t.unconstrained(bs * (0.2 + rng.uniform()));
        const Support rs = support(priors.rho);
        const double lo = std::max(rs.lo, -1.0), hi = std::min(rs.hi, 1.0);
        z[4] = rho_t.unconstrained(lo + (hi - lo) * (0.25 + 0.5 * rng.uniform()));
    }

    void outputs(std::span<const double> z, std::span<double> out) const {
        out[0] = xi_t.value(z[0]);
        out[1] = theta_t.value(z[1]);
        out[2] = omega_t.value(z[2]);
        out[3] = tau_t.value(z[3]);
        out[4] = rho_t.value(z[4]);
    }
};

const std::vector<std::string> kBivariateNames = {"xi", "theta", "omega", "tau", "rho"};

// Bivariate model with the study-level (alpha_k, beta_k) integrated out:
//   (alpha_hat*, beta_hat*) ~ N(A_k (xi, theta), A_k B A_k' + Sigma*_k),
//   A_k = [[1, (1 - gamma_k) mu_k], [0, gamma_k]],
// with Sigma*_k from the moments recovered from the observed summary. With
// every study gold-standard (A_k = I) this is the marginal bivariate BayesMA.
class BiModel final : public Target {
public:
    BiModel(const std::vector<StudySummary>& studies, const std::vector<bool>& gold, const ModelSpec& spec,
            bool warn_partial)
        : hyper_(spec.priors), delta_(spec.delta), warn_partial_(warn_partial) {
        err_.kind = spec.resolved_gamma_prior();
        err_.truncation = spec.truncation;
        k_ = studies.size();
        for (std::size_t k = 0; k < k_; ++k) {
            const auto& s = studies[k];
            const StudyMoments m = recover_moments(s);
            ids_.push_back(s.study_id);
            y_.emplace_back(*s.alpha_hat, s.beta_hat);
            cov_.push_back(sampling_covariance(m, s.n));
            mu_.push_back(m.mu);
            alphas_.push_back(*s.alpha_hat);
            betas_.push_back(s.beta_hat);
            if (!gold[k]) {
                unclean_.push_back(k);
                bound_.push_back(err_.kind == GammaPrior::InvGammaOnPhi2 ? m.lambda * m.lambda : 1.0);
            }
        }
        u_off_ = 5;
        has_zeta_ = err_.kind == GammaPrior::InvGammaOnPhi2 && !unclean_.empty();
        zeta_off_ = u_off_ + unclean_.size();
        dim_ = zeta_off_ + (has_zeta_ ? 2 : 0);
        slot_.assign(k_, -1);
        for (std::size_t j = 0; j < unclean_.size(); ++j) slot_[unclean_[j]] = static_cast<long>(j);

        hyper_.add_blocks(blocks_);
        roles_.assign(blocks_.size(), {Role::Hyper, 0});
        for (std::size_t j = 0; j < unclean_.size(); ++j) {
            const std::string name = (err_.kind == GammaPrior::Uniform01 ? "gamma[" : "phi2[") + ids_[unclean_[j]] + "]";
            blocks_.push_back({name, {u_off_ + j}, BlockKind::RandomWalk, 1.0});
            roles_.push_back({Role::Error, j});
        }
        if (has_zeta_) {
            blocks_.push_back({"zeta1", {zeta_off_}, BlockKind::RandomWalk, 0.5});
            roles_.push_back({Role::Zeta, 0});
            blocks_.push_back({"zeta2", {zeta_off_ + 1}, BlockKind::RandomWalk, 0.5});
            roles_.push_back({Role::Zeta, 1});
            blocks_.push_back({"zeta", {zeta_off_, zeta_off_ + 1}, BlockKind::RandomWalk, 0.5});
            roles_.push_back({Role::Zeta, 2});
        }

        names_ = kBivariateNames;
        for (std::size_t j : unclean_) names_.push_back("gamma[" + ids_[j] + "]");
        if (has_zeta_) {
            for (std::size_t j : unclean_) names_.push_back("phi2[" + ids_[j] + "]");
            names_.push_back("zeta1");
            names_.push_back("zeta2");
        }
    }

    std::size_t dimension() const override { return dim_; }
    const std::vector<Block>& blocks() const override { return blocks_; }
    const std::vector<std::string>& output_names() const override { return names_; }

    double log_density(std::span<const double> z) const override {
        double lp = hyper_.location_prior(z) + hyper_.scale_prior(z) + zeta_prior(z);
        if (!std::isfinite(lp)) return lp;
        const Eigen::Vector2d c = hyper_.centre(z);
        const Eigen::Matrix2d b = hyper_.between(z);
        for (std::size_t k = 0; k < k_; ++k) lp += likelihood(z, k, c, b);
        for (std::size_t j = 0; j < unclean_.size(); ++j) lp += error_prior(z, j);
        return lp;
    }

    double log_density_block(std::size_t b, std::span<const double> z) const override {
        const auto [role, j] = roles_[b];
        switch (role) {
            case Role::Error: {
                const double lp = error_prior(z, j);
                if (!std::isfinite(lp)) return lp;
                return lp + likelihood(z, unclean_[j], hyper_.centre(z), hyper_.between(z));
            }
            case Role::Zeta: {
                double lp = zeta_prior(z);
                for (std::size_t i = 0; i < unclean_.size(); ++i) lp += error_prior(z, i);
                return lp;
            }
            case Role::Hyper: break;
        }
        const double lp = hyper_.location_prior(z) + hyper_.scale_prior(z);
        if (!std::isfinite(lp)) return lp;
        const Eigen::Vector2d c = hyper_.centre(z);
        const Eigen::Matrix2d bw = hyper_.between(z);
        double acc = lp;
        for (std::size_t k = 0; k < k_; ++k) acc += likelihood(z, k, c, bw);
        return acc;
    }

    void draw_exact(std::size_t, std::span<double> z, Rng& rng) const override {
        Eigen::Matrix2d prec;
        Eigen::Vector2d rhs;
        hyper_.prior_canonical(prec, rhs);
        const Eigen::Matrix2d b = hyper_.between(z);
        for (std::size_t k = 0; k < k_; ++k) {
            const Eigen::Matrix2d a = design(z, k);
            const Eigen::Matrix2d vinv = (a * b * a.transpose() + cov_[k]).inverse();
            const Eigen::Matrix2d at_v = a.transpose() * vinv;
            prec += at_v * a;
            rhs += at_v * y_[k];
        }
        const Eigen::VectorXd d = mvn_draw_canonical(rng, prec, rhs);
        z[0] = d(0);
        z[1] = d(1);
    }

    std::vector<double> initial_point(Rng& rng) const override {
        std::vector<double> z(dim_);
        for (std::size_t j = 0; j < unclean_.size(); ++j) {
            z[u_off_ + j] = err_.kind == GammaPrior::Uniform01 ? 0.5 + rng.normal() : -1.0 + rng.normal();
        }
        if (has_zeta_) {
            z[zeta_off_] = std::log(0.5 + 2.5 * rng.uniform());
            z[zeta_off_ + 1] = std::log(0.5 + 2.5 * rng.uniform());
        }
        std::vector<double> a(k_), bv(k_);
        for (std::size_t k = 0; k < k_; ++k) {
            const double g = gamma_of(z, k);
            bv[k] = betas_[k] / g;
            a[k] = alphas_[k] - (1.0 - g) * bv[k] * mu_[k];
        }
        hyper_.init(z, a, bv, rng);
        return z;
    }

    void outputs(std::span<const double> z, std::span<double> out) const override {
        hyper_.outputs(z, out);
        std::size_t i = 5;
        for (std::size_t j = 0; j < unclean_.size(); ++j) out[i++] = err_.gamma(z[u_off_ + j]);
        if (has_zeta_) {
            for (std::size_t j = 0; j < unclean_.size(); ++j) out[i++] = err_.phi2(z[u_off_ + j], bound_[j]);
            out[i++] = std::exp(z[zeta_off_]);
            out[i++] = std::exp(z[zeta_off_ + 1]);
        }
    }

    std::vector<std::string> warnings() const override {
        if (warn_partial_ && unclean_.size() == k_) return {kPartialId};
        return {};
    }

private:
    enum class Role { Hyper, Error, Zeta };

    double gamma_of(std::span<const double> z, std::size_t k) const {
        const long s = slot_[k];
        return s < 0 ? 1.0 : err_.gamma(z[u_off_ + static_cast<std::size_t>(s)]);
    }

    Eigen::Matrix2d design(std::span<const double> z, std::size_t k) const {
        const double g = gamma_of(z, k);
        Eigen::Matrix2d a;
        a << 1.0, (1.0 - g) * mu_[k], 0.0, g;
        return a;
    }

    double likelihood(std::span<const double> z, std::size_t k, const Eigen::Vector2d& c,
                      const Eigen::Matrix2d& b) const {
        const Eigen::Matrix2d a = design(z, k);
        return detail::log_mvn2(y_[k], a * c, a * b * a.transpose() + cov_[k]);
    }

    double error_prior(std::span<const double> z, std::size_t j) const {
        const double z1 = has_zeta_ ? std::exp(z[zeta_off_]) : 0.0;
        const double z2 = has_zeta_ ? std::exp(z[zeta_off_ + 1]) : 0.0;
        return err_.log_prior(z[u_off_ + j], bound_[j], z1, z2);
    }

    double zeta_prior(std::span<const double> z) const {
        if (!has_zeta_) return 0.0;
        double lp = 0.0;
        for (std::size_t i = 0; i < 2; ++i) {
            const double v = std::exp(z[zeta_off_ + i]);
            lp += std::log(delta_) - delta_ * v + z[zeta_off_ + i];
        }
        return lp;
    }

    BivariateHyper hyper_;
    ErrorPrior err_;
    double delta_;
    bool warn_partial_;
    bool has_zeta_ = false;
    std::size_t k_ = 0, u_off_ = 0, zeta_off_ = 0, dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<Eigen::Vector2d> y_;
    std::vector<Eigen::Matrix2d> cov_;
    std::vector<double> mu_, alphas_, betas_;
    std::vector<std::size_t> unclean_;
    std::vector<long> slot_;
    std::vector<double> bound_;
    std::vector<Block> blocks_;
    std::vector<std::pair<Role, std::size_t>> roles_;
    std::vector<std::string> names_;
};

void require_bivariate(const std::vector<StudySummary>& studies) {
    for (const auto& s : studies) {
        if (!s.has_bivariate()) {
            throw Error(ErrorCode::MissingField, "study '" + s.study_id + "' lacks alpha_hat, se_alpha or sigma2_hat");
        }
    }
}

}  // namespace

std::unique_ptr<Target> build_uni_bayesma(const std::vector<StudySummary>& studies, const PriorSet& priors) {
    require_nonempty(studies);
    ModelSpec spec;
    spec.kind = ModelKind::UniMA;
    spec.priors = priors;
    validate(spec);
    return std::make_unique<UniModel>(studies, std::vector<bool>(studies.size(), true), spec, false);
}

std::unique_ptr<Target> build_uni_bmema(const std::vector<StudySummary>& studies, const ModelSpec& spec) {
    require_nonempty(studies);
    validate(spec);
    const auto gold = gold_standard_flags(spec, studies);
    if (spec.resolved_gamma_prior() == GammaPrior::InvGammaOnPhi2) {
        for (std::size_t k = 0; k < studies.size(); ++k) {
            if (!gold[k] && !studies[k].has_bivariate()) {
                throw Error(ErrorCode::MissingField, "study '" + studies[k].study_id +
                                                         "' needs bivariate fields for the inverse-gamma error prior");
            }
        }
    }
    return std::make_unique<UniModel>(studies, gold, spec, true);
}

std::unique_ptr<Target> build_bi_bayesma(const std::vector<StudySummary>& studies, const PriorSet& priors) {
    require_nonempty(studies);
    require_bivariate(studies);
    ModelSpec spec;
    spec.kind = ModelKind::BiMA;
    spec.priors = priors;
    validate(spec);
    return std::make_unique<BiModel>(studies, std::vector<bool>(studies.size(), true), spec, false);
}

std::unique_ptr<Target> build_bi_bmema(const std::vector<StudySummary>& studies, const ModelSpec& spec) {
    require_nonempty(studies);
    require_bivariate(studies);
    validate(spec);
    return std::make_unique<BiModel>(studies, gold_standard_flags(spec, studies), spec, true);
}

std::unique_ptr<Target> build_model(const ModelSpec& spec, const std::vector<StudySummary>& studies) {
    switch (spec.kind) {
        case ModelKind::UniMA: return build_uni_bayesma(studies, spec.priors);
        case ModelKind::BiMA: return build_bi_bayesma(studies, spec.priors);
        case ModelKind::UniBMEMA: return build_uni_bmema(studies, spec);
        case ModelKind::BiBMEMA: return build_bi_bmema(studies, spec);
        case ModelKind::MultiIPD:
        case ModelKind::MultiMA: break;
    }
    throw Error(ErrorCode::DomainError, "model '" + to_string(spec.kind) + "' needs individual-participant data");
}

}  // namespace mema
