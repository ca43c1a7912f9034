#include "mema/bias_algebra.hpp"

#include <cmath>
#include <numeric>

#include "mema/error.hpp"

namespace mema {
namespace {

void require_nonempty(std::span<const double> v) {
    if (v.empty()) throw Error(ErrorCode::EmptyInput, "need at least one study");
}

void require_gammas(std::span<const double> gammas) {
    require_nonempty(gammas);
    for (double g : gammas) {
        if (!(g > 0.0 && g <= 1.0)) throw Error(ErrorCode::DomainError, "attenuation factors must lie in (0, 1]");
    }
}

}  // namespace

double attenuation_factor(double lambda, double phi) {
    if (!(lambda > 0.0)) throw Error(ErrorCode::DomainError, "lambda must be positive");
    if (!(phi >= 0.0)) throw Error(ErrorCode::DomainError, "phi must be nonnegative");
    const double r = phi / lambda;
    return 1.0 / (1.0 + r * r);
}

AttenuatedMoments attenuated_sampling_moments(const StudyMoments& m, double alpha, double beta, double gamma, int n) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(ErrorCode::DomainError, "gamma must lie in (0, 1]");
    if (n < 3) throw Error(ErrorCode::DomainError, "n must be at least 3");
    const double l2 = m.lambda * m.lambda;
    AttenuatedMoments out;
    out.lambda2_star = l2 / gamma;  // lambda^2 + phi^2
    out.sigma2_star = m.sigma * m.sigma + (1.0 - gamma) * beta * beta * l2;
    out.mean << alpha + (1.0 - gamma) * beta * m.mu, gamma * beta;
    const double base = out.sigma2_star / (out.lambda2_star * n);
    out.cov(0, 0) = (out.lambda2_star + m.mu * m.mu) * base;
    out.cov(0, 1) = out.cov(1, 0) = -m.mu * base;
    out.cov(1, 1) = base;
    return out;
}

double sample_mean(std::span<const double> v) {
    require_nonempty(v);
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v) {
    require_nonempty(v);
    if (v.size() < 2) throw Error(ErrorCode::SingleStudyVariance, "variance needs at least two studies");
    const double m = sample_mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / static_cast<double>(v.size() - 1);
}

double naive_theta(std::span<const double> gammas, double theta) {
    require_gammas(gammas);
    return sample_mean(gammas) * theta;
}

double naive_tau2(std::span<const double> gammas, double theta, double tau) {
    require_gammas(gammas);
    if (!(tau >= 0.0)) throw Error(ErrorCode::DomainError, "tau must be nonnegative");
    double e_g2 = 0.0;
    for (double g : gammas) e_g2 += g * g;
    e_g2 /= static_cast<double>(gammas.size());
    const double var_g = gammas.size() > 1 ? sample_variance(gammas) : 0.0;
    return e_g2 * tau * tau + var_g * theta * theta;
}

double naive_tau2_first_form(std::span<const double> gammas, double theta, double tau) {
    require_gammas(gammas);
    if (!(tau >= 0.0)) throw Error(ErrorCode::DomainError, "tau must be nonnegative");
    const double e_g = sample_mean(gammas);
    const double var_g = gammas.size() > 1 ? sample_variance(gammas) : 0.0;
    return e_g * e_g * tau * tau + var_g * (tau * tau + theta * theta);
}

double naive_tau2_population(std::span<const double> gammas, double theta, double tau, bool first_form) {
    require_gammas(gammas);
    const double k = static_cast<double>(gammas.size());
    double e_g = 0.0, e_g2 = 0.0;
    for (double g : gammas) {
        e_g += g;
        e_g2 += g * g;
    }
    e_g /= k;
    e_g2 /= k;
    const double var_g = e_g2 - e_g * e_g;
    if (first_form) return e_g * e_g * tau * tau + var_g * (tau * tau + theta * theta);
    return e_g2 * tau * tau + var_g * theta * theta;
}

NaiveIntercepts naive_xi_omega(std::span<const StudyCoefficients> studies, std::span<const double> gammas) {
    if (studies.size() != gammas.size()) {
        throw Error(ErrorCode::LengthMismatch, "coefficient and gamma lists differ in length");
    }
    if (studies.empty()) throw Error(ErrorCode::EmptyInput, "need at least one study");
    require_gammas(gammas);
    if (studies.size() < 2) throw Error(ErrorCode::SingleStudyVariance, "omega*^2 needs at least two studies");
    std::vector<double> alphas, shifted;
    std::vector<double> shifts;
    for (std::size_t k = 0; k < studies.size(); ++k) {
        const double shift = (1.0 - gammas[k]) * studies[k].beta * studies[k].mu;
        alphas.push_back(studies[k].alpha);
        shifts.push_back(shift);
        shifted.push_back(studies[k].alpha + shift);
    }
    NaiveIntercepts out;
    out.xi_star = sample_mean(alphas) + sample_mean(shifts);
    out.omega2_star = sample_variance(shifted);
    return out;
}

}  // namespace mema
