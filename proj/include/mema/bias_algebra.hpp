#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "mema/study_data.hpp"

namespace mema {

/// gamma = (1 + phi^2 / lambda^2)^{-1}. DomainError unless lambda > 0 and phi >= 0.
double attenuation_factor(double lambda, double phi);

/// Mean and covariance of the error-prone estimates (alpha_hat*, beta_hat*).
struct AttenuatedMoments {
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
    double sigma2_star = 0.0;
    double lambda2_star = 0.0;
};

/// Sampling law of (alpha_hat*, beta_hat*) for a study with true moments
/// `moments`, true coefficients (alpha, beta) and attenuation gamma in (0, 1].
AttenuatedMoments attenuated_sampling_moments(const StudyMoments& moments, double alpha, double beta, double gamma,
                                              int n);

// Plug-in cross-study moments. Variances use the K - 1 divisor.
double sample_mean(std::span<const double> v);
double sample_variance(std::span<const double> v);

/// theta* = mean(gamma) * theta.
double naive_theta(std::span<const double> gammas, double theta);

/// tau*^2 = E(gamma^2) tau^2 + Var(gamma) theta^2.
double naive_tau2(std::span<const double> gammas, double theta, double tau);

/// tau*^2 = E(gamma)^2 tau^2 + Var(gamma) (tau^2 + theta^2); the first form.
double naive_tau2_first_form(std::span<const double> gammas, double theta, double tau);

/// Both forms with population (divide-by-K) moments, where they coincide.
double naive_tau2_population(std::span<const double> gammas, double theta, double tau, bool first_form);

struct StudyCoefficients {
    double alpha = 0.0;
    double beta = 0.0;
    double mu = 0.0;
};

struct NaiveIntercepts {
    double xi_star = 0.0;
    double omega2_star = 0.0;
};

/// xi* = mean(alpha) + mean((1 - gamma) beta mu); omega*^2 = Var(alpha + (1 - gamma) beta mu).
NaiveIntercepts naive_xi_omega(std::span<const StudyCoefficients> studies, std::span<const double> gammas);

}  // namespace mema
