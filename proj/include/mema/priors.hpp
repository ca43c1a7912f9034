#pragma once

#include <limits>
#include <string>
#include <variant>

#include <Eigen/Core>

#include "mema/random.hpp"

namespace mema {

namespace prior {
struct Normal {
    double mean = 0.0;
    double variance = 1.0;
};
struct HalfCauchy {
    double location = 0.0;
    double scale = 1.0;
};
struct Uniform {
    double lo = 0.0;
    double hi = 1.0;
};
struct Exponential {
    double rate = 1.0;
};
struct InvGamma {
    double shape = 1.0;
    double scale = 1.0;
};
/// Mean scale / (df - p - 1).
struct InvWishart {
    Eigen::MatrixXd scale = Eigen::MatrixXd::Identity(1, 1);
    double df = 1.0;
};
}  // namespace prior

using PriorSpec =
    std::variant<prior::Normal, prior::HalfCauchy, prior::Uniform, prior::Exponential, prior::InvGamma, prior::InvWishart>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Throws DomainError for invalid hyperparameters.
void validate(const PriorSpec& prior);

/// Normalized log density; -inf outside the support. InvWishart priors are
/// evaluated as 1 x 1 matrices.
double log_density(const PriorSpec& prior, double value);
double log_density(const prior::InvWishart& prior, const Eigen::MatrixXd& value);

/// Multivariate log-gamma function Gamma_p(a).
double log_multigamma(double a, int p);

double draw(const PriorSpec& prior, Rng& rng);

/// Support of a scalar prior, used to choose the unconstrained transform.
struct Support {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
};
Support support(const PriorSpec& prior);

std::string describe(const PriorSpec& prior);

}  // namespace mema
