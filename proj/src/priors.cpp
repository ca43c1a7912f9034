#include "mema/priors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>

#include "mema/error.hpp"

namespace mema {
namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr double kLogPi = 1.1447298858494002;

}  // namespace

void validate(const PriorSpec& p) {
    std::visit(overloaded{
                   [](const prior::Normal& d) {
                       if (!(d.variance > 0.0)) throw Error(ErrorCode::DomainError, "Normal variance must be positive");
                   },
                   [](const prior::HalfCauchy& d) {
                       if (!(d.scale > 0.0)) throw Error(ErrorCode::DomainError, "half-Cauchy scale must be positive");
                   },
                   [](const prior::Uniform& d) {
                       if (!(d.lo < d.hi)) throw Error(ErrorCode::DomainError, "Uniform requires lo < hi");
                   },
                   [](const prior::Exponential& d) {
                       if (!(d.rate > 0.0)) throw Error(ErrorCode::DomainError, "Exponential rate must be positive");
                   },
                   [](const prior::InvGamma& d) {
                       if (!(d.shape > 0.0 && d.scale > 0.0)) {
                           throw Error(ErrorCode::DomainError, "inverse-gamma shape and scale must be positive");
                       }
                   },
                   [](const prior::InvWishart& d) {
                       const auto q = d.scale.rows();
                       if (q == 0 || d.scale.cols() != q) throw Error(ErrorCode::DimensionMismatch, "Inv-Wishart scale must be square");
                       if (!(d.df > static_cast<double>(q) - 1.0)) {
                           throw Error(ErrorCode::DomainError, "Inv-Wishart df must exceed dimension - 1");
                       }
                       if (Eigen::LLT<Eigen::MatrixXd>(d.scale).info() != Eigen::Success) {
                           throw Error(ErrorCode::NotPSD, "Inv-Wishart scale must be positive definite");
                       }
                   },
               },
               p);
}

double log_multigamma(double a, int p) {
    double out = 0.25 * p * (p - 1) * kLogPi;
    for (int j = 0; j < p; ++j) out += std::lgamma(a - 0.5 * j);
    return out;
}

double log_density(const prior::InvWishart& d, const Eigen::MatrixXd& x) {
    const auto q = d.scale.rows();
    if (x.rows() != q || x.cols() != q) throw Error(ErrorCode::DimensionMismatch, "Inv-Wishart argument has wrong shape");
    Eigen::LLT<Eigen::MatrixXd> lx(x);
    if (lx.info() != Eigen::Success) return kNegInf;
    Eigen::LLT<Eigen::MatrixXd> ls(d.scale);
    const double logdet_x = 2.0 * lx.matrixLLT().diagonal().array().log().sum();
    const double logdet_s = 2.0 * ls.matrixLLT().diagonal().array().log().sum();
    const double trace = (d.scale * lx.solve(Eigen::MatrixXd::Identity(q, q))).trace();
    const double nu = d.df;
    return 0.5 * nu * logdet_s - 0.5 * nu * q * std::numbers::ln2 - log_multigamma(0.5 * nu, static_cast<int>(q)) -
           0.5 * (nu + q + 1.0) * logdet_x - 0.5 * trace;
}

double log_density(const PriorSpec& p, double x) {
    if (std::isnan(x)) return kNegInf;
    return std::visit(overloaded{
                          [x](const prior::Normal& d) {
                              const double z = x - d.mean;
                              return -0.5 * std::log(2.0 * std::numbers::pi * d.variance) - 0.5 * z * z / d.variance;
                          },
                          [x](const prior::HalfCauchy& d) {
                              if (x < d.location) return kNegInf;
                              const double z = (x - d.location) / d.scale;
                              return std::log(2.0 / (std::numbers::pi * d.scale)) - std::log1p(z * z);
                          },
                          [x](const prior::Uniform& d) {
                              if (x < d.lo || x > d.hi) return kNegInf;
                              return -std::log(d.hi - d.lo);
                          },
                          [x](const prior::Exponential& d) {
                              if (x < 0.0) return kNegInf;
                              return std::log(d.rate) - d.rate * x;
                          },
                          [x](const prior::InvGamma& d) {
                              if (!(x > 0.0)) return kNegInf;
                              return d.shape * std::log(d.scale) - std::lgamma(d.shape) - (d.shape + 1.0) * std::log(x) -
                                     d.scale / x;
                          },
                          [x](const prior::InvWishart& d) {
                              if (d.scale.rows() != 1) {
                                  throw Error(ErrorCode::DimensionMismatch, "scalar evaluation of a matrix Inv-Wishart");
                              }
                              if (!(x > 0.0)) return kNegInf;
                              return log_density(d, Eigen::MatrixXd::Constant(1, 1, x));
                          },
                      },
                      p);
}

double draw(const PriorSpec& p, Rng& rng) {
    return std::visit(overloaded{
                          [&](const prior::Normal& d) { return rng.normal(d.mean, std::sqrt(d.variance)); },
                          [&](const prior::HalfCauchy& d) {
                              return d.location + d.scale * std::tan(0.5 * std::numbers::pi * rng.uniform());
                          },
                          [&](const prior::Uniform& d) { return d.lo + (d.hi - d.lo) * rng.uniform(); },
                          [&](const prior::Exponential& d) { return rng.exponential(d.rate); },
                          [&](const prior::InvGamma& d) { return d.scale / rng.gamma(d.shape); },
                          [&](const prior::InvWishart& d) {
                              if (d.scale.rows() != 1) {
                                  throw Error(ErrorCode::DimensionMismatch, "scalar draw from a matrix Inv-Wishart");
                              }
                              return inv_wishart_draw(rng, d.scale, d.df)(0, 0);
                          },
                      },
                      p);
}

Support support(const PriorSpec& p) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return std::visit(overloaded{
                          [](const prior::Normal&) { return Support{-inf, inf}; },
                          [](const prior::HalfCauchy& d) { return Support{d.location, inf}; },
                          [](const prior::Uniform& d) { return Support{d.lo, d.hi}; },
                          [](const prior::Exponential&) { return Support{0.0, inf}; },
                          [](const prior::InvGamma&) { return Support{0.0, inf}; },
                          [](const prior::InvWishart&) { return Support{0.0, inf}; },
                      },
                      p);
}

std::string describe(const PriorSpec& p) {
    std::ostringstream os;
    std::visit(overloaded{
                   [&](const prior::Normal& d) { os << "Normal(" << d.mean << ", " << d.variance << ")"; },
                   [&](const prior::HalfCauchy& d) { os << "HalfCauchy(" << d.location << ", " << d.scale << ")"; },
                   [&](const prior::Uniform& d) { os << "Uniform(" << d.lo << ", " << d.hi << ")"; },
                   [&](const prior::Exponential& d) { os << "Exponential(" << d.rate << ")"; },
                   [&](const prior::InvGamma& d) { os << "InvGamma(" << d.shape << ", " << d.scale << ")"; },
                   [&](const prior::InvWishart& d) { os << "InvWishart(dim " << d.scale.rows() << ", df " << d.df << ")"; },
               },
               p);
    return os.str();
}

}  // namespace mema
