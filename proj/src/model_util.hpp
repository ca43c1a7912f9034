#pragma once

// Internal helpers shared by the model implementations.

#include <cmath>
#include <numbers>
#include <span>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <boost/math/special_functions/gamma.hpp>

#include "mema/error.hpp"
#include "mema/priors.hpp"

namespace mema::detail {

inline double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}
inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline constexpr double kLog2Pi = 1.8378770664093454836;

inline double log_normal(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

/// Bivariate Normal log density with the covariance given directly.
inline double log_mvn2(const Eigen::Vector2d& x, const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov) {
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    if (!(det > 0.0)) return kNegInf;
    const Eigen::Vector2d d = x - mean;
    const double quad = (cov(1, 1) * d(0) * d(0) - 2.0 * cov(0, 1) * d(0) * d(1) + cov(0, 0) * d(1) * d(1)) / det;
    return -kLog2Pi - 0.5 * std::log(det) - 0.5 * quad;
}

/// Bivariate Normal log density with precomputed precision and log det(cov).
inline double log_mvn2_prec(const Eigen::Vector2d& x, const Eigen::Vector2d& mean, const Eigen::Matrix2d& prec,
                            double log_det_cov) {
    const Eigen::Vector2d d = x - mean;
    return -kLog2Pi - 0.5 * log_det_cov - 0.5 * d.dot(prec * d);
}

/// Map from the real line onto a prior's support, with its log Jacobian.
struct Transform {
    enum class Kind { Identity, Lower, Upper, Interval };
    Kind kind = Kind::Identity;
    double lo = 0.0;
    double hi = 0.0;

    static Transform for_support(const Support& s) {
        const bool flo = std::isfinite(s.lo), fhi = std::isfinite(s.hi);
        if (flo && fhi) return {Kind::Interval, s.lo, s.hi};
        if (flo) return {Kind::Lower, s.lo, 0.0};
        if (fhi) return {Kind::Upper, 0.0, s.hi};
        return {};
    }
    static Transform for_prior(const PriorSpec& p) { return for_support(support(p)); }

    double value(double z) const {
        switch (kind) {
            case Kind::Identity: return z;
            case Kind::Lower: return lo + std::exp(z);
            case Kind::Upper: return hi - std::exp(z);
            case Kind::Interval: return lo + (hi - lo) * sigmoid(z);
        }
        return z;
    }
    double log_jacobian(double z) const {
        switch (kind) {
            case Kind::Identity: return 0.0;
            case Kind::Lower:
            case Kind::Upper: return z;
            case Kind::Interval: return std::log(hi - lo) + log_sigmoid(z) + log_sigmoid(-z);
        }
        return 0.0;
    }
    double unconstrained(double v) const {
        switch (kind) {
            case Kind::Identity: return v;
            case Kind::Lower: return std::log(v - lo);
            case Kind::Upper: return std::log(hi - v);
            case Kind::Interval: return logit((v - lo) / (hi - lo));
        }
        return v;
    }
};

/// A scalar parameter with its prior: log prior plus Jacobian at z.
inline double log_prior_transformed(const PriorSpec& p, const Transform& t, double z) {
    return log_density(p, t.value(z)) + t.log_jacobian(z);
}

inline double log_inv_gamma(double x, double shape, double scale) {
    if (!(x > 0.0)) return kNegInf;
    return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

/// log Q(a, x), the regularized upper incomplete gamma function. Falls back to
/// a log-space continued fraction where Q underflows.
inline double log_gamma_q(double a, double x) {
    const double q = boost::math::gamma_q(a, x);
    if (q > 1e-280 || x <= a + 1.0) return std::log(q);
    double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return -x + a * std::log(x) - std::lgamma(a) + std::log(h);
}

/// Packed lower-triangular Cholesky factor with log-diagonal, row-major:
/// (0,0), (1,0), (1,1), (2,0), ...
inline std::size_t chol_size(int q) { return static_cast<std::size_t>(q * (q + 1) / 2); }

inline Eigen::MatrixXd chol_factor(std::span<const double> z, int q) {
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(q, q);
    std::size_t idx = 0;
    for (int i = 0; i < q; ++i) {
        for (int j = 0; j <= i; ++j) l(i, j) = i == j ? std::exp(z[idx++]) : z[idx++];
    }
    return l;
}

inline Eigen::MatrixXd chol_matrix(std::span<const double> z, int q) {
    const Eigen::MatrixXd l = chol_factor(z, q);
    return l * l.transpose();
}

inline void chol_encode(const Eigen::MatrixXd& sigma, std::span<double> out) {
    const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPSD, "covariance draw is not positive definite");
    const Eigen::MatrixXd l = llt.matrixL();
    std::size_t idx = 0;
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) out[idx++] = i == j ? std::log(l(i, i)) : l(i, j);
    }
}

/// log |d Sigma / d z| for Sigma = L L' with L_ii = exp(z_ii).
inline double chol_log_jacobian(std::span<const double> z, int q) {
    double acc = q * std::numbers::ln2;
    std::size_t idx = 0;
    for (int i = 0; i < q; ++i) {
        idx += static_cast<std::size_t>(i);
        acc += static_cast<double>(q - i + 1) * z[idx];
        ++idx;
    }
    return acc;
}

}  // namespace mema::detail
