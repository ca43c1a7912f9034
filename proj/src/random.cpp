#include "mema/random.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "mema/error.hpp"

namespace mema {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> Rng::philox(std::array<std::uint32_t, 4> c,
                                         std::array<std::uint32_t, 2> k) noexcept {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, c[0], hi0, lo0);
        mulhilo(kMul1, c[2], hi1, lo1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
        k[0] += kWeyl0;
        k[1] += kWeyl1;
    }
    return c;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) noexcept
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
      counter_{0, 0, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)} {}

Rng Rng::for_key(std::uint64_t seed, std::string_view key) noexcept {
    return Rng(seed, fnv1a64(key));
}

void Rng::refill() noexcept {
    buffer_ = philox(counter_, key_);
    if (++counter_[0] == 0) ++counter_[1];
    used_ = 0;
}

Rng::result_type Rng::operator()() noexcept {
    if (used_ > 2) refill();
    const std::uint64_t lo = buffer_[used_];
    const std::uint64_t hi = buffer_[used_ + 1];
    used_ += 2;
    return (hi << 32) | lo;
}

double Rng::uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() noexcept {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

double Rng::exponential(double rate) noexcept { return -std::log(uniform()) / rate; }

double Rng::gamma(double shape) noexcept {
    // Marsaglia & Tsang; shapes below one are boosted by U^(1/shape).
    if (shape < 1.0) {
        const double g = gamma(shape + 1.0);
        return g * std::pow(uniform(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

Eigen::VectorXd mvn_draw(Rng& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    const auto p = mean.size();
    if (cov.rows() != p || cov.cols() != p) {
        throw Error(ErrorCode::DimensionMismatch, "covariance does not match mean dimension");
    }
    Eigen::VectorXd z(p);
    for (Eigen::Index i = 0; i < p; ++i) z[i] = rng.normal();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
    const double scale = std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() < -1e-12 * scale).any()) {
        throw Error(ErrorCode::NotPSD, "covariance matrix is not positive semidefinite");
    }
    // cov = P^T L D L^T P; zero (or round-off negative) pivots contribute nothing.
    Eigen::VectorXd d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    Eigen::VectorXd y = ldlt.matrixL() * (d.asDiagonal() * z);
    return mean + ldlt.transpositionsP().transpose() * y;
}

Eigen::VectorXd mvn_draw_canonical(Rng& rng, const Eigen::MatrixXd& precision,
                                   const Eigen::VectorXd& b) {
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
        throw Error(ErrorCode::NotPSD, "precision matrix is not positive definite");
    }
    const auto p = b.size();
    Eigen::VectorXd z(p);
    for (Eigen::Index i = 0; i < p; ++i) z[i] = rng.normal();
    Eigen::VectorXd mean = llt.solve(b);
    // x = mean + L^{-T} z has covariance (L L^T)^{-1}.
    return mean + llt.matrixU().solve(z);
}

Eigen::MatrixXd wishart_draw(Rng& rng, const Eigen::MatrixXd& scale, double df) {
    const auto p = scale.rows();
    if (df <= static_cast<double>(p) - 1.0) {
        throw Error(ErrorCode::DomainError, "Wishart degrees of freedom must exceed dimension - 1");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(scale);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPSD, "Wishart scale not PD");
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        a(i, i) = std::sqrt(rng.chi_square(df - static_cast<double>(i)));
        for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
    }
    Eigen::MatrixXd la = llt.matrixL() * a;
    return la * la.transpose();
}

Eigen::MatrixXd inv_wishart_draw(Rng& rng, const Eigen::MatrixXd& scale, double df) {
    Eigen::LLT<Eigen::MatrixXd> llt(scale);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPSD, "Inv-Wishart scale not PD");
    const auto p = scale.rows();
    Eigen::MatrixXd inv_scale = llt.solve(Eigen::MatrixXd::Identity(p, p));
    Eigen::MatrixXd w = wishart_draw(rng, inv_scale, df);
    Eigen::MatrixXd out = w.llt().solve(Eigen::MatrixXd::Identity(p, p));
    return 0.5 * (out + out.transpose());
}

}  // namespace mema
