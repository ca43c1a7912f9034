#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string_view>

#include <Eigen/Core>

namespace mema {

inline constexpr std::string_view kRngName = "philox4x32-10";
inline constexpr int kRngVersion = 1;

/// Counter-based Philox4x32-10 generator.
///
/// A generator is fully described by (seed, stream, position), so independent
/// substreams can be derived for chains or studies without any shared state.
/// The variate transforms below are implemented here rather than taken from
/// <random> so draws are identical across standard libraries.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

    /// Substream keyed by a string, e.g. a study id.
    static Rng for_key(std::uint64_t seed, std::string_view key) noexcept;

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }
    result_type operator()() noexcept;

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept;
    double normal() noexcept;
    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }
    double exponential(double rate) noexcept;
    /// Gamma(shape, rate = 1).
    double gamma(double shape) noexcept;
    double chi_square(double df) noexcept { return 2.0 * gamma(0.5 * df); }

    /// Raw block function, exposed for known-answer tests.
    static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> counter,
                                               std::array<std::uint32_t, 2> key) noexcept;

private:
    void refill() noexcept;

    std::array<std::uint32_t, 2> key_{};
    std::array<std::uint32_t, 4> counter_{};
    std::array<std::uint32_t, 4> buffer_{};
    int used_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view text) noexcept;

/// Draw from MVN(mean, cov) via a pivoted factorization, so positive
/// semidefinite (singular) covariances are accepted.
Eigen::VectorXd mvn_draw(Rng& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

/// Draw from MVN(P^{-1} b, P^{-1}) given the precision P and b.
Eigen::VectorXd mvn_draw_canonical(Rng& rng, const Eigen::MatrixXd& precision,
                                   const Eigen::VectorXd& b);

/// Bartlett-decomposition draw from Wishart(scale, df).
Eigen::MatrixXd wishart_draw(Rng& rng, const Eigen::MatrixXd& scale, double df);

/// Draw from Inv-Wishart(scale, df), mean scale / (df - p - 1).
Eigen::MatrixXd inv_wishart_draw(Rng& rng, const Eigen::MatrixXd& scale, double df);

}  // namespace mema
