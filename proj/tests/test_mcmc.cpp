#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/gamma.hpp>

#include "mema/mcmc.hpp"
#include "mema/priors.hpp"
#include "mema/random.hpp"
#include "mema/summary.hpp"
#include "model_util.hpp"
#include "test_support.hpp"

using namespace mema;

namespace {

double integrate(const std::function<double(double)>& f, double lo, double hi, int n = 200000) {
    const double h = (hi - lo) / n;
    double s = 0.5 * (f(lo) + f(hi));
    for (int i = 1; i < n; ++i) s += f(lo + i * h);
    return s * h;
}

std::vector<std::vector<double>> ar1_chains(int chains, int n, double rho, double shift, std::uint64_t seed) {
    std::vector<std::vector<double>> out;
    for (int c = 0; c < chains; ++c) {
        Rng rng(seed, static_cast<std::uint64_t>(c));
        std::vector<double> v(static_cast<std::size_t>(n));
        double x = rng.normal() / std::sqrt(1 - rho * rho);
        for (auto& e : v) {
            x = rho * x + rng.normal();
            e = x + shift * c;
        }
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace

TEST_CASE("philox known-answer vectors") {
    const auto z = Rng::philox({0, 0, 0, 0}, {0, 0});
    CHECK(z[0] == 0x6627e8d5u);
    CHECK(z[1] == 0xe169c58du);
    CHECK(z[2] == 0xbc57ac4cu);
    CHECK(z[3] == 0x9b00dbd8u);
    const auto f = Rng::philox({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    CHECK(f[0] == 0x408f276du);
    CHECK(f[1] == 0x41c83b0eu);
    CHECK(f[2] == 0xa20bc7c6u);
    CHECK(f[3] == 0x6d5451fdu);
}

TEST_CASE("rng streams are reproducible and distinct") {
    Rng a(7, 1), b(7, 1), c(7, 2);
    for (int i = 0; i < 100; ++i) {
        const auto x = a();
        CHECK(x == b());
        (void)c();
    }
    CHECK(Rng(7, 1)() != Rng(7, 2)());
    CHECK(Rng::for_key(3, "study-1")() == Rng::for_key(3, "study-1")());
    CHECK(Rng::for_key(3, "study-1")() != Rng::for_key(3, "study-2")());
}

TEST_CASE("rng variates have the right moments") {
    Rng rng(2, 0);
    const int n = 200000;
    double su = 0, sn = 0, snn = 0, se = 0, sg = 0, sgg = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK_UNARY(u > 0.0);
        CHECK_UNARY(u < 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        snn += z * z;
        se += rng.exponential(2.0);
        const double g = rng.gamma(0.7);
        sg += g;
        sgg += g * g;
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sn / n) < 0.01);
    CHECK(snn / n == doctest::Approx(1.0).epsilon(0.01));
    CHECK(se / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(sg / n == doctest::Approx(0.7).epsilon(0.02));
    CHECK(sgg / n - std::pow(sg / n, 2) == doctest::Approx(0.7).epsilon(0.03));
}

TEST_CASE("wishart and inverse-wishart draws have the right means") {
    Eigen::MatrixXd s(2, 2);
    s << 2.0, 0.5, 0.5, 1.0;
    Rng rng(4, 0);
    Eigen::MatrixXd mw = Eigen::MatrixXd::Zero(2, 2), miw = Eigen::MatrixXd::Zero(2, 2);
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
        mw += wishart_draw(rng, s, 5.0) / n;
        miw += inv_wishart_draw(rng, s, 7.0) / n;
    }
    CHECK((mw - 5.0 * s).norm() < 0.1);
    CHECK((miw - s / (7.0 - 3.0)).norm() < 0.02);
}

TEST_CASE("scalar prior densities integrate to one") {
    const std::vector<std::pair<PriorSpec, std::pair<double, double>>> cases = {
        {prior::Normal{1.0, 4.0}, {-30, 30}},       {prior::HalfCauchy{0.0, 2.0}, {0, 40000}},
        {prior::Uniform{-1.0, 1.0}, {-1, 1}},       {prior::Exponential{0.5}, {0, 200}},
        {prior::InvGamma{3.0, 2.0}, {1e-9, 2000}},
    };
    for (const auto& [p, range] : cases) {
        const double mass = integrate([&](double x) { return std::exp(log_density(p, x)); }, range.first, range.second,
                                      2000000);
        CHECK(mass == doctest::Approx(1.0).epsilon(2e-3));
    }
    CHECK(log_density(prior::HalfCauchy{0.0, 2.0}, -1.0) == kNegInf);
    CHECK(log_density(prior::Uniform{0.0, 1.0}, 1.5) == kNegInf);
    CHECK_THROWS_AS(validate(PriorSpec{prior::Normal{0.0, -1.0}}), Error);
    CHECK_THROWS_AS(validate(PriorSpec{prior::Uniform{1.0, 0.0}}), Error);
}

TEST_CASE("one-dimensional inverse-wishart is an inverse gamma") {
    const prior::InvWishart iw{Eigen::MatrixXd::Constant(1, 1, 3.0), 5.0};
    for (double x : {0.1, 0.5, 1.0, 4.0}) {
        CHECK(log_density(iw, Eigen::MatrixXd::Constant(1, 1, x)) ==
              doctest::Approx(detail::log_inv_gamma(x, 2.5, 1.5)).epsilon(1e-12));
    }
}

TEST_CASE("log Q matches extended-precision boost, including where double underflows") {
    for (double a : {0.5, 1.0, 2.5, 10.0, 60.0}) {
        for (double x : {0.01, 0.5, 3.0, 20.0, 100.0, 700.0, 900.0, 2000.0, 5000.0}) {
            const long double q = boost::math::gamma_q(static_cast<long double>(a), static_cast<long double>(x));
            const double want = static_cast<double>(std::log(q));
            CHECK(detail::log_gamma_q(a, x) == doctest::Approx(want).epsilon(1e-9));
        }
    }
}

TEST_CASE("quantiles use linear interpolation") {
    CHECK(quantile({4, 1, 3, 2}, 0.25) == doctest::Approx(1.75));
    CHECK(quantile({4, 1, 3, 2}, 0.5) == doctest::Approx(2.5));
    CHECK(quantile({5}, 0.9) == 5);
}

TEST_CASE("split R-hat and ESS on known chains") {
    const auto iid = ar1_chains(4, 4000, 0.0, 0.0, 1);
    CHECK(split_rhat(iid) < 1.01);
    CHECK(effective_sample_size(iid) == doctest::Approx(16000).epsilon(0.1));
    const auto ar = ar1_chains(4, 20000, 0.8, 0.0, 2);
    CHECK(effective_sample_size(ar) == doctest::Approx(80000.0 * 0.2 / 1.8).epsilon(0.15));
    const auto apart = ar1_chains(4, 2000, 0.0, 2.0, 3);
    CHECK(split_rhat(apart) > 1.5);
    // A trend within each chain is caught by the split.
    std::vector<std::vector<double>> trend(2, std::vector<double>(2000));
    for (auto& c : trend) {
        for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<double>(i) / 500.0;
    }
    CHECK(split_rhat(trend) > 1.5);
    const double se = mcse_mean(iid);
    CHECK(se == doctest::Approx(1.0 / std::sqrt(16000.0)).epsilon(0.1));
}

TEST_CASE("conjugate normal mean posterior") {
    // x_i ~ N(m, 1), m ~ N(0, 10): posterior N(sum x / (n + 0.1), 1 / (n + 0.1)).
    Rng rng(12, 0);
    std::vector<double> x(25);
    for (auto& v : x) v = rng.normal(1.3, 1.0);
    const double n = static_cast<double>(x.size()), sx = std::accumulate(x.begin(), x.end(), 0.0);
    const double post_mean = sx / (n + 0.1), post_sd = std::sqrt(1.0 / (n + 0.1));
    FunctionTarget t(
        {"m"},
        [&](std::span<const double> z) {
            double lp = -z[0] * z[0] / 20.0;
            for (double v : x) lp -= 0.5 * (v - z[0]) * (v - z[0]);
            return lp;
        },
        {0.0});
    McmcConfig cfg;
    cfg.iterations = 40000;
    cfg.thin = 2;
    cfg.seed = 3;
    const PosteriorSummary s = run_chains(t, cfg);
    const auto& m = s.at("m");
    CHECK(std::abs(m.mean - post_mean) < 4 * mcse_mean(s.draws.per_chain(0)));
    CHECK(m.sd == doctest::Approx(post_sd).epsilon(0.03));
    CHECK(m.q025 == doctest::Approx(post_mean - 1.959964 * post_sd).epsilon(0.02));
    CHECK(m.rhat < 1.01);
    const double acc = s.acceptance.at(0).at(0);
    CHECK(acc == doctest::Approx(0.44).epsilon(0.25));
}

TEST_CASE("correlated gaussian through an adaptive vector block") {
    const double r = 0.9;
    FunctionTarget t(
        {"a", "b"},
        [&](std::span<const double> z) { return -(z[0] * z[0] - 2 * r * z[0] * z[1] + z[1] * z[1]) / (2 * (1 - r * r)); },
        {3.0, -3.0});
    t.use_joint_block();
    McmcConfig cfg;
    cfg.iterations = 30000;
    cfg.thin = 5;
    const PosteriorSummary s = run_chains(t, cfg);
    CHECK(std::abs(s.at("a").mean) < 0.05);
    CHECK(s.at("b").sd == doctest::Approx(1.0).epsilon(0.05));
    const auto a = s.draws.pooled("a"), b = s.draws.pooled("b");
    double sab = 0;
    for (std::size_t i = 0; i < a.size(); ++i) sab += a[i] * b[i];
    CHECK(sab / static_cast<double>(a.size()) == doctest::Approx(r).epsilon(0.05));
    CHECK(s.acceptance.at(0).at(0) == doctest::Approx(0.23).epsilon(0.35));
}

TEST_CASE("sampler output is deterministic and independent of the thread count") {
    FunctionTarget t({"x"}, [](std::span<const double> z) { return -0.5 * z[0] * z[0]; }, {0.0});
    McmcConfig cfg;
    cfg.iterations = 4000;
    cfg.thin = 2;
    cfg.seed = 77;
    cfg.threads = 1;
    const PosteriorSummary a = run_chains(t, cfg);
    cfg.threads = 3;
    const PosteriorSummary b = run_chains(t, cfg);
    REQUIRE(a.draws.chains.size() == b.draws.chains.size());
    for (std::size_t c = 0; c < a.draws.chains.size(); ++c) CHECK(a.draws.chains[c] == b.draws.chains[c]);
    cfg.seed = 78;
    CHECK(run_chains(t, cfg).draws.chains[0] != a.draws.chains[0]);
}

TEST_CASE("mcmc config validation") {
    McmcConfig c;
    c.chains = 0;
    CHECK_THROWS_AS(validate(c), Error);
    c = {};
    c.thin = 0;
    CHECK_THROWS_AS(validate(c), Error);
    c = {};
    c.burn_in = c.iterations;
    CHECK_THROWS_AS(validate(c), Error);
}

TEST_CASE("non-finite start is rejected") {
    FunctionTarget t({"x"}, [](std::span<const double>) { return kNegInf; }, {0.0});
    McmcConfig cfg;
    cfg.iterations = 1000;
    CHECK(error_code_of([&] { run_chains(t, cfg); }) == ErrorCode::InitFailure);
}
