#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mema/bias_algebra.hpp"
#include "mema/corruption.hpp"
#include "mema/error.hpp"
#include "mema/random.hpp"
#include "mema/study_data.hpp"
#include "test_support.hpp"

using namespace mema;

namespace {

// OLS of y on [1, x] written out by hand.
struct HandFit {
    double alpha, beta, se_alpha, se_beta, sigma2, xbar, sxx;
};

HandFit hand_ols(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const double n = static_cast<double>(x.size());
    const double xbar = x.mean(), ybar = y.mean();
    double sxx = 0, sxy = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        sxx += (x(i) - xbar) * (x(i) - xbar);
        sxy += (x(i) - xbar) * (y(i) - ybar);
    }
    HandFit f{};
    f.beta = sxy / sxx;
    f.alpha = ybar - f.beta * xbar;
    double rss = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) rss += std::pow(y(i) - f.alpha - f.beta * x(i), 2);
    f.sigma2 = rss / (n - 2);
    f.se_beta = std::sqrt(f.sigma2 / sxx);
    f.se_alpha = std::sqrt(f.sigma2 * (1.0 / n + xbar * xbar / sxx));
    f.xbar = xbar;
    f.sxx = sxx;
    return f;
}

IpdStudy random_study(const std::string& id, int n, double mu, double lambda, double alpha, double beta, double sigma,
                      Rng& rng) {
    IpdStudy s;
    s.study_id = id;
    s.x.resize(n, 1);
    s.y.resize(n);
    for (int i = 0; i < n; ++i) {
        s.x(i, 0) = rng.normal(mu, lambda);
        s.y(i) = alpha + beta * s.x(i, 0) + rng.normal(0, sigma);
    }
    return s;
}

}  // namespace

TEST_CASE("summary CSV parses the reference tables") {
    const auto t1 = load_summaries(test_data("nels88.csv"));
    const auto t2 = load_summaries(test_data("nels88star.csv"));
    CHECK(t1.size() == 13);
    CHECK(t2.size() == 13);
    CHECK(t1.front().has_bivariate());
    CHECK(t2.front().gamma.has_value());
    int clean = 0;
    for (const auto& s : t2) clean += s.known_clean;
    CHECK(clean == 5);
}

TEST_CASE("summary CSV round trip is lossless") {
    const auto t2 = load_summaries(test_data("nels88star.csv"));
    CHECK(parse_summaries(format_summaries(t2)) == t2);
}

TEST_CASE("summary parse errors") {
    const std::string header = "study_id,n,beta_hat,se_beta,alpha_hat,se_alpha,sigma2_hat,known_clean\n";
    CHECK_THROWS_AS(parse_summaries(header + "1,40,0.5,0.1,1,0.5,2,maybe\n"), Error);
    CHECK_THROWS_AS(parse_summaries(header + "1,40,0.5,0.1,1,,2,true\n"), Error);
    CHECK_THROWS_AS(parse_summaries(header + "1,40,0.5\n"), Error);
    CHECK_THROWS_AS(parse_summaries("study_id,n\n1,40\n"), Error);
    CHECK_THROWS_AS(load_summaries("/nonexistent/file.csv"), Error);
    CHECK(error_code_of([&] { parse_summaries(header + "1,40,0.5,-0.1,1,0.5,2,true\n"); }) == ErrorCode::ParseError);
}

TEST_CASE("moment recovery inverts hand-computed OLS standard errors") {
    Rng rng(11, 0);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 20 + 7 * rep;
        const IpdStudy s = random_study("s", n, rng.normal(3, 2), 0.5 + rng.uniform() * 3, 1.0, 0.4, 1.5, rng);
        const HandFit f = hand_ols(s.x.col(0), s.y);
        StudySummary sum;
        sum.study_id = "s";
        sum.n = n;
        sum.beta_hat = f.beta;
        sum.se_beta = f.se_beta;
        sum.alpha_hat = f.alpha;
        sum.se_alpha = f.se_alpha;
        sum.sigma2_hat = f.sigma2;
        const StudyMoments m = recover_moments(sum);
        CHECK(m.sigma == doctest::Approx(std::sqrt(f.sigma2)).epsilon(1e-12));
        CHECK(m.lambda == doctest::Approx(std::sqrt(f.sxx / (n - 1))).epsilon(1e-10));
        CHECK(m.mu == doctest::Approx(std::abs(f.xbar)).epsilon(1e-8));
        const auto [se_a, se_b] = predicted_standard_errors(m, n);
        CHECK(se_a == doctest::Approx(f.se_alpha).epsilon(1e-10));
        CHECK(se_b == doctest::Approx(f.se_beta).epsilon(1e-12));
    }
}

TEST_CASE("moment recovery errors") {
    StudySummary s;
    s.study_id = "x";
    s.n = 30;
    s.beta_hat = 0.3;
    s.se_beta = 0.1;
    CHECK(error_code_of([&] { recover_moments(s); }) == ErrorCode::MissingField);
    s.alpha_hat = 1.0;
    s.se_alpha = 0.01;  // far too small for the residual variance
    s.sigma2_hat = 10.0;
    CHECK(error_code_of([&] { recover_moments(s); }) == ErrorCode::NegativeRadicand);
}

TEST_CASE("attenuation factor") {
    CHECK(attenuation_factor(2.0, 0.0) == 1.0);
    CHECK(attenuation_factor(1.0, 1.0) == doctest::Approx(0.5));
    CHECK(attenuation_factor(3.0, 4.0) == doctest::Approx(9.0 / 25.0));
    CHECK_THROWS_AS(attenuation_factor(0.0, 1.0), Error);
    CHECK_THROWS_AS(attenuation_factor(1.0, -1.0), Error);
    for (double phi = 0.0; phi < 5.0; phi += 0.25) {
        CHECK(attenuation_factor(1.0, phi + 0.25) < attenuation_factor(1.0, phi));
    }
}

TEST_CASE("reference gamma moments and naive targets") {
    const auto t2 = load_summaries(test_data("nels88star.csv"));
    std::vector<double> g;
    for (const auto& s : t2) g.push_back(*s.gamma);
    CHECK(sample_mean(g) == doctest::Approx(0.63).epsilon(0.01 / 0.63));
    CHECK(sample_variance(g) == doctest::Approx(0.15).epsilon(0.01 / 0.15));
    CHECK(naive_theta(g, 0.57) == doctest::Approx(0.36).epsilon(0.01 / 0.36));
    CHECK(std::sqrt(naive_tau2(g, 0.57, 0.04)) == doctest::Approx(0.22).epsilon(0.01 / 0.22));
}

TEST_CASE("naive tau forms agree with population moments") {
    const std::vector<double> g = {0.2, 0.5, 0.9, 1.0, 0.7};
    const double a = naive_tau2_population(g, 0.6, 0.1, true);
    const double b = naive_tau2_population(g, 0.6, 0.1, false);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    // E[(gamma beta)^2] - E[gamma beta]^2 with beta independent of gamma.
    double eg = 0, eg2 = 0;
    for (double x : g) {
        eg += x / 5;
        eg2 += x * x / 5;
    }
    CHECK(a == doctest::Approx(eg2 * (0.01 + 0.36) - eg * eg * 0.36).epsilon(1e-12));
    CHECK(naive_theta(std::vector<double>{1, 1, 1}, 0.4) == doctest::Approx(0.4));
    CHECK(naive_tau2(std::vector<double>{1, 1, 1}, 0.4, 0.2) == doctest::Approx(0.04));
}

TEST_CASE("attenuated sampling moments match simulation") {
    const StudyMoments m{1.2, 1.5, 2.0};
    const double alpha = 0.5, beta = 0.8, phi = 1.0;
    const double gamma = attenuation_factor(m.lambda, phi);
    const int n = 200;
    const AttenuatedMoments am = attenuated_sampling_moments(m, alpha, beta, gamma, n);
    Rng rng(5, 0);
    const int reps = 4000;
    double sa = 0, sb = 0, sbb = 0;
    for (int r = 0; r < reps; ++r) {
        IpdStudy s = random_study("s", n, m.mu, m.lambda, alpha, beta, m.sigma, rng);
        for (int i = 0; i < n; ++i) s.x(i, 0) += rng.normal(0, phi);
        const HandFit f = hand_ols(s.x.col(0), s.y);
        sa += f.alpha;
        sb += f.beta;
        sbb += f.beta * f.beta;
    }
    const double mb = sb / reps;
    CHECK(am.mean(1) == doctest::Approx(gamma * beta));
    CHECK(mb == doctest::Approx(am.mean(1)).epsilon(0.01));
    CHECK(sa / reps == doctest::Approx(am.mean(0)).epsilon(0.02));
    CHECK(sbb / reps - mb * mb == doctest::Approx(am.cov(1, 1)).epsilon(0.1));
}

TEST_CASE("naive xi and omega") {
    const std::vector<StudyCoefficients> c = {{1.0, 0.5, 2.0}, {2.0, 0.4, 3.0}, {1.5, 0.6, 1.0}};
    const std::vector<double> g = {1.0, 0.5, 0.8};
    const NaiveIntercepts r = naive_xi_omega(c, g);
    std::vector<double> a;
    for (std::size_t k = 0; k < c.size(); ++k) a.push_back(c[k].alpha + (1 - g[k]) * c[k].beta * c[k].mu);
    CHECK(r.xi_star == doctest::Approx(sample_mean(a)));
    CHECK(r.omega2_star == doctest::Approx(sample_variance(a)));
}

TEST_CASE("fit_regression matches hand OLS") {
    Rng rng(3, 0);
    const IpdStudy s = random_study("a", 50, 1.0, 2.0, 0.3, -0.7, 0.9, rng);
    const RegressionFit f = fit_regression(s);
    const HandFit h = hand_ols(s.x.col(0), s.y);
    CHECK(f.coef(0) == doctest::Approx(h.alpha).epsilon(1e-10));
    CHECK(f.coef(1) == doctest::Approx(h.beta).epsilon(1e-10));
    CHECK(f.sigma2 == doctest::Approx(h.sigma2).epsilon(1e-10));
    CHECK(std::sqrt(f.cov(1, 1)) == doctest::Approx(h.se_beta).epsilon(1e-10));
}

TEST_CASE("corruption plan parsing and validation") {
    const CorruptionPlan u = parse_plan("study_id,phi\n1,0.5\n2,0\n", 3);
    CHECK(u.phi_sd("1") == doctest::Approx(0.5));
    CHECK(u.phi_sd("2") == 0.0);
    const CorruptionPlan m = parse_plan("study_id,phi_11,phi_12,phi_21,phi_22\n1,1,0.2,0.2,0.5\n", 3);
    CHECK(m.phi.at("1").rows() == 2);
    CHECK(error_code_of([] { parse_plan("study_id,phi_11,phi_12,phi_21,phi_22\n1,1,0.2,0.3,0.5\n", 3); }) ==
          ErrorCode::NotPSD);
    CHECK(error_code_of([] { parse_plan("study_id,phi_11,phi_12,phi_21,phi_22\n1,1,2,2,1\n", 3); }) == ErrorCode::NotPSD);
    CHECK_THROWS_AS(parse_plan("study_id,phi\n1,-1\n", 3), Error);
    CHECK(parse_plan(format_plan(m), 3).phi.at("1").isApprox(m.phi.at("1")));
}

TEST_CASE("corruption is deterministic per study and adds noise of the planned size") {
    Rng rng(9, 0);
    IpdDataset d;
    d.q = 1;
    for (int k = 0; k < 3; ++k) d.studies.push_back(random_study(std::to_string(k + 1), 5000, 0, 1, 0, 1, 1, rng));
    const CorruptionPlan plan = parse_plan("study_id,phi\n1,0.7\n2,0\n3,0.2\n", 42);
    const IpdDataset a = corrupt_ipd(d, plan), b = corrupt_ipd(d, plan);
    CHECK(format_ipd(a) == format_ipd(b));
    CHECK(a.studies[1].x == d.studies[1].x);
    const Eigen::VectorXd e = a.studies[0].x.col(0) - d.studies[0].x.col(0);
    const double var = (e.array() - e.mean()).square().sum() / (e.size() - 1);
    CHECK(var == doctest::Approx(0.49).epsilon(0.06));

    // A study's noise does not depend on which other studies are present.
    IpdDataset only3;
    only3.q = 1;
    only3.studies.push_back(d.studies[2]);
    CHECK(corrupt_ipd(only3, plan).studies[0].x == a.studies[2].x);

    CorruptionPlan other = plan;
    other.seed = 43;
    CHECK(corrupt_ipd(d, other).studies[0].x != a.studies[0].x);
}

TEST_CASE("IPD CSV round trip") {
    Rng rng(1, 0);
    IpdDataset d;
    d.q = 1;
    d.studies.push_back(random_study("b", 5, 0, 1, 0, 1, 1, rng));
    d.studies.push_back(random_study("a", 4, 0, 1, 0, 1, 1, rng));
    const IpdDataset back = parse_ipd(format_ipd(d));
    REQUIRE(back.studies.size() == 2);
    CHECK(back.studies[0].study_id == "b");
    CHECK(back.studies[0].x == d.studies[0].x);
    CHECK(back.studies[1].y == d.studies[1].y);
}

TEST_CASE("refit summaries recover simulated attenuation") {
    SimulationTruth truth{5.0, 0.6, 0.5, 0.0, 0.0};
    std::vector<long> sizes(4, 4000);
    std::vector<StudyMoments> mom(4, StudyMoments{1.0, 1.0, 2.0});
    const CorruptionPlan plan = CorruptionPlan::univariate({{"2", 1.0}}, 8);
    const SimulatedMeta sim = simulate_meta(truth, sizes, mom, plan, 8);
    const auto sums = refit_summaries(sim.corrupted, {"1", "3", "4"});
    CHECK(sums[0].known_clean);
    CHECK_FALSE(sums[1].known_clean);
    CHECK(sums[0].beta_hat == doctest::Approx(0.6).epsilon(0.05));
    CHECK(sums[1].beta_hat == doctest::Approx(0.3).epsilon(0.1));
}
