#include <doctest.h>

#include <cmath>

#include "mema/corruption.hpp"
#include "mema/models.hpp"
#include "mema/random.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mema;

namespace {

const std::vector<StudySummary>& table1() {
    static const auto t = load_summaries(test_data("nels88.csv"));
    return t;
}
const std::vector<StudySummary>& table2() {
    static const auto t = load_summaries(test_data("nels88star.csv"));
    return t;
}

ModelSpec spec_of(ModelKind kind, double delta = 0.1) {
    ModelSpec s;
    s.kind = kind;
    s.delta = delta;
    return s;
}

McmcConfig short_run(long iterations, std::uint64_t seed = 1) {
    McmcConfig c;
    c.iterations = iterations;
    c.thin = 5;
    c.seed = seed;
    return c;
}

SimulatedMulti small_multi(int q, int k, long n, const std::set<std::string>& gold, std::uint64_t seed) {
    std::vector<MultiStudyDesign> d;
    for (int i = 0; i < k; ++i) {
        MultiStudyDesign m;
        m.n = n;
        m.mu = Eigen::VectorXd::LinSpaced(q, 1.0, -1.0);
        m.lambda = Eigen::MatrixXd::Identity(q, q);
        m.sigma = 0.5;
        d.push_back(m);
    }
    CorruptionPlan plan;
    plan.seed = seed;
    for (int i = 0; i < k; ++i) {
        const std::string id = std::to_string(i + 1);
        if (!gold.count(id)) plan.phi[id] = Eigen::MatrixXd::Identity(q, q) * (0.2 + 0.1 * i);
    }
    const Eigen::VectorXd theta = Eigen::VectorXd::LinSpaced(q + 1, 1.0, 0.2);
    const Eigen::VectorXd tau = Eigen::VectorXd::Constant(q + 1, 0.1);
    return simulate_multi(theta, tau, d, plan, seed);
}

/// log_density_block must change exactly as log_density does when only the
/// block (and whatever its transform touches) moves.
void check_block_densities(const Target& t, std::uint64_t seed) {
    Rng rng(seed, 0);
    const std::vector<double> z0 = t.initial_point(rng);
    REQUIRE(std::isfinite(t.log_density(z0)));
    const auto& blocks = t.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].kind != BlockKind::RandomWalk) continue;
        int checked = 0;
        for (int rep = 0; rep < 20 && checked < 3; ++rep) {
            std::vector<double> z = z0;
            for (std::size_t c : blocks[b].coords) z[c] += 0.02 * rng.normal();
            double jac = 0.0;
            if (blocks[b].transforms) jac = t.transform(b, z0, z);
            const double full = t.log_density(z) - t.log_density(z0);
            if (!std::isfinite(full)) continue;
            const double part = t.log_density_block(b, z) - t.log_density_block(b, z0);
            INFO("block " << blocks[b].name);
            CHECK(part == doctest::Approx(full).epsilon(1e-7).scale(1.0 + std::abs(full)));
            CHECK(std::isfinite(jac));
            ++checked;
        }
    }
}

void check_exact_draws_stay_finite(const Target& t, std::uint64_t seed) {
    Rng rng(seed, 0);
    std::vector<double> z = t.initial_point(rng);
    for (int sweep = 0; sweep < 5; ++sweep) {
        for (std::size_t b = 0; b < t.blocks().size(); ++b) {
            if (t.blocks()[b].kind != BlockKind::Exact) continue;
            t.draw_exact(b, z, rng);
            INFO("block " << t.blocks()[b].name);
            CHECK(std::isfinite(t.log_density(z)));
        }
    }
}

}  // namespace

TEST_CASE("model names and parsing") {
    for (ModelKind k : {ModelKind::UniMA, ModelKind::BiMA, ModelKind::UniBMEMA, ModelKind::BiBMEMA, ModelKind::MultiIPD,
                        ModelKind::MultiMA}) {
        CHECK(parse_model_kind(to_string(k)) == k);
    }
    CHECK(error_code_of([] { parse_model_kind("triMA"); }) == ErrorCode::SchemaError);
    CHECK(spec_of(ModelKind::UniBMEMA).resolved_gamma_prior() == GammaPrior::Uniform01);
    CHECK(spec_of(ModelKind::BiBMEMA).resolved_gamma_prior() == GammaPrior::InvGammaOnPhi2);
}

TEST_CASE("gold-standard flags") {
    ModelSpec s = spec_of(ModelKind::BiBMEMA);
    const auto from_data = gold_standard_flags(s, table2());
    CHECK(std::count(from_data.begin(), from_data.end(), true) == 5);
    s.k_prime_ids = std::set<std::string>{"13"};
    const auto explicit_ids = gold_standard_flags(s, table2());
    CHECK(explicit_ids.back());
    CHECK(std::count(explicit_ids.begin(), explicit_ids.end(), true) == 1);
    s.k_prime_ids = std::set<std::string>{"99"};
    CHECK(error_code_of([&] { gold_standard_flags(s, table2()); }) == ErrorCode::DomainError);
}

TEST_CASE("model construction errors") {
    CHECK(error_code_of([] { build_uni_bayesma({}); }) == ErrorCode::EmptyInput);
    auto no_bi = table1();
    no_bi[2].alpha_hat.reset();
    no_bi[2].se_alpha.reset();
    no_bi[2].sigma2_hat.reset();
    CHECK(error_code_of([&] { build_bi_bayesma(no_bi); }) == ErrorCode::MissingField);
    CHECK(error_code_of([] { build_model(spec_of(ModelKind::MultiIPD), table1()); }) == ErrorCode::DomainError);
    ModelSpec bad = spec_of(ModelKind::BiBMEMA);
    bad.delta = 0.0;
    CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("block densities agree with the full density") {
    check_block_densities(*build_uni_bayesma(table1()), 1);
    check_block_densities(*build_bi_bayesma(table1()), 2);
    check_block_densities(*build_uni_bmema(table2(), spec_of(ModelKind::UniBMEMA)), 3);
    check_block_densities(*build_bi_bmema(table2(), spec_of(ModelKind::BiBMEMA)), 4);
    ModelSpec ig = spec_of(ModelKind::UniBMEMA);
    ig.gamma_prior = GammaPrior::InvGammaOnPhi2;
    check_block_densities(*build_uni_bmema(table2(), ig), 5);

    const auto sim = small_multi(2, 5, 40, {"1", "2"}, 3);
    ModelSpec m = spec_of(ModelKind::MultiIPD);
    m.k_prime_ids = std::set<std::string>{"1", "2"};
    const auto multi = build_multi_ipd_bmema(sim.corrupted, m);
    check_block_densities(*multi, 6);
    check_exact_draws_stay_finite(*multi, 7);
    check_block_densities(*build_multi_bayesma(refit_regressions(sim.clean)), 8);
}

TEST_CASE("univariate meta-analysis matches quadrature of the marginal posterior") {
    const auto model = build_uni_bayesma(table1());
    const PosteriorSummary s = run_chains(*model, short_run(30000));
    const oracle::Marginal ref = oracle::uni_ma_quadrature(table1(), 100.0, 2.0, 0.2, 0.9, 0.6, 700, 1200);
    CHECK(s.at("theta").mean == doctest::Approx(ref.mean).epsilon(0.01));
    CHECK(oracle::ks_distance(s.draws.pooled("theta"), ref) < 0.03);
}

TEST_CASE("a meta-analysis with every study gold-standard reduces to the error-free model") {
    std::vector<StudySummary> all_clean = table2();
    for (auto& s : all_clean) s.known_clean = true;
    const auto cfg = short_run(20000, 4);
    const PosteriorSummary uni = run_chains(*build_uni_bayesma(all_clean), cfg);
    const PosteriorSummary uni_me = run_chains(*build_uni_bmema(all_clean, spec_of(ModelKind::UniBMEMA)), cfg);
    CHECK(uni_me.at("theta").median == doctest::Approx(uni.at("theta").median).epsilon(0.02));
    CHECK(uni_me.at("theta").sd == doctest::Approx(uni.at("theta").sd).epsilon(0.1));

    const PosteriorSummary bi = run_chains(*build_bi_bayesma(all_clean), cfg);
    const PosteriorSummary bi_me = run_chains(*build_bi_bmema(all_clean, spec_of(ModelKind::BiBMEMA)), cfg);
    CHECK(bi_me.at("theta").median == doctest::Approx(bi.at("theta").median).epsilon(0.02));
    CHECK(bi_me.at("xi").median == doctest::Approx(bi.at("xi").median).epsilon(0.03));
}

TEST_CASE("error-prone studies get gamma outputs in the unit interval") {
    const auto model = build_bi_bmema(table2(), spec_of(ModelKind::BiBMEMA));
    const PosteriorSummary s = run_chains(*model, short_run(4000));
    int gammas = 0;
    for (const auto& p : s.parameters) {
        if (p.name.rfind("gamma[", 0) != 0) continue;
        ++gammas;
        CHECK(p.q025 > 0.0);
        CHECK(p.q975 <= 1.0);
    }
    CHECK(gammas == 8);
}

TEST_CASE("all studies error-prone raises the partial-identification warning") {
    ModelSpec s = spec_of(ModelKind::UniBMEMA);
    s.k_prime_ids = std::set<std::string>{};
    CHECK_FALSE(build_uni_bmema(table2(), s)->warnings().empty());
    s.k_prime_ids.reset();
    CHECK(build_uni_bmema(table2(), s)->warnings().empty());
}
