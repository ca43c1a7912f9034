#include <doctest.h>

#include <cmath>

#include "mema/csv.hpp"
#include "mema/identification.hpp"
#include "mema/random.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mema;

namespace {

IdentificationProblem fig2(double tau_bar) {
    IdentificationProblem p;
    const csv::Table t = csv::read(test_data("fig2_identification.csv"));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        p.beta_star.push_back(csv::to_double(t, r, t.require_column("beta_star")));
        p.gamma_lower.push_back(csv::to_double(t, r, t.require_column("gamma_lower")));
    }
    p.tau_bar = tau_bar;
    return p;
}

}  // namespace

TEST_CASE("study intervals") {
    const Interval i = study_interval(0.4, 0.2);
    CHECK(i.lo == doctest::Approx(0.4));
    CHECK(i.hi == doctest::Approx(2.0));
    const Interval neg = study_interval(-0.3, 0.5);
    CHECK(neg.lo == doctest::Approx(-0.6));
    CHECK(neg.hi == doctest::Approx(-0.3));
    CHECK(study_interval(0.5, 1.0).width() == 0.0);
    CHECK(error_code_of([] { study_interval(0.5, 0.0); }) == ErrorCode::DomainError);
    CHECK(error_code_of([] { study_interval(0.5, 1.5); }) == ErrorCode::DomainError);
}

TEST_CASE("intersection") {
    CHECK(intersect({{0, 2, false}, {1, 3, false}}).lo == 1);
    CHECK(intersect({{0, 2, false}, {1, 3, false}}).hi == 2);
    CHECK(intersect({{0, 1, false}, {2, 3, false}}).empty);
    CHECK(intersect({}).empty);
}

TEST_CASE("validation") {
    IdentificationProblem p;
    CHECK(error_code_of([&] { validate(p); }) == ErrorCode::EmptyInput);
    p.beta_star = {0.1, 0.2};
    p.gamma_lower = {0.5};
    CHECK(error_code_of([&] { validate(p); }) == ErrorCode::LengthMismatch);
    p.gamma_lower = {0.5, 0.5};
    p.tau_bar = -1;
    CHECK(error_code_of([&] { validate(p); }) == ErrorCode::DomainError);
}

TEST_CASE("fixed-effects region is the intersection") {
    const auto p = fig2(0.0);
    CHECK(feasible_at(1.0, p));
    CHECK_FALSE(feasible_at(0.7, p));
    const Interval r = identification_interval(p);
    const Interval common = intersect(study_intervals(p));
    CHECK(r.lo == doctest::Approx(common.lo).epsilon(1e-3));
    CHECK(r.hi == doctest::Approx(common.hi).epsilon(1e-3));
    CHECK(r.lo == doctest::Approx(0.8).epsilon(0.01));
    CHECK(r.hi == doctest::Approx(2.0).epsilon(0.01));
}

TEST_CASE("random-effects region for the illustrative scenario") {
    const Interval r = identification_interval(fig2(0.5));
    CHECK(std::abs(r.lo - 0.6) <= 0.05);
    CHECK(std::abs(r.hi - 2.9) <= 0.05);
}

TEST_CASE("regions are nested and grow with tau_bar") {
    double lo = 1e9, hi = -1e9;
    for (double tau : {0.0, 0.1, 0.2, 0.35, 0.5, 0.8, 1.2}) {
        const Interval r = identification_interval(fig2(tau));
        CHECK(r.lo <= lo + 1e-9);
        CHECK(r.hi >= hi - 1e-9);
        lo = r.lo;
        hi = r.hi;
    }
}

TEST_CASE("empty region when the study intervals are far apart and tau_bar is small") {
    IdentificationProblem p;
    p.beta_star = {0.1, 5.0};
    p.gamma_lower = {0.9, 0.9};
    p.tau_bar = 0.0;
    CHECK(error_code_of([&] { identification_interval(p); }) == ErrorCode::EmptyRegion);
    p.tau_bar = 5.0;
    CHECK_NOTHROW(identification_interval(p));
}

TEST_CASE("min variance solution satisfies the constraints and beats a brute-force search") {
    Rng rng(21, 0);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t k = 2 + rep % 3;
        std::vector<Interval> boxes;
        double lo_sum = 0, hi_sum = 0;
        for (std::size_t i = 0; i < k; ++i) {
            boxes.push_back(study_interval(rng.normal(0.5, 0.5), 0.2 + 0.7 * rng.uniform()));
            lo_sum += boxes.back().lo;
            hi_sum += boxes.back().hi;
        }
        const double x = (lo_sum + (hi_sum - lo_sum) * rng.uniform()) / k;
        const MinVariance m = min_variance_at(x, boxes);
        REQUIRE(m.feasible);
        double mean = 0;
        for (std::size_t i = 0; i < k; ++i) {
            CHECK(boxes[i].lo - 1e-12 <= m.beta[i]);
            CHECK(m.beta[i] <= boxes[i].hi + 1e-12);
            mean += m.beta[i] / k;
        }
        CHECK(mean == doctest::Approx(x).epsilon(1e-9));
        CHECK(m.variance <= oracle::brute_min_variance(x, boxes) + 1e-12);
    }
}

TEST_CASE("svg output is deterministic") {
    const auto p = fig2(0.5);
    const std::vector<std::pair<double, Interval>> regions = {{0.0, identification_interval(fig2(0.0))},
                                                              {0.5, identification_interval(p)}};
    const std::string a = identification_svg(p, regions);
    CHECK(a == identification_svg(p, regions));
    CHECK(a.find("<svg") != std::string::npos);
    CHECK(a.find("tau_bar=0.5") != std::string::npos);
}
