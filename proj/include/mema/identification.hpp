#pragma once

#include <string>
#include <utility>
#include <vector>

namespace mema {

/// Closed interval [lo, hi], or the empty set.
struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool empty = false;

    static Interval none() { return {0.0, 0.0, true}; }
    bool contains(double x) const { return !empty && lo <= x && x <= hi; }
    double width() const { return empty ? 0.0 : hi - lo; }
};

/// Intersection of all intervals; empty if any pair is disjoint.
Interval intersect(const std::vector<Interval>& intervals);

struct IdentificationProblem {
    std::vector<double> beta_star;
    std::vector<double> gamma_lower;
    double tau_bar = 0.0;
    double grid_step = 0.01;
};

/// Throws LengthMismatch, EmptyInput or DomainError.
void validate(const IdentificationProblem& problem);

/// Values of beta compatible with beta_star under gamma in [gamma_lower, 1],
/// in canonical order. DomainError unless gamma_lower is in (0, 1].
Interval study_interval(double beta_star, double gamma_lower);

std::vector<Interval> study_intervals(const IdentificationProblem& problem);

/// Minimizer of sum (b_k - x)^2 subject to b_k in box k and mean(b) = x.
struct MinVariance {
    bool feasible = false;
    std::vector<double> beta;
    double variance = 0.0;  // divisor K - 1; zero for K = 1
};

/// Solved exactly: b_k = clip(x + nu) and the clipped sum is piecewise linear
/// in nu, so nu is found by a search over its breakpoints.
MinVariance min_variance_at(double x, const std::vector<Interval>& boxes);

/// True iff some b in the boxes has mean x and sample s.d. at most tau_bar.
bool feasible_at(double x, const IdentificationProblem& problem);

/// The set of feasible x, found by scanning outward from a feasible seed in
/// steps of grid_step and bisecting each end to grid_step / 100. Throws
/// EmptyRegion when nothing is feasible.
Interval identification_interval(const IdentificationProblem& problem);

/// Study intervals as vertical segments with the identification region for
/// each (tau_bar, interval) pair drawn as a horizontal band.
std::string identification_svg(const IdentificationProblem& problem,
                               const std::vector<std::pair<double, Interval>>& regions);

}  // namespace mema
