#include "mema/identification.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>

#include "mema/error.hpp"

namespace mema {

Interval intersect(const std::vector<Interval>& intervals) {
    if (intervals.empty()) return Interval::none();
    Interval out{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), false};
    for (const auto& i : intervals) {
        if (i.empty) return Interval::none();
        out.lo = std::max(out.lo, i.lo);
        out.hi = std::min(out.hi, i.hi);
    }
    if (out.lo > out.hi) return Interval::none();
    return out;
}

void validate(const IdentificationProblem& p) {
    if (p.beta_star.empty()) throw Error(ErrorCode::EmptyInput, "no studies in identification problem");
    if (p.beta_star.size() != p.gamma_lower.size()) {
        throw Error(ErrorCode::LengthMismatch, "beta_star and gamma_lower differ in length");
    }
    if (!(p.tau_bar >= 0.0) || !std::isfinite(p.tau_bar)) throw Error(ErrorCode::DomainError, "tau_bar must be >= 0");
    if (!(p.grid_step > 0.0) || !std::isfinite(p.grid_step)) throw Error(ErrorCode::DomainError, "grid_step must be > 0");
    for (double b : p.beta_star) {
        if (!std::isfinite(b)) throw Error(ErrorCode::DomainError, "beta_star must be finite");
    }
}

Interval study_interval(double beta_star, double gamma_lower) {
    if (!(gamma_lower > 0.0 && gamma_lower <= 1.0)) {
        throw Error(ErrorCode::DomainError, "gamma_lower must lie in (0, 1]");
    }
    const double far = beta_star / gamma_lower;
    return {std::min(beta_star, far), std::max(beta_star, far), false};
}

std::vector<Interval> study_intervals(const IdentificationProblem& p) {
    validate(p);
    std::vector<Interval> out;
    for (std::size_t k = 0; k < p.beta_star.size(); ++k) out.push_back(study_interval(p.beta_star[k], p.gamma_lower[k]));
    return out;
}

MinVariance min_variance_at(double x, const std::vector<Interval>& boxes) {
    MinVariance out;
    const double kk = static_cast<double>(boxes.size());
    const double target = kk * x;
    double lo_sum = 0.0, hi_sum = 0.0;
    for (const auto& b : boxes) {
        lo_sum += b.lo;
        hi_sum += b.hi;
    }
    if (boxes.empty() || target < lo_sum || target > hi_sum) return out;

    const auto clipped_sum = [&](double nu) {
        double s = 0.0;
        for (const auto& b : boxes) s += std::clamp(x + nu, b.lo, b.hi);
        return s;
    };
    std::vector<double> knots;
    for (const auto& b : boxes) {
        knots.push_back(b.lo - x);
        knots.push_back(b.hi - x);
    }
    std::sort(knots.begin(), knots.end());
    // The clipped sum runs from lo_sum at the first knot to hi_sum at the last.
    double nu = knots.front();
    double f_prev = clipped_sum(knots.front());
    for (std::size_t i = 1; i < knots.size() && f_prev < target; ++i) {
        const double f = clipped_sum(knots[i]);
        if (f >= target) {
            nu = f > f_prev ? knots[i - 1] + (target - f_prev) * (knots[i] - knots[i - 1]) / (f - f_prev) : knots[i - 1];
            f_prev = target;
            break;
        }
        f_prev = f;
        nu = knots[i];
    }
    out.feasible = true;
    double ss = 0.0;
    for (const auto& b : boxes) {
        out.beta.push_back(std::clamp(x + nu, b.lo, b.hi));
        ss += (out.beta.back() - x) * (out.beta.back() - x);
    }
    out.variance = boxes.size() > 1 ? ss / (kk - 1.0) : 0.0;
    return out;
}

namespace {

bool feasible_with(double x, const std::vector<Interval>& boxes, double tau_bar) {
    const MinVariance m = min_variance_at(x, boxes);
    return m.feasible && m.variance <= tau_bar * tau_bar * (1.0 + 1e-12) + 1e-15;
}

/// Moves from a feasible point toward an infeasible one and returns the last
/// feasible point found by bisection.
double refine(double inside, double outside, const std::vector<Interval>& boxes, double tau_bar, double tol) {
    while (std::abs(outside - inside) > tol) {
        const double mid = 0.5 * (inside + outside);
        (feasible_with(mid, boxes, tau_bar) ? inside : outside) = mid;
    }
    return inside;
}

}  // namespace

bool feasible_at(double x, const IdentificationProblem& problem) {
    return feasible_with(x, study_intervals(problem), problem.tau_bar);
}

Interval identification_interval(const IdentificationProblem& problem) {
    const auto boxes = study_intervals(problem);
    const double step = problem.grid_step, tau = problem.tau_bar;

    double lo_min = boxes.front().lo, hi_max = boxes.front().hi;
    for (const auto& b : boxes) {
        lo_min = std::min(lo_min, b.lo);
        hi_max = std::max(hi_max, b.hi);
    }
    const double span = hi_max - lo_min;
    const double scan_lo = lo_min - span, scan_hi = hi_max + span;

    std::optional<double> seed;
    if (const Interval common = intersect(boxes); !common.empty) {
        seed = 0.5 * (common.lo + common.hi);
    } else {
        for (double x = scan_lo; x <= scan_hi + 0.5 * step; x += step) {
            if (feasible_with(x, boxes, tau)) {
                seed = x;
                break;
            }
        }
    }
    if (!seed) throw Error(ErrorCode::EmptyRegion, "no value of theta is compatible with the bounds");

    Interval out{*seed, *seed, false};
    double x = *seed;
    while (x + step <= scan_hi && feasible_with(x + step, boxes, tau)) x += step;
    out.hi = refine(x, x + step, boxes, tau, step / 100.0);
    x = *seed;
    while (x - step >= scan_lo && feasible_with(x - step, boxes, tau)) x -= step;
    out.lo = refine(x, x - step, boxes, tau, step / 100.0);
    return out;
}

std::string identification_svg(const IdentificationProblem& problem,
                               const std::vector<std::pair<double, Interval>>& regions) {
    const auto boxes = study_intervals(problem);
    double lo = boxes.front().lo, hi = boxes.front().hi;
    for (const auto& b : boxes) {
        lo = std::min(lo, b.lo);
        hi = std::max(hi, b.hi);
    }
    for (const auto& [tau, r] : regions) {
        if (r.empty) continue;
        lo = std::min(lo, r.lo);
        hi = std::max(hi, r.hi);
    }
    const double pad = 0.05 * std::max(hi - lo, 1e-9);
    lo -= pad;
    hi += pad;

    const double width = 640, height = 420, left = 60, right = 20, top = 20, bottom = 40;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    const auto k = static_cast<double>(boxes.size());
    const auto px = [&](double i) { return left + plot_w * (i + 0.5) / k; };
    const auto py = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

    std::ostringstream svg;
    char buf[256];
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"%.0f\" height=\"%.0f\">\n", width, height);
    svg << buf;
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const char* fills[] = {"#9ecae1", "#fdae6b", "#a1d99b", "#bcbddc"};
    for (std::size_t r = 0; r < regions.size(); ++r) {
        const auto& [tau, region] = regions[r];
        if (region.empty) continue;
        std::snprintf(buf, sizeof buf,
                      "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\" fill-opacity=\"0.5\"/>\n", left,
                      py(region.hi), plot_w, py(region.lo) - py(region.hi), fills[r % 4]);
        svg << buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"end\">tau_bar=%.3g: [%.3f, %.3f]</text>\n",
                      width - right - 4, py(region.hi) + 12, tau, region.lo, region.hi);
        svg << buf;
    }
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const double x = px(static_cast<double>(i));
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\" stroke-width=\"2\"/>\n", x,
                      py(boxes[i].lo), x, py(boxes[i].hi));
        svg << buf;
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"black\"/>\n", x, py(problem.beta_star[i]));
        svg << buf;
        std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"10\" text-anchor=\"middle\">%zu</text>\n", x,
                      height - bottom + 14, i + 1);
        svg << buf;
    }
    std::snprintf(buf, sizeof buf, "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n", left, top, left,
                  top + plot_h);
    svg << buf;
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.2f\" y=\"%.2f\" font-size=\"10\" text-anchor=\"end\">%.2f</text>\n", left - 4, py(v) + 3, v);
        svg << buf;
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"middle\">study</text>\n",
                  left + plot_w / 2, height - 6);
    svg << buf;
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace mema
