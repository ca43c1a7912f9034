#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mema/identification.hpp"
#include "mema/study_data.hpp"

namespace oracle {

inline double normal_cdf(double x, double m, double s) { return 0.5 * std::erfc(-(x - m) / (s * std::sqrt(2.0))); }

/// Overlapping coefficient of N(m1, s1^2) and N(m2, s2^2), from the crossing
/// points of the two densities.
inline double normal_overlap(double m1, double s1, double m2, double s2) {
    if (s1 == s2) {
        const double c = 0.5 * (m1 + m2);
        const double lo = m1 < m2 ? normal_cdf(c, m2, s2) + 1.0 - normal_cdf(c, m1, s1)
                                  : normal_cdf(c, m1, s1) + 1.0 - normal_cdf(c, m2, s2);
        return std::min(1.0, lo);
    }
    // Make s1 the narrower density.
    if (s1 > s2) {
        std::swap(m1, m2);
        std::swap(s1, s2);
    }
    const double a = 1.0 / (2 * s1 * s1) - 1.0 / (2 * s2 * s2);
    const double b = m2 / (s2 * s2) - m1 / (s1 * s1);
    const double c = m1 * m1 / (2 * s1 * s1) - m2 * m2 / (2 * s2 * s2) - std::log(s2 / s1);
    const double disc = std::sqrt(b * b - 4 * a * c);
    const double x1 = (-b - disc) / (2 * a), x2 = (-b + disc) / (2 * a);
    // Between the crossings the narrow density is larger.
    const double narrow_outside = normal_cdf(x1, m1, s1) + 1.0 - normal_cdf(x2, m1, s1);
    const double wide_inside = normal_cdf(x2, m2, s2) - normal_cdf(x1, m2, s2);
    return narrow_outside + wide_inside;
}

/// Posterior of theta in the marginal random-effects model
///   beta_hat_k ~ N(theta, tau^2 + se_k^2), theta ~ N(0, v0), tau ~ HalfCauchy(0, c)
/// by tensor-grid quadrature over (theta, tau). Returns the theta grid and CDF.
struct Marginal {
    std::vector<double> grid;
    std::vector<double> cdf;
    double mean = 0.0;

    double cdf_at(double x) const {
        if (x <= grid.front()) return 0.0;
        if (x >= grid.back()) return 1.0;
        const auto it = std::upper_bound(grid.begin(), grid.end(), x);
        const std::size_t i = static_cast<std::size_t>(it - grid.begin());
        const double t = (x - grid[i - 1]) / (grid[i] - grid[i - 1]);
        return cdf[i - 1] + t * (cdf[i] - cdf[i - 1]);
    }
};

inline Marginal uni_ma_quadrature(const std::vector<mema::StudySummary>& s, double v0 = 100.0, double c = 2.0,
                                  double theta_lo = -1.0, double theta_hi = 2.0, double tau_hi = 3.0, int nt = 3000,
                                  int nu = 3000) {
    Marginal out;
    std::vector<double> dens(static_cast<std::size_t>(nt), 0.0);
    std::vector<double> logp(static_cast<std::size_t>(nt) * static_cast<std::size_t>(nu));
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < nt; ++i) {
        const double th = theta_lo + (theta_hi - theta_lo) * (i + 0.5) / nt;
        for (int j = 0; j < nu; ++j) {
            const double tau = tau_hi * (j + 0.5) / nu;
            double lp = -th * th / (2 * v0) - std::log1p(tau * tau / (c * c));
            for (const auto& k : s) {
                const double v = tau * tau + k.se_beta * k.se_beta;
                lp += -0.5 * std::log(v) - 0.5 * (k.beta_hat - th) * (k.beta_hat - th) / v;
            }
            logp[static_cast<std::size_t>(i) * nu + j] = lp;
            best = std::max(best, lp);
        }
    }
    double total = 0.0;
    for (int i = 0; i < nt; ++i) {
        for (int j = 0; j < nu; ++j) dens[static_cast<std::size_t>(i)] += std::exp(logp[static_cast<std::size_t>(i) * nu + j] - best);
        total += dens[static_cast<std::size_t>(i)];
    }
    double acc = 0.0;
    out.grid.push_back(theta_lo);
    out.cdf.push_back(0.0);
    for (int i = 0; i < nt; ++i) {
        const double th = theta_lo + (theta_hi - theta_lo) * (i + 0.5) / nt;
        acc += dens[static_cast<std::size_t>(i)] / total;
        out.mean += th * dens[static_cast<std::size_t>(i)] / total;
        out.grid.push_back(theta_lo + (theta_hi - theta_lo) * (i + 1.0) / nt);
        out.cdf.push_back(acc);
    }
    return out;
}

/// Kolmogorov-Smirnov distance between draws and a reference CDF.
inline double ks_distance(std::vector<double> draws, const Marginal& ref) {
    std::sort(draws.begin(), draws.end());
    const double n = static_cast<double>(draws.size());
    double d = 0.0;
    for (std::size_t i = 0; i < draws.size(); ++i) {
        const double f = ref.cdf_at(draws[i]);
        d = std::max({d, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
    }
    return d;
}

/// Minimal sample variance (divisor K - 1) of b with b_k in box k and mean x,
/// by zooming grid enumeration over the first K - 1 coordinates (the last is
/// fixed by the mean). Infinity when no grid point is feasible.
inline double brute_min_variance(double x, std::vector<mema::Interval> boxes, int points = 41, int levels = 6) {
    // The widest box takes the coordinate fixed by the mean.
    std::sort(boxes.begin(), boxes.end(), [](const auto& a, const auto& b) { return a.width() < b.width(); });
    const std::size_t k = boxes.size();
    const double inf = std::numeric_limits<double>::infinity();
    if (k == 1) return boxes[0].contains(x) ? 0.0 : inf;
    const std::size_t free = k - 1;
    std::vector<double> lo(free), hi(free);
    for (std::size_t i = 0; i < free; ++i) {
        lo[i] = boxes[i].lo;
        hi[i] = boxes[i].hi;
    }
    double best = inf;
    std::vector<double> best_b(free);
    for (int level = 0; level < levels; ++level) {
        std::vector<int> idx(free, 0);
        bool found = false;
        double level_best = inf;
        std::vector<double> level_b(free);
        while (true) {
            double sum = 0.0;
            std::vector<double> b(free);
            for (std::size_t i = 0; i < free; ++i) {
                b[i] = points == 1 ? lo[i] : lo[i] + (hi[i] - lo[i]) * idx[i] / (points - 1);
                sum += b[i];
            }
            const double last = k * x - sum;
            const double tol = 1e-12 * (1.0 + std::abs(last));
            if (last >= boxes[k - 1].lo - tol && last <= boxes[k - 1].hi + tol) {
                double ss = (last - x) * (last - x);
                for (double v : b) ss += (v - x) * (v - x);
                const double var = ss / (k - 1.0);
                if (var < level_best) {
                    level_best = var;
                    level_b = b;
                    found = true;
                }
            }
            std::size_t d = 0;
            while (d < free && ++idx[d] == points) idx[d++] = 0;
            if (d == free) break;
        }
        if (!found) return best;
        if (level_best < best) {
            best = level_best;
            best_b = level_b;
        }
        for (std::size_t i = 0; i < free; ++i) {
            const double step = (hi[i] - lo[i]) / (points - 1);
            lo[i] = std::max(boxes[i].lo, best_b[i] - 2 * step);
            hi[i] = std::min(boxes[i].hi, best_b[i] + 2 * step);
        }
    }
    return best;
}

}  // namespace oracle
