#include "mema/summary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mema/error.hpp"

namespace mema {

std::size_t Draws::parameter_index(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw Error(ErrorCode::DomainError, "no parameter named '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
}

std::vector<double> Draws::pooled(const std::string& name) const { return pooled(parameter_index(name)); }

std::vector<double> Draws::pooled(std::size_t index) const {
    std::vector<double> out;
    out.reserve(total_draws());
    for (const auto& c : chains) {
        for (Eigen::Index i = 0; i < c.rows(); ++i) out.push_back(c(i, static_cast<Eigen::Index>(index)));
    }
    return out;
}

std::vector<std::vector<double>> Draws::per_chain(std::size_t index) const {
    std::vector<std::vector<double>> out;
    for (const auto& c : chains) {
        std::vector<double> v(static_cast<std::size_t>(c.rows()));
        for (Eigen::Index i = 0; i < c.rows(); ++i) v[static_cast<std::size_t>(i)] = c(i, static_cast<Eigen::Index>(index));
        out.push_back(std::move(v));
    }
    return out;
}

const ParameterSummary& PosteriorSummary::at(const std::string& name) const {
    for (const auto& p : parameters) {
        if (p.name == name) return p;
    }
    throw Error(ErrorCode::DomainError, "no parameter named '" + name + "'");
}

bool PosteriorSummary::has(const std::string& name) const {
    return std::any_of(parameters.begin(), parameters.end(), [&](const auto& p) { return p.name == name; });
}

double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw Error(ErrorCode::InsufficientDraws, "quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    return quantile_sorted(values, p);
}

namespace {

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double var_of(const std::vector<double>& v, double m) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

}  // namespace

double split_rhat(const std::vector<std::vector<double>>& chains) {
    std::vector<std::vector<double>> halves;
    for (const auto& c : chains) {
        const std::size_t half = c.size() / 2;
        if (half < 2) throw Error(ErrorCode::InsufficientDraws, "split R-hat needs at least 4 draws per chain");
        halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
        halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
    }
    const double n = static_cast<double>(halves.front().size());
    const double m = static_cast<double>(halves.size());
    std::vector<double> means;
    double w = 0.0;
    for (const auto& h : halves) {
        const double mu = mean_of(h);
        means.push_back(mu);
        w += var_of(h, mu);
    }
    w /= m;
    const double grand = mean_of(means);
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    b *= n / (m - 1.0);
    const double scale = std::max(1.0, std::abs(grand));
    if (w <= 1e-300 * scale) return b <= 1e-24 * scale * scale ? 1.0 : std::numeric_limits<double>::infinity();
    const double var_plus = (n - 1.0) / n * w + b / n;
    return std::sqrt(var_plus / w);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
    const std::size_t m = chains.size();
    const std::size_t n = chains.front().size();
    for (const auto& c : chains) {
        if (c.size() != n) throw Error(ErrorCode::DimensionMismatch, "chains differ in length");
    }
    if (n < 4) throw Error(ErrorCode::InsufficientDraws, "ESS needs at least 4 draws per chain");
    const double total = static_cast<double>(m * n);

    std::vector<double> means(m), vars(m);
    for (std::size_t c = 0; c < m; ++c) {
        means[c] = mean_of(chains[c]);
        vars[c] = var_of(chains[c], means[c]);
    }
    const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / static_cast<double>(m);
    double b_over_n = 0.0;
    if (m > 1) {
        const double grand = mean_of(means);
        for (double mu : means) b_over_n += (mu - grand) * (mu - grand);
        b_over_n /= static_cast<double>(m - 1);
    }
    const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * w + b_over_n;
    if (!(var_plus > 0.0) || !(w > 0.0)) return total;

    auto autocov = [&](std::size_t lag) {
        double acc = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            const auto& x = chains[c];
            double s = 0.0;
            for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - means[c]) * (x[i + lag] - means[c]);
            acc += s / static_cast<double>(n);
        }
        return acc / static_cast<double>(m);
    };
    auto rho = [&](std::size_t lag) { return 1.0 - (w - autocov(lag)) / var_plus; };

    // Geyer initial positive and monotone sequence over pairs of lags.
    double sum_pairs = 0.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t + 1 < n; t += 2) {
        double pair = (t == 0 ? 1.0 : rho(t)) + rho(t + 1);
        if (pair <= 0.0) break;
        pair = std::min(pair, prev_pair);
        prev_pair = pair;
        sum_pairs += pair;
    }
    const double tau = std::max(-1.0 + 2.0 * sum_pairs, 1.0 / std::log10(total));
    return std::min(total, total / tau);
}

double mcse_mean(const std::vector<std::vector<double>>& chains) {
    std::vector<double> all;
    for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
    const double sd = std::sqrt(var_of(all, mean_of(all)));
    return sd / std::sqrt(effective_sample_size(chains));
}

double mcse_quantile(const std::vector<std::vector<double>>& chains, double p) {
    std::vector<double> all;
    for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
    std::sort(all.begin(), all.end());
    const double q = quantile_sorted(all, p);
    std::vector<std::vector<double>> ind;
    for (const auto& c : chains) {
        std::vector<double> v(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) v[i] = c[i] <= q ? 1.0 : 0.0;
        ind.push_back(std::move(v));
    }
    const double ess = effective_sample_size(ind);
    const double se_p = std::sqrt(p * (1.0 - p) / ess);
    const double lo = quantile_sorted(all, std::max(0.0, p - se_p));
    const double hi = quantile_sorted(all, std::min(1.0, p + se_p));
    return 0.5 * (hi - lo);
}

PosteriorSummary summarize(Draws draws) {
    if (draws.chains.size() < 2) throw Error(ErrorCode::InsufficientDraws, "need at least 2 chains");
    const std::size_t n = draws.draws_per_chain();
    if (n < 100) throw Error(ErrorCode::InsufficientDraws, "need at least 100 retained draws per chain");
    for (const auto& c : draws.chains) {
        if (static_cast<std::size_t>(c.rows()) != n || static_cast<std::size_t>(c.cols()) != draws.names.size()) {
            throw Error(ErrorCode::DimensionMismatch, "chains have inconsistent shapes");
        }
    }
    PosteriorSummary out;
    for (std::size_t j = 0; j < draws.names.size(); ++j) {
        auto chains = draws.per_chain(j);
        std::vector<double> all = draws.pooled(j);
        ParameterSummary s;
        s.name = draws.names[j];
        s.mean = mean_of(all);
        s.sd = std::sqrt(var_of(all, s.mean));
        std::sort(all.begin(), all.end());
        s.median = quantile_sorted(all, 0.5);
        s.q025 = quantile_sorted(all, 0.025);
        s.q975 = quantile_sorted(all, 0.975);
        s.rhat = split_rhat(chains);
        s.ess = effective_sample_size(chains);
        out.parameters.push_back(std::move(s));
    }
    out.draws = std::move(draws);
    return out;
}

}  // namespace mema
