#include "mema/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <optional>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/inverse_gamma.hpp>
#include <boost/math/distributions/normal.hpp>

#include "mema/csv.hpp"
#include "mema/error.hpp"
#include "mema/random.hpp"

namespace mema {

namespace {

constexpr std::size_t kMinDraws = 1000;
constexpr std::size_t kGridPoints = 512;
constexpr std::size_t kMaxFinePoints = 1 << 14;
constexpr double kTail = 5e-5;  // each side of the prior's central 99.99%

double sd_of(std::span<const double> v) {
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / (n - 1.0));
}

void sort_unique(std::vector<double>& g) {
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
}

void append_uniform(std::vector<double>& g, double lo, double hi, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) g.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
}

/// Quantile of a scalar prior; InvWishart is read as its 1 x 1 case.
double prior_quantile(const PriorSpec& prior, double p) {
    using namespace boost::math;
    return std::visit(
        [p](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, prior::Normal>) {
                return quantile(normal_distribution<>(d.mean, std::sqrt(d.variance)), p);
            } else if constexpr (std::is_same_v<T, prior::HalfCauchy>) {
                return d.location + d.scale * std::tan(0.5 * std::numbers::pi * p);
            } else if constexpr (std::is_same_v<T, prior::Uniform>) {
                return d.lo + (d.hi - d.lo) * p;
            } else if constexpr (std::is_same_v<T, prior::Exponential>) {
                return -std::log1p(-p) / d.rate;
            } else if constexpr (std::is_same_v<T, prior::InvGamma>) {
                return quantile(inverse_gamma_distribution<>(d.shape, d.scale), p);
            } else {
                return quantile(inverse_gamma_distribution<>(0.5 * d.df, 0.5 * d.scale(0, 0)), p);
            }
        },
        prior);
}

struct Curves {
    std::vector<double> grid, prior, posterior;
};

/// Inserts (edge, 0) and (edge, inner limit) pairs at finite support edges
/// so the trapezoid rule integrates the jump exactly.
Curves tabulate(std::vector<double> grid, const std::function<double(double)>& prior_pdf, const Support& support,
                const Kde& posterior) {
    sort_unique(grid);
    Curves c;
    const auto push = [&](double x, double p) {
        c.grid.push_back(x);
        c.prior.push_back(p);
        c.posterior.push_back(posterior(x));
    };
    const bool lo_edge = std::isfinite(support.lo) && support.lo > grid.front();
    const bool hi_edge = std::isfinite(support.hi) && support.hi < grid.back();
    bool lo_done = !lo_edge, hi_done = !hi_edge;
    for (double x : grid) {
        if (!lo_done && x >= support.lo) {
            push(support.lo, 0.0);
            push(support.lo, prior_pdf(std::nextafter(support.lo, support.hi)));
            lo_done = true;
            if (x == support.lo) continue;
        }
        if (!hi_done && x >= support.hi) {
            push(support.hi, prior_pdf(std::nextafter(support.hi, support.lo)));
            push(support.hi, 0.0);
            hi_done = true;
            if (x == support.hi) continue;
        }
        push(x, prior_pdf(x));
    }
    return c;
}

PpoReport finish(const std::string& name, Curves c) {
    PpoReport r;
    r.parameter = name;
    std::vector<double> lower(c.grid.size());
    for (std::size_t i = 0; i < lower.size(); ++i) lower[i] = std::min(c.prior[i], c.posterior[i]);
    r.overlap = std::clamp(100.0 * trapezoid(c.grid, lower), 0.0, 100.0);
    r.grid = std::move(c.grid);
    r.prior_density = std::move(c.prior);
    r.posterior_density = std::move(c.posterior);
    return r;
}

/// Fine grid over a KDE's effective range, step at most h / 4.
void append_kde_range(std::vector<double>& g, const Kde& k) {
    const double lo = k.lo() - 4.0 * k.bandwidth(), hi = k.hi() + 4.0 * k.bandwidth();
    const auto want = static_cast<std::size_t>(std::ceil((hi - lo) / (0.25 * k.bandwidth()))) + 1;
    append_uniform(g, lo, hi, std::clamp(want, kGridPoints, kMaxFinePoints));
}

void require_draws(std::span<const double> draws, const char* what) {
    if (draws.size() < kMinDraws) {
        throw Error(ErrorCode::InsufficientDraws,
                    std::string(what) + " needs at least 1000 draws, got " + std::to_string(draws.size()));
    }
    for (double d : draws) {
        if (!std::isfinite(d)) throw Error(ErrorCode::DomainError, std::string(what) + " draws must be finite");
    }
}

}  // namespace

double silverman_bandwidth(std::span<const double> draws) {
    std::vector<double> s(draws.begin(), draws.end());
    std::sort(s.begin(), s.end());
    const double iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
    double spread = std::min(sd_of(s), iqr / 1.34);
    if (!(spread > 0.0)) spread = sd_of(s);
    if (!(spread > 0.0)) spread = std::max(1e-8, 1e-8 * std::abs(s.front()));
    return 0.9 * spread * std::pow(static_cast<double>(s.size()), -0.2);
}

Kde::Kde(std::vector<double> draws) : sorted_(std::move(draws)) {
    if (sorted_.size() < 2) throw Error(ErrorCode::InsufficientDraws, "density estimate needs at least 2 draws");
    std::sort(sorted_.begin(), sorted_.end());
    h_ = silverman_bandwidth(sorted_);
}

Kde::Kde(std::vector<double> draws, double lower_bound, double upper_bound) : Kde(std::move(draws)) {
    if (!(lower_bound < upper_bound) || sorted_.front() < lower_bound || sorted_.back() > upper_bound) {
        throw Error(ErrorCode::DomainError, "density estimate bounds must contain every draw");
    }
    lower_ = lower_bound;
    upper_ = upper_bound;
}

double Kde::sum_near(double x) const {
    const double reach = 8.0 * h_;
    auto it = std::lower_bound(sorted_.begin(), sorted_.end(), x - reach);
    const auto end = std::upper_bound(it, sorted_.end(), x + reach);
    double s = 0.0;
    for (; it != end; ++it) {
        const double u = (x - *it) / h_;
        s += std::exp(-0.5 * u * u);
    }
    return s;
}

double Kde::operator()(double x) const {
    if (x < lower_ || x > upper_) return 0.0;
    double s = sum_near(x);
    // The kernel at the mirror image 2b - x_i, evaluated at x, equals the kernel at x_i evaluated at 2b - x.
    if (std::isfinite(lower_)) s += sum_near(2.0 * lower_ - x);
    if (std::isfinite(upper_)) s += sum_near(2.0 * upper_ - x);
    return s / (static_cast<double>(sorted_.size()) * h_ * std::sqrt(2.0 * std::numbers::pi));
}

double trapezoid(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return s;
}

PpoReport ppo(const std::string& parameter, const PriorSpec& prior, std::span<const double> posterior_draws) {
    validate(prior);
    require_draws(posterior_draws, "PPO");
    const Support sup = support(prior);
    std::vector<double> pd(posterior_draws.begin(), posterior_draws.end());
    const bool inside = std::all_of(pd.begin(), pd.end(), [&](double x) { return x >= sup.lo && x <= sup.hi; });
    const Kde post = inside && (std::isfinite(sup.lo) || std::isfinite(sup.hi)) ? Kde(std::move(pd), sup.lo, sup.hi)
                                                                                 : Kde(std::move(pd));
    const double p_lo = prior_quantile(prior, kTail), p_hi = prior_quantile(prior, 1.0 - kTail);

    std::vector<double> grid;
    const double lo = std::min(p_lo, post.lo() - 4.0 * post.bandwidth());
    const double hi = std::max(p_hi, post.hi() + 4.0 * post.bandwidth());
    append_uniform(grid, lo, hi, kGridPoints);
    for (std::size_t i = 0; i < kGridPoints; ++i) {
        grid.push_back(prior_quantile(prior, kTail + (1.0 - 2.0 * kTail) * static_cast<double>(i) / (kGridPoints - 1)));
    }
    append_kde_range(grid, post);
    const auto pdf = [&prior](double x) { return std::exp(log_density(prior, x)); };
    return finish(parameter, tabulate(std::move(grid), pdf, sup, post));
}

PpoReport ppo_from_draws(const std::string& parameter, std::span<const double> prior_draws,
                         std::span<const double> posterior_draws) {
    require_draws(prior_draws, "PPO prior");
    require_draws(posterior_draws, "PPO");
    const Kde pri(std::vector<double>(prior_draws.begin(), prior_draws.end()));
    const Kde post(std::vector<double>(posterior_draws.begin(), posterior_draws.end()));
    std::vector<double> grid;
    append_uniform(grid, std::min(pri.lo() - 4.0 * pri.bandwidth(), post.lo() - 4.0 * post.bandwidth()),
                   std::max(pri.hi() + 4.0 * pri.bandwidth(), post.hi() + 4.0 * post.bandwidth()), kGridPoints);
    append_kde_range(grid, pri);
    append_kde_range(grid, post);
    return finish(parameter, tabulate(std::move(grid), std::cref(pri), Support{}, post));
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "correlation inputs differ in length");
    if (x.size() < 2) throw Error(ErrorCode::EmptyInput, "correlation needs at least 2 pairs");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    const double scale = 1e-12 * n;
    if (!(sxx > scale * mx * mx) || !(syy > scale * my * my) || sxx == 0.0 || syy == 0.0) {
        throw Error(ErrorCode::DegenerateInput, "correlation is undefined for a constant variable");
    }
    return sxy / std::sqrt(sxx * syy);
}

CorrelationTest het_error_test(const std::vector<StudySummary>& studies, int permutations, std::uint64_t seed) {
    if (studies.size() < 4) throw Error(ErrorCode::DomainError, "the correlation test needs at least 4 studies");
    if (permutations < 1) throw Error(ErrorCode::DomainError, "permutations must be positive");
    std::vector<double> beta, lambda2;
    for (const auto& s : studies) {
        const StudyMoments m = recover_moments(s);
        beta.push_back(s.beta_hat);
        lambda2.push_back(m.lambda * m.lambda);
    }
    CorrelationTest out;
    out.correlation = pearson(beta, lambda2);
    out.permutations = permutations;
    Rng rng(seed, 0);
    std::vector<double> shuffled = lambda2;
    int extreme = 0;
    for (int i = 0; i < permutations; ++i) {
        for (std::size_t j = shuffled.size() - 1; j > 0; --j) {
            const auto pick = static_cast<std::size_t>(rng() % (j + 1));
            std::swap(shuffled[j], shuffled[pick]);
        }
        if (std::abs(pearson(beta, shuffled)) >= std::abs(out.correlation) - 1e-12) ++extreme;
    }
    out.p_value = (extreme + 1.0) / (permutations + 1.0);
    return out;
}

namespace {

std::optional<long long> as_integer(const std::string& s) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace

ForestData forest(const std::vector<StudySummary>& studies,
                  const std::vector<std::pair<std::string, ParameterSummary>>& fits) {
    ForestData out;
    for (const auto& s : studies) {
        const double half = 1.96 * s.se_beta;
        out.rows.push_back({s.study_id, s.beta_hat, s.beta_hat - half, s.beta_hat + half, s.known_clean});
    }
    const bool numeric = std::all_of(out.rows.begin(), out.rows.end(), [](const ForestRow& r) { return as_integer(r.study_id).has_value(); });
    std::stable_sort(out.rows.begin(), out.rows.end(), [numeric](const ForestRow& a, const ForestRow& b) {
        return numeric ? *as_integer(a.study_id) < *as_integer(b.study_id) : a.study_id < b.study_id;
    });
    for (const auto& [label, p] : fits) out.diamonds.push_back({label, p.median, p.q025, p.q975});
    return out;
}

std::string forest_csv(const ForestData& data) {
    std::ostringstream os;
    os << "kind,label,estimate,lower,upper,clean\n";
    for (const auto& r : data.rows) {
        os << "study," << r.study_id << ',' << csv::format_double(r.estimate) << ',' << csv::format_double(r.lower) << ','
           << csv::format_double(r.upper) << ',' << (r.clean ? "true" : "false") << '\n';
    }
    for (const auto& d : data.diamonds) {
        os << "summary," << d.label << ',' << csv::format_double(d.median) << ',' << csv::format_double(d.lower) << ','
           << csv::format_double(d.upper) << ",\n";
    }
    return os.str();
}

std::string forest_svg(const ForestData& data) {
    double lo = 0.0, hi = 0.0;
    bool first = true;
    const auto widen = [&](double a, double b) {
        lo = first ? a : std::min(lo, a);
        hi = first ? b : std::max(hi, b);
        first = false;
    };
    for (const auto& r : data.rows) widen(r.lower, r.upper);
    for (const auto& d : data.diamonds) widen(d.lower, d.upper);
    if (first) {
        lo = -1.0;
        hi = 1.0;
    }
    const double pad = 0.05 * std::max(hi - lo, 1e-9);
    lo -= pad;
    hi += pad;

    const double row_h = 22, left = 110, right = 30, top = 20, width = 640;
    const double rows = static_cast<double>(data.rows.size() + data.diamonds.size());
    const double height = top + row_h * (rows + 1.5) + 30;
    const double plot_w = width - left - right;
    const auto px = [&](double v) { return left + plot_w * (v - lo) / (hi - lo); };
    char buf[320];
    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    std::snprintf(buf, sizeof buf, "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"%.0f\" height=\"%.0f\">\n",
                  width, height);
    svg << buf << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    double y = top + row_h;
    for (const auto& r : data.rows) {
        std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"end\">%s</text>\n", left - 8,
                      y + 4, r.study_id.c_str());
        svg << buf;
        std::snprintf(buf, sizeof buf, "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n", px(r.lower), y,
                      px(r.upper), y);
        svg << buf;
        std::snprintf(buf, sizeof buf,
                      "<rect x=\"%.2f\" y=\"%.2f\" width=\"8\" height=\"8\" fill=\"%s\" stroke=\"black\"/>\n",
                      px(r.estimate) - 4, y - 4, r.clean ? "black" : "white");
        svg << buf;
        y += row_h;
    }
    for (const auto& d : data.diamonds) {
        std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"end\">%s</text>\n", left - 8,
                      y + 4, d.label.c_str());
        svg << buf;
        std::snprintf(buf, sizeof buf,
                      "<polygon points=\"%.2f,%.2f %.2f,%.2f %.2f,%.2f %.2f,%.2f\" fill=\"gray\" stroke=\"black\"/>\n",
                      px(d.lower), y, px(d.median), y - 7, px(d.upper), y, px(d.median), y + 7);
        svg << buf;
        y += row_h;
    }
    const double axis_y = y;
    std::snprintf(buf, sizeof buf, "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n", left, axis_y,
                  left + plot_w, axis_y);
    svg << buf;
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"10\" text-anchor=\"middle\">%.2f</text>\n", px(v),
                      axis_y + 14, v);
        svg << buf;
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace mema
