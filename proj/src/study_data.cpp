#include "mema/study_data.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mema/csv.hpp"
#include "mema/error.hpp"

namespace mema {
namespace {

constexpr const char* kSummaryColumns[] = {"study_id",  "n",          "beta_hat",   "se_beta",
                                           "alpha_hat", "se_alpha",   "sigma2_hat", "known_clean"};

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::string opt(const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(); }

std::vector<StudySummary> summaries_from_table(const csv::Table& t) {
    std::size_t col[8];
    for (int i = 0; i < 8; ++i) col[i] = t.require_column(kSummaryColumns[i]);
    const auto phi_col = t.column("phi");
    const auto gamma_col = t.column("gamma");

    std::vector<StudySummary> out;
    out.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        StudySummary s;
        s.study_id = t.rows[r][col[0]];
        if (s.study_id.empty()) throw Error(ErrorCode::ParseError, csv::location(t, r, col[0]) + ": empty study_id");
        const long long n = csv::to_integer(t, r, col[1]);
        if (n < 3) throw Error(ErrorCode::ParseError, csv::location(t, r, col[1]) + ": n must be at least 3");
        s.n = static_cast<int>(n);
        s.beta_hat = csv::to_double(t, r, col[2]);
        s.se_beta = csv::to_double(t, r, col[3]);
        s.alpha_hat = csv::to_optional_double(t, r, col[4]);
        s.se_alpha = csv::to_optional_double(t, r, col[5]);
        s.sigma2_hat = csv::to_optional_double(t, r, col[6]);
        s.known_clean = csv::to_bool(t, r, col[7]);
        if (phi_col) s.phi = csv::to_optional_double(t, r, *phi_col);
        if (gamma_col) s.gamma = csv::to_optional_double(t, r, *gamma_col);
        try {
            validate(s);
        } catch (const Error& e) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(t.line_numbers[r]) + ": " + e.what());
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

void validate(const StudySummary& s) {
    if (s.n < 3) throw Error(ErrorCode::DomainError, "study " + s.study_id + ": n must be at least 3");
    if (!(s.se_beta > 0.0) || !std::isfinite(s.se_beta)) {
        throw Error(ErrorCode::DomainError, "study " + s.study_id + ": se_beta must be positive");
    }
    if (!std::isfinite(s.beta_hat)) throw Error(ErrorCode::DomainError, "study " + s.study_id + ": beta_hat not finite");
    const int present = int(s.alpha_hat.has_value()) + int(s.se_alpha.has_value()) + int(s.sigma2_hat.has_value());
    if (present != 0 && present != 3) {
        throw Error(ErrorCode::DomainError,
                    "study " + s.study_id + ": alpha_hat, se_alpha and sigma2_hat must be given together");
    }
    if (s.se_alpha && !(*s.se_alpha > 0.0)) throw Error(ErrorCode::DomainError, "study " + s.study_id + ": se_alpha must be positive");
    if (s.sigma2_hat && !(*s.sigma2_hat > 0.0)) {
        throw Error(ErrorCode::DomainError, "study " + s.study_id + ": sigma2_hat must be positive");
    }
    if (s.phi && !(*s.phi >= 0.0)) throw Error(ErrorCode::DomainError, "study " + s.study_id + ": phi must be nonnegative");
    if (s.gamma && !(*s.gamma > 0.0 && *s.gamma <= 1.0)) {
        throw Error(ErrorCode::DomainError, "study " + s.study_id + ": gamma must lie in (0, 1]");
    }
}

StudyMoments recover_moments(const StudySummary& study) {
    if (!study.has_bivariate()) {
        throw Error(ErrorCode::MissingField, "study " + study.study_id + " lacks alpha_hat/se_alpha/sigma2_hat");
    }
    const double n = study.n;
    const double se_b = study.se_beta;
    const double s2 = *study.sigma2_hat;
    const double ratio = *study.se_alpha / se_b;
    const double a = ratio * ratio;
    const double b = s2 / (n * se_b * se_b);
    double radicand = a - b;
    if (radicand < 0.0) {
        // Exact-boundary inputs can land a few ulps below zero.
        if (radicand > -1e-12 * std::max(a, b)) {
            radicand = 0.0;
        } else {
            throw Error(ErrorCode::NegativeRadicand,
                        "study " + study.study_id + ": (se_alpha/se_beta)^2 < sigma2_hat/(n se_beta^2)");
        }
    }
    StudyMoments m;
    m.sigma = std::sqrt(s2);
    m.lambda = m.sigma / (se_b * std::sqrt(n - 1.0));
    m.mu = std::sqrt(radicand);
    return m;
}

Eigen::Matrix2d sampling_covariance(const StudyMoments& m, int n) {
    const double l2 = m.lambda * m.lambda;
    const double s2 = m.sigma * m.sigma;
    const double base = s2 / (l2 * n);
    Eigen::Matrix2d cov;
    cov(0, 0) = (l2 + m.mu * m.mu) * base;
    cov(0, 1) = cov(1, 0) = -m.mu * base;
    cov(1, 1) = base;
    return cov;
}

std::pair<double, double> predicted_standard_errors(const StudyMoments& m, int n) {
    // Exact inverse of recover_moments (ordinary least squares with the
    // n - 1 sample-variance convention for the exposure).
    const double se_b = m.sigma / (m.lambda * std::sqrt(n - 1.0));
    const double se_a = std::sqrt(m.mu * m.mu * se_b * se_b + m.sigma * m.sigma / n);
    return {se_a, se_b};
}

std::vector<StudySummary> load_summaries(const std::filesystem::path& path) {
    return summaries_from_table(csv::read(path));
}

std::vector<StudySummary> parse_summaries(const std::string& text) { return summaries_from_table(csv::parse(text)); }

std::string format_summaries(const std::vector<StudySummary>& studies) {
    bool any_phi = false, any_gamma = false;
    for (const auto& s : studies) {
        any_phi |= s.phi.has_value();
        any_gamma |= s.gamma.has_value();
    }
    std::ostringstream os;
    os << "study_id,n,beta_hat,se_beta,alpha_hat,se_alpha,sigma2_hat,known_clean";
    if (any_phi) os << ",phi";
    if (any_gamma) os << ",gamma";
    os << '\n';
    for (const auto& s : studies) {
        os << s.study_id << ',' << s.n << ',' << csv::format_double(s.beta_hat) << ',' << csv::format_double(s.se_beta)
           << ',' << opt(s.alpha_hat) << ',' << opt(s.se_alpha) << ',' << opt(s.sigma2_hat) << ','
           << (s.known_clean ? "true" : "false");
        if (any_phi) os << ',' << opt(s.phi);
        if (any_gamma) os << ',' << opt(s.gamma);
        os << '\n';
    }
    return os.str();
}

void save_summaries(const std::filesystem::path& path, const std::vector<StudySummary>& studies) {
    write_file(path, format_summaries(studies));
}

const IpdStudy* IpdDataset::find(const std::string& id) const {
    for (const auto& s : studies) {
        if (s.study_id == id) return &s;
    }
    return nullptr;
}

IpdDataset parse_ipd(const std::string& text) {
    const csv::Table t = csv::parse(text, "<ipd>", false);
    if (t.header.size() < 3 || t.header[0] != "study_id" || t.header[1] != "y") {
        throw Error(ErrorCode::SchemaError, "IPD header must start with study_id,y,x1");
    }
    const int q = static_cast<int>(t.header.size()) - 2;
    for (int j = 0; j < q; ++j) {
        if (t.header[2 + j] != "x" + std::to_string(j + 1)) {
            throw Error(ErrorCode::SchemaError, "IPD column " + std::to_string(j + 3) + " must be x" + std::to_string(j + 1));
        }
    }
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> rows_of;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (t.rows[r].size() != t.header.size()) {
            throw Error(ErrorCode::RaggedData, "line " + std::to_string(t.line_numbers[r]) + ": expected " +
                                                   std::to_string(t.header.size()) + " fields, found " +
                                                   std::to_string(t.rows[r].size()));
        }
        const std::string& id = t.rows[r][0];
        if (id.empty()) throw Error(ErrorCode::ParseError, csv::location(t, r, 0) + ": empty study_id");
        auto [it, inserted] = rows_of.try_emplace(id);
        if (inserted) order.push_back(id);
        it->second.push_back(r);
    }
    IpdDataset data;
    data.q = q;
    for (const auto& id : order) {
        const auto& rows = rows_of[id];
        IpdStudy s;
        s.study_id = id;
        s.y.resize(static_cast<Eigen::Index>(rows.size()));
        s.x.resize(static_cast<Eigen::Index>(rows.size()), q);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            s.y[static_cast<Eigen::Index>(i)] = csv::to_double(t, rows[i], 1);
            for (int j = 0; j < q; ++j) s.x(static_cast<Eigen::Index>(i), j) = csv::to_double(t, rows[i], 2 + j);
        }
        data.studies.push_back(std::move(s));
    }
    return data;
}

IpdDataset load_ipd(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_ipd(ss.str());
}

std::string format_ipd(const IpdDataset& data) {
    std::ostringstream os;
    os << "study_id,y";
    for (int j = 0; j < data.q; ++j) os << ",x" << (j + 1);
    os << '\n';
    for (const auto& s : data.studies) {
        for (Eigen::Index i = 0; i < s.y.size(); ++i) {
            os << s.study_id << ',' << csv::format_double(s.y[i]);
            for (int j = 0; j < data.q; ++j) os << ',' << csv::format_double(s.x(i, j));
            os << '\n';
        }
    }
    return os.str();
}

void save_ipd(const std::filesystem::path& path, const IpdDataset& data) { write_file(path, format_ipd(data)); }

}  // namespace mema
