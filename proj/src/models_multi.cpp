#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Cholesky>

#include "mema/error.hpp"
#include "mema/models.hpp"
#include "model_util.hpp"

namespace mema {

using detail::log_normal;
using detail::Transform;

namespace {

const prior::Normal& require_normal(const PriorSpec& p, const char* name) {
    if (!std::holds_alternative<prior::Normal>(p)) {
        throw Error(ErrorCode::DomainError, std::string("multivariate models need a Normal prior for ") + name);
    }
    return std::get<prior::Normal>(p);
}

std::vector<std::string> coefficient_names(int p) {
    std::vector<std::string> n;
    for (int q = 0; q < p; ++q) n.push_back("theta" + std::to_string(q));
    for (int q = 0; q < p; ++q) n.push_back("tau" + std::to_string(q));
    return n;
}

/// theta (p) and sqrt(T_qq) (p) on coordinates [0, 2p); shared by both models.
struct CoefficientHyper {
    int p = 0;
    prior::Normal theta_prior;
    PriorSpec tau_prior;
    Transform tau_t;

    CoefficientHyper(int p_, const PriorSet& priors)
        : p(p_), theta_prior(require_normal(priors.theta, "theta")), tau_prior(priors.tau),
          tau_t(Transform::for_prior(priors.tau)) {}

    double tau2(std::span<const double> z, int q) const {
        const double t = tau_t.value(z[static_cast<std::size_t>(p + q)]);
        return t * t;
    }

    double theta_log_prior(std::span<const double> z) const {
        double lp = 0.0;
        for (int q = 0; q < p; ++q) lp += log_normal(z[static_cast<std::size_t>(q)], theta_prior.mean, theta_prior.variance);
        return lp;
    }
    double tau_log_prior(std::span<const double> z, int q) const {
        return detail::log_prior_transformed(tau_prior, tau_t, z[static_cast<std::size_t>(p + q)]);
    }

    /// Sum over studies of log N(beta_kq | theta_q, T_qq).
    double between(std::span<const double> z, const std::vector<Eigen::VectorXd>& betas, int q) const {
        const double t2 = tau2(z, q);
        const double th = z[static_cast<std::size_t>(q)];
        double lp = 0.0;
        for (const auto& b : betas) lp += log_normal(b(q), th, t2);
        return lp;
    }

    void draw_theta(std::span<double> z, const std::vector<Eigen::VectorXd>& betas, Rng& rng) const {
        const double kk = static_cast<double>(betas.size());
        for (int q = 0; q < p; ++q) {
            double sum = 0.0;
            for (const auto& b : betas) sum += b(q);
            const double t2 = tau2(z, q);
            const double prec = 1.0 / theta_prior.variance + kk / t2;
            const double mean = (theta_prior.mean / theta_prior.variance + sum / t2) / prec;
            z[static_cast<std::size_t>(q)] = rng.normal(mean, 1.0 / std::sqrt(prec));
        }
    }

    Eigen::VectorXd theta(std::span<const double> z) const {
        Eigen::VectorXd t(p);
        for (int q = 0; q < p; ++q) t(q) = z[static_cast<std::size_t>(q)];
        return t;
    }
    Eigen::VectorXd tau2_vector(std::span<const double> z) const {
        Eigen::VectorXd t(p);
        for (int q = 0; q < p; ++q) t(q) = tau2(z, q);
        return t;
    }

    void add_blocks(std::vector<Block>& blocks) const {
        Block th{"theta", {}, BlockKind::Exact};
        for (int q = 0; q < p; ++q) th.coords.push_back(static_cast<std::size_t>(q));
        blocks.push_back(th);
        for (int q = 0; q < p; ++q) {
            blocks.push_back({"tau" + std::to_string(q), {static_cast<std::size_t>(p + q)}, BlockKind::RandomWalk, 0.5});
        }
    }

    void init(std::span<double> z, const std::vector<Eigen::VectorXd>& betas, Rng& rng) const {
        const double kk = static_cast<double>(betas.size());
        for (int q = 0; q < p; ++q) {
            double m = 0.0;
            for (const auto& b : betas) m += b(q);
            m /= kk;
            double v = 0.0;
            for (const auto& b : betas) v += (b(q) - m) * (b(q) - m);
            const double sd = std::max(std::sqrt(v / std::max(1.0, kk - 1.0)), 0.05 * std::abs(m) + 0.01);
            z[static_cast<std::size_t>(q)] = m + 0.3 * sd * rng.normal();
            z[static_cast<std::size_t>(p + q)] = tau_t.unconstrained(sd * (0.3 + rng.uniform()));
        }
    }

    void outputs(std::span<const double> z, std::span<double> out) const {
        for (int q = 0; q < p; ++q) {
            out[static_cast<std::size_t>(q)] = z[static_cast<std::size_t>(q)];
            out[static_cast<std::size_t>(p + q)] = tau_t.value(z[static_cast<std::size_t>(p + q)]);
        }
    }
};

// ---------------------------------------------------------------------------
// Aggregate multivariate meta-analysis:
//   beta_hat_k ~ MVN(beta_k, COV_k),  beta_k ~ MVN(theta, diag(T)).

class MultiAggregateModel final : public Target {
public:
    MultiAggregateModel(const std::vector<RegressionFit>& fits, const PriorSet& priors)
        : hyper_(static_cast<int>(fits.front().coef.size()), priors) {
        const int p = hyper_.p;
        for (std::size_t k = 0; k < fits.size(); ++k) {
            const auto& f = fits[k];
            if (f.coef.size() != p || f.cov.rows() != p || f.cov.cols() != p) {
                throw Error(ErrorCode::DimensionMismatch, "regression fits differ in dimension");
            }
            Eigen::LLT<Eigen::MatrixXd> llt(f.cov);
            if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPSD, "COV of study '" + f.study_id + "' is not positive definite");
            obs_.push_back(f.coef);
            prec_.push_back(llt.solve(Eigen::MatrixXd::Identity(p, p)));
            offsets_.push_back(static_cast<std::size_t>(2 * p) + k * static_cast<std::size_t>(p));
        }
        dim_ = static_cast<std::size_t>(2 * p) + fits.size() * static_cast<std::size_t>(p);
        hyper_.add_blocks(blocks_);
        Block beta{"beta", {}, BlockKind::Exact};
        for (std::size_t i = static_cast<std::size_t>(2 * p); i < dim_; ++i) beta.coords.push_back(i);
        blocks_.push_back(beta);
        names_ = coefficient_names(p);
    }

    std::size_t dimension() const override { return dim_; }
    const std::vector<Block>& blocks() const override { return blocks_; }
    const std::vector<std::string>& output_names() const override { return names_; }

    double log_density(std::span<const double> z) const override {
        const int p = hyper_.p;
        double lp = hyper_.theta_log_prior(z);
        for (int q = 0; q < p; ++q) lp += hyper_.tau_log_prior(z, q) + hyper_.between(z, betas(z), q);
        for (std::size_t k = 0; k < obs_.size(); ++k) {
            const Eigen::VectorXd d = obs_[k] - beta(z, k);
            lp += -0.5 * d.dot(prec_[k] * d);  // COV_k is fixed, so its normalizer is dropped
        }
        return lp;
    }

    double log_density_block(std::size_t b, std::span<const double> z) const override {
        const int q = static_cast<int>(b) - 1;
        if (q >= 0 && q < hyper_.p) return hyper_.tau_log_prior(z, q) + hyper_.between(z, betas(z), q);
        return log_density(z);
    }

    void draw_exact(std::size_t b, std::span<double> z, Rng& rng) const override {
        if (b == 0) {
            hyper_.draw_theta(z, betas(z), rng);
            return;
        }
        const Eigen::VectorXd tinv = hyper_.tau2_vector(z).cwiseInverse();
        const Eigen::VectorXd th = hyper_.theta(z);
        for (std::size_t k = 0; k < obs_.size(); ++k) {
            Eigen::MatrixXd prec = prec_[k];
            prec.diagonal() += tinv;
            const Eigen::VectorXd rhs = prec_[k] * obs_[k] + tinv.cwiseProduct(th);
            const Eigen::VectorXd d = mvn_draw_canonical(rng, prec, rhs);
            for (int q = 0; q < hyper_.p; ++q) z[offsets_[k] + static_cast<std::size_t>(q)] = d(q);
        }
    }

    std::vector<double> initial_point(Rng& rng) const override {
        std::vector<double> z(dim_);
        hyper_.init(z, obs_, rng);
        for (std::size_t k = 0; k < obs_.size(); ++k) {
            for (int q = 0; q < hyper_.p; ++q) z[offsets_[k] + static_cast<std::size_t>(q)] = obs_[k](q);
        }
        return z;
    }

    void outputs(std::span<const double> z, std::span<double> out) const override { hyper_.outputs(z, out); }

private:
    std::vector<Eigen::VectorXd> betas(std::span<const double> z) const {
        std::vector<Eigen::VectorXd> out;
        for (std::size_t k = 0; k < obs_.size(); ++k) out.push_back(beta(z, k));
        return out;
    }

    Eigen::VectorXd beta(std::span<const double> z, std::size_t k) const {
        Eigen::VectorXd b(hyper_.p);
        for (int q = 0; q < hyper_.p; ++q) b(q) = z[offsets_[k] + static_cast<std::size_t>(q)];
        return b;
    }

    CoefficientHyper hyper_;
    std::vector<Eigen::VectorXd> obs_;
    std::vector<Eigen::MatrixXd> prec_;
    std::vector<std::size_t> offsets_;
    std::size_t dim_ = 0;
    std::vector<Block> blocks_;
    std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// Multivariate IPD BMEMA:
//   X_j ~ MVN(mu_k, Lambda_k),  X*_j | X_j ~ MVN(X_j, Phi_k),
//   Y_j | X_j ~ N(b0 + b'X_j, sigma_k^2),  beta_k ~ MVN(theta, diag(T)),
//   Phi_k ~ IW(2 zeta2 I, 2 zeta1) with zeta1 > Q/2, zeta ~ Exp(delta).
// Gold-standard studies observe X directly and carry no Phi. For the other
// studies X is integrated out, which gives X*_j ~ MVN(mu, V) with
// V = Lambda + Phi and Y_j | X*_j ~ N(e + c'X*_j, s^2) where
//   c = V^-1 Lambda b,  e = b0 + (b - c)'mu,  s^2 = sigma^2 + b'M b,
//   M = Lambda - Lambda V^-1 Lambda.
// Those studies are parameterized by (e, c, log s, mu, V, b, S): the
// relation Lambda b = V c fixes Phi b = V (b - c), and S holds the block of
// Phi on the orthogonal complement of b. (b0, Phi, Lambda, sigma) are
// derived; the change of variables contributes |V| |b|^-Q s / sigma.

struct StudyStats {
    double n = 0.0;
    Eigen::VectorXd sx, sxy;
    Eigen::MatrixXd sxx;
    double sy = 0.0, syy = 0.0;

    explicit StudyStats(const IpdStudy& s)
        : n(static_cast<double>(s.n())), sx(s.x.colwise().sum().transpose()), sxy(s.x.transpose() * s.y),
          sxx(s.x.transpose() * s.x), sy(s.y.sum()), syy(s.y.squaredNorm()) {}

    /// Residual sum of squares of y_j - e - c'x_j.
    double rss(double e, const Eigen::VectorXd& c) const {
        return syy - 2.0 * e * sy - 2.0 * c.dot(sxy) + n * e * e + 2.0 * e * c.dot(sx) + c.dot(sxx * c);
    }

    /// Sum of (x_j - mu)(x_j - mu)'.
    Eigen::MatrixXd scatter(const Eigen::VectorXd& mu) const {
        return sxx - sx * mu.transpose() - mu * sx.transpose() + n * mu * mu.transpose();
    }

    /// [1 X]'[1 X] and [1 X]'y.
    Eigen::MatrixXd dtd() const {
        const auto q = sx.size();
        Eigen::MatrixXd d(q + 1, q + 1);
        d(0, 0) = n;
        d.block(1, 0, q, 1) = sx;
        d.block(0, 1, 1, q) = sx.transpose();
        d.bottomRightCorner(q, q) = sxx;
        return d;
    }
    Eigen::VectorXd dty() const {
        Eigen::VectorXd d(sx.size() + 1);
        d(0) = sy;
        d.tail(sx.size()) = sxy;
        return d;
    }
};

/// True-scale quantities implied by an error-prone study's coordinates.
struct Derived {
    bool valid = false;
    Eigen::MatrixXd v, v_inv, lambda, phi;
    Eigen::VectorXd beta;
    double sigma2 = 0.0, s = 0.0, log_det_v = 0.0;
};

/// Orthonormal basis (Q x Q-1) of the complement of b, from the Householder
/// reflection that maps b onto the first axis.
Eigen::MatrixXd complement_basis(const Eigen::VectorXd& b) {
    const auto q = b.size();
    Eigen::VectorXd h = b / b.norm();
    h(0) += h(0) >= 0.0 ? 1.0 : -1.0;
    const Eigen::MatrixXd reflect = Eigen::MatrixXd::Identity(q, q) - 2.0 * h * h.transpose() / h.squaredNorm();
    return reflect.rightCols(q - 1);
}

/// The symmetric matrix with Phi b = w whose block on the complement of b is S.
Eigen::MatrixXd anchored_matrix(const Eigen::VectorXd& b, const Eigen::VectorXd& w, const Eigen::MatrixXd& s) {
    const double bb = b.squaredNorm();
    Eigen::MatrixXd phi = (w * b.transpose() + b * w.transpose()) / bb - (b.dot(w) / (bb * bb)) * b * b.transpose();
    if (b.size() > 1) {
        const Eigen::MatrixXd u = complement_basis(b);
        phi += u * s * u.transpose();
    }
    return phi;
}

class MultiIpdModel final : public Target {
public:
    MultiIpdModel(const IpdDataset& data, const std::vector<bool>& gold, const ModelSpec& spec)
        : q_(data.q),
          hyper_(data.q + 1, spec.priors),
          mu_prior_(require_normal(spec.priors.mu, "mu")),
          sigma_prior_(spec.priors.sigma),
          sigma_t_(Transform::for_prior(spec.priors.sigma)),
          delta_(spec.delta) {
        const int p = q_ + 1;
        const std::size_t csz = detail::chol_size(q_);
        std::size_t off = static_cast<std::size_t>(2 * p);
        const bool any_unclean = std::find(gold.begin(), gold.end(), false) != gold.end();
        if (any_unclean) {
            zeta_off_ = off;
            off += 2;
        }
        for (std::size_t k = 0; k < data.studies.size(); ++k) {
            const auto& s = data.studies[k];
            if (s.x.cols() != q_ || s.x.rows() != s.y.size()) {
                throw Error(ErrorCode::DimensionMismatch, "study '" + s.study_id + "' does not match Q");
            }
            if (s.n() < p + 1) {
                throw Error(ErrorCode::DomainError, "study '" + s.study_id + "' needs at least Q + 2 rows");
            }
            Layout l;
            l.gold = gold[k];
            l.coef = off;  // (b0, b) for gold-standard studies, (e, c) otherwise
            off += static_cast<std::size_t>(p);
            l.scale = off++;  // sigma (transformed) or log s
            l.mu = off;
            off += static_cast<std::size_t>(q_);
            l.cov = off;  // Lambda or V
            off += csz;
            if (!l.gold) {
                l.slope = off;
                off += static_cast<std::size_t>(q_);
                l.shape = off;
                off += shape_size();
            }
            layout_.push_back(l);
            studies_.push_back(s);
            stats_.emplace_back(s);
        }
        dim_ = off;

        hyper_.add_blocks(blocks_);
        for (std::size_t b = 0; b < blocks_.size(); ++b) roles_.push_back({b == 0 ? Role::Theta : Role::Tau, b - 1});
        if (any_unclean) {
            blocks_.push_back({"zeta1", {zeta_off_}, BlockKind::RandomWalk, 0.5});
            blocks_.push_back({"zeta2", {zeta_off_ + 1}, BlockKind::RandomWalk, 0.5});
            blocks_.push_back({"zeta", {zeta_off_, zeta_off_ + 1}, BlockKind::RandomWalk, 0.5});
            roles_.insert(roles_.end(), 3, {Role::Zeta, 0});
        }
        // Group moves: translate every slope with theta, and rescale every
        // study's deviation from theta with tau.
        blocks_.push_back({"shift", range(1, static_cast<std::size_t>(q_)), BlockKind::RandomWalk, 0.02, true});
        roles_.push_back({Role::Shift, 0});
        for (int q = 0; q < p; ++q) {
            blocks_.push_back({"scale" + std::to_string(q), {static_cast<std::size_t>(p + q)}, BlockKind::RandomWalk, 0.3, true});
            roles_.push_back({Role::Scale, static_cast<std::size_t>(q)});
        }
        for (std::size_t k = 0; k < layout_.size(); ++k) {
            const auto& l = layout_[k];
            const std::string id = "[" + studies_[k].study_id + "]";
            if (l.gold) {
                blocks_.push_back({"beta" + id, range(l.coef, static_cast<std::size_t>(p)), BlockKind::Exact});
                roles_.push_back({Role::Coef, k});
                blocks_.push_back({"sigma" + id, {l.scale}, BlockKind::RandomWalk, 0.2});
                roles_.push_back({Role::Study, k});
                blocks_.push_back({"mu" + id, range(l.mu, static_cast<std::size_t>(q_)), BlockKind::Exact});
                roles_.push_back({Role::Mu, k});
                blocks_.push_back({"Lambda" + id, range(l.cov, csz), BlockKind::Exact});
                roles_.push_back({Role::Lambda, k});
                continue;
            }
            auto joint = range(l.coef, static_cast<std::size_t>(p));
            for (std::size_t i : range(l.slope, static_cast<std::size_t>(q_) + shape_size())) joint.push_back(i);
            blocks_.push_back({"coef" + id, joint, BlockKind::Exact});
            roles_.push_back({Role::Coef, k});
            blocks_.push_back({"s" + id, {l.scale}, BlockKind::RandomWalk, 0.2});
            blocks_.push_back({"mu" + id, range(l.mu, static_cast<std::size_t>(q_)), BlockKind::Exact});
            blocks_.push_back({"V" + id, range(l.cov, csz), BlockKind::RandomWalk, 0.05});
            blocks_.push_back({"b" + id, range(l.slope, static_cast<std::size_t>(q_)), BlockKind::RandomWalk, 0.05});
            roles_.push_back({Role::Study, k});
            roles_.push_back({Role::Mu, k});
            roles_.insert(roles_.end(), 2, {Role::Study, k});
            if (q_ > 1) {
                blocks_.push_back({"S" + id, range(l.shape, shape_size()), BlockKind::RandomWalk, 0.5});
                roles_.push_back({Role::Study, k});
            }
            // All of the study's coordinates, so the adaptive proposal can
            // learn their correlations.
            blocks_.push_back({"study" + id, range(l.coef, l.shape + shape_size() - l.coef), BlockKind::RandomWalk, 0.02});
            roles_.push_back({Role::Study, k});
        }

        names_ = coefficient_names(p);
        if (any_unclean) {
            names_.push_back("zeta1");
            names_.push_back("zeta2");
        }
        for (std::size_t k = 0; k < layout_.size(); ++k) {
            if (layout_[k].gold) continue;
            for (int i = 1; i <= q_; ++i) {
                names_.push_back("Phi" + std::to_string(i) + std::to_string(i) + "[" + studies_[k].study_id + "]");
            }
        }
        warn_ = any_unclean && std::none_of(gold.begin(), gold.end(), [](bool g) { return g; });
    }

    std::size_t dimension() const override { return dim_; }
    const std::vector<Block>& blocks() const override { return blocks_; }
    const std::vector<std::string>& output_names() const override { return names_; }

    double log_density(std::span<const double> z) const override {
        double lp = hyper_.theta_log_prior(z) + zeta_prior(z);
        std::vector<Eigen::VectorXd> betas;
        for (std::size_t k = 0; k < layout_.size(); ++k) {
            lp += study_terms(z, k);
            if (!std::isfinite(lp)) return lp;
            betas.push_back(beta(z, k));
        }
        for (int q = 0; q < hyper_.p; ++q) lp += hyper_.tau_log_prior(z, q) + hyper_.between(z, betas, q);
        return lp;
    }

    double log_density_block(std::size_t b, std::span<const double> z) const override {
        const auto [role, k] = roles_[b];
        switch (role) {
            case Role::Tau: {
                const int q = static_cast<int>(k);
                return hyper_.tau_log_prior(z, q) + hyper_.between(z, betas(z), q);
            }
            case Role::Study: {
                const double lp = study_terms(z, k);
                if (!std::isfinite(lp)) return lp;
                return lp + beta_between(z, beta(z, k));
            }
            case Role::Zeta: {
                double lp = zeta_prior(z);
                for (std::size_t i = 0; i < layout_.size(); ++i) {
                    if (!layout_[i].gold) lp += phi_prior(z, derived(z, i).phi);
                }
                return lp;
            }
            default: break;
        }
        return log_density(z);
    }

    void draw_exact(std::size_t b, std::span<double> z, Rng& rng) const override {
        const auto [role, k] = roles_[b];
        switch (role) {
            case Role::Theta: hyper_.draw_theta(z, betas(z), rng); return;
            case Role::Coef:
                if (layout_[k].gold) {
                    draw_beta_gold(z, k, rng);
                } else {
                    step_observed(z, k, rng);
                }
                return;
            case Role::Mu:
                if (layout_[k].gold) {
                    draw_mu_gold(z, k, rng);
                } else {
                    draw_mu_observed(z, k, rng);
                }
                return;
            case Role::Lambda: draw_lambda_gold(z, k, rng); return;
            default: break;
        }
        Target::draw_exact(b, z, rng);
    }

    double transform(std::size_t b, std::span<const double> before, std::span<double> z) const override {
        const auto [role, q] = roles_[b];
        if (role == Role::Shift) {
            const Eigen::VectorXd delta = vec(z, 1, q_) - vec(before, 1, q_);
            Eigen::VectorXd mean_mu = Eigen::VectorXd::Zero(q_);
            for (const auto& l : layout_) {
                const Eigen::VectorXd mu = vec(z, l.mu, q_);
                mean_mu += mu;
                if (l.gold) {
                    z[l.coef] -= mu.dot(delta);
                    write(z, l.coef + 1, vec(z, l.coef + 1, q_) + delta);
                } else {
                    write(z, l.slope, vec(z, l.slope, q_) + delta);
                }
            }
            z[0] -= mean_mu.dot(delta) / static_cast<double>(layout_.size());
            return 0.0;
        }
        const std::size_t zt = static_cast<std::size_t>(hyper_.p) + q;
        const double r = hyper_.tau_t.value(z[zt]) / hyper_.tau_t.value(before[zt]);
        const double th = z[q];
        for (const auto& l : layout_) {
            if (q == 0) {
                if (l.gold) {
                    z[l.coef] = th + r * (z[l.coef] - th);
                } else {
                    const Eigen::VectorXd ec = vec(z, l.coef, q_ + 1);
                    const double b0 = ec(0) + vec(z, l.mu, q_).dot(ec.tail(q_) - vec(z, l.slope, q_));
                    z[l.coef] += (r - 1.0) * (b0 - th);
                }
                continue;
            }
            const std::size_t at = l.gold ? l.coef + q : l.slope + q - 1;
            const double d = (r - 1.0) * (z[at] - th);
            z[at] += d;
            if (l.gold) z[l.coef] -= z[l.mu + q - 1] * d;
        }
        return static_cast<double>(layout_.size()) * std::log(r);
    }

    std::vector<double> initial_point(Rng& rng) const override {
        std::vector<double> zv(dim_);
        std::span<double> z(zv);
        const int p = q_ + 1;
        std::vector<Eigen::VectorXd> betas;
        for (std::size_t k = 0; k < layout_.size(); ++k) {
            const auto& l = layout_[k];
            const auto& s = studies_[k];
            const RegressionFit f = fit_regression(s);
            for (int i = 0; i < p; ++i) z[l.coef + static_cast<std::size_t>(i)] = f.coef(i) + std::sqrt(f.cov(i, i)) * rng.normal();
            const double sd = std::sqrt(f.sigma2) * (0.8 + 0.4 * rng.uniform());
            z[l.scale] = l.gold ? sigma_t_.unconstrained(sd) : std::log(sd);
            const Eigen::VectorXd mean = s.x.colwise().mean();
            for (int i = 0; i < q_; ++i) z[l.mu + static_cast<std::size_t>(i)] = mean(i);
            const Eigen::MatrixXd centred = s.x.rowwise() - mean.transpose();
            Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(s.n() - 1);
            cov.diagonal().array() += 1e-6;
            detail::chol_encode(cov, z.subspan(l.cov));
            if (!l.gold) {
                // A small diagonal Phi, halved until the implied Lambda and sigma are valid.
                Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(q_, q_);
                phi.diagonal() = (0.05 + 0.25 * rng.uniform()) * cov.diagonal();
                const Eigen::VectorXd c = vec(z, l.coef + 1, q_);
                for (int attempt = 0;; ++attempt) {
                    const Eigen::VectorXd b = (cov - phi).llt().solve(cov * c);
                    write(z, l.slope, b);
                    if (q_ > 1) {
                        const Eigen::MatrixXd u = complement_basis(b);
                        write_shape(z, l.shape, u.transpose() * phi * u);
                    }
                    if (derived(z, k).valid || attempt == 60) break;
                    phi *= 0.5;
                }
            }
            betas.push_back(l.gold || derived(z, k).valid ? beta(z, k) : f.coef);
        }
        hyper_.init(z, betas, rng);
        if (zeta_off_) {
            z[zeta_off_] = std::log(0.5 + 2.0 * rng.uniform());
            z[zeta_off_ + 1] = std::log(0.5 + 2.0 * rng.uniform());
        }
        return zv;
    }

    void outputs(std::span<const double> z, std::span<double> out) const override {
        hyper_.outputs(z, out);
        std::size_t i = static_cast<std::size_t>(2 * hyper_.p);
        if (zeta_off_) {
            out[i++] = zeta1(z);
            out[i++] = zeta2(z);
        }
        for (const auto& l : layout_) {
            if (l.gold) continue;
            const Eigen::MatrixXd phi = derived(z, static_cast<std::size_t>(&l - layout_.data())).phi;
            for (int d = 0; d < q_; ++d) out[i++] = phi.size() ? phi(d, d) : std::numeric_limits<double>::quiet_NaN();
        }
    }

    std::vector<std::string> warnings() const override {
        if (warn_) {
            return {"no gold-standard studies (k' = 0): theta is only partially identified and MCMC mixing is "
                    "typically poor; check R-hat and trace plots"};
        }
        return {};
    }

private:
    enum class Role { Theta, Tau, Zeta, Coef, Study, Mu, Lambda, Shift, Scale };

    struct Layout {
        bool gold = true;
        std::size_t coef = 0, scale = 0, mu = 0, cov = 0, slope = 0, shape = 0;
    };

    std::size_t shape_size() const { return static_cast<std::size_t>(q_ * (q_ - 1) / 2); }

    /// Packed upper triangle, row-major.
    Eigen::MatrixXd read_shape(std::span<const double> z, std::size_t off) const {
        const int m = q_ - 1;
        Eigen::MatrixXd s(m, m);
        for (int i = 0; i < m; ++i) {
            for (int j = i; j < m; ++j) s(i, j) = s(j, i) = z[off++];
        }
        return s;
    }
    void write_shape(std::span<double> z, std::size_t off, const Eigen::MatrixXd& s) const {
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            for (Eigen::Index j = i; j < s.cols(); ++j) z[off++] = s(i, j);
        }
    }

    static std::vector<std::size_t> range(std::size_t start, std::size_t n) {
        std::vector<std::size_t> r(n);
        std::iota(r.begin(), r.end(), start);
        return r;
    }

    double zeta1(std::span<const double> z) const { return 0.5 * q_ + std::exp(z[zeta_off_]); }
    double zeta2(std::span<const double> z) const { return std::exp(z[zeta_off_ + 1]); }

    Eigen::VectorXd vec(std::span<const double> z, std::size_t off, int n) const {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v(i) = z[off + static_cast<std::size_t>(i)];
        return v;
    }

    void write(std::span<double> z, std::size_t off, const Eigen::VectorXd& v) const {
        for (Eigen::Index i = 0; i < v.size(); ++i) z[off + static_cast<std::size_t>(i)] = v(i);
    }

    static double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
        return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    }

    Derived derived(std::span<const double> z, std::size_t k) const {
        const auto& l = layout_[k];
        Derived d;
        d.v = detail::chol_matrix(z.subspan(l.cov), q_);
        const Eigen::VectorXd ec = vec(z, l.coef, q_ + 1);
        const Eigen::VectorXd c = ec.tail(q_);
        const Eigen::VectorXd b = vec(z, l.slope, q_);
        if (!(b.squaredNorm() > 0.0)) return d;
        d.phi = anchored_matrix(b, d.v * (b - c), q_ > 1 ? read_shape(z, l.shape) : Eigen::MatrixXd());
        d.lambda = d.v - d.phi;
        if (Eigen::LLT<Eigen::MatrixXd>(d.phi).info() != Eigen::Success) return d;
        if (Eigen::LLT<Eigen::MatrixXd>(d.lambda).info() != Eigen::Success) return d;
        const Eigen::LLT<Eigen::MatrixXd> lv(d.v);
        d.v_inv = lv.solve(Eigen::MatrixXd::Identity(q_, q_));
        d.log_det_v = log_det(lv);
        const Eigen::VectorXd mu = vec(z, l.mu, q_);
        d.beta.resize(q_ + 1);
        d.beta(0) = ec(0) + mu.dot(c - b);
        d.beta.tail(q_) = b;
        // b'M b with M = Lambda - Lambda V^-1 Lambda, written via Lambda b = V c.
        const double bmb = b.dot(d.lambda * b) - c.dot(d.v * c);
        d.s = std::exp(z[l.scale]);
        d.sigma2 = d.s * d.s - bmb;
        d.valid = d.sigma2 > 0.0 && std::isfinite(d.sigma2);
        return d;
    }

    Eigen::VectorXd beta(std::span<const double> z, std::size_t k) const {
        const auto& l = layout_[k];
        if (l.gold) return vec(z, l.coef, q_ + 1);
        return derived(z, k).beta;
    }

    std::vector<Eigen::VectorXd> betas(std::span<const double> z) const {
        std::vector<Eigen::VectorXd> out;
        for (std::size_t k = 0; k < layout_.size(); ++k) out.push_back(beta(z, k));
        return out;
    }

    /// log N(beta | theta, diag(T)) without the normalizer.
    double beta_between(std::span<const double> z, const Eigen::VectorXd& b) const {
        const Eigen::VectorXd d = b - hyper_.theta(z);
        return -0.5 * d.dot(hyper_.tau2_vector(z).cwiseInverse().cwiseProduct(d));
    }

    double mu_prior(std::span<const double> z, std::size_t k) const {
        double lp = 0.0;
        for (int i = 0; i < q_; ++i) lp += log_normal(z[layout_[k].mu + static_cast<std::size_t>(i)], mu_prior_.mean, mu_prior_.variance);
        return lp;
    }

    double lambda_prior(const Eigen::MatrixXd& lambda) const {
        prior::InvWishart iw{Eigen::MatrixXd::Identity(q_, q_), static_cast<double>(q_)};
        return mema::log_density(iw, lambda);
    }

    /// IW(Phi | 2 zeta2 I, 2 zeta1) without the Cholesky Jacobian.
    double phi_prior(std::span<const double> z, const Eigen::MatrixXd& phi) const {
        prior::InvWishart iw{2.0 * zeta2(z) * Eigen::MatrixXd::Identity(q_, q_), 2.0 * zeta1(z)};
        return mema::log_density(iw, phi);
    }

    double zeta_prior(std::span<const double> z) const {
        if (!zeta_off_) return 0.0;
        return 2.0 * std::log(delta_) - delta_ * (zeta1(z) + zeta2(z)) + z[zeta_off_] + z[zeta_off_ + 1];
    }

    /// -n/2 log|2 pi S| - tr(S^-1 D) / 2 for n rows with scatter D.
    double log_mvn_scatter(double n, const Eigen::MatrixXd& s_inv, double log_det_s, const Eigen::MatrixXd& d) const {
        return -0.5 * (n * (q_ * detail::kLog2Pi + log_det_s) + s_inv.cwiseProduct(d).sum());
    }

    static double log_normal_rss(double n, double var, double rss) {
        return -0.5 * (n * (detail::kLog2Pi + std::log(var)) + rss / var);
    }

    /// Terms of one study other than its beta's between-study density.
    double study_terms(std::span<const double> z, std::size_t k) const {
        const auto& l = layout_[k];
        const auto& st = stats_[k];
        const Eigen::VectorXd mu = vec(z, l.mu, q_);
        const Eigen::VectorXd coef = vec(z, l.coef, q_ + 1);
        double lp = mu_prior(z, k) + detail::chol_log_jacobian(z.subspan(l.cov), q_);
        if (l.gold) {
            const double sigma = sigma_t_.value(z[l.scale]);
            lp += detail::log_prior_transformed(sigma_prior_, sigma_t_, z[l.scale]);
            lp += log_normal_rss(st.n, sigma * sigma, st.rss(coef(0), coef.tail(q_)));
            const Eigen::MatrixXd lambda = detail::chol_matrix(z.subspan(l.cov), q_);
            const Eigen::LLT<Eigen::MatrixXd> ll(lambda);
            lp += log_mvn_scatter(st.n, ll.solve(Eigen::MatrixXd::Identity(q_, q_)), log_det(ll), st.scatter(mu));
            return lp + lambda_prior(lambda);
        }
        return lp + unclean_terms(z, k) + log_normal_rss(st.n, std::exp(2.0 * z[l.scale]), st.rss(coef(0), coef.tail(q_)));
    }

    /// Error-prone study terms other than the outcome likelihood, the mu
    /// prior and the Cholesky Jacobian of V.
    double unclean_terms(std::span<const double> z, std::size_t k) const {
        const auto& l = layout_[k];
        const Derived d = derived(z, k);
        if (!d.valid) return kNegInf;
        const double sigma = std::sqrt(d.sigma2);
        double lp = mema::log_density(sigma_prior_, sigma) + lambda_prior(d.lambda) + phi_prior(z, d.phi);
        // Jacobian of (b0, Phi, sigma) <- (e, c, S, s), and of s <- log s.
        lp += d.log_det_v - q_ * std::log(d.beta.tail(q_).norm()) + 2.0 * std::log(d.s) - std::log(sigma);
        return lp + log_mvn_scatter(stats_[k].n, d.v_inv, d.log_det_v, stats_[k].scatter(vec(z, l.mu, q_)));
    }

    void draw_beta_gold(std::span<double> z, std::size_t k, Rng& rng) const {
        const auto& st = stats_[k];
        const double sigma = sigma_t_.value(z[layout_[k].scale]);
        const double s2 = sigma * sigma;
        const Eigen::VectorXd tinv = hyper_.tau2_vector(z).cwiseInverse();
        Eigen::MatrixXd prec = st.dtd() / s2;
        prec.diagonal() += tinv;
        const Eigen::VectorXd rhs = st.dty() / s2 + tinv.cwiseProduct(hyper_.theta(z));
        write(z, layout_[k].coef, mvn_draw_canonical(rng, prec, rhs));
    }

    /// Independence Metropolis-Hastings for (e, b) holding Phi, V and s
    /// fixed, so that c = V^-1 Lambda b and b0 = e + mu'(c - b) are linear
    /// in (e, b). The proposal is the outcome regression times
    /// (b0, b) ~ MVN(theta, T); the remaining factor is p(sigma) / sigma.
    /// (c, S) are then re-encoded from the fixed Phi.
    void step_observed(std::span<double> z, std::size_t k, Rng& rng) const {
        const auto& l = layout_[k];
        const auto& st = stats_[k];
        const int p = q_ + 1;
        const Derived d = derived(z, k);
        if (!d.valid) throw Error(ErrorCode::NotPSD, "study '" + studies_[k].study_id + "' left its valid region");
        const Eigen::MatrixXd gamma = d.v_inv * d.lambda;
        const Eigen::MatrixXd m = d.lambda - d.lambda * gamma;
        const Eigen::VectorXd mu = vec(z, l.mu, q_);
        Eigen::MatrixXd to_obs = Eigen::MatrixXd::Zero(p, p);  // (e, c) = to_obs (e, b)
        to_obs(0, 0) = 1.0;
        to_obs.bottomRightCorner(q_, q_) = gamma;
        Eigen::MatrixXd to_beta = Eigen::MatrixXd::Identity(p, p);  // (b0, b) = to_beta (e, b)
        to_beta.block(0, 1, 1, q_) = mu.transpose() * (gamma - Eigen::MatrixXd::Identity(q_, q_));
        const double s2 = d.s * d.s;
        const Eigen::VectorXd tinv = hyper_.tau2_vector(z).cwiseInverse();
        const Eigen::MatrixXd prec = to_obs.transpose() * st.dtd() * to_obs / s2 + to_beta.transpose() * tinv.asDiagonal() * to_beta;
        const Eigen::VectorXd rhs = to_obs.transpose() * st.dty() / s2 + to_beta.transpose() * tinv.cwiseProduct(hyper_.theta(z));
        const auto weight = [&](const Eigen::VectorXd& b) {
            const double sigma2 = s2 - b.dot(m * b);
            if (!(sigma2 > 0.0)) return kNegInf;
            const double sigma = std::sqrt(sigma2);
            return mema::log_density(sigma_prior_, sigma) - std::log(sigma);
        };
        Eigen::VectorXd cur(p);
        cur(0) = z[l.coef];
        cur.tail(q_) = vec(z, l.slope, q_);
        const Eigen::VectorXd cand = mvn_draw_canonical(rng, prec, rhs);
        if (!(std::log(rng.uniform()) < weight(cand.tail(q_)) - weight(cur.tail(q_)))) return;
        write(z, l.coef, to_obs * cand);
        write(z, l.slope, cand.tail(q_));
        if (q_ > 1) {
            const Eigen::MatrixXd u = complement_basis(cand.tail(q_));
            write_shape(z, l.shape, u.transpose() * d.phi * u);
        }
    }

    void draw_mu_gold(std::span<double> z, std::size_t k, Rng& rng) const {
        const auto& l = layout_[k];
        const auto& st = stats_[k];
        const Eigen::MatrixXd lam = detail::chol_matrix(z.subspan(l.cov), q_);
        const Eigen::MatrixXd lam_inv = lam.llt().solve(Eigen::MatrixXd::Identity(q_, q_));
        Eigen::MatrixXd prec = st.n * lam_inv;
        prec.diagonal().array() += 1.0 / mu_prior_.variance;
        const Eigen::VectorXd rhs = lam_inv * st.sx + Eigen::VectorXd::Constant(q_, mu_prior_.mean / mu_prior_.variance);
        write(z, l.mu, mvn_draw_canonical(rng, prec, rhs));
    }

    /// mu enters X*_j ~ MVN(mu, V) and b0 = e + g'mu with g = c - b.
    void draw_mu_observed(std::span<double> z, std::size_t k, Rng& rng) const {
        const auto& l = layout_[k];
        const auto& st = stats_[k];
        const Eigen::MatrixXd v_inv = detail::chol_matrix(z.subspan(l.cov), q_).llt().solve(Eigen::MatrixXd::Identity(q_, q_));
        const Eigen::VectorXd coef = vec(z, l.coef, q_ + 1);
        const Eigen::VectorXd g = coef.tail(q_) - vec(z, l.slope, q_);
        const double t0 = hyper_.tau2(z, 0);
        Eigen::MatrixXd prec = st.n * v_inv + g * g.transpose() / t0;
        prec.diagonal().array() += 1.0 / mu_prior_.variance;
        const Eigen::VectorXd rhs = v_inv * st.sx + g * ((z[0] - coef(0)) / t0) +
                                    Eigen::VectorXd::Constant(q_, mu_prior_.mean / mu_prior_.variance);
        write(z, l.mu, mvn_draw_canonical(rng, prec, rhs));
    }

    void draw_lambda_gold(std::span<double> z, std::size_t k, Rng& rng) const {
        const auto& l = layout_[k];
        const auto& st = stats_[k];
        const Eigen::MatrixXd scale = Eigen::MatrixXd::Identity(q_, q_) + st.scatter(vec(z, l.mu, q_));
        detail::chol_encode(inv_wishart_draw(rng, scale, q_ + st.n), z.subspan(l.cov));
    }

    int q_;
    CoefficientHyper hyper_;
    prior::Normal mu_prior_;
    PriorSpec sigma_prior_;
    Transform sigma_t_;
    double delta_;
    bool warn_ = false;
    std::size_t zeta_off_ = 0;  // 0 when every study is gold-standard
    std::size_t dim_ = 0;
    std::vector<Layout> layout_;
    std::vector<IpdStudy> studies_;
    std::vector<StudyStats> stats_;
    std::vector<Block> blocks_;
    std::vector<std::pair<Role, std::size_t>> roles_;
    std::vector<std::string> names_;
};

}  // namespace

std::unique_ptr<Target> build_multi_bayesma(const std::vector<RegressionFit>& fits, const PriorSet& priors) {
    if (fits.empty()) throw Error(ErrorCode::EmptyInput, "no regression fits supplied");
    return std::make_unique<MultiAggregateModel>(fits, priors);
}

std::unique_ptr<Target> build_multi_ipd_bmema(const IpdDataset& data, const ModelSpec& spec) {
    if (data.studies.empty()) throw Error(ErrorCode::EmptyInput, "no studies supplied");
    if (data.q < 1) throw Error(ErrorCode::DimensionMismatch, "IPD needs at least one covariate");
    validate(spec);
    if (!spec.k_prime_ids) throw Error(ErrorCode::MissingField, "multiIPD needs explicit k_prime_ids");
    std::vector<bool> gold;
    for (const auto& id : *spec.k_prime_ids) {
        if (!data.find(id)) throw Error(ErrorCode::DomainError, "k_prime_ids names unknown study '" + id + "'");
    }
    for (const auto& s : data.studies) gold.push_back(spec.k_prime_ids->contains(s.study_id));
    return std::make_unique<MultiIpdModel>(data, gold, spec);
}

}  // namespace mema
