#include "mema/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <sstream>
#include <thread>

#include <Eigen/Cholesky>

#include "mema/error.hpp"

namespace mema {

double Target::log_density_block(std::size_t, std::span<const double> z) const { return log_density(z); }

void Target::draw_exact(std::size_t block, std::span<double>, Rng&) const {
    throw Error(ErrorCode::DomainError, "block " + std::to_string(block) + " has no exact conditional draw");
}

FunctionTarget::FunctionTarget(std::vector<std::string> names, LogDensity log_density, std::vector<double> initial,
                               double initial_step)
    : names_(std::move(names)), fn_(std::move(log_density)), initial_(std::move(initial)) {
    if (initial_.size() != names_.size()) throw Error(ErrorCode::DimensionMismatch, "initial point has wrong length");
    for (std::size_t i = 0; i < names_.size(); ++i) {
        blocks_.push_back(Block{names_[i], {i}, BlockKind::RandomWalk, initial_step});
    }
}

void FunctionTarget::use_joint_block() {
    Block b{"joint", {}, BlockKind::RandomWalk, blocks_.empty() ? 0.5 : blocks_.front().initial_step};
    for (std::size_t i = 0; i < names_.size(); ++i) b.coords.push_back(i);
    blocks_ = {b};
}

std::vector<double> FunctionTarget::initial_point(Rng&) const { return initial_; }

void FunctionTarget::outputs(std::span<const double> z, std::span<double> out) const {
    std::copy(z.begin(), z.end(), out.begin());
}

void validate(const McmcConfig& c) {
    if (c.chains < 1) throw Error(ErrorCode::DomainError, "chains must be positive");
    if (c.iterations < 1) throw Error(ErrorCode::DomainError, "iterations must be positive");
    if (c.thin < 1) throw Error(ErrorCode::DomainError, "thin must be positive");
    if (c.adapt_window < 1) throw Error(ErrorCode::DomainError, "adaptation window must be positive");
    const long burn = c.resolved_burn_in();
    if (burn < 0 || burn >= c.iterations) throw Error(ErrorCode::DomainError, "burn-in must lie in [0, iterations)");
    if ((c.iterations - burn) % c.thin != 0) {
        throw Error(ErrorCode::DomainError, "thin must divide the number of post-burn-in iterations");
    }
}

double Target::transform(std::size_t block, std::span<const double>, std::span<double>) const {
    throw Error(ErrorCode::DomainError, "block " + std::to_string(block) + " has no transform");
}

namespace {

struct ChainResult {
    Eigen::MatrixXd draws;
    std::vector<double> acceptance;
};

constexpr int kInitRetries = 100;

std::vector<double> find_start(const Target& target, Rng& rng, const InitStrategy& init) {
    for (int attempt = 0; attempt < kInitRetries; ++attempt) {
        std::vector<double> z = init ? init(target, rng) : target.initial_point(rng);
        if (z.size() != target.dimension()) throw Error(ErrorCode::DimensionMismatch, "initial point has wrong length");
        const double lp = target.log_density(z);
        if (std::isfinite(lp)) return z;
    }
    throw Error(ErrorCode::InitFailure,
                "no finite-density starting point after " + std::to_string(kInitRetries) + " attempts");
}

/// Running covariance of a vector block's coordinates during burn-in. Once
/// enough draws have accumulated, proposals are shaped by its Cholesky
/// factor (frozen after burn-in).
struct ShapeAdapter {
    std::size_t dim = 0;
    long count = 0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd m2, chol;
    bool active = false;

    explicit ShapeAdapter(std::size_t d) : dim(d), mean(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d))),
                                           m2(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))) {}

    void observe(const std::vector<double>& z, const std::vector<std::size_t>& coords) {
        Eigen::VectorXd x(static_cast<Eigen::Index>(dim));
        for (std::size_t i = 0; i < dim; ++i) x(static_cast<Eigen::Index>(i)) = z[coords[i]];
        ++count;
        const Eigen::VectorXd d = x - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (x - mean).transpose();
    }

    /// Returns true when the proposal shape was (re)built.
    bool rebuild() {
        if (count < 50 + 20 * static_cast<long>(dim)) return false;
        Eigen::MatrixXd cov = m2 / static_cast<double>(count - 1);
        cov.diagonal().array() += 1e-10 + 1e-8 * cov.diagonal().mean();
        const Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) return false;
        chol = llt.matrixL();
        return true;
    }
};

ChainResult run_one(const Target& target, const McmcConfig& cfg, int chain, const InitStrategy& init) {
    Rng rng(cfg.seed, static_cast<std::uint64_t>(chain));
    const auto& blocks = target.blocks();
    const std::size_t n_out = target.output_names().size();

    std::vector<double> z = find_start(target, rng, init);
    std::vector<double> saved, before;
    std::vector<double> log_step(blocks.size());
    std::vector<long> accepted_window(blocks.size(), 0), accepted_total(blocks.size(), 0);
    std::vector<long> tried_total(blocks.size(), 0);
    for (std::size_t b = 0; b < blocks.size(); ++b) log_step[b] = std::log(blocks[b].initial_step);
    std::vector<ShapeAdapter> shapes;
    for (const auto& blk : blocks) shapes.emplace_back(blk.kind == BlockKind::RandomWalk ? blk.coords.size() : 0);
    Eigen::VectorXd eps;

    const long burn = cfg.resolved_burn_in();
    ChainResult result;
    result.draws.resize(cfg.retained_per_chain(), static_cast<Eigen::Index>(n_out));
    std::vector<double> out(n_out);
    long adapt_batches = 0;
    Eigen::Index row = 0;

    for (long it = 0; it < cfg.iterations; ++it) {
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const Block& blk = blocks[b];
            if (blk.kind == BlockKind::Exact) {
                target.draw_exact(b, z, rng);
                continue;
            }
            const double current = target.log_density_block(b, z);
            if (!std::isfinite(current)) {
                std::ostringstream msg;
                msg << "chain " << chain << " iteration " << it << ": current state has log density " << current
                    << " at block '" << blk.name << "'";
                throw Error(ErrorCode::NonFiniteDensity, msg.str());
            }
            const double step = std::exp(log_step[b]);
            saved.clear();
            for (std::size_t c : blk.coords) saved.push_back(z[c]);
            if (blk.transforms) before = z;
            if (shapes[b].active) {
                eps.resize(static_cast<Eigen::Index>(blk.coords.size()));
                for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
                const Eigen::VectorXd move = shapes[b].chol * eps;
                for (std::size_t i = 0; i < blk.coords.size(); ++i) z[blk.coords[i]] += step * move(static_cast<Eigen::Index>(i));
            } else {
                for (std::size_t c : blk.coords) z[c] += step * rng.normal();
            }
            const double jacobian = blk.transforms ? target.transform(b, before, z) : 0.0;
            const double cand = target.log_density_block(b, z) + jacobian;
            if (std::isnan(cand) || cand == std::numeric_limits<double>::infinity()) {
                std::ostringstream msg;
                msg << "chain " << chain << " iteration " << it << ": proposal log density " << cand << " at block '"
                    << blk.name << "'";
                throw Error(ErrorCode::NonFiniteDensity, msg.str());
            }
            // One uniform per proposal either way keeps the stream aligned.
            const double log_u = std::log(rng.uniform());
            const bool accept = cand > -std::numeric_limits<double>::infinity() && log_u < cand - current;
            if (accept) {
                ++accepted_window[b];
            } else {
                if (blk.transforms) {
                    z = before;
                } else {
                    for (std::size_t i = 0; i < blk.coords.size(); ++i) z[blk.coords[i]] = saved[i];
                }
            }
            if (it >= burn) {
                ++tried_total[b];
                if (accept) ++accepted_total[b];
            } else if (shapes[b].dim > 1 && it >= burn / 5) {
                shapes[b].observe(z, blk.coords);
            }
        }

        if (it < burn && (it + 1) % cfg.adapt_window == 0) {
            ++adapt_batches;
            const double delta = std::min(0.25, 1.0 / std::sqrt(static_cast<double>(adapt_batches)));
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                if (blocks[b].kind != BlockKind::RandomWalk) continue;
                const double target_rate = blocks[b].coords.size() == 1 ? 0.44 : 0.23;
                const double rate = static_cast<double>(accepted_window[b]) / static_cast<double>(cfg.adapt_window);
                log_step[b] += rate > target_rate ? delta : -delta;
                accepted_window[b] = 0;
                if (shapes[b].dim > 1 && shapes[b].rebuild() && !shapes[b].active) {
                    shapes[b].active = true;
                    log_step[b] = std::log(2.38 / std::sqrt(static_cast<double>(shapes[b].dim)));
                }
            }
        }

        if (it >= burn && (it - burn + 1) % cfg.thin == 0) {
            target.outputs(z, out);
            for (std::size_t j = 0; j < n_out; ++j) result.draws(row, static_cast<Eigen::Index>(j)) = out[j];
            ++row;
        }
    }
    result.acceptance.resize(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        result.acceptance[b] = blocks[b].kind == BlockKind::Exact || tried_total[b] == 0
                                   ? 1.0
                                   : static_cast<double>(accepted_total[b]) / static_cast<double>(tried_total[b]);
    }
    return result;
}

}  // namespace

PosteriorSummary run_chains(const Target& target, const McmcConfig& config, const InitStrategy& init) {
    validate(config);
    std::vector<ChainResult> results(static_cast<std::size_t>(config.chains));
    std::vector<std::exception_ptr> errors(results.size());

    auto work = [&](int c) {
        try {
            results[static_cast<std::size_t>(c)] = run_one(target, config, c, init);
        } catch (...) {
            errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
    };

    int threads = config.threads > 0 ? config.threads : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::clamp(threads, 1, config.chains);
    if (threads == 1) {
        for (int c = 0; c < config.chains; ++c) work(c);
    } else {
        for (int start = 0; start < config.chains; start += threads) {
            std::vector<std::jthread> pool;
            for (int c = start; c < std::min(config.chains, start + threads); ++c) pool.emplace_back(work, c);
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    Draws draws;
    draws.names = target.output_names();
    std::vector<std::vector<double>> acceptance;
    for (auto& r : results) {
        draws.chains.push_back(std::move(r.draws));
        acceptance.push_back(std::move(r.acceptance));
    }
    PosteriorSummary summary = summarize(std::move(draws));
    for (const auto& b : target.blocks()) summary.block_names.push_back(b.name);
    summary.acceptance = std::move(acceptance);
    summary.warnings = target.warnings();
    return summary;
}

}  // namespace mema
