#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mema/random.hpp"
#include "mema/summary.hpp"

namespace mema {

enum class BlockKind {
    RandomWalk,  // Gaussian random-walk Metropolis on the listed coordinates
    Exact,       // draw from the block's full conditional (Target::draw_exact)
};

struct Block {
    std::string name;
    std::vector<std::size_t> coords;
    BlockKind kind = BlockKind::RandomWalk;
    double initial_step = 0.5;
    /// Random-walk moves are followed by Target::transform, which may update
    /// other coordinates as a function of the move.
    bool transforms = false;

    Block(std::string name_, std::vector<std::size_t> coords_, BlockKind kind_ = BlockKind::RandomWalk,
          double initial_step_ = 0.5, bool transforms_ = false)
        : name(std::move(name_)), coords(std::move(coords_)), kind(kind_), initial_step(initial_step_),
          transforms(transforms_) {}
};

/// A posterior over an unconstrained parameter vector z. Constrained
/// quantities (scales, correlations, covariance matrices) are stored
/// transformed and log_density includes the Jacobian of the transform.
class Target {
public:
    virtual ~Target() = default;

    virtual std::size_t dimension() const = 0;
    virtual const std::vector<Block>& blocks() const = 0;
    virtual double log_density(std::span<const double> z) const = 0;

    /// The part of log_density that depends on the coordinates of `block`.
    /// Implementations may drop any terms constant in those coordinates.
    virtual double log_density_block(std::size_t block, std::span<const double> z) const;

    /// Replace the coordinates of an Exact block with a full-conditional draw.
    virtual void draw_exact(std::size_t block, std::span<double> z, Rng& rng) const;

    /// For a block with `transforms`: `z` holds the moved block coordinates
    /// and `before` the state prior to the move. Apply a deterministic,
    /// invertible update to the other coordinates and return its log
    /// |Jacobian|; the move is accepted or rejected as a whole.
    virtual double transform(std::size_t block, std::span<const double> before, std::span<double> z) const;

    virtual std::vector<double> initial_point(Rng& rng) const = 0;

    virtual const std::vector<std::string>& output_names() const = 0;
    virtual void outputs(std::span<const double> z, std::span<double> out) const = 0;

    /// Model-level caveats surfaced with the fit (e.g. partial identification).
    virtual std::vector<std::string> warnings() const { return {}; }
};

/// Wraps a plain log-density callable; every coordinate becomes its own
/// random-walk block and the outputs are the coordinates themselves.
class FunctionTarget final : public Target {
public:
    using LogDensity = std::function<double(std::span<const double>)>;

    FunctionTarget(std::vector<std::string> names, LogDensity log_density, std::vector<double> initial,
                   double initial_step = 0.5);

    std::size_t dimension() const override { return names_.size(); }
    const std::vector<Block>& blocks() const override { return blocks_; }
    double log_density(std::span<const double> z) const override { return fn_(z); }
    std::vector<double> initial_point(Rng& rng) const override;
    const std::vector<std::string>& output_names() const override { return names_; }
    void outputs(std::span<const double> z, std::span<double> out) const override;

    /// Group coordinates into one vector random-walk block instead.
    void use_joint_block();

private:
    std::vector<std::string> names_;
    LogDensity fn_;
    std::vector<double> initial_;
    std::vector<Block> blocks_;
};

struct McmcConfig {
    int chains = 3;
    long iterations = 100000;
    long thin = 10;
    std::optional<long> burn_in;  // defaults to iterations / 2
    std::uint64_t seed = 1;
    long adapt_window = 50;
    int threads = 0;  // 0 = hardware concurrency

    long resolved_burn_in() const { return burn_in.value_or(iterations / 2); }
    long retained_per_chain() const { return (iterations - resolved_burn_in()) / thin; }
};

/// Throws DomainError for inconsistent settings.
void validate(const McmcConfig& config);

using InitStrategy = std::function<std::vector<double>(const Target&, Rng&)>;

/// Runs config.chains independent adaptive Metropolis-within-Gibbs chains.
/// Random-walk step sizes adapt during burn-in toward 0.44 acceptance for
/// scalar blocks and 0.23 for vector blocks, then stay fixed. Chain c uses
/// the substream (seed, c), so results do not depend on scheduling.
PosteriorSummary run_chains(const Target& target, const McmcConfig& config, const InitStrategy& init = {});

}  // namespace mema
