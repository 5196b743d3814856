#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace textpix {

/// Deterministic seeded random source.
///
/// The underlying mt19937_64 sequence is fixed by the standard, and the
/// uniform/normal transforms below are hand-rolled, so a given seed yields
/// the same draw sequence regardless of the standard library in use.
/// split() derives an independent child stream from the creation seed,
/// which keeps e.g. initialization and dropout streams decoupled.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    /// Child generator for the given stream id, derived from the creation
    /// seed only (not from the current engine state).
    Rng split(std::uint64_t stream) const;

    std::uint64_t next_u64();

    /// Uniform in [0, 1).
    double next_uniform();

    /// Uniform in [lo, hi).
    double next_uniform(double lo, double hi);

    /// Standard normal via Box-Muller; consumes exactly two u64 draws.
    double next_normal();

    std::uint64_t seed() const noexcept { return seed_; }

    /// Engine state as text; restores an identical continuation.
    std::string serialize() const;
    static Rng deserialize(const std::string& text);

private:
    std::uint64_t seed_ = 0;
    std::mt19937_64 engine_;
};

}  // namespace textpix
