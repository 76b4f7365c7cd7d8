#pragma once

#include <array>
#include <cstdint>

namespace hseg {

// xoshiro256++ (Blackman & Vigna). Chosen over std::mt19937 because the
// four-word state serializes bit-exactly into checkpoints and the algorithm
// is pinned here rather than by the standard library vendor.
class Rng {
  public:
    using State = std::array<std::uint64_t, 4>;

    explicit Rng(std::uint64_t seed);
    static Rng from_state(const State& s);

    std::uint64_t next_u64();

    /// Uniform in [0,1) with 24 significant bits (float-exact).
    float next_float();

    /// Uniform in [0,1) with 53 significant bits.
    double next_double();

    float uniform(float lo, float hi);

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n);

    const State& state() const { return state_; }
    void set_state(const State& s) { state_ = s; }

    bool operator==(const Rng& other) const { return state_ == other.state_; }

  private:
    Rng() = default;
    State state_{};
};

/// SplitMix64 step; used for seed expansion and derived per-item seeds.
std::uint64_t splitmix64(std::uint64_t& x);

/// Stateless seed derivation: mixes (seed, index) into an independent seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace hseg
