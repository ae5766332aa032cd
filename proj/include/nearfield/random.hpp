#pragma once

#include <array>
#include <cstdint>

#include "nearfield/common.hpp"

namespace nearfield
{

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
// The output block is a pure function of (key, counter), so any substream
// can be addressed without advancing a shared state.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

// Mixes a stream identifier into a seed (SplitMix64 finalizer). Used to derive
// per-trial and per-CPI seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Sequential view of one Philox substream: key = seed, upper counter words =
// stream id, lower words = block index.
class RandomStream
{
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream);

    std::uint32_t next_u32();
    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    // Standard normal via Box-Muller; both outputs of each pair are used.
    double normal();
    // Circularly symmetric complex Gaussian with E|z|^2 = variance.
    cplx complex_normal(double variance = 1.0);
    // exp(j*phi), phi uniform on [0, 2pi).
    cplx unit_phase();

private:
    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int buffered_ = 0;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

// Stream ids used by the snapshot synthesizers.
inline constexpr std::uint64_t kNoiseStream = 0;
inline constexpr std::uint64_t source_stream(std::size_t target) { return 1 + target; }

} // namespace nearfield
