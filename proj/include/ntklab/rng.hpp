#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace ntklab {

/// Philox4x32-10 counter-based generator. Every output is a pure function of
/// (root_seed, stream_index, draw counter), so ensembles replay identically
/// regardless of execution order across streams.
class RngStream {
public:
    RngStream(std::uint64_t root_seed, std::uint64_t stream_index);

    std::uint64_t root_seed() const { return root_seed_; }
    std::uint64_t stream_index() const { return stream_index_; }
    std::uint64_t draws() const { return counter_; }

    /// Uniform double in [0, 1).
    double uniform();

    /// Standard normal via Box-Muller on one counter block.
    double gaussian();

    void fill_gaussian(std::span<double> out, double mean, double variance);

    /// Raw 128-bit block for the given counter; exposed for known-answer tests.
    static std::array<std::uint32_t, 4> philox_block(std::uint64_t key_lo_hi[2],
                                                     const std::uint32_t counter[4]);

private:
    std::array<std::uint32_t, 4> block_at(std::uint64_t counter) const;

    std::uint64_t root_seed_;
    std::uint64_t stream_index_;
    std::uint64_t counter_ = 0;
};

/// i.i.d. normal draws with the given mean and variance (>= 0).
/// variance == 0 returns `count` copies of mean. Deterministic per stream state.
std::vector<double> gaussian_sample(RngStream& stream, double mean, double variance,
                                    std::size_t count);

} // namespace ntklab
