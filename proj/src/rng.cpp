#include "ntklab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace ntklab {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

inline void philox_round(std::uint32_t c[4], const std::uint32_t k[2]) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, c[0], hi0, lo0);
    mulhilo(kPhiloxM1, c[2], hi1, lo1);
    const std::uint32_t n0 = hi1 ^ c[1] ^ k[0];
    const std::uint32_t n1 = lo1;
    const std::uint32_t n2 = hi0 ^ c[3] ^ k[1];
    const std::uint32_t n3 = lo0;
    c[0] = n0;
    c[1] = n1;
    c[2] = n2;
    c[3] = n3;
}

inline double u64_to_unit(std::uint64_t x) {
    // 53 top bits -> [0, 1)
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

} // namespace

RngStream::RngStream(std::uint64_t root_seed, std::uint64_t stream_index)
    : root_seed_(root_seed), stream_index_(stream_index) {}

std::array<std::uint32_t, 4> RngStream::philox_block(std::uint64_t key_lo_hi[2],
                                                     const std::uint32_t counter[4]) {
    std::uint32_t c[4] = {counter[0], counter[1], counter[2], counter[3]};
    std::uint32_t k[2] = {static_cast<std::uint32_t>(key_lo_hi[0]),
                          static_cast<std::uint32_t>(key_lo_hi[1])};
    for (int round = 0; round < 10; ++round) {
        philox_round(c, k);
        if (round < 9) {
            k[0] += kPhiloxW0;
            k[1] += kPhiloxW1;
        }
    }
    return {c[0], c[1], c[2], c[3]};
}

std::array<std::uint32_t, 4> RngStream::block_at(std::uint64_t counter) const {
    std::uint32_t c[4] = {
        static_cast<std::uint32_t>(counter),
        static_cast<std::uint32_t>(counter >> 32),
        static_cast<std::uint32_t>(stream_index_),
        static_cast<std::uint32_t>(stream_index_ >> 32),
    };
    std::uint64_t key[2] = {root_seed_ & 0xFFFFFFFFu, root_seed_ >> 32};
    return philox_block(key, c);
}

double RngStream::uniform() {
    const auto b = block_at(counter_++);
    const std::uint64_t x = (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
    return u64_to_unit(x);
}

double RngStream::gaussian() {
    const auto b = block_at(counter_++);
    const std::uint64_t x01 = (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
    const std::uint64_t x23 = (static_cast<std::uint64_t>(b[2]) << 32) | b[3];
    // u1 in (0, 1] so the log is finite.
    const double u1 = static_cast<double>((x01 >> 11) + 1) * 0x1.0p-53;
    const double u2 = u64_to_unit(x23);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void RngStream::fill_gaussian(std::span<double> out, double mean, double variance) {
    if (variance < 0.0 || !std::isfinite(variance)) {
        throw std::invalid_argument("gaussian variance must be finite and >= 0");
    }
    if (variance == 0.0) {
        for (double& v : out) v = mean;
        return;
    }
    const double sd = std::sqrt(variance);
    for (double& v : out) v = mean + sd * gaussian();
}

std::vector<double> gaussian_sample(RngStream& stream, double mean, double variance,
                                    std::size_t count) {
    std::vector<double> out(count);
    stream.fill_gaussian(out, mean, variance);
    return out;
}

} // namespace ntklab
