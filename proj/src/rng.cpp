#include "diffeo/rng.hpp"

#include <cmath>
#include <numbers>

namespace diffeo {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

inline Philox4x32::Counter round(const Philox4x32::Counter& c, const Philox4x32::Key& k) noexcept {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

inline Philox4x32::Key lo_hi(std::uint64_t v) noexcept {
    return {static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(v >> 32)};
}

}  // namespace

Philox4x32::Counter Philox4x32::block(Counter ctr, Key key) noexcept {
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        ctr = round(ctr, key);
    }
    return ctr;
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
    : seed_(seed), stream_(stream_id) {}

void RandomStream::refill() noexcept {
    const auto b = lo_hi(block_index_);
    const auto s = lo_hi(stream_);
    const auto out = Philox4x32::block({b[0], b[1], s[0], s[1]}, lo_hi(seed_));
    ++block_index_;
    buffer_[0] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
    buffer_[1] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
    buffered_ = 2;
}

std::uint64_t RandomStream::next_u64() noexcept {
    if (buffered_ == 0) refill();
    return buffer_[2 - buffered_--];
}

double RandomStream::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform_open_zero() noexcept {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double RandomStream::normal() noexcept {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = uniform_open_zero();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
}

std::uint64_t RandomStream::below(std::uint64_t bound) noexcept {
    // Lemire-style rejection keeps the result exactly uniform.
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t x = next_u64();
        if (x >= threshold) return x % bound;
    }
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t domain, std::uint64_t index) noexcept {
    const auto i = lo_hi(index);
    const auto d = lo_hi(domain);
    const auto out = Philox4x32::block({i[0], i[1], d[0], d[1] ^ 0x5EEDu}, lo_hi(master));
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

}  // namespace diffeo
