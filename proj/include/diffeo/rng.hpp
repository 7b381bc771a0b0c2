#pragma once

#include <array>
#include <cstdint>

namespace diffeo {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// The block function maps a 128-bit counter and a 64-bit key to 128 random
/// bits. Streams never share state: every (seed, stream id) pair walks its
/// own slice of counter space, so results do not depend on the order in
/// which parallel workers consume them.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key) noexcept;
};

/// Sequential view over one Philox stream.
///
/// Counter words 2..3 hold the stream id, words 0..1 the block index.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream_id) noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    /// Uniform in (0, 1].
    double uniform_open_zero() noexcept;
    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept;
    /// Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_; }

private:
    void refill() noexcept;

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t block_index_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int buffered_ = 0;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

/// Derive an independent 64-bit seed for a named sub-task.
///
/// `domain` separates uses (fields, noise, pairs, ...); `index` is the item
/// within that use. Implemented as one Philox block keyed by `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t domain, std::uint64_t index) noexcept;

// Domain tags for derive_seed.
namespace seed_domain {
inline constexpr std::uint64_t field = 0x6669656c64ULL;     // "field"
inline constexpr std::uint64_t noise = 0x6e6f697365ULL;     // "noise"
inline constexpr std::uint64_t pairs = 0x7061697273ULL;     // "pairs"
inline constexpr std::uint64_t images = 0x696d616765ULL;    // "image"
inline constexpr std::uint64_t predictor = 0x70726564ULL;   // "pred"
inline constexpr std::uint64_t data = 0x64617461ULL;        // "data"
inline constexpr std::uint64_t init = 0x696e6974ULL;        // "init"
inline constexpr std::uint64_t probe = 0x70726f6265ULL;     // "probe"
inline constexpr std::uint64_t test = 0x74657374ULL;        // "test"
}  // namespace seed_domain

}  // namespace diffeo
