#pragma once

// Counter-based random streams.
//
// A Stream is a (key, counter) pair. Each draw hashes the pair and bumps the
// counter, so a stream can be replayed from any point and split into
// statistically independent children without shared state. Distributions are
// implemented here rather than taken from <random> so that results are
// bit-identical across standard library implementations.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace zipml {

namespace detail {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

class Stream {
  public:
    using result_type = std::uint64_t;

    constexpr Stream() noexcept = default;
    constexpr explicit Stream(std::uint64_t seed) noexcept : key_(detail::mix64(seed)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        return detail::mix64(key_ ^ detail::mix64(counter_++ + 0x632be59bd9b4e019ULL));
    }

    /// Child stream identified by an integer; independent of the parent's counter.
    constexpr Stream split(std::uint64_t id) const noexcept {
        Stream child;
        child.key_ = detail::mix64(key_ ^ detail::mix64(id ^ 0xd1b54a32d192ed03ULL));
        return child;
    }

    constexpr Stream split(std::string_view name) const noexcept {
        return split(detail::hash_name(name));
    }

    constexpr std::uint64_t key() const noexcept { return key_; }
    constexpr std::uint64_t counter() const noexcept { return counter_; }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n), by rejection of the short tail.
    std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        std::uint64_t const threshold = (0 - n) % n;
        std::uint64_t r = (*this)();
        while (r < threshold) r = (*this)();
        return r % n;
    }

    /// Standard normal via Box-Muller (one value per call, no cached spare).
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double const u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double rademacher() noexcept { return ((*this)() >> 63) ? 1.0 : -1.0; }

    constexpr bool operator==(Stream const&) const noexcept = default;

  private:
    std::uint64_t key_ = detail::mix64(0);
    std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle driven by a Stream.
template <class It>
void shuffle(It first, It last, Stream& rng) {
    auto const n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        auto const j = rng.below(i);
        using std::swap;
        swap(first[i - 1], first[j]);
    }
}

} // namespace zipml
