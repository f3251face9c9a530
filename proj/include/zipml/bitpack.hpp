#pragma once

// LSB-first bit packing into little-endian byte buffers.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "zipml/error.hpp"

namespace zipml {

class BitWriter {
  public:
    explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

    void put(std::uint64_t value, unsigned width) {
        for (unsigned b = 0; b < width; ++b) {
            if (used_ == 0) out_.push_back(0);
            if ((value >> b) & 1u) out_.back() |= static_cast<std::uint8_t>(1u << used_);
            used_ = (used_ + 1) & 7u;
        }
    }

    /// Pads to the next byte boundary.
    void flush() noexcept { used_ = 0; }

  private:
    std::vector<std::uint8_t>& out_;
    unsigned used_ = 0;
};

class BitReader {
  public:
    explicit BitReader(std::span<std::uint8_t const> in) : in_(in) {}

    std::uint64_t get(unsigned width) {
        std::uint64_t v = 0;
        for (unsigned b = 0; b < width; ++b) {
            std::size_t const byte = pos_ >> 3;
            if (byte >= in_.size()) throw CorruptFileError("bit stream exhausted");
            if ((in_[byte] >> (pos_ & 7u)) & 1u) v |= std::uint64_t{1} << b;
            ++pos_;
        }
        return v;
    }

    void align() noexcept { pos_ = (pos_ + 7) & ~std::size_t{7}; }
    std::size_t bit_position() const noexcept { return pos_; }

  private:
    std::span<std::uint8_t const> in_;
    std::size_t pos_ = 0;
};

/// Bytes needed to hold `bits` bits.
constexpr std::size_t packed_bytes(std::size_t bits) noexcept { return (bits + 7) / 8; }

/// ceil(log2(n)) for n >= 1.
constexpr unsigned ceil_log2(std::uint64_t n) noexcept {
    unsigned b = 0;
    while ((std::uint64_t{1} << b) < n) ++b;
    return b;
}

constexpr bool is_power_of_two(std::uint64_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

} // namespace zipml
