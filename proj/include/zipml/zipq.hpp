#pragma once

// ZIPQ: binary container for a quantized dataset.
//
//   offset  size  field
//   0       4     magic "ZIPQ"
//   4       1     version (1)
//   5       8     n_samples            u64
//   13      4     n_features           u32
//   17      1     bits per base index  u8, 1..16
//   18      1     n_copies             u8, power of two
//   19      1     scaling              u8, 0 = column, 1 = row
//   20      1     reserved             u8, 0
//   21      8*F   scales               f64[n_features]
//   ...     R*N   rows: base indices (bits each) then selector fields
//                 (log2 n_copies bits each), LSB-first, each row padded to a
//                 byte boundary: R = ceil(F * (bits + log2 n_copies) / 8)
//   ...     8*N   labels               f64[n_samples]
//   ...     4     CRC-32 of every preceding byte
//
// Everything is little-endian. Labels are stored in full precision.

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "zipml/bitpack.hpp"
#include "zipml/dataset.hpp"
#include "zipml/error.hpp"
#include "zipml/quant.hpp"
#include "zipml/rng.hpp"

namespace zipml {

namespace zipq {

inline constexpr std::array<char, 4> kMagic{'Z', 'I', 'P', 'Q'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 21;
inline constexpr std::size_t kCrcBytes = 4;

static_assert(std::endian::native == std::endian::little, "ZIPQ I/O assumes a little-endian host");

/// Bytes one packed row occupies.
constexpr std::size_t row_bytes(std::size_t n_features, unsigned bits, unsigned n_copies) noexcept {
    return packed_bytes(n_features * (bits + ceil_log2(n_copies)));
}

constexpr std::size_t file_bytes(std::size_t n_samples, std::size_t n_features, unsigned bits,
                                 unsigned n_copies) noexcept {
    return kHeaderBytes + 8 * n_features + n_samples * row_bytes(n_features, bits, n_copies) + 8 * n_samples +
           kCrcBytes;
}

namespace detail {

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <class T>
T get(std::span<std::uint8_t const> in, std::size_t off) {
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    return v;
}

inline std::uint32_t crc(std::span<std::uint8_t const> bytes) {
    uLong c = crc32(0L, Z_NULL, 0);
    std::size_t off = 0;
    while (off < bytes.size()) {
        auto const n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        c = crc32(c, bytes.data() + off, n);
        off += n;
    }
    return static_cast<std::uint32_t>(c);
}

} // namespace detail

} // namespace zipq

/// Quantized dataset held as the serialized byte image; rows are decoded on demand.
class QuantizedDataset {
  public:
    /// Validates a complete byte image. Throws CorruptFileError on any defect.
    explicit QuantizedDataset(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {
        using namespace zipq;
        std::span<std::uint8_t const> const b(bytes_);
        if (b.size() < kHeaderBytes + kCrcBytes) throw CorruptFileError("file shorter than header");
        if (std::memcmp(b.data(), kMagic.data(), 4) != 0) throw CorruptFileError("bad magic");
        if (b[4] != kVersion) throw CorruptFileError("unsupported version " + std::to_string(b[4]));
        auto const n_samples = zipq::detail::get<std::uint64_t>(b, 5);
        auto const n_features = zipq::detail::get<std::uint32_t>(b, 13);
        bits_ = b[17];
        n_copies_ = b[18];
        std::uint8_t const scaling = b[19];
        if (bits_ < 1 || bits_ > 16) throw CorruptFileError("bits out of range");
        if (!is_power_of_two(n_copies_)) throw CorruptFileError("n_copies is not a power of two");
        if (scaling > 1) throw CorruptFileError("unknown scaling mode");
        if (b[20] != 0) throw CorruptFileError("reserved byte is not zero");
        if (n_features == 0) throw CorruptFileError("zero features");
        // reject sizes whose byte count would overflow before comparing
        std::size_t const rb = row_bytes(n_features, bits_, n_copies_);
        std::size_t const max_rows = (b.size() / (rb + 8)) + 1;
        if (n_samples > max_rows) throw CorruptFileError("sample count inconsistent with file length");
        n_samples_ = static_cast<std::size_t>(n_samples);
        n_features_ = n_features;
        scaling_ = static_cast<Scaling>(scaling);
        if (file_bytes(n_samples_, n_features_, bits_, n_copies_) != b.size())
            throw CorruptFileError("file length does not match header");
        auto const stored = zipq::detail::get<std::uint32_t>(b, b.size() - kCrcBytes);
        if (stored != zipq::detail::crc(b.first(b.size() - kCrcBytes))) throw CorruptFileError("checksum mismatch");
        std::vector<double> scales(n_features_);
        for (std::size_t i = 0; i < n_features_; ++i) {
            scales[i] = zipq::detail::get<double>(b, kHeaderBytes + 8 * i);
            if (!(scales[i] > 0.0) || !std::isfinite(scales[i])) throw CorruptFileError("invalid scale");
        }
        scales_ = ScaleVector(std::move(scales));
        row_bytes_ = rb;
        payload_ = kHeaderBytes + 8 * n_features_;
        labels_ = payload_ + n_samples_ * rb;
        for (std::size_t k = 0; k < n_samples_; ++k)
            if (!std::isfinite(label(k))) throw CorruptFileError("non-finite label");
    }

    std::size_t size() const noexcept { return n_samples_; }
    std::size_t n_features() const noexcept { return n_features_; }
    unsigned bits() const noexcept { return bits_; }
    unsigned n_copies() const noexcept { return n_copies_; }
    Scaling scaling() const noexcept { return scaling_; }
    ScaleVector const& scales() const noexcept { return scales_; }
    std::span<std::uint8_t const> bytes() const noexcept { return bytes_; }

    double label(std::size_t k) const { return zipq::detail::get<double>(bytes_, labels_ + 8 * k); }

    CopyRecord record(std::size_t k) const {
        if (k >= n_samples_) throw RangeError("sample index out of range");
        BitReader r(std::span<std::uint8_t const>(bytes_).subspan(payload_ + k * row_bytes_, row_bytes_));
        return CopyRecord::unpack(r, n_features_, bits_, n_copies_, DrawId{0x5a495051ULL, k, 0});
    }

    /// Copy i of sample k in canonical order.
    QuantizedVector copy(std::size_t k, unsigned i, detail::GridView grids) const {
        return decode_copies(record(k), i, grids, scales_);
    }

    /// Every copy of sample k with per-coordinate shuffled assignment.
    std::vector<QuantizedVector> copies(std::size_t k, detail::GridView grids, Stream& rng) const {
        return decode_all(record(k), grids, scales_, rng);
    }

    /// Bytes of packed payload (rows only), for bandwidth accounting.
    std::size_t payload_bytes() const noexcept { return n_samples_ * row_bytes_; }

  private:
    std::vector<std::uint8_t> bytes_;
    std::size_t n_samples_ = 0;
    std::size_t n_features_ = 0;
    unsigned bits_ = 0;
    unsigned n_copies_ = 1;
    Scaling scaling_ = Scaling::Column;
    ScaleVector scales_;
    std::size_t row_bytes_ = 0;
    std::size_t payload_ = 0;
    std::size_t labels_ = 0;
};

/// Serializes column-scaled quantizations of every sample.
/// The stored bit width is the widest grid's.
inline std::vector<std::uint8_t> encode_quantized(Samples const& s, detail::GridView grids,
                                                  ScaleVector const& scales, unsigned n_copies, std::uint64_t seed,
                                                  Scaling scaling = Scaling::Column) {
    if (s.empty()) throw ArgumentError("cannot quantize an empty sample set");
    if (n_copies < 1 || n_copies > 128 || !is_power_of_two(n_copies))
        throw ArgumentError("n_copies must be a power of two in [1, 128]");
    grids.check_size(s.n_features());
    unsigned bits = 1;
    for (std::size_t j = 0; j < s.n_features(); ++j) bits = std::max(bits, grids[j].bits());
    if (s.n_features() > 0xffffffffULL) throw ArgumentError("too many features");

    std::vector<std::uint8_t> out;
    out.reserve(zipq::file_bytes(s.size(), s.n_features(), bits, n_copies));
    out.insert(out.end(), zipq::kMagic.begin(), zipq::kMagic.end());
    out.push_back(zipq::kVersion);
    zipq::detail::put<std::uint64_t>(out, s.size());
    zipq::detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.n_features()));
    out.push_back(static_cast<std::uint8_t>(bits));
    out.push_back(static_cast<std::uint8_t>(n_copies));
    out.push_back(static_cast<std::uint8_t>(scaling));
    out.push_back(0);
    for (double m : scales.values()) zipq::detail::put<double>(out, m);

    Stream const root = Stream(seed).split("zipq");
    for (std::size_t k = 0; k < s.size(); ++k) {
        Stream rng = root.split(k);
        CopyRecord const rec = encode_copies(s.row(k), grids, scales, n_copies, rng);
        BitWriter w(out);
        rec.pack(w, bits);
    }
    for (double b : s.labels()) zipq::detail::put<double>(out, b);
    zipq::detail::put<std::uint32_t>(out, zipq::detail::crc(out));
    return out;
}

inline void write_quantized(Samples const& s, detail::GridView grids, unsigned n_copies, std::uint64_t seed,
                            std::string const& path) {
    auto const bytes = encode_quantized(s, grids, column_scales(s), n_copies, seed);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(reinterpret_cast<char const*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write to '" + path + "' failed");
}

inline QuantizedDataset read_quantized(std::string const& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return QuantizedDataset(std::move(bytes));
}

} // namespace zipml
