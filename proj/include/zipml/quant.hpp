#pragma once

// Stochastic quantization of vectors onto a level grid.
//
// A value v_i is first normalized by its scale, x = v_i / scale_i, which must
// land in the grid's domain ([-1, 1] for signed grids, [0, 1] otherwise). x is
// then rounded to one of the two levels bracketing it, l <= x <= u, choosing u
// with probability (x - l) / (u - l). The dequantized value scale_i * level is
// therefore an unbiased estimate of v_i with variance scale_i^2 (u - x)(x - l).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "zipml/bitpack.hpp"
#include "zipml/error.hpp"
#include "zipml/rng.hpp"

namespace zipml {

enum class Scaling : std::uint8_t { Column = 0, Row = 1 };

/// Normalized values may overshoot the grid domain by this much before it is an error.
inline constexpr double kDomainSlack = 1e-12;

class QuantScheme {
  public:
    QuantScheme() : QuantScheme(std::vector<double>{-1.0, 1.0}) {}

    explicit QuantScheme(std::vector<double> levels, Scaling scaling = Scaling::Column)
        : levels_(std::move(levels)), scaling_(scaling) {
        if (levels_.size() < 2) throw ArgumentError("a grid needs at least two levels");
        if (levels_.front() != -1.0 && levels_.front() != 0.0)
            throw ArgumentError("first level must be -1 or 0");
        if (levels_.back() != 1.0) throw ArgumentError("last level must be 1");
        for (std::size_t i = 1; i < levels_.size(); ++i)
            if (!(levels_[i] > levels_[i - 1])) throw ArgumentError("levels must be strictly increasing");
        bits_ = std::max(1u, ceil_log2(levels_.size()));
        if (bits_ > 16) throw ArgumentError("at most 2^16 levels are supported");
    }

    /// Uniform grid with spacing 1/s: {-1, ..., -1/s, 0, 1/s, ..., 1} when signed
    /// (2s+1 levels), {0, 1/s, ..., 1} otherwise (s+1 levels).
    static QuantScheme uniform(unsigned s, bool is_signed, Scaling scaling = Scaling::Column) {
        if (s == 0) throw ArgumentError("uniform grid needs s >= 1");
        std::vector<double> lv;
        int const lo = is_signed ? -static_cast<int>(s) : 0;
        for (int i = lo; i <= static_cast<int>(s); ++i)
            lv.push_back(i == static_cast<int>(s) ? 1.0 : (i == -static_cast<int>(s) ? -1.0 : double(i) / s));
        return QuantScheme(std::move(lv), scaling);
    }

    /// Largest uniform grid whose level index fits in `bits` bits.
    static QuantScheme uniform_bits(unsigned bits, bool is_signed, Scaling scaling = Scaling::Column) {
        if (bits < 1 || bits > 16) throw ArgumentError("bits must be in [1, 16]");
        if (is_signed) {
            if (bits == 1) return QuantScheme({-1.0, 1.0}, scaling);
            return uniform((1u << (bits - 1)) - 1, true, scaling);
        }
        return uniform((1u << bits) - 1, false, scaling);
    }

    std::span<double const> levels() const noexcept { return levels_; }
    double level(std::size_t j) const { return levels_.at(j); }
    std::size_t size() const noexcept { return levels_.size(); }
    unsigned bits() const noexcept { return bits_; }
    /// Number of intervals between consecutive levels.
    std::size_t intervals() const noexcept { return levels_.size() - 1; }
    Scaling scaling() const noexcept { return scaling_; }
    bool is_signed() const noexcept { return levels_.front() < 0.0; }
    double lower_bound() const noexcept { return levels_.front(); }

    /// Index j with levels[j] <= x < levels[j+1]; the last interval is closed.
    std::size_t bracket(double x) const noexcept {
        auto it = std::upper_bound(levels_.begin(), levels_.end(), x);
        auto j = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - levels_.begin() - 1));
        return std::min(j, levels_.size() - 2);
    }

    double max_gap() const noexcept {
        double g = 0.0;
        for (std::size_t i = 1; i < levels_.size(); ++i) g = std::max(g, levels_[i] - levels_[i - 1]);
        return g;
    }

    /// Widest gap adjacent to level j: the furthest a value that rounded to j can be from it.
    double gap_around(std::size_t j) const noexcept {
        double g = 0.0;
        if (j > 0) g = levels_[j] - levels_[j - 1];
        if (j + 1 < levels_.size()) g = std::max(g, levels_[j + 1] - levels_[j]);
        return g;
    }

    /// Clamp-or-throw normalization of v / scale into this grid's domain.
    double normalize(double v, double scale) const {
        if (!(scale > 0.0)) throw DomainError("scale must be positive");
        double const x = v / scale;
        double const lo = levels_.front();
        if (!(x >= lo - kDomainSlack && x <= 1.0 + kDomainSlack))
            throw DomainError("value " + std::to_string(v) + " outside grid domain for scale " +
                              std::to_string(scale));
        return std::clamp(x, lo, 1.0);
    }

    bool operator==(QuantScheme const& o) const noexcept { return levels_ == o.levels_ && scaling_ == o.scaling_; }

  private:
    std::vector<double> levels_;
    unsigned bits_ = 1;
    Scaling scaling_ = Scaling::Column;
};

/// Per-coordinate positive scale factors M_i.
class ScaleVector {
  public:
    ScaleVector() = default;
    explicit ScaleVector(std::vector<double> m) : m_(std::move(m)) {
        for (double s : m_)
            if (!(s > 0.0) || !std::isfinite(s)) throw ArgumentError("scales must be finite and positive");
    }

    /// Every coordinate scaled by ||v||_2 (1 for the zero vector).
    static ScaleVector row(std::span<double const> v) {
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        double const m = n2 > 0.0 ? std::sqrt(n2) : 1.0;
        return ScaleVector(std::vector<double>(v.size(), m));
    }

    static ScaleVector constant(std::size_t n, double m) { return ScaleVector(std::vector<double>(n, m)); }

    std::size_t size() const noexcept { return m_.size(); }
    double operator[](std::size_t i) const noexcept { return m_[i]; }
    std::span<double const> values() const noexcept { return m_; }

  private:
    std::vector<double> m_;
};

/// Column scales of a row-major matrix: max(|min|, |max|) per column, 1 for all-zero columns.
inline ScaleVector column_scales(std::span<double const> rows, std::size_t n_features) {
    if (n_features == 0 || rows.empty()) throw ArgumentError("column_scales needs a non-empty dataset");
    if (rows.size() % n_features) throw ArgumentError("row-major data size is not a multiple of the width");
    std::vector<double> m(n_features, 0.0);
    for (std::size_t k = 0; k < rows.size(); k += n_features)
        for (std::size_t i = 0; i < n_features; ++i) m[i] = std::max(m[i], std::abs(rows[k + i]));
    for (double& s : m)
        if (s == 0.0) s = 1.0;
    return ScaleVector(std::move(m));
}

/// Identifies the random draw a quantization came from. Two quantizations
/// with equal ids are the same draw and must not be treated as independent.
struct DrawId {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
    std::uint32_t copy = 0;
    bool operator==(DrawId const&) const noexcept = default;
};

class QuantizedVector {
  public:
    QuantizedVector() = default;
    QuantizedVector(std::vector<std::uint16_t> idx, std::vector<double> values, DrawId draw)
        : idx_(std::move(idx)), values_(std::move(values)), draw_(draw) {}

    std::size_t size() const noexcept { return idx_.size(); }
    std::span<std::uint16_t const> indices() const noexcept { return idx_; }
    /// Dequantized coordinates scale_i * levels[idx_i].
    std::span<double const> values() const noexcept { return values_; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }
    DrawId const& draw() const noexcept { return draw_; }

  private:
    std::vector<std::uint16_t> idx_;
    std::vector<double> values_;
    DrawId draw_;
};

namespace detail {

/// Adapts a single scheme or a per-coordinate scheme list to one lookup.
class GridView {
  public:
    GridView(QuantScheme const& one) : shared_(&one) {}
    GridView(std::span<QuantScheme const> per_feature) : per_(per_feature) {
        if (per_.size() == 1) shared_ = &per_[0];
    }
    GridView(std::vector<QuantScheme> const& per_feature) : GridView(std::span<QuantScheme const>(per_feature)) {}
    QuantScheme const& operator[](std::size_t i) const { return shared_ ? *shared_ : per_[i]; }
    void check_size(std::size_t n) const {
        if (!shared_ && per_.size() != n) throw ArgumentError("per-feature grid count does not match dimension");
    }

  private:
    QuantScheme const* shared_ = nullptr;
    std::span<QuantScheme const> per_;
};

inline void check_scales(std::size_t n, ScaleVector const& scale) {
    if (scale.size() != n) throw ArgumentError("scale vector size does not match dimension");
}

} // namespace detail

/// Unbiased stochastic rounding of v onto the grid(s). Consumes exactly one
/// uniform draw per coordinate from `rng`.
inline QuantizedVector quantize_stochastic(std::span<double const> v, detail::GridView grids,
                                           ScaleVector const& scale, Stream& rng) {
    grids.check_size(v.size());
    detail::check_scales(v.size(), scale);
    DrawId const id{rng.key(), rng.counter(), 0};
    std::vector<std::uint16_t> idx(v.size());
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        QuantScheme const& g = grids[i];
        double const x = g.normalize(v[i], scale[i]);
        std::size_t const j = g.bracket(x);
        double const lo = g.level(j), hi = g.level(j + 1);
        double const p = (x - lo) / (hi - lo);
        std::size_t const pick = rng.uniform() < p ? j + 1 : j;
        idx[i] = static_cast<std::uint16_t>(pick);
        out[i] = scale[i] * g.level(pick);
    }
    return QuantizedVector(std::move(idx), std::move(out), id);
}

/// Deterministic round-to-nearest onto the grid (ties go up). Biased baseline.
inline QuantizedVector quantize_nearest(std::span<double const> v, detail::GridView grids,
                                        ScaleVector const& scale) {
    grids.check_size(v.size());
    detail::check_scales(v.size(), scale);
    std::vector<std::uint16_t> idx(v.size());
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        QuantScheme const& g = grids[i];
        double const x = g.normalize(v[i], scale[i]);
        std::size_t const j = g.bracket(x);
        std::size_t const pick = (x - g.level(j) < g.level(j + 1) - x) ? j : j + 1;
        idx[i] = static_cast<std::uint16_t>(pick);
        out[i] = scale[i] * g.level(pick);
    }
    return QuantizedVector(std::move(idx), std::move(out), DrawId{~0ULL, ~0ULL, 0});
}

/// Rebuilds dequantized values from level indices.
inline QuantizedVector dequantize(std::vector<std::uint16_t> idx, detail::GridView grids,
                                  ScaleVector const& scale, DrawId id = {}) {
    grids.check_size(idx.size());
    detail::check_scales(idx.size(), scale);
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= grids[i].size()) throw RangeError("level index out of range");
        out[i] = scale[i] * grids[i].level(idx[i]);
    }
    return QuantizedVector(std::move(idx), std::move(out), id);
}

/// Closed-form E||Q(v) - v||^2 = sum_i scale_i^2 (u - x)(x - l).
inline double expected_sq_error(std::span<double const> v, detail::GridView grids, ScaleVector const& scale) {
    grids.check_size(v.size());
    detail::check_scales(v.size(), scale);
    double tv = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        QuantScheme const& g = grids[i];
        double const x = g.normalize(v[i], scale[i]);
        std::size_t const j = g.bracket(x);
        tv += scale[i] * scale[i] * (g.level(j + 1) - x) * (x - g.level(j));
    }
    return tv;
}

/// Ceiling on the variance of uniform quantization with spacing 1/s under
/// row scaling: min(n/s^2, sqrt(n)/s) * ||v||^2.
inline double variance_bound_uniform(std::span<double const> v, unsigned s) {
    if (s == 0) throw ArgumentError("s must be >= 1");
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    double const n = static_cast<double>(v.size());
    return std::min(n / (double(s) * s), std::sqrt(n) / s) * n2;
}

// ---------------------------------------------------------------------------
// Multi-copy encoding.
//
// n independent draws of the same value differ only in which of the two
// bracketing levels each picked, so they are stored as one base index plus
// the number of copies sitting at the base. Copies are exchangeable, so the
// count is all a consumer needs. The count lies in [1, n]: if every draw took
// the upper level, the base moves up one level. It is stored minus one, which
// fits in log2(n) bits.

class CopyRecord {
  public:
    CopyRecord() = default;
    CopyRecord(std::vector<std::uint16_t> base, std::vector<std::uint16_t> at_base, unsigned n_copies,
               DrawId id = {})
        : base_(std::move(base)), at_base_(std::move(at_base)), n_copies_(n_copies), id_(id) {
        if (!is_power_of_two(n_copies_)) throw ArgumentError("n_copies must be a power of two");
        if (base_.size() != at_base_.size()) throw ArgumentError("base/count size mismatch");
        for (auto c : at_base_)
            if (c < 1 || c > n_copies_) throw RangeError("lower-endpoint count out of range");
    }

    std::size_t size() const noexcept { return base_.size(); }
    unsigned n_copies() const noexcept { return n_copies_; }
    unsigned selector_bits() const noexcept { return ceil_log2(n_copies_); }
    std::span<std::uint16_t const> base() const noexcept { return base_; }
    /// Number of copies that chose the base (lower) level, in [1, n_copies].
    std::span<std::uint16_t const> lower_count() const noexcept { return at_base_; }
    DrawId const& id() const noexcept { return id_; }

    /// Writes base indices then selector fields, each LSB-first.
    void pack(BitWriter& w, unsigned index_bits) const {
        for (auto b : base_) w.put(b, index_bits);
        unsigned const sb = selector_bits();
        for (auto c : at_base_) w.put(c - 1u, sb);
    }

    static CopyRecord unpack(BitReader& r, std::size_t n, unsigned index_bits, unsigned n_copies,
                             DrawId id = {}) {
        std::vector<std::uint16_t> base(n), cnt(n);
        for (auto& b : base) b = static_cast<std::uint16_t>(r.get(index_bits));
        unsigned const sb = ceil_log2(n_copies);
        for (auto& c : cnt) c = static_cast<std::uint16_t>(r.get(sb) + 1);
        return CopyRecord(std::move(base), std::move(cnt), n_copies, id);
    }

    bool operator==(CopyRecord const& o) const noexcept {
        return base_ == o.base_ && at_base_ == o.at_base_ && n_copies_ == o.n_copies_;
    }

  private:
    std::vector<std::uint16_t> base_;
    std::vector<std::uint16_t> at_base_;
    unsigned n_copies_ = 1;
    DrawId id_;
};

/// Draws n_copies independent quantizations of v and stores them compactly.
inline CopyRecord encode_copies(std::span<double const> v, detail::GridView grids, ScaleVector const& scale,
                                unsigned n_copies, Stream& rng) {
    if (n_copies < 1 || !is_power_of_two(n_copies)) throw ArgumentError("n_copies must be a power of two >= 1");
    if (n_copies > (1u << 15)) throw ArgumentError("n_copies too large");
    grids.check_size(v.size());
    detail::check_scales(v.size(), scale);
    DrawId const id{rng.key(), rng.counter(), 0};
    std::vector<std::uint16_t> base(v.size()), cnt(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        QuantScheme const& g = grids[i];
        double const x = g.normalize(v[i], scale[i]);
        std::size_t const j = g.bracket(x);
        double const p = (x - g.level(j)) / (g.level(j + 1) - g.level(j));
        unsigned lower = 0;
        for (unsigned c = 0; c < n_copies; ++c)
            if (!(rng.uniform() < p)) ++lower;
        if (lower == 0) {
            base[i] = static_cast<std::uint16_t>(j + 1);
            cnt[i] = static_cast<std::uint16_t>(n_copies);
        } else {
            base[i] = static_cast<std::uint16_t>(j);
            cnt[i] = static_cast<std::uint16_t>(lower);
        }
    }
    return CopyRecord(std::move(base), std::move(cnt), n_copies, id);
}

/// Copy `copy_index` in canonical order: the first lower_count copies sit at the base.
/// Suitable whenever the consumer is symmetric in the copies of each coordinate.
inline QuantizedVector decode_copies(CopyRecord const& rec, unsigned copy_index, detail::GridView grids,
                                     ScaleVector const& scale) {
    if (copy_index >= rec.n_copies()) throw RangeError("copy index out of range");
    std::vector<std::uint16_t> idx(rec.size());
    for (std::size_t i = 0; i < rec.size(); ++i)
        idx[i] = static_cast<std::uint16_t>(rec.base()[i] + (copy_index < rec.lower_count()[i] ? 0 : 1));
    DrawId id = rec.id();
    id.copy = copy_index;
    return dequantize(std::move(idx), grids, scale, id);
}

/// All copies, with the lower/upper assignment shuffled independently per
/// coordinate. The result has the same joint law as n_copies i.i.d. draws.
inline std::vector<QuantizedVector> decode_all(CopyRecord const& rec, detail::GridView grids,
                                               ScaleVector const& scale, Stream& rng) {
    unsigned const n = rec.n_copies();
    std::vector<std::vector<std::uint16_t>> idx(n, std::vector<std::uint16_t>(rec.size()));
    std::vector<std::uint8_t> upper(n);
    for (std::size_t i = 0; i < rec.size(); ++i) {
        unsigned const low = rec.lower_count()[i];
        for (unsigned c = 0; c < n; ++c) upper[c] = c >= low;
        shuffle(upper.begin(), upper.end(), rng);
        for (unsigned c = 0; c < n; ++c) idx[c][i] = static_cast<std::uint16_t>(rec.base()[i] + upper[c]);
    }
    std::vector<QuantizedVector> out;
    out.reserve(n);
    for (unsigned c = 0; c < n; ++c) {
        DrawId id = rec.id();
        id.copy = c;
        out.push_back(dequantize(std::move(idx[c]), grids, scale, id));
    }
    return out;
}

} // namespace zipml
