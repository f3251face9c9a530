#pragma once

// Dense datasets, LIBSVM/CSV text I/O and synthetic generators.
//
// Samples are stored dense and row-major. Sparse LIBSVM input is expanded on
// load, so memory grows with n_samples * n_features regardless of sparsity.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "zipml/error.hpp"
#include "zipml/quant.hpp"
#include "zipml/rng.hpp"

namespace zipml {

class Samples {
  public:
    Samples() = default;
    Samples(std::size_t n_features, std::vector<double> values, std::vector<double> labels)
        : n_features_(n_features), values_(std::move(values)), labels_(std::move(labels)) {
        if (n_features_ == 0 && !labels_.empty()) throw ArgumentError("samples need at least one feature");
        if (values_.size() != n_features_ * labels_.size())
            throw ArgumentError("value count does not match n_samples * n_features");
        for (double v : values_)
            if (!std::isfinite(v)) throw DomainError("non-finite feature value");
        for (double v : labels_)
            if (!std::isfinite(v)) throw DomainError("non-finite label");
    }

    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }
    std::size_t n_features() const noexcept { return n_features_; }
    std::span<double const> row(std::size_t k) const noexcept {
        return {values_.data() + k * n_features_, n_features_};
    }
    double label(std::size_t k) const noexcept { return labels_[k]; }
    std::span<double const> values() const noexcept { return values_; }
    std::span<double const> labels() const noexcept { return labels_; }

    /// Column j as a fresh vector.
    std::vector<double> column(std::size_t j) const {
        std::vector<double> c(size());
        for (std::size_t k = 0; k < size(); ++k) c[k] = values_[k * n_features_ + j];
        return c;
    }

    bool operator==(Samples const&) const = default;

  private:
    std::size_t n_features_ = 0;
    std::vector<double> values_;
    std::vector<double> labels_;
};

struct Dataset {
    Samples train;
    Samples test;
    bool classification = false;
    std::vector<double> truth; ///< generating model, when known

    std::size_t n_features() const noexcept { return train.n_features(); }

    /// Classification labels must be exactly -1 or +1.
    void validate() const {
        if (train.empty()) throw ArgumentError("dataset is empty");
        if (!test.empty() && test.n_features() != train.n_features())
            throw ArgumentError("train/test feature counts differ");
        if (classification)
            for (auto const* s : {&train, &test})
                for (double b : s->labels())
                    if (b != 1.0 && b != -1.0) throw DomainError("classification labels must be -1 or +1");
    }
};

inline ScaleVector column_scales(Samples const& s) { return column_scales(s.values(), s.n_features()); }

/// True when every value is >= 0, so an unsigned [0, 1] grid can be used.
inline bool non_negative(Samples const& s) {
    return std::all_of(s.values().begin(), s.values().end(), [](double v) { return v >= 0.0; });
}

// ---------------------------------------------------------------------------
// Text formats

namespace detail {

inline double parse_double(std::string_view tok, std::size_t line, std::size_t col) {
    double v = 0.0;
    auto const* first = tok.data();
    if (!tok.empty() && tok.front() == '+') ++first;
    auto [p, ec] = std::from_chars(first, tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size() || !std::isfinite(v))
        throw ParseError("invalid number '" + std::string(tok) + "'", line, col);
    return v;
}

inline std::ifstream open_in(std::string const& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return in;
}

} // namespace detail

/// Parses LIBSVM lines "label idx:val idx:val ..." with 1-based increasing
/// indices. n_features = 0 infers the width from the largest index seen.
inline Samples parse_libsvm(std::istream& in, std::size_t n_features = 0) {
    struct Entry {
        std::size_t idx;
        double val;
    };
    std::vector<std::vector<Entry>> rows;
    std::vector<double> labels;
    std::size_t width = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        std::string_view sv(line);
        std::size_t pos = 0;
        auto next = [&](std::size_t& col) -> std::string_view {
            while (pos < sv.size() && (sv[pos] == ' ' || sv[pos] == '\t')) ++pos;
            col = pos + 1;
            std::size_t const start = pos;
            while (pos < sv.size() && sv[pos] != ' ' && sv[pos] != '\t') ++pos;
            return sv.substr(start, pos - start);
        };
        std::size_t col = 0;
        auto tok = next(col);
        if (tok.empty()) continue;
        labels.push_back(detail::parse_double(tok, lineno, col));
        std::vector<Entry> row;
        std::size_t last = 0;
        for (tok = next(col); !tok.empty(); tok = next(col)) {
            auto const colon = tok.find(':');
            if (colon == std::string_view::npos) throw ParseError("expected index:value", lineno, col);
            std::size_t idx = 0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + colon, idx);
            if (ec != std::errc() || p != tok.data() + colon || idx == 0)
                throw ParseError("invalid feature index", lineno, col);
            if (idx <= last) throw ParseError("feature indices must be increasing", lineno, col);
            last = idx;
            row.push_back({idx - 1, detail::parse_double(tok.substr(colon + 1), lineno, col + colon + 1)});
            width = std::max(width, idx);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError("no samples in input", lineno);
    if (n_features == 0) n_features = std::max<std::size_t>(width, 1);
    if (width > n_features) throw ParseError("feature index exceeds declared width", lineno);
    std::vector<double> values(rows.size() * n_features, 0.0);
    for (std::size_t k = 0; k < rows.size(); ++k)
        for (auto const& e : rows[k]) values[k * n_features + e.idx] = e.val;
    return Samples(n_features, std::move(values), std::move(labels));
}

inline Dataset load_libsvm(std::string const& path, std::size_t n_features = 0, bool classification = false) {
    auto in = detail::open_in(path);
    Dataset d;
    d.train = parse_libsvm(in, n_features);
    d.classification = classification;
    d.validate();
    return d;
}

/// Comma-separated rows, all of equal width; column `label_col` is the label.
/// A first line that does not parse as numbers is treated as a header.
inline Samples parse_csv(std::istream& in, std::size_t label_col = 0) {
    std::vector<double> values, labels;
    std::size_t width = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<std::pair<std::string, std::size_t>> cells;
        std::size_t start = 0;
        for (;;) {
            auto const comma = line.find(',', start);
            std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            auto const a = cell.find_first_not_of(" \t"), b = cell.find_last_not_of(" \t");
            cells.emplace_back(a == std::string::npos ? std::string() : cell.substr(a, b - a + 1), start + 1);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (width == 0 && values.empty() && labels.empty()) {
            double probe;
            auto const& c0 = cells[std::min(label_col, cells.size() - 1)].first;
            auto [p, ec] = std::from_chars(c0.data(), c0.data() + c0.size(), probe);
            if (ec != std::errc() || p != c0.data() + c0.size()) continue; // header
            if (label_col >= cells.size()) throw ParseError("label column out of range", lineno);
            width = cells.size();
        }
        if (cells.size() != width)
            throw ParseError("expected " + std::to_string(width) + " columns, found " + std::to_string(cells.size()),
                             lineno);
        for (std::size_t j = 0; j < cells.size(); ++j) {
            double const v = detail::parse_double(cells[j].first, lineno, cells[j].second);
            (j == label_col ? labels : values).push_back(v);
        }
    }
    if (labels.empty()) throw ParseError("no samples in input", lineno);
    if (width < 2) throw ParseError("need at least one feature column besides the label", lineno);
    return Samples(width - 1, std::move(values), std::move(labels));
}

inline Dataset load_csv(std::string const& path, std::size_t label_col = 0, bool classification = false) {
    auto in = detail::open_in(path);
    Dataset d;
    d.train = parse_csv(in, label_col);
    d.classification = classification;
    d.validate();
    return d;
}

inline void write_libsvm(std::ostream& os, Samples const& s) {
    os << std::setprecision(17);
    for (std::size_t k = 0; k < s.size(); ++k) {
        os << s.label(k);
        auto const r = s.row(k);
        for (std::size_t j = 0; j < r.size(); ++j)
            if (r[j] != 0.0) os << ' ' << j + 1 << ':' << r[j];
        os << '\n';
    }
}

inline void write_csv(std::ostream& os, Samples const& s) {
    os << std::setprecision(17);
    for (std::size_t k = 0; k < s.size(); ++k) {
        os << s.label(k);
        for (double v : s.row(k)) os << ',' << v;
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class Task { Regression, Classification };

enum class FeatureLaw {
    UnitSphere,    ///< uniform in [-1,1]^n, each row rescaled to unit norm
    SkewedBimodal, ///< non-negative: 85% near 0.1 (sd 0.005), 15% near 0.8 (sd 0.01)
};

struct SynthSpec {
    Task task = Task::Regression;
    std::size_t n_features = 100;
    std::size_t n_train = 10000;
    std::size_t n_test = 10000;
    std::uint64_t seed = 0;
    double noise = 0.1;
    FeatureLaw law = FeatureLaw::UnitSphere;
    /// ||x*||_2 of the generating model; 0 keeps the raw N(0, I) draw.
    double model_norm = 0.0;
};

namespace detail {

inline void synth_rows(SynthSpec const& spec, std::size_t n, Stream rng, std::vector<double> const& xstar,
                       std::vector<double>& values, std::vector<double>& labels) {
    std::size_t const d = spec.n_features;
    values.assign(n * d, 0.0);
    labels.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double* row = values.data() + k * d;
        if (spec.law == FeatureLaw::UnitSphere) {
            double n2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                row[j] = 2.0 * rng.uniform() - 1.0;
                n2 += row[j] * row[j];
            }
            double const inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
            for (std::size_t j = 0; j < d; ++j) row[j] *= inv;
        } else {
            for (std::size_t j = 0; j < d; ++j) {
                bool const minor = rng.uniform() < 0.15;
                double const v = minor ? 0.8 + 0.01 * rng.normal() : 0.1 + 0.005 * rng.normal();
                row[j] = std::clamp(v, 0.0, 1.0);
            }
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += row[j] * xstar[j];
        double const y = dot + spec.noise * rng.normal();
        labels[k] = spec.task == Task::Classification ? (y >= 0.0 ? 1.0 : -1.0) : y;
    }
}

} // namespace detail

/// Deterministic per seed. The model x* is drawn once; train and test rows use
/// separate child streams.
inline Dataset synth(SynthSpec const& spec) {
    if (spec.n_features == 0 || spec.n_train == 0) throw ArgumentError("synthetic sizes must be positive");
    Stream const root(spec.seed);
    Stream model = root.split("model");
    std::vector<double> xstar(spec.n_features);
    double n2 = 0.0;
    for (double& x : xstar) {
        x = model.normal();
        n2 += x * x;
    }
    if (spec.model_norm > 0.0)
        for (double& x : xstar) x *= spec.model_norm / std::sqrt(n2);

    Dataset d;
    d.classification = spec.task == Task::Classification;
    std::vector<double> v, l;
    detail::synth_rows(spec, spec.n_train, root.split("train"), xstar, v, l);
    d.train = Samples(spec.n_features, std::move(v), std::move(l));
    if (spec.n_test) {
        detail::synth_rows(spec, spec.n_test, root.split("test"), xstar, v, l);
        d.test = Samples(spec.n_features, std::move(v), std::move(l));
    }
    d.truth = std::move(xstar);
    return d;
}

} // namespace zipml
