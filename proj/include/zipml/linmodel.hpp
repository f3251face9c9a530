#pragma once

// Prox-SGD for least squares and least-squares SVM with low-precision
// samples, model and gradients.
//
// Per-sample loss is (1/2)(a^T x - b)^2, so the full stochastic gradient is
// a (a^T x - b). Quantizing `a` once and reusing it in both factors biases the
// estimate by D_a x, D_a = diag(E[Q(a_i)^2] - a_i^2); two independent
// quantizations (double sampling) remove that bias.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zipml/dataset.hpp"
#include "zipml/error.hpp"
#include "zipml/quant.hpp"
#include "zipml/rng.hpp"
#include "zipml/zipq.hpp"

namespace zipml {

using Vec = std::vector<double>;

namespace vec {

inline double dot(std::span<double const> a, std::span<double const> b) {
    if (a.size() != b.size()) throw ArgumentError("dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<double const> a) { return std::sqrt(dot(a, a)); }

inline double norm1(std::span<double const> a) {
    double s = 0.0;
    for (double x : a) s += std::abs(x);
    return s;
}

inline Vec scaled(std::span<double const> a, double c) {
    Vec out(a.begin(), a.end());
    for (double& x : out) x *= c;
    return out;
}

/// y += c * x
inline void axpy(double c, std::span<double const> x, std::span<double> y) {
    if (x.size() != y.size()) throw ArgumentError("dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

} // namespace vec

// ---------------------------------------------------------------------------
// Gradient estimators

/// a (a^T x - b).
inline Vec full_gradient_sample(std::span<double const> a, double b, std::span<double const> x) {
    return vec::scaled(a, vec::dot(a, x) - b);
}

/// Q1(a)(Q2(a)^T x - b), or its symmetrization over (Q1, Q2) when `averaged`.
/// Unbiased for full_gradient_sample when the draws are independent.
inline Vec double_sample_gradient(QuantizedVector const& q1, QuantizedVector const& q2, double b,
                                  std::span<double const> x, bool averaged = true) {
    if (q1.draw() == q2.draw()) throw MisuseError("double sampling needs two independent draws");
    if (q1.size() != q2.size()) throw ArgumentError("dimension mismatch");
    double const r2 = vec::dot(q2.values(), x) - b;
    Vec g = vec::scaled(q1.values(), r2);
    if (averaged) {
        double const r1 = vec::dot(q1.values(), x) - b;
        vec::axpy(r1, q2.values(), g);
        for (double& v : g) v *= 0.5;
    }
    return g;
}

/// Q(a)(Q(a)^T x - b) from a single draw. Biased by D_a x; kept as a baseline.
inline Vec naive_quantized_gradient(QuantizedVector const& q, double b, std::span<double const> x) {
    return full_gradient_sample(q.values(), b, x);
}

/// a (a^T Q(x) - b). Unbiased: the gradient is linear in x.
inline Vec model_quantized_gradient(std::span<double const> a, double b, QuantizedVector const& qx) {
    return full_gradient_sample(a, b, qx.values());
}

/// Q4(Q1(a)(Q2(a)^T Q3(x) - b)) with Q4 a row-scaled uniform grid of `gbits` bits.
inline QuantizedVector end_to_end_gradient(QuantizedVector const& q1, QuantizedVector const& q2, double b,
                                           QuantizedVector const& qx, unsigned gbits, Stream& rng,
                                           bool averaged = true) {
    if (q1.draw() == qx.draw() || q2.draw() == qx.draw())
        throw MisuseError("model and sample quantizations must be independent draws");
    Vec const g = double_sample_gradient(q1, q2, b, qx.values(), averaged);
    auto const grid = QuantScheme::uniform_bits(gbits, true, Scaling::Row);
    return quantize_stochastic(g, grid, ScaleVector::row(g), rng);
}

// ---------------------------------------------------------------------------
// Regularizers

struct Regularizer {
    enum class Kind { None, L1, L2, Ball };
    Kind kind = Kind::None;
    double weight = 0.0; ///< lambda for L1/L2, radius for Ball

    static Regularizer none() { return {}; }
    static Regularizer l1(double lambda) { return {Kind::L1, lambda}; }
    static Regularizer l2(double lambda) { return {Kind::L2, lambda}; }
    static Regularizer ball(double radius) { return {Kind::Ball, radius}; }

    double penalty(std::span<double const> x) const {
        switch (kind) {
        case Kind::L1: return weight * vec::norm1(x);
        case Kind::L2: return 0.5 * weight * vec::dot(x, x);
        default: return 0.0;
        }
    }
};

/// argmin_z R(z) + ||z - y||^2 / (2 gamma).
inline Vec prox(Regularizer const& reg, double gamma, std::span<double const> y) {
    if (!(gamma > 0.0)) throw ArgumentError("prox step must be positive");
    Vec z(y.begin(), y.end());
    switch (reg.kind) {
    case Regularizer::Kind::None: break;
    case Regularizer::Kind::L1: {
        double const t = gamma * reg.weight;
        for (double& v : z) v = std::copysign(std::max(0.0, std::abs(v) - t), v);
        break;
    }
    case Regularizer::Kind::L2:
        for (double& v : z) v /= 1.0 + gamma * reg.weight;
        break;
    case Regularizer::Kind::Ball: {
        double const n = vec::norm2(z);
        if (n > reg.weight)
            for (double& v : z) v *= reg.weight / n;
        break;
    }
    }
    return z;
}

// ---------------------------------------------------------------------------
// Training

enum class LinearLoss { LeastSquares, LsSvm };

/// How samples reach the gradient computation.
enum class SampleMode {
    Full,           ///< full precision
    DoubleSampling, ///< two independent stochastic quantizations
    Naive,          ///< one stochastic quantization used twice (biased)
    Nearest,        ///< deterministic round-to-nearest (biased)
    Polynomial,     ///< d+1 independent quantizations feeding a polynomial estimator (nonlinear losses)
};

struct Quantization {
    unsigned sample_bits = 0;                ///< 0 = derive from sample_grids or full precision
    std::vector<QuantScheme> sample_grids;   ///< one shared or one per feature; overrides sample_bits
    unsigned model_bits = 0;                 ///< 0 = full precision model
    unsigned gradient_bits = 0;              ///< 0 = full precision gradient
};

struct TrainConfig {
    LinearLoss loss = LinearLoss::LeastSquares;
    double lssvm_c = 0.0;
    Regularizer reg;
    double alpha0 = 0.1; ///< step at epoch e is alpha0 / e
    std::size_t epochs = 10;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    SampleMode samples = SampleMode::Full;
    Quantization quant;
    bool averaged_pair = true;

    void validate() const {
        if (!(alpha0 > 0.0)) throw ArgumentError("alpha0 must be positive");
        if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
        if (epochs < 1) throw ArgumentError("epochs must be >= 1");
        for (unsigned b : {quant.sample_bits, quant.model_bits, quant.gradient_bits})
            if (b > 16) throw ArgumentError("bits must be in [1, 16]");
        if (samples != SampleMode::Full && quant.sample_bits == 0 && quant.sample_grids.empty())
            throw ArgumentError("quantized samples need sample_bits or sample_grids");
    }
};

struct EpochStats {
    double train_loss = 0.0;
    double test_loss = std::numeric_limits<double>::quiet_NaN();
    double grad_var = 0.0;     ///< mean ||g - g_bar||^2 over the epoch's steps
    double refetch_frac = 0.0; ///< nonlinear trainers only
};

struct TrainTrace {
    std::vector<EpochStats> epochs;
    Vec model;
    bool diverged = false;
    std::size_t refetches = 0;
    std::size_t decisions = 0; ///< samples that went through a refetch test
    std::size_t flips = 0;     ///< quantized-path hinge indicators that disagreed with full precision

    double final_train_loss() const {
        return epochs.empty() ? std::numeric_limits<double>::quiet_NaN() : epochs.back().train_loss;
    }
    bool operator==(TrainTrace const& o) const {
        if (epochs.size() != o.epochs.size() || model != o.model || diverged != o.diverged) return false;
        for (std::size_t i = 0; i < epochs.size(); ++i) {
            auto const& a = epochs[i];
            auto const& b = o.epochs[i];
            auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
            if (!same(a.train_loss, b.train_loss) || !same(a.test_loss, b.test_loss) ||
                !same(a.grad_var, b.grad_var) || !same(a.refetch_frac, b.refetch_frac))
                return false;
        }
        return refetches == o.refetches && flips == o.flips;
    }
};

/// Mean (1/2)(a^T x - b)^2 plus the LS-SVM term when configured; regularizer included.
inline double linear_loss(Samples const& s, std::span<double const> x, TrainConfig const& cfg) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        double const r = vec::dot(s.row(k), x) - s.label(k);
        acc += 0.5 * r * r;
    }
    double loss = acc / double(s.size()) + cfg.reg.penalty(x);
    if (cfg.loss == LinearLoss::LsSvm) loss += 0.5 * cfg.lssvm_c * vec::dot(x, x);
    return loss;
}

/// Grids used for sample quantization: explicit ones, or a uniform grid that
/// is signed unless every training value is non-negative.
inline std::vector<QuantScheme> sample_grids_for(Samples const& train, Quantization const& q) {
    if (!q.sample_grids.empty()) {
        if (q.sample_grids.size() != 1 && q.sample_grids.size() != train.n_features())
            throw ArgumentError("need one shared grid or one grid per feature");
        return q.sample_grids;
    }
    if (q.sample_bits == 0) return {};
    return {QuantScheme::uniform_bits(q.sample_bits, !non_negative(train))};
}

namespace detail {

inline bool finite_loss(double v) { return std::isfinite(v) && std::abs(v) < 1e150; }

/// Accumulates mean ||g - g_bar||^2 over the steps of one epoch.
class GradVariance {
  public:
    explicit GradVariance(std::size_t n) : sum_(n, 0.0) {}
    void add(std::span<double const> g) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            sum_[i] += g[i];
            sq_ += g[i] * g[i];
        }
        ++count_;
    }
    double value() const {
        if (count_ == 0) return 0.0;
        double const n = double(count_);
        double m2 = 0.0;
        for (double s : sum_) m2 += (s / n) * (s / n);
        return std::max(0.0, sq_ / n - m2);
    }

  private:
    Vec sum_;
    double sq_ = 0.0;
    std::size_t count_ = 0;
};

/// Produces the quantized copies of a training sample, either fresh from the
/// raw row or from a stored ZIPQ image.
class SampleSource {
  public:
    SampleSource(Samples const& s, std::vector<QuantScheme> grids, QuantizedDataset const* stored)
        : s_(s), grids_(std::move(grids)), stored_(stored) {
        if (stored_) {
            if (stored_->size() != s.size() || stored_->n_features() != s.n_features())
                throw ArgumentError("stored dataset does not match the training samples");
            scales_ = stored_->scales();
        } else if (!grids_.empty()) {
            scales_ = column_scales(s);
        }
    }

    bool quantized() const noexcept { return !grids_.empty(); }
    std::span<QuantScheme const> grids() const noexcept { return grids_; }
    ScaleVector const& scales() const noexcept { return scales_; }

    std::vector<QuantizedVector> draw(std::size_t k, unsigned n, Stream& rng) const {
        std::vector<QuantizedVector> out;
        if (stored_) {
            if (n > stored_->n_copies())
                throw ArgumentError("stored dataset has " + std::to_string(stored_->n_copies()) +
                                    " copies, estimator needs " + std::to_string(n));
            out = stored_->copies(k, grids_, rng);
            out.resize(n);
            return out;
        }
        for (unsigned c = 0; c < n; ++c) {
            Stream r = rng.split(c);
            out.push_back(quantize_stochastic(s_.row(k), grids_, scales_, r));
        }
        return out;
    }

    QuantizedVector nearest(std::size_t k) const { return quantize_nearest(s_.row(k), grids_, scales_); }

  private:
    Samples const& s_;
    std::vector<QuantScheme> grids_;
    QuantizedDataset const* stored_;
    ScaleVector scales_;
};

} // namespace detail

/// Mini-batch prox-SGD with step alpha0 / epoch and per-epoch reshuffling.
/// Deterministic for a given config and seed. When `stored` is given, sample
/// copies are read from it instead of being drawn afresh.
inline TrainTrace train(Dataset const& data, TrainConfig const& cfg, QuantizedDataset const* stored = nullptr) {
    cfg.validate();
    data.validate();
    if (cfg.samples == SampleMode::Polynomial) throw ArgumentError("polynomial estimators apply to nonlinear losses");
    Samples const& tr = data.train;
    std::size_t const n = tr.n_features();
    detail::SampleSource const src(tr, cfg.samples == SampleMode::Full ? std::vector<QuantScheme>{}
                                                                       : sample_grids_for(tr, cfg.quant),
                                   stored);
    std::vector<QuantizedVector> nearest_rows;
    if (cfg.samples == SampleMode::Nearest)
        for (std::size_t k = 0; k < tr.size(); ++k) nearest_rows.push_back(src.nearest(k));

    QuantScheme const model_grid =
        QuantScheme::uniform_bits(cfg.quant.model_bits ? cfg.quant.model_bits : 1, true, Scaling::Row);
    Stream const root(cfg.seed);
    TrainTrace trace;
    trace.model.assign(n, 0.0);
    Vec& x = trace.model;
    std::vector<std::size_t> order(tr.size());
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        Stream shuf = root.split("shuffle").split(epoch);
        shuffle(order.begin(), order.end(), shuf);
        double const gamma = cfg.alpha0 / double(epoch);
        detail::GradVariance gv(n);

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
            Stream draws = root.split("draws").split(step);
            std::size_t const stop = std::min(order.size(), start + cfg.batch_size);
            Vec xm = x;
            std::optional<QuantizedVector> qx;
            if (cfg.quant.model_bits) {
                Stream r = draws.split("model");
                qx = quantize_stochastic(x, model_grid, ScaleVector::row(x), r);
                xm.assign(qx->values().begin(), qx->values().end());
            }
            Vec g(n, 0.0);
            for (std::size_t p = start; p < stop; ++p) {
                std::size_t const k = order[p];
                double const b = tr.label(k);
                Stream r = draws.split(p);
                Vec gk;
                switch (cfg.samples) {
                case SampleMode::Full: gk = full_gradient_sample(tr.row(k), b, xm); break;
                case SampleMode::DoubleSampling: {
                    auto q = src.draw(k, 2, r);
                    gk = double_sample_gradient(q[0], q[1], b, xm, cfg.averaged_pair);
                    break;
                }
                case SampleMode::Naive: {
                    auto q = src.draw(k, 1, r);
                    gk = naive_quantized_gradient(q[0], b, xm);
                    break;
                }
                case SampleMode::Nearest: gk = naive_quantized_gradient(nearest_rows[k], b, xm); break;
                case SampleMode::Polynomial: break;
                }
                vec::axpy(1.0, gk, g);
            }
            for (double& v : g) v /= double(stop - start);
            if (cfg.loss == LinearLoss::LsSvm && cfg.lssvm_c != 0.0) {
                if (cfg.quant.model_bits) {
                    Stream r = draws.split("model-reg");
                    auto const qr = quantize_stochastic(x, model_grid, ScaleVector::row(x), r);
                    vec::axpy(cfg.lssvm_c, qr.values(), g);
                } else {
                    vec::axpy(cfg.lssvm_c, x, g);
                }
            }
            if (cfg.quant.gradient_bits) {
                Stream r = draws.split("gradient");
                auto const grid = QuantScheme::uniform_bits(cfg.quant.gradient_bits, true, Scaling::Row);
                auto const qg = quantize_stochastic(g, grid, ScaleVector::row(g), r);
                g.assign(qg.values().begin(), qg.values().end());
            }
            gv.add(g);
            vec::axpy(-gamma, g, x);
            x = prox(cfg.reg, gamma, x);
            if (!std::isfinite(vec::dot(x, x))) break;
        }

        EpochStats st;
        st.train_loss = linear_loss(tr, x, cfg);
        st.test_loss = linear_loss(data.test, x, cfg);
        st.grad_var = gv.value();
        trace.epochs.push_back(st);
        if (!detail::finite_loss(st.train_loss)) {
            trace.diverged = true;
            break;
        }
    }
    return trace;
}

} // namespace zipml
