#pragma once

// Low-precision gradients for non-linear classification losses.
//
// For a loss l(b a^T x) the gradient is b l'(b a^T x) a. Replacing l' by a
// polynomial P of degree d, the value P(alpha + beta a^T x) can be estimated
// without bias from d independent quantizations of `a`:
//
//     sum_i m_i prod_{j < i} (alpha + beta Q_j(a)^T x)
//
// and multiplying by a (d+1)-th independent quantization gives an unbiased
// estimate of P(...) a. Logistic loss uses alpha = 0, beta = b. Hinge loss
// approximates the step H(1 - b a^T x), i.e. alpha = 1, beta = -b, and can
// refetch full-precision samples whose hinge indicator is uncertain.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "zipml/dataset.hpp"
#include "zipml/error.hpp"
#include "zipml/linmodel.hpp"
#include "zipml/quant.hpp"
#include "zipml/rng.hpp"
#include "zipml/zipq.hpp"

namespace zipml {

enum class ApproxTarget {
    Constant,     ///< l'(z) = 1
    SigmoidDeriv, ///< l(z) = log(1 + e^-z), l'(z) = -1 / (1 + e^z)
    StepFunction, ///< H(z): 1 for z > 0, 0 for z < 0
};

inline double eval_target(ApproxTarget t, double z) {
    switch (t) {
    case ApproxTarget::Constant: return 1.0;
    case ApproxTarget::SigmoidDeriv: return z > 0 ? -std::exp(-z) / (1.0 + std::exp(-z)) : -1.0 / (1.0 + std::exp(z));
    case ApproxTarget::StepFunction: return z > 0.0 ? 1.0 : 0.0;
    }
    return 0.0;
}

inline constexpr std::size_t kMaxDegree = 31;

struct PolyApprox {
    ApproxTarget target = ApproxTarget::Constant;
    std::vector<double> coeffs{1.0}; ///< monomial basis, coeffs[i] multiplies z^i
    double radius = 1.0;
    double exclusion = 0.0;          ///< accuracy is only claimed for |z| >= exclusion
    double sup_error = 0.0;

    std::size_t degree() const noexcept { return coeffs.empty() ? 0 : coeffs.size() - 1; }

    double operator()(double z) const noexcept {
        double acc = 0.0;
        for (std::size_t i = coeffs.size(); i-- > 0;) acc = acc * z + coeffs[i];
        return acc;
    }
};

/// Max |P(z) - target(z)| over `points` evenly spaced in [-R, R] minus (-delta, delta).
inline double measure_sup_error(PolyApprox const& p, std::size_t points = 10000) {
    double worst = 0.0;
    for (std::size_t i = 0; i < points; ++i) {
        double const z = -p.radius + 2.0 * p.radius * double(i) / double(points - 1);
        if (std::abs(z) < p.exclusion) continue;
        worst = std::max(worst, std::abs(p(z) - eval_target(p.target, z)));
    }
    return worst;
}

inline double max_abs_on(PolyApprox const& p, std::size_t points = 10000) {
    double m = 0.0;
    for (std::size_t i = 0; i < points; ++i)
        m = std::max(m, std::abs(p(-p.radius + 2.0 * p.radius * double(i) / double(points - 1))));
    return m;
}

/// Interpolates the target at the d+1 Chebyshev nodes of [-R, R] and converts
/// to monomial coefficients. The step target is replaced by a ramp that is
/// linear on [-delta, delta]; its interpolant is shrunk if needed so that
/// |P| <= 1 on [-R, R]. Throws InfeasibleError when the measured sup error
/// exceeds `max_error`.
inline PolyApprox chebyshev_fit(ApproxTarget target, double R, double delta, std::size_t d,
                                double max_error = std::numeric_limits<double>::infinity()) {
    if (d < 1) throw ArgumentError("degree must be >= 1");
    if (d > kMaxDegree) throw ArgumentError("degree is capped at " + std::to_string(kMaxDegree));
    if (!(R > 0.0)) throw ArgumentError("radius must be positive");
    if (target == ApproxTarget::StepFunction && !(delta > 0.0 && delta < R))
        throw ArgumentError("step target needs 0 < delta < R");
    if (delta < 0.0) throw ArgumentError("delta must be non-negative");

    auto f = [&](double z) {
        if (target != ApproxTarget::StepFunction) return eval_target(target, z);
        return std::clamp((z + delta) / (2.0 * delta), 0.0, 1.0);
    };
    std::size_t const n = d + 1;
    std::vector<double> fv(n), cheb(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double const t = std::cos(std::numbers::pi * (double(j) + 0.5) / double(n));
        fv[j] = f(R * t);
    }
    for (std::size_t k = 0; k < n; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += fv[j] * std::cos(std::numbers::pi * double(k) * (double(j) + 0.5) / double(n));
        cheb[k] = 2.0 * s / double(n);
    }
    cheb[0] *= 0.5;

    // T_k in the scaled variable t = z / R, expanded into monomials of t.
    std::vector<double> mono(n, 0.0), tkm1(n, 0.0), tk(n, 0.0);
    tkm1[0] = 1.0; // T_0
    if (n > 1) tk[1] = 1.0; // T_1
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> const& tcur = k == 0 ? tkm1 : tk;
        for (std::size_t i = 0; i < n; ++i) mono[i] += cheb[k] * tcur[i];
        if (k >= 1 && k + 1 < n) {
            std::vector<double> next(n, 0.0);
            for (std::size_t i = 0; i + 1 < n; ++i) next[i + 1] += 2.0 * tk[i];
            for (std::size_t i = 0; i < n; ++i) next[i] -= tkm1[i];
            tkm1 = std::move(tk);
            tk = std::move(next);
        }
    }
    double rp = 1.0;
    for (std::size_t i = 0; i < n; ++i, rp *= R) mono[i] /= rp;

    PolyApprox p;
    p.target = target;
    p.coeffs = std::move(mono);
    // exact zeros from the constant target should stay exact
    for (double& c : p.coeffs)
        if (std::abs(c) < 1e-15) c = 0.0;
    while (p.coeffs.size() > 1 && p.coeffs.back() == 0.0) p.coeffs.pop_back();
    p.radius = R;
    p.exclusion = target == ApproxTarget::StepFunction ? delta : 0.0;
    if (target == ApproxTarget::StepFunction) {
        double const m = max_abs_on(p);
        if (m > 1.0)
            for (double& c : p.coeffs) c /= m;
    }
    p.sup_error = measure_sup_error(p);
    if (p.sup_error > max_error) {
        std::ostringstream msg;
        msg << "degree " << d << " reaches sup error " << p.sup_error << " > " << max_error << "; try a higher degree";
        throw InfeasibleError(msg.str());
    }
    return p;
}

/// Text form: a header line "degree, R, delta, eps", then one coefficient per line.
inline void write_poly(std::ostream& os, PolyApprox const& p) {
    os << std::setprecision(17) << p.degree() << ", " << p.radius << ", " << p.exclusion << ", " << p.sup_error
       << '\n';
    for (double c : p.coeffs) os << c << '\n';
}

inline PolyApprox read_poly(std::istream& is, ApproxTarget target) {
    std::string line;
    std::size_t lineno = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(is, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
        }
        return false;
    };
    if (!next_line()) throw ParseError("missing header", lineno);
    for (char& c : line)
        if (c == ',') c = ' ';
    std::istringstream hs(line);
    std::size_t degree;
    PolyApprox p;
    p.target = target;
    if (!(hs >> degree >> p.radius >> p.exclusion >> p.sup_error)) throw ParseError("bad header", lineno);
    if (degree > kMaxDegree) throw ParseError("degree above cap", lineno);
    p.coeffs.clear();
    while (next_line()) {
        std::istringstream ls(line);
        double c;
        if (!(ls >> c)) throw ParseError("expected a coefficient", lineno, 1);
        p.coeffs.push_back(c);
    }
    if (p.coeffs.size() != degree + 1) throw ParseError("coefficient count does not match degree", lineno);
    return p;
}

// ---------------------------------------------------------------------------
// Estimators

/// outer * [sum_i m_i prod_{j<i} (alpha + beta q[j]^T x)] * q[d]. Needs d+1
/// pairwise independent draws; extra draws are ignored.
inline Vec poly_gradient_estimate(PolyApprox const& p, std::span<QuantizedVector const> q, double alpha, double beta,
                                  std::span<double const> x, double outer) {
    std::size_t const d = p.degree();
    if (q.size() < d + 1) throw ArgumentError("need degree + 1 quantized copies");
    for (std::size_t i = 0; i <= d; ++i)
        for (std::size_t j = i + 1; j <= d; ++j)
            if (q[i].draw() == q[j].draw()) throw MisuseError("polynomial estimator needs independent draws");
    double prod = 1.0;
    double est = p.coeffs[0];
    for (std::size_t i = 1; i <= d; ++i) {
        prod *= alpha + beta * vec::dot(q[i - 1].values(), x);
        est += p.coeffs[i] * prod;
    }
    return vec::scaled(q[d].values(), outer * est);
}

/// Logistic loss: estimates b P(b a^T x) a.
inline Vec logistic_poly_gradient(PolyApprox const& p, std::span<QuantizedVector const> q, double b,
                                  std::span<double const> x) {
    return poly_gradient_estimate(p, q, 0.0, b, x, b);
}

/// Hinge loss: estimates -b P(1 - b a^T x) a with P approximating the step.
inline Vec hinge_poly_gradient(PolyApprox const& p, std::span<QuantizedVector const> q, double b,
                               std::span<double const> x) {
    return poly_gradient_estimate(p, q, 1.0, -b, x, -b);
}

// ---------------------------------------------------------------------------
// Refetching

struct MarginBounds {
    double lower = 0.0;
    double upper = 0.0;
    bool refetch = false; ///< the interval contains 0, so the hinge indicator is uncertain
};

/// Bounds on the hinge margin given its quantized estimate and a worst-case deviation.
inline MarginBounds margin_bounds(double quantized_margin, double slack) {
    MarginBounds m{quantized_margin - slack, quantized_margin + slack, false};
    m.refetch = m.lower <= 0.0 && m.upper >= 0.0;
    return m;
}

/// l1 test: |Q(a)^T x - a^T x| <= sum_i |x_i| scale_i gap_i, where gap_i is the
/// widest grid gap adjacent to the level coordinate i was rounded to.
inline MarginBounds refetch_l1_decide(QuantizedVector const& qa, detail::GridView grids, ScaleVector const& scale,
                                      std::span<double const> x, double b) {
    if (qa.size() != x.size() || scale.size() != x.size()) throw ArgumentError("dimension mismatch");
    grids.check_size(x.size());
    double slack = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) slack += std::abs(x[i]) * scale[i] * grids[i].gap_around(qa.indices()[i]);
    return margin_bounds(1.0 - b * vec::dot(qa.values(), x), slack);
}

/// Dense Rademacher sketch shared by sender and receiver through a common seed.
class JlSketch {
  public:
    JlSketch(std::size_t rows, std::size_t n, std::uint64_t seed) : rows_(rows), n_(n), m_(rows * n) {
        if (rows < 1) throw ArgumentError("projection dimension must be >= 1");
        Stream rng = Stream(seed).split("jl");
        for (double& v : m_) v = rng.rademacher();
    }

    std::size_t rows() const noexcept { return rows_; }

    Vec apply(std::span<double const> v) const {
        if (v.size() != n_) throw ArgumentError("dimension mismatch");
        Vec out(rows_, 0.0);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = vec::dot(std::span(m_).subspan(r * n_, n_), v);
        return out;
    }

    /// a^T x from ||Ma||^2 + ||Mx||^2 - ||M(a - x)||^2 = 2 r a^T x (in expectation).
    double inner_product(std::span<double const> a, std::span<double const> x) const {
        Vec const ma = apply(a), mx = apply(x);
        double na = 0.0, nx = 0.0, nd = 0.0;
        for (std::size_t r = 0; r < rows_; ++r) {
            na += ma[r] * ma[r];
            nx += mx[r] * mx[r];
            nd += (ma[r] - mx[r]) * (ma[r] - mx[r]);
        }
        return (na + nx - nd) / (2.0 * double(rows_));
    }

  private:
    std::size_t rows_;
    std::size_t n_;
    std::vector<double> m_;
};

struct JlPolicy {
    std::size_t rows = 256;
    double delta = 0.1;
    double tau = 0.1;
};

/// Rows for which each of the three sketched squared norms is within relative
/// error g of the truth with joint probability 1 - tau (Achlioptas' bound and a
/// union bound), where g makes the inner-product error at most delta when
/// ||a|| <= 1 and ||x|| <= R.
inline std::size_t jl_rows(double delta, double tau, double R) {
    if (!(delta > 0.0) || !(tau > 0.0 && tau < 1.0) || !(R >= 0.0)) throw ArgumentError("bad JL sizing parameters");
    double const g = std::min(0.5, 2.0 * delta / ((1.0 + R) * (1.0 + R) + 1.0 + R * R));
    return static_cast<std::size_t>(std::ceil(2.0 * std::log(6.0 / tau) / (g * g / 2.0 - g * g * g / 3.0)));
}

struct JlDecision {
    double c = 0.0; ///< estimate of 1 - b a^T x
    bool refetch = false;
};

inline JlDecision refetch_l2_decide(JlSketch const& sketch, std::span<double const> a, double b,
                                    std::span<double const> x, double delta) {
    JlDecision d;
    d.c = 1.0 - b * sketch.inner_product(a, x);
    d.refetch = std::abs(d.c) <= 2.0 * delta;
    return d;
}

inline JlDecision refetch_l2_decide(std::span<double const> a, double b, std::span<double const> x,
                                    JlPolicy const& policy, std::uint64_t shared_seed) {
    return refetch_l2_decide(JlSketch(policy.rows, a.size(), shared_seed), a, b, x, policy.delta);
}

// ---------------------------------------------------------------------------
// Training

enum class NonlinearLoss { Logistic, Hinge };
enum class RefetchMode { None, L1, L2 };

struct NonlinearConfig {
    NonlinearLoss loss = NonlinearLoss::Logistic;
    TrainConfig base;                 ///< step size, epochs, batch, seed, regularizer, sample mode and grids
    std::optional<PolyApprox> approx; ///< required for SampleMode::Polynomial
    RefetchMode refetch = RefetchMode::None;
    JlPolicy jl;

    void validate() const {
        base.validate();
        bool const poly = base.samples == SampleMode::Polynomial;
        if (poly && !approx) throw ArgumentError("polynomial sampling needs an approximation");
        if (approx && approx->coeffs.empty()) throw ArgumentError("empty polynomial");
        if (approx && loss == NonlinearLoss::Logistic && approx->target != ApproxTarget::SigmoidDeriv &&
            approx->target != ApproxTarget::Constant)
            throw ArgumentError("logistic loss needs a logistic-derivative approximation");
        if (approx && loss == NonlinearLoss::Hinge && approx->target != ApproxTarget::StepFunction)
            throw ArgumentError("hinge loss needs a step approximation");
        if (refetch != RefetchMode::None && loss != NonlinearLoss::Hinge)
            throw ArgumentError("refetching applies to hinge loss only");
        if (refetch == RefetchMode::L1 && base.samples == SampleMode::Full)
            throw ArgumentError("l1 refetching needs quantized samples");
        if (refetch == RefetchMode::L2 && !poly) throw ArgumentError("l2 refetching pairs with polynomial sampling");
        if (base.samples == SampleMode::DoubleSampling) throw ArgumentError("double sampling is for linear losses");
    }
};

inline double nonlinear_loss(Samples const& s, std::span<double const> x, NonlinearLoss loss,
                             Regularizer const& reg) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        double const z = s.label(k) * vec::dot(s.row(k), x);
        if (loss == NonlinearLoss::Logistic)
            acc += z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
        else
            acc += std::max(0.0, 1.0 - z);
    }
    return acc / double(s.size()) + reg.penalty(x);
}

/// Exact per-sample (sub)gradient of the loss at full precision or on a given row.
inline Vec exact_nonlinear_gradient(NonlinearLoss loss, std::span<double const> a, double b, std::span<double const> x) {
    double const z = b * vec::dot(a, x);
    if (loss == NonlinearLoss::Logistic) return vec::scaled(a, b * eval_target(ApproxTarget::SigmoidDeriv, z));
    return vec::scaled(a, 1.0 - z > 0.0 ? -b : 0.0);
}

/// Prox-SGD for logistic or hinge loss with the configured estimator. The
/// trace reports per-epoch refetch fractions; with l1 refetching every
/// accepted quantized sample is checked against the full-precision hinge
/// indicator and disagreements are counted in `flips`.
inline TrainTrace train_nonlinear(Dataset const& data, NonlinearConfig const& cfg,
                                  QuantizedDataset const* stored = nullptr) {
    cfg.validate();
    data.validate();
    if (!data.classification) throw ArgumentError("nonlinear losses need a classification dataset");
    TrainConfig const& bc = cfg.base;
    Samples const& tr = data.train;
    std::size_t const n = tr.n_features();
    detail::SampleSource const src(tr, bc.samples == SampleMode::Full ? std::vector<QuantScheme>{}
                                                                      : sample_grids_for(tr, bc.quant),
                                   stored);
    std::vector<QuantizedVector> nearest_rows;
    if (bc.samples == SampleMode::Nearest)
        for (std::size_t k = 0; k < tr.size(); ++k) nearest_rows.push_back(src.nearest(k));
    unsigned const copies = bc.samples == SampleMode::Polynomial ? unsigned(cfg.approx->degree() + 1) : 1u;

    Stream const root(bc.seed);
    TrainTrace trace;
    trace.model.assign(n, 0.0);
    Vec& x = trace.model;
    std::vector<std::size_t> order(tr.size());
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= bc.epochs; ++epoch) {
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        Stream shuf = root.split("shuffle").split(epoch);
        shuffle(order.begin(), order.end(), shuf);
        double const gamma = bc.alpha0 / double(epoch);
        detail::GradVariance gv(n);
        std::size_t refetched = 0, decided = 0;
        std::optional<JlSketch> sketch;
        if (cfg.refetch == RefetchMode::L2) sketch.emplace(cfg.jl.rows, n, root.split("jl").split(epoch).key());

        for (std::size_t start = 0; start < order.size(); start += bc.batch_size, ++step) {
            Stream draws = root.split("draws").split(step);
            std::size_t const stop = std::min(order.size(), start + bc.batch_size);
            Vec g(n, 0.0);
            for (std::size_t p = start; p < stop; ++p) {
                std::size_t const k = order[p];
                auto const a = tr.row(k);
                double const b = tr.label(k);
                Stream r = draws.split(p);
                Vec gk;
                if (cfg.refetch == RefetchMode::L1) {
                    auto q = src.draw(k, 1, r);
                    auto const mb = refetch_l1_decide(q[0], src.grids(), src.scales(), x, b);
                    ++decided;
                    if (mb.refetch) {
                        ++refetched;
                        gk = exact_nonlinear_gradient(cfg.loss, a, b, x);
                    } else {
                        bool const active = mb.lower > 0.0;
                        if (active != (1.0 - b * vec::dot(a, x) > 0.0)) ++trace.flips;
                        gk = vec::scaled(q[0].values(), active ? -b : 0.0);
                    }
                } else if (cfg.refetch == RefetchMode::L2 &&
                           (++decided, refetch_l2_decide(*sketch, a, b, x, cfg.jl.delta).refetch)) {
                    ++refetched;
                    gk = exact_nonlinear_gradient(cfg.loss, a, b, x);
                } else {
                    switch (bc.samples) {
                    case SampleMode::Full: gk = exact_nonlinear_gradient(cfg.loss, a, b, x); break;
                    case SampleMode::Nearest:
                        gk = exact_nonlinear_gradient(cfg.loss, nearest_rows[k].values(), b, x);
                        break;
                    case SampleMode::Naive: {
                        auto q = src.draw(k, 1, r);
                        gk = exact_nonlinear_gradient(cfg.loss, q[0].values(), b, x);
                        break;
                    }
                    case SampleMode::Polynomial: {
                        auto q = src.draw(k, copies, r);
                        gk = cfg.loss == NonlinearLoss::Logistic ? logistic_poly_gradient(*cfg.approx, q, b, x)
                                                                 : hinge_poly_gradient(*cfg.approx, q, b, x);
                        break;
                    }
                    case SampleMode::DoubleSampling: throw ArgumentError("double sampling is for linear losses");
                    }
                }
                vec::axpy(1.0, gk, g);
            }
            for (double& v : g) v /= double(stop - start);
            gv.add(g);
            vec::axpy(-gamma, g, x);
            x = prox(bc.reg, gamma, x);
            if (!std::isfinite(vec::dot(x, x))) break;
        }

        EpochStats st;
        st.train_loss = nonlinear_loss(tr, x, cfg.loss, bc.reg);
        st.test_loss = nonlinear_loss(data.test, x, cfg.loss, bc.reg);
        st.grad_var = gv.value();
        st.refetch_frac = decided ? double(refetched) / double(decided) : 0.0;
        trace.refetches += refetched;
        trace.decisions += decided;
        trace.epochs.push_back(st);
        if (!detail::finite_loss(st.train_loss)) {
            trace.diverged = true;
            break;
        }
    }
    return trace;
}

} // namespace zipml
