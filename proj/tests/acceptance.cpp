// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "zipml/zipml.hpp"

using namespace zipml;

namespace {

struct Result {
    bool pass = false;
    std::string detail;
};

std::string fmt(char const* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Moments {
    std::vector<double> s, s2;
    std::size_t n = 0;
    explicit Moments(std::size_t d) : s(d, 0.0), s2(d, 0.0) {}
    void add(std::span<double const> v) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            s[i] += v[i];
            s2[i] += v[i] * v[i];
        }
        ++n;
    }
    double mean(std::size_t i) const { return s[i] / double(n); }
    double se(std::size_t i) const {
        double const m = mean(i);
        return std::sqrt(std::max(0.0, s2[i] / double(n) - m * m) / double(n));
    }
};

// 1 ----------------------------------------------------------------------------

Result unbiasedness() {
    Stream root(1001);
    int const instances = 50, draws = 100000;
    std::size_t checks = 0, misses = 0;
    double worst = 0.0;
    for (int inst = 0; inst < instances; ++inst) {
        Stream r = root.split(inst);
        std::size_t const n = 1 + r.below(6);
        std::vector<double> a(n), x(n);
        for (double& v : a) v = 2.0 * r.uniform() - 1.0;
        for (double& v : x) v = 3.0 * r.normal();
        double const b = r.normal();
        unsigned const bits = 1 + unsigned(r.below(5));
        QuantScheme const sg = inst % 3 == 2
                                   ? QuantScheme(std::vector<double>{-1.0, -0.4, 0.05, 0.3, 1.0})
                                   : QuantScheme::uniform_bits(bits, true);
        QuantScheme const mg = QuantScheme::uniform_bits(bits + 1, true, Scaling::Row);
        ScaleVector const sa = inst % 2 ? ScaleVector::constant(n, 1.0) : ScaleVector::row(a);
        ScaleVector const sx = ScaleVector::row(x);
        auto const full = full_gradient_sample(a, b, x);

        // analytic naive bias D_a x
        std::vector<double> bias(n);
        for (std::size_t i = 0; i < n; ++i) {
            double const t = sg.normalize(a[i], sa[i]);
            std::size_t const j = sg.bracket(t);
            bias[i] = sa[i] * sa[i] * (sg.level(j + 1) - t) * (t - sg.level(j)) * x[i];
        }

        Moments ds(n), mq(n), e2e(n), nv(n);
        for (int k = 0; k < draws; ++k) {
            Stream d = r.split(1000 + k);
            Stream r1 = d.split(1), r2 = d.split(2), r3 = d.split(3), r4 = d.split(4);
            auto const q1 = quantize_stochastic(a, sg, sa, r1);
            auto const q2 = quantize_stochastic(a, sg, sa, r2);
            auto const qx = quantize_stochastic(x, mg, sx, r3);
            ds.add(double_sample_gradient(q1, q2, b, x, k % 2 == 0));
            mq.add(model_quantized_gradient(a, b, qx));
            e2e.add(end_to_end_gradient(q1, q2, b, qx, bits + 2, r4).values());
            nv.add(naive_quantized_gradient(q1, b, x));
        }
        for (std::size_t i = 0; i < n; ++i) {
            auto check = [&](Moments const& m, double target) {
                double const z = std::abs(m.mean(i) - target) / std::max(m.se(i), 1e-300);
                // floor covers summation rounding on zero-variance coordinates
                bool const ok = std::abs(m.mean(i) - target) <= 4.0 * m.se(i) + 1e-10 * (1.0 + std::abs(target));
                if (m.se(i) > 0) worst = std::max(worst, z);
                ++checks;
                misses += !ok;
            };
            check(ds, full[i]);
            check(mq, full[i]);
            check(e2e, full[i]);
            check(nv, full[i] + bias[i]);
        }
    }
    return {misses == 0, fmt("%zu coordinate checks, %zu outside 4 SE, max |z| = %.2f", checks, misses, worst)};
}

// 2 ----------------------------------------------------------------------------

double brute_force_opt(optq::PointSet const& omega, std::size_t k) {
    std::vector<double> interior;
    for (double x : omega.distinct())
        if (x > 0.0 && x < 1.0) interior.push_back(x);
    double best = std::numeric_limits<double>::infinity();
    std::size_t const m = interior.size();
    std::vector<double> b;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
        if (std::size_t(std::popcount(mask)) + 1 > k) continue;
        b.assign(1, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            if (mask >> i & 1) b.push_back(interior[i]);
        b.push_back(1.0);
        best = std::min(best, optq::partition_err(omega, b));
    }
    return best;
}

Result exact_dp() {
    Stream root(2002);
    std::size_t instances = 0, mismatches = 0;
    double worst = 0.0;
    for (std::size_t n = 1; n <= 12; ++n)
        for (std::size_t k = 1; k <= 4; ++k)
            for (int rep = 0; rep < 5; ++rep) {
                Stream r = root.split(n * 100 + k * 10 + std::size_t(rep));
                std::vector<double> xs(n);
                for (double& x : xs) x = rep == 4 ? std::floor(r.uniform() * 6.0) / 6.0 : r.uniform();
                optq::PointSet const om(xs);
                double const dp = optq::optimal_partition_dp(om, k).total_err;
                double const bf = brute_force_opt(om, k);
                worst = std::max(worst, std::abs(dp - bf));
                mismatches += std::abs(dp - bf) > 1e-12;
                ++instances;
            }
    return {mismatches == 0 && instances >= 200,
            fmt("%zu instances, %zu mismatches, max |dp - oracle| = %.3g", instances, mismatches, worst)};
}

// 3 ----------------------------------------------------------------------------

Result approximation_ratio() {
    Stream root(3003);
    std::size_t violations = 0;
    int const instances = 150;
    double worst = 0.0;
    for (int inst = 0; inst < instances; ++inst) {
        Stream r = root.split(inst);
        std::size_t const n = 2 + r.below(499);
        std::size_t const k = 1 + r.below(8);
        std::vector<double> xs(n);
        int const law = inst % 3;
        for (double& x : xs) {
            if (law == 0) x = r.uniform();
            else if (law == 1) x = std::clamp((r.uniform() < 0.8 ? 0.2 : 0.7) + 0.05 * r.normal(), 0.0, 1.0);
            else x = std::pow(r.uniform(), 4.0);
        }
        optq::PointSet const om(xs);
        double const opt = optq::optimal_partition_dp(om, k).total_err;
        auto const p = optq::approx_optimal_partition(om, k, 1.0);
        if (opt > 0) worst = std::max(worst, p.total_err / opt);
        violations += p.total_err > 2.0 * opt + 1e-12 || p.intervals() > k;
    }
    return {violations == 0, fmt("%d instances, %zu violations, worst err/OPT = %.4f", instances, violations, worst)};
}

// 4 ----------------------------------------------------------------------------

Result convergence_parity() {
    SynthSpec spec; // 10,000 x 100 train, 10,000 test
    spec.seed = 4004;
    Dataset const d = synth(spec);
    TrainConfig cfg;
    cfg.alpha0 = 0.5;
    cfg.epochs = 20;
    auto const full = train(d, cfg);
    TrainConfig q = cfg;
    q.samples = SampleMode::DoubleSampling;
    q.quant.sample_bits = 6;
    q.quant.model_bits = 6;
    q.quant.gradient_bits = 6;
    auto const e2e = train(d, q);
    double const gap = e2e.final_train_loss() / full.final_train_loss() - 1.0;

    // large ||x*||: sample quantization only, so the comparison isolates the
    // estimator. Bias grows like the squared grid step, so use a coarse grid.
    SynthSpec big = spec;
    big.model_norm = 100.0;
    Dataset const db = synth(big);
    TrainConfig bc = cfg;
    bc.alpha0 = 0.1; // smaller step keeps the double-sampling noise floor low at this norm
    auto const bfull = train(db, bc);
    bc.samples = SampleMode::DoubleSampling;
    bc.quant.sample_bits = 3;
    auto const bds = train(db, bc);
    bc.samples = SampleMode::Naive;
    auto const bnv = train(db, bc);
    double const ds_gap = bds.final_train_loss() / bfull.final_train_loss() - 1.0;
    double const nv_gap = bnv.final_train_loss() / bfull.final_train_loss() - 1.0;
    bool const ok = !full.diverged && !e2e.diverged && gap <= 0.05 && nv_gap >= 10.0 * std::max(ds_gap, gap);
    return {ok, fmt("full %.6f, 6-bit e2e %.6f (gap %.2f%%); large-norm: double-sampling gap %.3f, naive gap %.3f "
                    "(%.1fx)",
                    full.final_train_loss(), e2e.final_train_loss(), 100.0 * gap, ds_gap, nv_gap,
                    nv_gap / std::max(ds_gap, gap))};
}

// 5 ----------------------------------------------------------------------------

Result optimal_vs_uniform() {
    int wins = 0;
    std::string losses;
    for (int seed = 0; seed < 5; ++seed) {
        SynthSpec spec;
        spec.n_features = 50;
        spec.n_train = 5000;
        spec.n_test = 0;
        spec.seed = 5005 + std::uint64_t(seed);
        spec.law = FeatureLaw::SkewedBimodal;
        spec.model_norm = 30.0;
        Dataset const d = synth(spec);
        ScaleVector const sc = column_scales(d.train);
        std::vector<QuantScheme> grids;
        for (std::size_t j = 0; j < spec.n_features; ++j) {
            auto const om = optq::feature_points(d.train.column(j), sc[j], false);
            grids.push_back(optq::partition_to_scheme(optq::approx_optimal_partition(om, 7), false));
            if (grids.back().bits() != 3) return {false, "optimal grid is not 3-bit"};
        }
        TrainConfig cfg;
        cfg.alpha0 = 0.1;
        cfg.epochs = 10;
        cfg.samples = SampleMode::DoubleSampling;
        cfg.quant.sample_grids = grids;
        double const lo = train(d, cfg).final_train_loss();
        cfg.quant.sample_grids = {QuantScheme::uniform_bits(5, false)};
        double const lu = train(d, cfg).final_train_loss();
        wins += lo <= lu;
        losses += fmt("%s%.5f/%.5f", seed ? ", " : "", lo, lu);
    }
    return {wins >= 4, fmt("3-bit optimal <= 5-bit uniform on %d/5 seeds (optimal/uniform: %s)", wins, losses.c_str())};
}

// 6 ----------------------------------------------------------------------------

Result chebyshev_pipeline() {
    SynthSpec spec{Task::Classification, 100, 10000, 0, 6006, 0.1};
    Dataset const d = synth(spec);
    double const R = 4.0;
    NonlinearConfig cfg;
    cfg.loss = NonlinearLoss::Logistic;
    cfg.base.alpha0 = 1.0;
    cfg.base.epochs = 10;
    cfg.base.reg = Regularizer::ball(R);
    double const lf = train_nonlinear(d, cfg).final_train_loss();

    // 4-bit levels + 16 copies stored once: 4 index bits + 4 selector bits per value
    NonlinearConfig pc = cfg;
    pc.base.samples = SampleMode::Polynomial;
    pc.base.quant.sample_bits = 4;
    pc.approx = chebyshev_fit(ApproxTarget::SigmoidDeriv, R, 0.0, 15);
    auto const grids = sample_grids_for(d.train, pc.base.quant);
    QuantizedDataset const stored(encode_quantized(d.train, grids, column_scales(d.train), 16, 6006));
    unsigned const bits_per_value = stored.bits() + ceil_log2(stored.n_copies());
    auto const poly = train_nonlinear(d, pc, &stored);
    double const lp = poly.final_train_loss();

    NonlinearConfig nc = cfg;
    nc.base.samples = SampleMode::Nearest;
    nc.base.quant.sample_bits = 8;
    double const ln = train_nonlinear(d, nc).final_train_loss();
    double const gp = lp / lf - 1.0, gn = ln / lf - 1.0;
    bool const ok = !poly.diverged && std::abs(gp) <= 0.05 && std::abs(gn) <= 0.05 && bits_per_value == 8;
    return {ok, fmt("full %.5f, degree-15 poly (%u bits/value, sup err %.2g) %.5f (%+.2f%%), 8-bit nearest %.5f (%+.2f%%)",
                    lf, bits_per_value, pc.approx->sup_error, lp, 100 * gp, ln, 100 * gn)};
}

// 7 ----------------------------------------------------------------------------

Result refetching() {
    SynthSpec spec{Task::Classification, 10, 10000, 0, 7007, 0.0};
    Dataset const d = synth(spec);
    NonlinearConfig cfg;
    cfg.loss = NonlinearLoss::Hinge;
    cfg.base.alpha0 = 1.0;
    cfg.base.epochs = 10;
    cfg.base.samples = SampleMode::Naive;
    cfg.base.quant.sample_bits = 8;
    cfg.refetch = RefetchMode::L1;
    auto const t = train_nonlinear(d, cfg);
    double worst = 0.0;
    for (auto const& e : t.epochs) worst = std::max(worst, e.refetch_frac);
    double const frac = double(t.refetches) / double(t.decisions);
    bool const ok = !t.diverged && frac <= 0.10 && t.flips == 0 && t.decisions == 10 * d.train.size();
    return {ok, fmt("refetch fraction %.2f%% overall (worst epoch %.2f%%), %zu flips in %zu checked steps", 100 * frac,
                    100 * worst, t.flips, t.decisions - t.refetches)};
}

// 8 ----------------------------------------------------------------------------

Result variance() {
    // excess gradient variance of double sampling over the full gradient, at a fixed model
    SynthSpec spec;
    spec.n_features = 50;
    spec.n_train = 500;
    spec.n_test = 0;
    spec.seed = 8008;
    Dataset const d = synth(spec);
    std::vector<double> x(d.truth);
    Stream root(8008);
    std::vector<double> excess;
    ScaleVector const sc = column_scales(d.train);
    for (unsigned bits : {3u, 5u, 8u}) {
        auto const g = QuantScheme::uniform_bits(bits, true);
        double acc = 0.0;
        int const reps = 40;
        for (std::size_t k = 0; k < d.train.size(); ++k) {
            auto const a = d.train.row(k);
            auto const full = full_gradient_sample(a, d.train.label(k), x);
            for (int t = 0; t < reps; ++t) {
                Stream r = root.split(k * 1000 + std::size_t(t));
                Stream r1 = r.split(1), r2 = r.split(2);
                auto const q1 = quantize_stochastic(a, g, sc, r1), q2 = quantize_stochastic(a, g, sc, r2);
                auto const est = double_sample_gradient(q1, q2, d.train.label(k), x);
                for (std::size_t i = 0; i < est.size(); ++i) acc += (est[i] - full[i]) * (est[i] - full[i]);
            }
        }
        excess.push_back(acc / double(d.train.size() * reps));
    }
    bool const mono = excess[0] > excess[1] && excess[1] > excess[2];

    std::size_t ceiling_violations = 0;
    double worst_ratio = 0.0;
    for (int v = 0; v < 20; ++v) {
        Stream r = root.split(100000 + v);
        std::size_t const n = 1 + r.below(256);
        std::vector<double> vec(n);
        for (double& e : vec) e = r.normal();
        unsigned const s = 1u << r.below(5);
        auto const g = QuantScheme::uniform(s, true, Scaling::Row);
        auto const sc_row = ScaleVector::row(vec);
        double const bound = variance_bound_uniform(vec, s);
        double mc = 0.0;
        int const draws = 2000;
        for (int t = 0; t < draws; ++t) {
            auto const q = quantize_stochastic(vec, g, sc_row, r);
            for (std::size_t i = 0; i < n; ++i) mc += (q[i] - vec[i]) * (q[i] - vec[i]);
        }
        mc /= draws;
        double const exact = expected_sq_error(vec, g, sc_row);
        worst_ratio = std::max(worst_ratio, exact / bound);
        ceiling_violations += exact > bound || mc > bound;
    }
    return {mono && ceiling_violations == 0,
            fmt("excess variance 3/5/8 bits: %.3g > %.3g > %.3g; %zu ceiling violations over 20 vectors (max "
                "TV/bound %.3f)",
                excess[0], excess[1], excess[2], ceiling_violations, worst_ratio)};
}

// 9 ----------------------------------------------------------------------------

Result container() {
    Stream root(9009);
    auto const dir = std::filesystem::temp_directory_path() / "zipml_acceptance";
    std::filesystem::create_directories(dir);
    std::size_t mismatches = 0;
    std::vector<std::vector<std::uint8_t>> images;
    for (int t = 0; t < 100; ++t) {
        Stream r = root.split(t);
        std::size_t const n = 1 + r.below(60), f = 1 + r.below(40);
        std::vector<double> v(n * f), l(n);
        for (double& e : v) e = r.uniform() < 0.1 ? 0.0 : 5.0 * r.normal();
        for (double& e : l) e = r.normal();
        Samples const s(f, std::move(v), std::move(l));
        unsigned const copies = 1u << (t % 3);
        auto const grid = QuantScheme::uniform_bits(1 + unsigned(r.below(10)), t % 2 == 0);
        bool const signed_grid = grid.is_signed();
        if (!signed_grid) {
            // unsigned grids need non-negative data
            std::vector<double> vv(s.values().begin(), s.values().end());
            for (double& e : vv) e = std::abs(e);
            std::vector<double> ll(s.labels().begin(), s.labels().end());
            Samples const sp(f, std::move(vv), std::move(ll));
            images.push_back(encode_quantized(sp, grid, column_scales(sp), copies, 77 + std::uint64_t(t)));
        } else {
            images.push_back(encode_quantized(s, grid, column_scales(s), copies, 77 + std::uint64_t(t)));
        }
        auto const path = dir / ("c" + std::to_string(t) + ".zipq");
        {
            std::FILE* fp = std::fopen(path.c_str(), "wb");
            std::fwrite(images.back().data(), 1, images.back().size(), fp);
            std::fclose(fp);
        }
        QuantizedDataset const back = read_quantized(path.string());
        QuantizedDataset const mem(images.back());
        bool same = std::equal(back.bytes().begin(), back.bytes().end(), images.back().begin(), images.back().end());
        for (std::size_t k = 0; k < back.size() && same; ++k) {
            same = back.record(k) == mem.record(k) && back.label(k) == mem.label(k);
            for (unsigned c = 0; c < copies && same; ++c) {
                auto const a = back.copy(k, c, grid), b = mem.copy(k, c, grid);
                same = std::equal(a.values().begin(), a.values().end(), b.values().begin(), b.values().end());
            }
        }
        mismatches += !same;
        std::filesystem::remove(path);
    }

    std::size_t structured = 0, silent = 0, other = 0;
    for (int m = 0; m < 1000; ++m) {
        Stream r = root.split(50000 + m);
        auto b = images[r.below(images.size())];
        switch (r.below(4)) {
        case 0: b[r.below(b.size())] ^= static_cast<std::uint8_t>(1 + r.below(255)); break;
        case 1: b.resize(r.below(b.size())); break;
        case 2: b.insert(b.begin() + std::ptrdiff_t(r.below(b.size() + 1)), static_cast<std::uint8_t>(r.below(256))); break;
        default:
            for (int j = 0; j < 8; ++j) b[r.below(b.size())] = static_cast<std::uint8_t>(r.below(256));
        }
        try {
            QuantizedDataset const q(std::move(b));
            ++silent; // only acceptable if the mutation was a no-op, which the cases above exclude except case 3
        } catch (CorruptFileError const&) {
            ++structured;
        } catch (...) {
            ++other;
        }
    }
    std::filesystem::remove_all(dir);
    return {mismatches == 0 && silent == 0 && other == 0,
            fmt("100 round trips, %zu mismatches; 1000 mutations: %zu structured errors, %zu accepted, %zu other", mismatches,
                structured, silent, other)};
}

} // namespace

int main() {
    struct Criterion {
        char const* name;
        std::function<Result()> run;
        double budget_s;
    };
    std::vector<Criterion> const all{
        {"unbiasedness suite", unbiasedness, 120},
        {"exact DP optimality", exact_dp, 60},
        {"approximation ratio", approximation_ratio, 120},
        {"convergence parity", convergence_parity, 300},
        {"optimal vs uniform grid", optimal_vs_uniform, 300},
        {"Chebyshev pipeline", chebyshev_pipeline, 300},
        {"refetching", refetching, 300},
        {"variance monotonicity and ceiling", variance, 60},
        {"container integrity", container, 120},
    };
    int failed = 0;
    for (std::size_t i = 0; i < all.size(); ++i) {
        auto const t0 = std::chrono::steady_clock::now();
        Result r;
        try {
            r = all[i].run();
        } catch (std::exception const& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        double const secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        bool const pass = r.pass && secs <= all[i].budget_s;
        failed += !pass;
        std::printf("%s %zu %s (%.1f s / %.0f s): %s\n", pass ? "PASS" : "FAIL", i + 1, all[i].name, secs,
                    all[i].budget_s, r.detail.c_str());
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
