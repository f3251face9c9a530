// zipml: experiment harness for low-precision training.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "zipml/zipml.hpp"

using namespace zipml;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kDiverged = 2, kIo = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
    char const* env = std::getenv("ZIPML_SEED");
    if (!env || !*env) return 0;
    char* end = nullptr;
    unsigned long long const v = std::strtoull(env, &end, 10);
    if (*end) throw UsageError(std::string("ZIPML_SEED is not an unsigned integer: ") + env);
    return v;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Output: a file when --out is given, stdout otherwise.

class Output {
  public:
    explicit Output(std::string const& path) {
        if (path.empty() || path == "-") return;
        file_ = std::make_unique<std::ofstream>(path);
        if (!*file_) throw IoError("cannot open '" + path + "' for writing");
    }
    std::ostream& os() { return file_ ? *file_ : std::cout; }
    bool is_stdout() const { return !file_; }
    void close() {
        if (!file_) return;
        file_->close();
        if (!*file_) throw IoError("write failed");
    }

  private:
    std::unique_ptr<std::ofstream> file_;
};

// ---------------------------------------------------------------------------
// Data selection shared by train, optq, quantize.

struct DataOpts {
    std::string data, test;
    std::size_t label_col = 0;
    std::size_t features = 100, samples = 10000, test_samples = 0;
    std::string law = "sphere";
    double noise = 0.1, model_norm = 0.0;

    void add(CLI::App* app) {
        app->add_option("--data", data, "training data (.csv with label column, otherwise LIBSVM); synthetic if absent");
        app->add_option("--test", test, "held-out data in the same format");
        app->add_option("--label-col", label_col, "label column for CSV input");
        app->add_option("--features", features, "synthetic: feature count")->check(CLI::PositiveNumber);
        app->add_option("--samples", samples, "synthetic: training rows")->check(CLI::PositiveNumber);
        app->add_option("--test-samples", test_samples, "synthetic: test rows");
        app->add_option("--law", law, "synthetic feature law")->check(CLI::IsMember({"sphere", "bimodal"}));
        app->add_option("--noise", noise, "synthetic: label noise sd")->check(CLI::NonNegativeNumber);
        app->add_option("--model-norm", model_norm, "synthetic: ||x*||, 0 keeps the raw draw")
            ->check(CLI::NonNegativeNumber);
    }

    Dataset load(bool classification, std::uint64_t seed) const {
        if (data.empty()) {
            SynthSpec spec;
            spec.task = classification ? Task::Classification : Task::Regression;
            spec.n_features = features;
            spec.n_train = samples;
            spec.n_test = test_samples;
            spec.seed = seed;
            spec.noise = noise;
            spec.law = law == "bimodal" ? FeatureLaw::SkewedBimodal : FeatureLaw::UnitSphere;
            spec.model_norm = model_norm;
            return synth(spec);
        }
        auto is_csv = [](std::string const& p) { return p.size() >= 4 && p.substr(p.size() - 4) == ".csv"; };
        Dataset d = is_csv(data) ? load_csv(data, label_col, classification) : load_libsvm(data, 0, classification);
        if (!test.empty()) {
            Dataset t = is_csv(test) ? load_csv(test, label_col, classification)
                                     : load_libsvm(test, d.n_features(), classification);
            d.test = std::move(t.train);
        }
        d.validate();
        return d;
    }
};

std::vector<QuantScheme> read_point_grids(std::string const& path, Samples const& s) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    auto const parts = optq::read_partitions(in);
    if (parts.size() != 1 && parts.size() != s.n_features())
        throw UsageError("points file has " + std::to_string(parts.size()) + " partitions; need 1 or " +
                         std::to_string(s.n_features()));
    bool const is_signed = !non_negative(s);
    std::vector<QuantScheme> grids;
    for (auto const& b : parts) {
        optq::Partition p;
        p.boundaries = b;
        grids.push_back(optq::partition_to_scheme(p, is_signed));
    }
    return grids;
}

std::vector<QuantScheme> optimal_grids(Samples const& s, unsigned bits) {
    std::size_t const k = (std::size_t{1} << bits) - 1;
    bool const is_signed = !non_negative(s);
    ScaleVector const sc = column_scales(s);
    std::vector<QuantScheme> grids;
    for (std::size_t j = 0; j < s.n_features(); ++j) {
        auto const om = optq::feature_points(s.column(j), sc[j], is_signed);
        grids.push_back(optq::partition_to_scheme(optq::approx_optimal_partition(om, k), is_signed));
    }
    return grids;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
    DataOpts data;
    std::string loss = "ls", scheme = "uniform", points, naive = "none", refetch = "none", reg = "none";
    std::string poly_file, stored, out;
    unsigned bits = 0, model_bits = 0, grad_bits = 0;
    bool double_sampling = false, poly = false;
    std::size_t epochs = 10, batch = 1, degree = 15, jl_rows = 256;
    double alpha = 0.1, lambda = 0.0, radius = 0.0, lssvm_c = 0.0, delta = 0.1;
    std::uint64_t seed = 0;
};

void add_train(CLI::App& app, TrainOpts& o) {
    auto* c = app.add_subcommand("train", "train a model and write a per-epoch CSV trace");
    o.data.add(c);
    c->add_option("--loss", o.loss)->check(CLI::IsMember({"ls", "lssvm", "logistic", "hinge"}));
    c->add_option("--lssvm-c", o.lssvm_c, "LS-SVM linear coefficient");
    c->add_option("--bits", o.bits, "sample bits; 0 = full precision")->check(CLI::Range(0, 16));
    c->add_option("--model-bits", o.model_bits)->check(CLI::Range(0, 16));
    c->add_option("--grad-bits", o.grad_bits)->check(CLI::Range(0, 16));
    c->add_flag("--double-sampling", o.double_sampling, "two independent sample quantizations (linear losses)");
    c->add_option("--naive-rounding", o.naive, "biased baseline: one stochastic draw, or round to nearest")
        ->check(CLI::IsMember({"none", "stochastic", "nearest"}));
    c->add_flag("--poly", o.poly, "polynomial estimator over degree+1 draws (logistic, hinge)");
    c->add_option("--poly-file", o.poly_file, "approximation written by the chebyshev subcommand");
    c->add_option("--degree", o.degree)->check(CLI::Range(1, 31));
    c->add_option("--delta", o.delta, "step-target ramp width; l2 refetch margin")->check(CLI::PositiveNumber);
    c->add_option("--scheme", o.scheme)->check(CLI::IsMember({"uniform", "optimal"}));
    c->add_option("--points", o.points, "partition file from the optq subcommand");
    c->add_option("--stored", o.stored, "draw samples from a ZIPQ file written by quantize");
    c->add_option("--refetch", o.refetch)->check(CLI::IsMember({"none", "l1", "l2"}));
    c->add_option("--jl-rows", o.jl_rows)->check(CLI::PositiveNumber);
    c->add_option("--reg", o.reg)->check(CLI::IsMember({"none", "l1", "l2"}));
    c->add_option("--lambda", o.lambda)->check(CLI::NonNegativeNumber);
    c->add_option("--radius", o.radius, "constrain ||x|| <= radius; 0 = unconstrained")->check(CLI::NonNegativeNumber);
    c->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
    c->add_option("--batch", o.batch)->check(CLI::PositiveNumber);
    c->add_option("--alpha", o.alpha, "step at epoch e is alpha / e")->check(CLI::PositiveNumber);
    c->add_option("--seed", o.seed);
    c->add_option("--out", o.out, "CSV path; stdout if absent");
}

int run_train(TrainOpts const& o) {
    bool const nonlinear = o.loss == "logistic" || o.loss == "hinge";
    bool const naive = o.naive != "none";
    bool const quantized = o.bits > 0 || !o.points.empty() || !o.stored.empty();

    // flag combinations, checked before any work
    if (o.refetch != "none" && o.loss != "hinge") throw UsageError("--refetch requires --loss hinge");
    if (o.double_sampling && naive) throw UsageError("--double-sampling and --naive-rounding are exclusive");
    if (o.double_sampling && nonlinear) throw UsageError("--double-sampling applies to ls and lssvm losses");
    if ((o.poly || !o.poly_file.empty()) && !nonlinear) throw UsageError("--poly needs --loss logistic or hinge");
    if (o.poly && naive) throw UsageError("--poly and --naive-rounding are exclusive");
    if ((o.double_sampling || naive || o.poly) && !quantized) throw UsageError("quantized estimators need --bits or --points");
    if (o.scheme == "optimal" && o.points.empty() && o.bits == 0)
        throw UsageError("--scheme optimal needs --bits or --points");
    if (!o.points.empty() && o.scheme != "optimal") throw UsageError("--points needs --scheme optimal");
    if (!o.stored.empty() && (o.bits > 0 || !o.points.empty()))
        throw UsageError("--stored carries its own grid; drop --bits and --points");
    if (!o.stored.empty() && o.naive == "nearest") throw UsageError("--stored draws are stochastic; nearest needs raw data");
    if (o.lambda > 0.0 && o.reg == "none") throw UsageError("--lambda needs --reg l1 or l2");
    if (o.reg != "none" && o.radius > 0.0) throw UsageError("--reg and --radius are exclusive");
    if (o.loss == "lssvm" && o.lssvm_c == 0.0) std::cerr << "note: --lssvm-c 0 reduces lssvm to least squares\n";

    TrainConfig base;
    base.loss = o.loss == "lssvm" ? LinearLoss::LsSvm : LinearLoss::LeastSquares;
    base.lssvm_c = o.lssvm_c;
    base.alpha0 = o.alpha;
    base.epochs = o.epochs;
    base.batch_size = o.batch;
    base.seed = o.seed;
    if (o.radius > 0.0) base.reg = Regularizer::ball(o.radius);
    else if (o.reg == "l1") base.reg = Regularizer::l1(o.lambda);
    else if (o.reg == "l2") base.reg = Regularizer::l2(o.lambda);
    base.quant.model_bits = o.model_bits;
    base.quant.gradient_bits = o.grad_bits;

    // estimator: explicit choice, else the unbiased default for the loss
    if (!quantized) base.samples = SampleMode::Full;
    else if (o.naive == "stochastic") base.samples = SampleMode::Naive;
    else if (o.naive == "nearest") base.samples = SampleMode::Nearest;
    else if (o.refetch == "l1") base.samples = SampleMode::Naive;
    else base.samples = nonlinear ? SampleMode::Polynomial : SampleMode::DoubleSampling;

    NonlinearConfig nc;
    nc.loss = o.loss == "hinge" ? NonlinearLoss::Hinge : NonlinearLoss::Logistic;
    nc.refetch = o.refetch == "l1" ? RefetchMode::L1 : o.refetch == "l2" ? RefetchMode::L2 : RefetchMode::None;
    nc.jl.rows = o.jl_rows;
    nc.jl.delta = o.delta;
    if (nonlinear && base.samples == SampleMode::Polynomial) {
        if (!(o.radius > 0.0)) throw UsageError("the polynomial estimator needs --radius (margins must stay in [-R, R])");
        ApproxTarget const target = nc.loss == NonlinearLoss::Hinge ? ApproxTarget::StepFunction : ApproxTarget::SigmoidDeriv;
        if (!o.poly_file.empty()) {
            std::ifstream in(o.poly_file);
            if (!in) throw IoError("cannot open '" + o.poly_file + "'");
            nc.approx = read_poly(in, target);
        } else {
            nc.approx = chebyshev_fit(target, o.radius, target == ApproxTarget::StepFunction ? o.delta : 0.0, o.degree);
        }
    }

    Dataset const d = o.data.load(nonlinear, o.seed);
    std::optional<QuantizedDataset> stored;
    if (!o.stored.empty()) {
        stored.emplace(read_quantized(o.stored));
        if (stored->n_features() != d.n_features() || stored->size() != d.train.size())
            throw UsageError("--stored file does not match the training data shape");
        base.quant.sample_grids = {QuantScheme::uniform_bits(stored->bits(), !non_negative(d.train))};
    } else if (!o.points.empty()) {
        base.quant.sample_grids = read_point_grids(o.points, d.train);
    } else if (o.scheme == "optimal") {
        base.quant.sample_grids = optimal_grids(d.train, o.bits);
    } else {
        base.quant.sample_bits = o.bits;
    }

    Output out(o.out);
    auto const t0 = std::chrono::steady_clock::now();
    TrainTrace trace;
    QuantizedDataset const* sp = stored ? &*stored : nullptr;
    if (nonlinear) {
        nc.base = base;
        try {
            nc.validate();
        } catch (ArgumentError const& e) {
            throw UsageError(e.what());
        }
        trace = train_nonlinear(d, nc, sp);
    } else {
        try {
            base.validate();
        } catch (ArgumentError const& e) {
            throw UsageError(e.what());
        }
        trace = train(d, base, sp);
    }
    double const secs = seconds_since(t0);

    auto& os = out.os();
    os << "epoch,train_loss,test_loss,grad_var,refetch_frac\n";
    char buf[256];
    for (std::size_t e = 0; e < trace.epochs.size(); ++e) {
        auto const& s = trace.epochs[e];
        std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.6g\n", e + 1, s.train_loss, s.test_loss, s.grad_var,
                      s.refetch_frac);
        os << buf;
    }
    out.close();
    std::snprintf(buf, sizeof buf, "final train_loss %.10g after %zu epochs, %s, %.2f s%s\n", trace.final_train_loss(),
                  trace.epochs.size(), trace.diverged ? "diverged" : "converged", secs,
                  trace.decisions ? (", refetched " + std::to_string(trace.refetches) + "/" +
                                     std::to_string(trace.decisions) + ", flips " + std::to_string(trace.flips))
                                        .c_str()
                                  : "");
    (out.is_stdout() ? std::cerr : std::cout) << buf;
    return trace.diverged ? kDiverged : kOk;
}

// ---------------------------------------------------------------------------
// optq

struct OptqOpts {
    DataOpts data;
    std::vector<std::string> algos{"combined"};
    std::size_t k = 7, M = 64;
    bool per_feature = false;
    std::uint64_t seed = 0;
    std::string out;
};

void add_optq(CLI::App& app, OptqOpts& o) {
    auto* c = app.add_subcommand("optq", "compute variance-optimal quantization points");
    o.data.add(c);
    c->add_option("--input", o.data.data, "data file (alias of --data)");
    c->add_option("--k", o.k, "intervals (levels = k + 1)")->check(CLI::PositiveNumber);
    c->add_option("--algo", o.algos, "exact, discretized, greedy, combined, or all; the first is written")
        ->check(CLI::IsMember({"exact", "discretized", "greedy", "combined", "all"}))
        ->delimiter(',');
    c->add_option("--M", o.M, "candidate count for discretized")->check(CLI::PositiveNumber);
    c->add_flag("--per-feature", o.per_feature, "one partition per feature column instead of one pooled partition");
    c->add_option("--seed", o.seed);
    c->add_option("--out", o.out, "partition file; stdout if absent");
}

int run_optq(OptqOpts const& o) {
    std::vector<std::string> algos;
    for (auto const& a : o.algos) {
        if (a == "all") algos.insert(algos.end(), {"exact", "discretized", "greedy", "combined"});
        else algos.push_back(a);
    }
    if (std::find(algos.begin(), algos.end(), "discretized") != algos.end() && o.M < o.k)
        throw UsageError("--M must be >= --k");

    Dataset const d = o.data.load(false, o.seed);
    Samples const& s = d.train;
    bool const is_signed = !non_negative(s);
    ScaleVector const sc = column_scales(s);
    std::vector<optq::PointSet> sets;
    if (o.per_feature) {
        for (std::size_t j = 0; j < s.n_features(); ++j) sets.push_back(optq::feature_points(s.column(j), sc[j], is_signed));
    } else {
        std::vector<double> all;
        for (std::size_t j = 0; j < s.n_features(); ++j) {
            auto const p = optq::feature_points(s.column(j), sc[j], is_signed);
            all.insert(all.end(), p.xs().begin(), p.xs().end());
        }
        sets.emplace_back(std::move(all));
    }
    for (std::size_t j = 0; j < sets.size(); ++j) {
        std::size_t const m = sets[j].distinct().size();
        if (o.k >= m)
            std::cerr << "warning: " << (o.per_feature ? "feature " + std::to_string(j) : std::string("data")) << " has "
                      << m << " distinct values; k=" << o.k << " yields a degenerate partition\n";
    }

    auto solve = [&](std::string const& algo, optq::PointSet const& om) {
        if (algo == "exact") return optq::optimal_partition_dp(om, o.k);
        if (algo == "discretized") return optq::optimal_partition_discretized(om, o.k, o.M);
        if (algo == "greedy") return optq::adaquant_greedy(om, o.k);
        return optq::approx_optimal_partition(om, o.k);
    };

    struct Row {
        std::string algo;
        double mv = 0.0, secs = 0.0;
        std::size_t intervals = 0; ///< widest partition; greedy may exceed k
    };
    std::vector<Row> rows;
    std::vector<optq::Partition> written;
    for (auto const& algo : algos) {
        auto const t0 = std::chrono::steady_clock::now();
        std::vector<optq::Partition> parts;
        for (auto const& om : sets) parts.push_back(solve(algo, om));
        Row r{algo, 0.0, seconds_since(t0)};
        for (auto const& p : parts) {
            r.mv += p.mv / double(parts.size());
            r.intervals = std::max(r.intervals, p.intervals());
        }
        rows.push_back(r);
        if (written.empty()) written = std::move(parts);
    }
    Row uni{"uniform", 0.0, 0.0, o.k};
    for (auto const& om : sets) {
        std::vector<double> b(o.k + 1);
        for (std::size_t i = 0; i <= o.k; ++i) b[i] = double(i) / double(o.k);
        uni.mv += optq::make_partition(om, b).mv / double(sets.size());
    }
    rows.push_back(uni);

    Output out(o.out);
    optq::write_partitions(out.os(), written);
    out.close();
    auto& log = out.is_stdout() ? std::cerr : std::cout;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %10s %14s %12s\n", "algo", "intervals", "mean_mv", "runtime_s");
    log << buf;
    for (auto const& r : rows) {
        std::snprintf(buf, sizeof buf, "%-12s %10zu %14.6g %12.4f\n", r.algo.c_str(), r.intervals, r.mv, r.secs);
        log << buf;
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// quantize

struct QuantizeOpts {
    DataOpts data;
    unsigned bits = 0, copies = 1;
    std::string points, out;
    std::uint64_t seed = 0;
    bool check = false;
};

void add_quantize(CLI::App& app, QuantizeOpts& o) {
    auto* c = app.add_subcommand("quantize", "write a quantized dataset as a ZIPQ file");
    o.data.add(c);
    auto* b = c->add_option("--bits", o.bits, "uniform grid bits")->check(CLI::Range(1, 16));
    auto* p = c->add_option("--points", o.points, "partition file from the optq subcommand");
    b->excludes(p);
    c->add_option("--copies", o.copies, "stored stochastic copies per sample (power of two)")->check(CLI::Range(1, 128));
    c->add_option("--seed", o.seed);
    c->add_option("--out", o.out, "ZIPQ path")->required();
    c->add_flag("--check", o.check, "read the file back and verify it");
}

int run_quantize(QuantizeOpts const& o) {
    if (o.bits == 0 && o.points.empty()) throw UsageError("need --bits or --points");
    if (!is_power_of_two(o.copies)) throw UsageError("--copies must be a power of two");
    Dataset const d = o.data.load(false, o.seed);
    std::vector<QuantScheme> const grids = o.points.empty()
                                               ? std::vector<QuantScheme>{QuantScheme::uniform_bits(o.bits, !non_negative(d.train))}
                                               : read_point_grids(o.points, d.train);
    auto const bytes = encode_quantized(d.train, grids, column_scales(d.train), o.copies, o.seed);
    {
        std::ofstream os(o.out, std::ios::binary);
        if (!os) throw IoError("cannot open '" + o.out + "' for writing");
        os.write(reinterpret_cast<char const*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw IoError("write to '" + o.out + "' failed");
    }
    QuantizedDataset const q(bytes);
    unsigned const per_value = q.bits() + ceil_log2(q.n_copies());
    double const raw = 4.0 * double(q.size() * q.n_features());
    std::printf("%zu samples x %zu features, %u-bit indices, %u copies: %u bits per value\n", q.size(), q.n_features(),
                q.bits(), q.n_copies(), per_value);
    std::printf("compression vs float32: %.3f (values), %.3f (file incl. labels and header)\n",
                32.0 / double(per_value), raw / double(bytes.size()));
    if (o.check) {
        QuantizedDataset const back = read_quantized(o.out);
        bool same = std::equal(back.bytes().begin(), back.bytes().end(), bytes.begin(), bytes.end());
        for (std::size_t k = 0; k < back.size() && same; ++k) same = back.record(k) == q.record(k);
        if (!same) throw IoError("round-trip check failed for '" + o.out + "'");
        std::printf("round-trip check passed\n");
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// chebyshev

struct ChebOpts {
    std::string target = "sigmoid", out;
    std::size_t degree = 15;
    double R = 4.0, delta = 0.0, max_error = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 0;
};

void add_chebyshev(CLI::App& app, ChebOpts& o) {
    auto* c = app.add_subcommand("chebyshev", "fit a polynomial approximation for the nonlinear estimators");
    c->add_option("--target", o.target)->check(CLI::IsMember({"sigmoid", "step", "constant"}));
    c->add_option("--degree", o.degree)->check(CLI::Range(1, 31));
    c->add_option("--R", o.R, "approximation radius")->check(CLI::PositiveNumber);
    c->add_option("--delta", o.delta, "exclusion half-width around 0 (step target)")->check(CLI::NonNegativeNumber);
    c->add_option("--max-error", o.max_error, "fail when the certified error exceeds this")->check(CLI::PositiveNumber);
    c->add_option("--seed", o.seed, "accepted for uniformity; the fit is deterministic");
    c->add_option("--out", o.out, "polynomial file; stdout if absent");
}

int run_chebyshev(ChebOpts const& o) {
    ApproxTarget const t = o.target == "step"       ? ApproxTarget::StepFunction
                           : o.target == "constant" ? ApproxTarget::Constant
                                                    : ApproxTarget::SigmoidDeriv;
    if (t == ApproxTarget::StepFunction && !(o.delta > 0.0)) throw UsageError("--target step needs --delta > 0");
    PolyApprox p;
    try {
        p = chebyshev_fit(t, o.R, o.delta, o.degree, o.max_error);
    } catch (InfeasibleError const& e) {
        throw UsageError(e.what());
    }
    Output out(o.out);
    write_poly(out.os(), p);
    out.close();
    char buf[200];
    std::snprintf(buf, sizeof buf, "degree %zu on [-%g, %g] excluding |z| < %g: sup error %.3g, max |P| %.6g\n",
                  p.degree(), p.radius, p.radius, p.exclusion, p.sup_error, max_abs_on(p));
    (out.is_stdout() ? std::cerr : std::cout) << buf;
    return kOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOpts {
    std::vector<unsigned> bits{2, 3, 4, 5, 6};
    std::size_t features = 20, samples = 5000, epochs = 10, jobs = 1;
    double alpha = 0.1, model_norm = 30.0, tol = 0.05;
    std::string format = "markdown", out;
    std::uint64_t seed = 0;
};

void add_bench(CLI::App& app, BenchOpts& o) {
    auto* c = app.add_subcommand("bench", "uniform vs optimal grids, double sampling vs naive, on skewed data");
    c->add_option("--bits", o.bits, "bit widths to sweep")->delimiter(',')->check(CLI::Range(1, 12));
    c->add_option("--features", o.features)->check(CLI::PositiveNumber);
    c->add_option("--samples", o.samples)->check(CLI::PositiveNumber);
    c->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
    c->add_option("--alpha", o.alpha)->check(CLI::PositiveNumber);
    c->add_option("--model-norm", o.model_norm)->check(CLI::NonNegativeNumber);
    c->add_option("--tol", o.tol, "relative gap that counts as converged")->check(CLI::PositiveNumber);
    c->add_option("--jobs", o.jobs, "parallel worker threads")->check(CLI::PositiveNumber);
    c->add_option("--format", o.format)->check(CLI::IsMember({"markdown", "csv"}));
    c->add_option("--seed", o.seed);
    c->add_option("--out", o.out, "table path; stdout if absent");
}

int run_bench(BenchOpts const& o) {
    SynthSpec spec;
    spec.n_features = o.features;
    spec.n_train = o.samples;
    spec.n_test = 0;
    spec.seed = o.seed;
    spec.law = FeatureLaw::SkewedBimodal;
    spec.model_norm = o.model_norm;
    Dataset const d = synth(spec);

    struct Job {
        std::string scheme, estimator;
        unsigned bits = 0;
        double loss = 0.0, secs = 0.0;
        bool diverged = false;
    };
    std::vector<Job> jobs{{"full", "full", 32}};
    for (char const* scheme : {"uniform", "optimal"})
        for (char const* est : {"double-sampling", "naive"})
            for (unsigned b : o.bits) jobs.push_back({scheme, est, b});

    Stream const root(o.seed);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
            Job& j = jobs[i];
            TrainConfig cfg;
            cfg.alpha0 = o.alpha;
            cfg.epochs = o.epochs;
            cfg.seed = root.split(i).key();
            if (j.scheme != "full") {
                cfg.samples = j.estimator == "naive" ? SampleMode::Naive : SampleMode::DoubleSampling;
                if (j.scheme == "optimal") cfg.quant.sample_grids = optimal_grids(d.train, j.bits);
                else cfg.quant.sample_bits = j.bits;
            }
            auto const t0 = std::chrono::steady_clock::now();
            auto const t = train(d, cfg);
            j.secs = seconds_since(t0);
            j.loss = t.final_train_loss();
            j.diverged = t.diverged;
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < std::min(o.jobs, jobs.size()); ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    double const ref = jobs.front().loss;
    Output out(o.out);
    auto& os = out.os();
    bool const md = o.format == "markdown";
    char buf[256];
    os << (md ? "| scheme | estimator | bits | final_loss | gap | seconds |\n|---|---|---|---|---|---|\n"
              : "scheme,estimator,bits,final_loss,gap,seconds\n");
    for (auto const& j : jobs) {
        double const gap = j.loss / ref - 1.0;
        std::snprintf(buf, sizeof buf, md ? "| %s | %s | %u | %.6g | %.4f | %.2f |\n" : "%s,%s,%u,%.10g,%.6g,%.3f\n",
                      j.scheme.c_str(), j.estimator.c_str(), j.bits, j.loss, gap, j.secs);
        os << buf;
    }
    out.close();

    // keep a CSV on stdout machine-readable
    auto& log = out.is_stdout() && !md ? std::cerr : std::cout;
    log << (md && out.is_stdout() ? "\n" : "") << "bits to reach gap <= " << o.tol << ":\n";
    for (char const* scheme : {"uniform", "optimal"})
        for (char const* est : {"double-sampling", "naive"}) {
            std::optional<unsigned> best;
            for (auto const& j : jobs)
                if (j.scheme == scheme && j.estimator == est && !j.diverged && j.loss / ref - 1.0 <= o.tol &&
                    (!best || j.bits < *best))
                    best = j.bits;
            log << "  " << scheme << " + " << est << ": " << (best ? std::to_string(*best) : std::string("not reached"))
                << '\n';
        }
    bool const any_diverged = std::any_of(jobs.begin(), jobs.end(), [](Job const& j) { return j.diverged; });
    return any_diverged ? kDiverged : kOk;
}

// ---------------------------------------------------------------------------
// Config files: flat key=value lines, keys are long option names without
// dashes. Entries are inserted ahead of the command line so explicit flags win.

std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
    if (args.size() < 2) return args;
    std::string path;
    for (std::size_t i = 2; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    CLI::App* sub = nullptr;
    try {
        sub = app.get_subcommand(args[1]);
    } catch (CLI::OptionNotFound const&) {
        return args; // let the parser report the bad subcommand
    }
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::vector<std::string> inserted;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        auto const a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        auto const eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string const key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key == "config") throw UsageError(path + ":" + std::to_string(lineno) + ": nested config");
        CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (!opt) throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "' for " + args[1]);
        if (opt->get_expected_max() == 0) {
            if (value == "true" || value == "1" || value == "yes") inserted.push_back("--" + key);
            else if (!(value == "false" || value == "0" || value == "no"))
                throw UsageError(path + ":" + std::to_string(lineno) + ": '" + key + "' takes true or false");
        } else {
            inserted.push_back("--" + key);
            inserted.push_back(value);
        }
    }
    args.insert(args.begin() + 2, inserted.begin(), inserted.end());
    return args;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"zipml: low-precision training toolkit"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    TrainOpts train_o;
    OptqOpts optq_o;
    QuantizeOpts quant_o;
    ChebOpts cheb_o;
    BenchOpts bench_o;
    try {
        std::uint64_t const seed = default_seed();
        train_o.seed = optq_o.seed = quant_o.seed = cheb_o.seed = bench_o.seed = seed;
    } catch (UsageError const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
    add_train(app, train_o);
    add_optq(app, optq_o);
    add_quantize(app, quant_o);
    add_chebyshev(app, cheb_o);
    add_bench(app, bench_o);
    std::string config;
    for (auto* sub : app.get_subcommands({}))
        sub->add_option("--config", config, "flat key=value file; command-line flags take precedence");

    try {
        std::vector<std::string> args(argv, argv + argc);
        args = expand_config(app, std::move(args));
        std::vector<char const*> cargs;
        for (auto const& a : args) cargs.push_back(a.c_str());
        app.parse(int(cargs.size()), cargs.data());
    } catch (CLI::ParseError const& e) {
        int const rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    } catch (UsageError const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (IoError const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    }

    try {
        if (app.got_subcommand("train")) return run_train(train_o);
        if (app.got_subcommand("optq")) return run_optq(optq_o);
        if (app.got_subcommand("quantize")) return run_quantize(quant_o);
        if (app.got_subcommand("chebyshev")) return run_chebyshev(cheb_o);
        if (app.got_subcommand("bench")) return run_bench(bench_o);
    } catch (UsageError const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (IoError const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (zipml::ParseError const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (CorruptFileError const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (ArgumentError const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (DomainError const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (std::exception const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
