#pragma once

// Variance-optimal placement of quantization levels.
//
// Given points x_1..x_N in [0, 1], choose a partition of [0, 1] into k
// intervals minimizing sum over points of (b - x)(x - a), the variance of
// stochastically rounding x to the endpoints of its interval [a, b].
//
// All solvers share one dynamic program over a sorted candidate set of
// endpoints; they differ only in which candidates they offer it:
//   exact        every distinct data point (optimal endpoints lie on data)
//   discretized  M-1 quantiles (or equi-width cuts) of the data
//   combined     endpoints produced by the greedy merge (adaquant_greedy)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "zipml/error.hpp"
#include "zipml/quant.hpp"

namespace zipml::optq {

/// Sorted multiset of points in [0, 1]. Duplicates are kept and act as weights.
class PointSet {
  public:
    PointSet() = default;
    explicit PointSet(std::vector<double> xs) : xs_(std::move(xs)) {
        for (double x : xs_)
            if (!(x >= 0.0 && x <= 1.0)) throw DomainError("points must lie in [0, 1]");
        std::sort(xs_.begin(), xs_.end());
        prefix_.resize(xs_.size() + 1);
        for (std::size_t i = 0; i < xs_.size(); ++i) {
            prefix_[i + 1].s1 = prefix_[i].s1 + xs_[i];
            prefix_[i + 1].s2 = prefix_[i].s2 + xs_[i] * xs_[i];
        }
    }

    std::span<double const> xs() const noexcept { return xs_; }
    std::size_t size() const noexcept { return xs_.size(); }
    bool empty() const noexcept { return xs_.empty(); }

    /// Sorted distinct values.
    std::vector<double> distinct() const {
        std::vector<double> u(xs_);
        u.erase(std::unique(u.begin(), u.end()), u.end());
        return u;
    }

    /// Number of points strictly below c.
    std::size_t rank(double c) const noexcept {
        return static_cast<std::size_t>(std::lower_bound(xs_.begin(), xs_.end(), c) - xs_.begin());
    }

    /// err(Omega, [a, b]) from prefix sums; points outside [a, b] are ignored.
    /// Points sitting exactly on a or b contribute zero either way.
    double err(double a, double b) const noexcept { return err_ranked(a, b, rank(a), rank(b)); }

    double err_ranked(double a, double b, std::size_t lo, std::size_t hi) const noexcept {
        if (hi <= lo) return 0.0;
        double const n = static_cast<double>(hi - lo);
        double const s1 = prefix_[hi].s1 - prefix_[lo].s1;
        double const s2 = prefix_[hi].s2 - prefix_[lo].s2;
        return std::max(0.0, -s2 + (a + b) * s1 - a * b * n);
    }

  private:
    struct Sums {
        double s1 = 0.0;
        double s2 = 0.0;
    };
    std::vector<double> xs_;
    std::vector<Sums> prefix_;
};

struct Partition {
    std::vector<double> boundaries; ///< strictly increasing, first 0, last 1
    double total_err = 0.0;
    double mv = 0.0; ///< total_err / N

    std::size_t intervals() const noexcept { return boundaries.empty() ? 0 : boundaries.size() - 1; }
};

/// Sum of (b - x)(x - a) over the given points, each required to lie in [a, b].
inline double interval_err(std::span<double const> points, double a, double b) {
    if (!(a <= b)) throw DomainError("interval endpoints out of order");
    double e = 0.0;
    for (double x : points) {
        if (x < a || x > b) throw DomainError("point outside interval");
        e += (b - x) * (x - a);
    }
    return e;
}

/// Direct recomputation of a partition's error: each point is charged to the
/// interval containing it, with no prefix sums involved.
inline double partition_err(PointSet const& omega, std::span<double const> boundaries) {
    if (boundaries.size() < 2 || boundaries.front() != 0.0 || boundaries.back() != 1.0)
        throw ArgumentError("boundaries must start at 0 and end at 1");
    double e = 0.0;
    for (double x : omega.xs()) {
        auto it = std::upper_bound(boundaries.begin(), boundaries.end(), x);
        std::size_t j = std::min<std::size_t>(static_cast<std::size_t>(it - boundaries.begin()), boundaries.size() - 1);
        if (j == 0) j = 1;
        e += (boundaries[j] - x) * (x - boundaries[j - 1]);
    }
    return e;
}

inline Partition make_partition(PointSet const& omega, std::vector<double> boundaries) {
    Partition p;
    p.total_err = 0.0;
    for (std::size_t i = 1; i < boundaries.size(); ++i) p.total_err += omega.err(boundaries[i - 1], boundaries[i]);
    p.mv = omega.empty() ? 0.0 : p.total_err / static_cast<double>(omega.size());
    p.boundaries = std::move(boundaries);
    return p;
}

/// Cost table T(kappa, m) = minimal error covering [c_0, c_m] with kappa
/// intervals whose endpoints are candidates. Kept public so the optimal
/// substructure can be inspected.
struct DpTable {
    std::vector<double> candidates;
    std::vector<std::vector<double>> cost;       ///< cost[kappa-1][m]
    std::vector<std::vector<std::size_t>> arg;   ///< chosen predecessor j
};

namespace detail {

inline std::vector<double> with_endpoints(std::vector<double> c) {
    c.push_back(0.0);
    c.push_back(1.0);
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    return c;
}

inline bool strictly_better(double candidate, double best) noexcept {
    if (!std::isfinite(best)) return candidate < best;
    return candidate < best - 1e-12 * (1.0 + std::abs(best));
}

} // namespace detail

/// Runs the interval DP over `candidates` (0 and 1 are added if missing).
inline DpTable dp_table(PointSet const& omega, std::vector<double> candidates, std::size_t k) {
    if (k == 0) throw ArgumentError("k must be >= 1");
    DpTable t;
    t.candidates = detail::with_endpoints(std::move(candidates));
    auto const& c = t.candidates;
    std::size_t const C = c.size();
    std::size_t const K = std::min(k, C - 1);
    std::vector<std::size_t> rk(C);
    for (std::size_t m = 0; m < C; ++m) rk[m] = omega.rank(c[m]);
    // points equal to 1 fall past every rank; they contribute zero anyway
    auto V = [&](std::size_t j, std::size_t m) { return omega.err_ranked(c[j], c[m], rk[j], rk[m]); };

    double const inf = std::numeric_limits<double>::infinity();
    t.cost.assign(K, std::vector<double>(C, inf));
    t.arg.assign(K, std::vector<std::size_t>(C, 0));
    for (std::size_t m = 1; m < C; ++m) t.cost[0][m] = V(0, m);
    for (std::size_t kap = 1; kap < K; ++kap) {
        for (std::size_t m = kap + 1; m < C; ++m) {
            double best = inf;
            std::size_t bj = kap;
            for (std::size_t j = kap; j < m; ++j) {
                double const v = t.cost[kap - 1][j] + V(j, m);
                if (detail::strictly_better(v, best)) {
                    best = v;
                    bj = j;
                }
            }
            t.cost[kap][m] = best;
            t.arg[kap][m] = bj;
        }
    }
    return t;
}

/// Best partition into at most k intervals with endpoints among `candidates`.
/// Uses exactly min(k, #candidates - 1) intervals.
inline Partition dp_over_candidates(PointSet const& omega, std::vector<double> candidates, std::size_t k) {
    DpTable const t = dp_table(omega, std::move(candidates), k);
    std::size_t const K = t.cost.size();
    std::size_t m = t.candidates.size() - 1;
    std::vector<double> b{t.candidates[m]};
    for (std::size_t kap = K; kap > 1; --kap) {
        m = t.arg[kap - 1][m];
        b.push_back(t.candidates[m]);
    }
    b.push_back(0.0);
    std::reverse(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    return make_partition(omega, std::move(b));
}

/// Exact optimum over all k-interval partitions. O(k N^2) in the number of
/// distinct points; ties resolve to the leftmost split.
inline Partition optimal_partition_dp(PointSet const& omega, std::size_t k) {
    if (k == 0) throw ArgumentError("k must be >= 1");
    if (omega.empty()) throw ArgumentError("point set is empty");
    return dp_over_candidates(omega, omega.distinct(), k);
}

enum class CandidateGrid { EquiMass, EquiWidth };

/// M-1 interior cut points: data quantiles (EquiMass) or i/M (EquiWidth).
inline std::vector<double> candidate_grid(PointSet const& omega, std::size_t M, CandidateGrid grid) {
    std::vector<double> c;
    if (M < 1) return c;
    auto const xs = omega.xs();
    for (std::size_t i = 1; i < M; ++i) {
        double d = grid == CandidateGrid::EquiWidth ? double(i) / double(M)
                                                    : xs[std::min(xs.size() - 1, i * xs.size() / M)];
        if (d > 0.0 && d < 1.0) c.push_back(d);
    }
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    return c;
}

/// DP restricted to a grid of M candidate cells. O(k M^2 + N log N).
inline Partition optimal_partition_discretized(PointSet const& omega, std::size_t k, std::size_t M,
                                               CandidateGrid grid = CandidateGrid::EquiMass) {
    if (k == 0) throw ArgumentError("k must be >= 1");
    if (M < k) throw ArgumentError("candidate grid size M must be >= k");
    if (omega.empty()) throw ArgumentError("point set is empty");
    return dp_over_candidates(omega, candidate_grid(omega, M, grid), k);
}

/// Greedy pairwise merging. Starts with a breakpoint at every point and
/// repeatedly merges consecutive pairs, except the ceil((1+gamma)k) pairs
/// whose merge would cost the most. Stops once at most 2(1+gamma)k + delta
/// intervals remain. A trailing odd interval stays unmerged for that round.
inline Partition adaquant_greedy(PointSet const& omega, std::size_t k, double gamma = 1.0, double delta = 2.0) {
    if (k == 0) throw ArgumentError("k must be >= 1");
    if (!(gamma > 0.0)) throw ArgumentError("gamma must be positive");
    if (!(delta >= 0.0)) throw ArgumentError("delta must be non-negative");
    std::vector<double> b = detail::with_endpoints(omega.distinct());
    double const limit = 2.0 * (1.0 + gamma) * double(k) + delta;
    auto const keep = static_cast<std::size_t>(std::ceil((1.0 + gamma) * double(k)));

    struct Pair {
        double err;
        std::size_t first; // index into b of the left endpoint
    };
    std::vector<Pair> pairs;
    std::vector<char> split;
    while (double(b.size() - 1) > limit) {
        std::size_t const n = b.size() - 1;
        pairs.clear();
        for (std::size_t i = 0; i + 1 < n; i += 2) pairs.push_back({omega.err(b[i], b[i + 2]), i});
        std::vector<std::size_t> order(pairs.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t l, std::size_t r) { return pairs[l].err > pairs[r].err; });
        split.assign(pairs.size(), 0);
        for (std::size_t q = 0; q < std::min(keep, order.size()); ++q) split[order[q]] = 1;

        std::vector<double> nb{b.front()};
        for (std::size_t q = 0; q < pairs.size(); ++q) {
            std::size_t const i = pairs[q].first;
            if (split[q]) nb.push_back(b[i + 1]);
            nb.push_back(b[i + 2]);
        }
        if (n % 2) nb.push_back(b.back());
        if (nb.size() >= b.size()) break;
        b = std::move(nb);
    }
    return make_partition(omega, std::move(b));
}

/// Greedy merge followed by the DP over its endpoints: exactly
/// min(k, #endpoints - 1) intervals.
inline Partition approx_optimal_partition(PointSet const& omega, std::size_t k, double gamma = 1.0,
                                          double delta = 2.0) {
    if (omega.empty()) throw ArgumentError("point set is empty");
    Partition const g = adaquant_greedy(omega, k, gamma, delta);
    return dp_over_candidates(omega, g.boundaries, k);
}

/// Levels for a partition: boundaries as-is for a [0, 1] domain, or mapped
/// affinely onto [-1, 1] for signed data.
inline QuantScheme partition_to_scheme(Partition const& p, bool is_signed = false,
                                       Scaling scaling = Scaling::Column) {
    if (p.boundaries.size() < 2) throw ArgumentError("partition has no intervals");
    std::vector<double> lv(p.boundaries);
    if (is_signed)
        for (double& x : lv) x = 2.0 * x - 1.0;
    lv.front() = is_signed ? -1.0 : 0.0;
    lv.back() = 1.0;
    return QuantScheme(std::move(lv), scaling);
}

/// Maps raw feature values into the [0, 1] solver domain using the same
/// normalization the quantizer applies (v / scale, then affine for signed grids).
inline PointSet feature_points(std::span<double const> values, double scale, bool is_signed) {
    std::vector<double> t;
    t.reserve(values.size());
    for (double v : values) {
        double x = v / scale;
        if (is_signed) x = (x + 1.0) / 2.0;
        t.push_back(std::clamp(x, 0.0, 1.0));
    }
    return PointSet(std::move(t));
}

// ---------------------------------------------------------------------------
// Text format: one boundary per line. Several partitions may share a file,
// separated by blank lines; '#' starts a comment.

inline void write_partitions(std::ostream& os, std::span<Partition const> parts) {
    os << std::setprecision(17);
    for (std::size_t f = 0; f < parts.size(); ++f) {
        if (f) os << '\n';
        os << "# partition " << f << " intervals=" << parts[f].intervals() << " mv=" << parts[f].mv << '\n';
        for (double x : parts[f].boundaries) os << x << '\n';
    }
}

inline std::vector<std::vector<double>> read_partitions(std::istream& is) {
    std::vector<std::vector<double>> out;
    std::vector<double> cur;
    std::string line;
    std::size_t lineno = 0;
    auto finish = [&] {
        if (cur.empty()) return;
        if (cur.size() < 2 || cur.front() != 0.0 || cur.back() != 1.0)
            throw ParseError("partition must start at 0 and end at 1", lineno);
        for (std::size_t i = 1; i < cur.size(); ++i)
            if (!(cur[i] > cur[i - 1])) throw ParseError("boundaries must be strictly increasing", lineno);
        out.push_back(std::move(cur));
        cur.clear();
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) {
            if (line.find_first_not_of(" \t\r") == h) continue;
            line.resize(h);
        }
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            finish();
            continue;
        }
        std::istringstream ls(line);
        double x;
        if (!(ls >> x)) throw ParseError("expected a number", lineno, 1);
        std::string rest;
        if (ls >> rest) throw ParseError("trailing characters", lineno);
        cur.push_back(x);
    }
    finish();
    if (out.empty()) throw ParseError("no partition found", lineno);
    return out;
}

} // namespace zipml::optq
