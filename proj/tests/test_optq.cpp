#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "zipml/optq.hpp"

using namespace zipml;
using namespace zipml::optq;

namespace {

// Exhaustive search over every subset of at most k-1 interior data points.
double brute_force_opt(PointSet const& omega, std::size_t k) {
    std::vector<double> interior;
    for (double x : omega.distinct())
        if (x > 0.0 && x < 1.0) interior.push_back(x);
    double best = std::numeric_limits<double>::infinity();
    std::size_t const m = interior.size();
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
        if (std::size_t(std::popcount(mask)) + 1 > k) continue;
        std::vector<double> b{0.0};
        for (std::size_t i = 0; i < m; ++i)
            if (mask >> i & 1) b.push_back(interior[i]);
        b.push_back(1.0);
        best = std::min(best, partition_err(omega, b));
    }
    return best;
}

PointSet random_points(Stream& r, std::size_t n, bool with_ties = false) {
    std::vector<double> xs(n);
    for (double& x : xs) x = with_ties ? std::floor(r.uniform() * 8.0) / 8.0 : r.uniform();
    return PointSet(std::move(xs));
}

} // namespace

TEST(IntervalErr, Examples) {
    std::vector<double> mid{0.5};
    EXPECT_DOUBLE_EQ(interval_err(mid, 0.0, 1.0), 0.25);
    std::vector<double> end{0.3};
    EXPECT_DOUBLE_EQ(interval_err(end, 0.3, 0.9), 0.0);
    std::vector<double> two{0.2, 0.8};
    EXPECT_NEAR(interval_err(two, 0.0, 1.0), 0.32, 1e-15);
    EXPECT_THROW(interval_err(two, 0.3, 1.0), DomainError);
}

TEST(PointSet, RejectsOutOfRange) {
    EXPECT_THROW(PointSet(std::vector<double>{0.5, 1.2}), DomainError);
    EXPECT_THROW(PointSet(std::vector<double>{-0.1}), DomainError);
}

TEST(PointSet, PrefixErrMatchesDirect) {
    Stream r(1);
    auto om = random_points(r, 300, true);
    for (int t = 0; t < 100; ++t) {
        double a = r.uniform(), b = r.uniform();
        if (a > b) std::swap(a, b);
        std::vector<double> in;
        for (double x : om.xs())
            if (x >= a && x <= b) in.push_back(x);
        EXPECT_NEAR(om.err(a, b), interval_err(in, a, b), 1e-10);
    }
}

TEST(ExactDp, AllPointsAreEndpoints) {
    PointSet om(std::vector<double>{0.0, 0.5, 1.0});
    auto p = optimal_partition_dp(om, 2);
    EXPECT_EQ(p.boundaries, (std::vector<double>{0.0, 0.5, 1.0}));
    EXPECT_EQ(p.total_err, 0.0);
}

TEST(ExactDp, TieBreaksLeft) {
    PointSet om(std::vector<double>{0.0, 0.1, 0.9, 1.0});
    auto p = optimal_partition_dp(om, 2);
    EXPECT_NEAR(p.total_err, 0.08, 1e-12);
    EXPECT_NEAR(p.mv, 0.02, 1e-12);
    EXPECT_EQ(p.boundaries, (std::vector<double>{0.0, 0.1, 1.0}));
}

TEST(ExactDp, ArgumentsAndDegenerateCases) {
    PointSet om(std::vector<double>{0.2, 0.4});
    EXPECT_THROW(optimal_partition_dp(om, 0), ArgumentError);
    auto p = optimal_partition_dp(om, 10);
    EXPECT_EQ(p.total_err, 0.0);
    EXPECT_EQ(p.boundaries, (std::vector<double>{0.0, 0.2, 0.4, 1.0}));
    EXPECT_THROW(optimal_partition_dp(PointSet{}, 2), ArgumentError);
}

TEST(ExactDp, MatchesBruteForce) {
    Stream r(2);
    for (int t = 0; t < 300; ++t) {
        std::size_t const n = 1 + r.below(12);
        std::size_t const k = 1 + r.below(4);
        auto om = random_points(r, n, t % 3 == 0);
        auto p = optimal_partition_dp(om, k);
        double const bf = brute_force_opt(om, k);
        ASSERT_NEAR(p.total_err, bf, 1e-12) << "n=" << n << " k=" << k;
        EXPECT_NEAR(p.total_err, partition_err(om, p.boundaries), 1e-12);
    }
}

TEST(ExactDp, EndpointsAtDataAndMonotoneInK) {
    Stream r(3);
    for (int t = 0; t < 50; ++t) {
        auto om = random_points(r, 40);
        auto d = om.distinct();
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t k = 1; k <= 8; ++k) {
            auto p = optimal_partition_dp(om, k);
            for (std::size_t i = 1; i + 1 < p.boundaries.size(); ++i)
                EXPECT_TRUE(std::binary_search(d.begin(), d.end(), p.boundaries[i]));
            EXPECT_LE(p.total_err, prev + 1e-12);
            prev = p.total_err;
        }
    }
}

TEST(ExactDp, OptimalSubstructure) {
    Stream r(4);
    for (int t = 0; t < 20; ++t) {
        auto om = random_points(r, 10);
        auto tab = dp_table(om, om.distinct(), 4);
        auto const& c = tab.candidates;
        for (std::size_t kap = 1; kap < tab.cost.size(); ++kap)
            for (std::size_t m = kap + 1; m < c.size(); ++m) {
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t j = kap; j < m; ++j) best = std::min(best, tab.cost[kap - 1][j] + om.err(c[j], c[m]));
                EXPECT_NEAR(tab.cost[kap][m], best, 1e-12);
            }
    }
}

TEST(Subset, ShrinkingIntervalNeverHurts) {
    Stream r(5);
    auto om = random_points(r, 500);
    for (int t = 0; t < 200; ++t) {
        double a = r.uniform() * 0.5, b = 0.5 + r.uniform() * 0.5;
        double a2 = a + (0.5 - a) * r.uniform(), b2 = b - (b - 0.5) * r.uniform();
        std::vector<double> in;
        for (double x : om.xs())
            if (x >= a2 && x <= b2) in.push_back(x);
        EXPECT_LE(interval_err(in, a2, b2), interval_err(in, a, b) + 1e-12);
    }
}

TEST(Discretized, FullCandidateSetIsExact) {
    Stream r(6);
    auto om = random_points(r, 60);
    for (std::size_t k : {1u, 3u, 7u}) {
        auto exact = optimal_partition_dp(om, k);
        auto disc = dp_over_candidates(om, om.distinct(), k);
        EXPECT_EQ(exact.boundaries, disc.boundaries);
        auto q = optimal_partition_discretized(om, k, om.size());
        EXPECT_GE(q.total_err, exact.total_err - 1e-12);
    }
}

TEST(Discretized, TrendAndBounds) {
    Stream r(7);
    auto om = random_points(r, 10000);
    auto exact = optimal_partition_dp(om, 7);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t M : {16u, 32u, 64u, 256u, 1024u}) {
        for (auto g : {CandidateGrid::EquiMass, CandidateGrid::EquiWidth}) {
            auto p = optimal_partition_discretized(om, 7, M, g);
            EXPECT_GE(p.total_err, exact.total_err - 1e-9);
            EXPECT_LE(p.intervals(), 7u);
            auto cand = candidate_grid(om, M, g);
            for (std::size_t i = 1; i + 1 < p.boundaries.size(); ++i)
                EXPECT_TRUE(std::binary_search(cand.begin(), cand.end(), p.boundaries[i]));
        }
        auto p = optimal_partition_discretized(om, 7, M, CandidateGrid::EquiWidth);
        // nested equi-width grids: each refinement contains the previous one
        EXPECT_LE(p.mv, prev + 1e-15);
        prev = p.mv;
    }
    EXPECT_LE(optimal_partition_discretized(om, 7, 256).mv, optimal_partition_discretized(om, 7, 32).mv);
    EXPECT_THROW(optimal_partition_discretized(om, 8, 4), ArgumentError);
    EXPECT_EQ(optimal_partition_discretized(om, 1, 64).boundaries, (std::vector<double>{0.0, 1.0}));
}

TEST(Greedy, SmallInputUnchanged) {
    PointSet om(std::vector<double>{0.1, 0.3, 0.6});
    auto p = adaquant_greedy(om, 2);
    EXPECT_EQ(p.boundaries, (std::vector<double>{0.0, 0.1, 0.3, 0.6, 1.0}));
}

TEST(Greedy, IntervalCountAndRatio) {
    Stream r(8);
    for (int t = 0; t < 100; ++t) {
        std::size_t const n = 20 + r.below(480);
        std::size_t const k = 1 + r.below(8);
        auto om = random_points(r, n, t % 4 == 0);
        auto g = adaquant_greedy(om, k, 1.0, 2.0);
        EXPECT_LE(double(g.intervals()), 4.0 * double(k) + 2.0);
        auto opt = optimal_partition_dp(om, k);
        EXPECT_LE(g.total_err, 2.0 * opt.total_err + 1e-12);
        auto a = approx_optimal_partition(om, k);
        EXPECT_LE(a.intervals(), k);
        EXPECT_LE(a.total_err, 2.0 * opt.total_err + 1e-12);
        EXPECT_GE(a.total_err, opt.total_err - 1e-12);
    }
}

TEST(Greedy, ClustersStaySeparated) {
    Stream r(9);
    std::vector<double> xs;
    for (int i = 0; i < 200; ++i) xs.push_back((i % 2 ? 0.9 : 0.1) + 0.01 * (r.uniform() - 0.5));
    PointSet om(xs);
    auto a = approx_optimal_partition(om, 2);
    ASSERT_EQ(a.intervals(), 2u);
    double lo_max = 0, hi_min = 1;
    for (double x : xs) (x < 0.5 ? lo_max : hi_min) = x < 0.5 ? std::max(lo_max, x) : std::min(hi_min, x);
    EXPECT_GE(a.boundaries[1], lo_max);
    EXPECT_LE(a.boundaries[1], hi_min);
    auto g = adaquant_greedy(om, 2);
    bool separated = false;
    for (double b : g.boundaries) separated |= b >= lo_max && b <= hi_min;
    EXPECT_TRUE(separated);
}

TEST(Greedy, ApproxEqualsExactWhenEndpointsCovered) {
    PointSet om(std::vector<double>{0.05, 0.2, 0.5, 0.7});
    EXPECT_EQ(approx_optimal_partition(om, 3).boundaries, optimal_partition_dp(om, 3).boundaries);
    EXPECT_EQ(approx_optimal_partition(om, 1).boundaries, (std::vector<double>{0.0, 1.0}));
}

TEST(Greedy, ArgumentChecks) {
    PointSet om(std::vector<double>{0.5});
    EXPECT_THROW(adaquant_greedy(om, 2, 0.0), ArgumentError);
    EXPECT_THROW(adaquant_greedy(om, 2, 1.0, -1.0), ArgumentError);
}

TEST(PartitionScheme, Conversion) {
    Partition p{{0.0, 0.5, 1.0}, 0, 0};
    auto s = partition_to_scheme(p);
    EXPECT_EQ(s.size(), 3u);
    EXPECT_EQ(s.bits(), 2u);
    std::vector<double> b;
    for (int i = 0; i <= 15; ++i) b.push_back(i / 15.0);
    auto s15 = partition_to_scheme(Partition{b, 0, 0});
    EXPECT_EQ(s15.size(), 16u);
    EXPECT_EQ(s15.bits(), 4u);
    auto sg = partition_to_scheme(p, true);
    EXPECT_EQ(sg.level(0), -1.0);
    EXPECT_EQ(sg.level(1), 0.0);
}

TEST(PartitionScheme, OptimalGridQuantizesItsTrainingData) {
    Stream r(10);
    std::vector<double> col(300);
    for (double& v : col) v = 3.0 * (2.0 * r.uniform() - 1.0);
    double scale = 0;
    for (double v : col) scale = std::max(scale, std::abs(v));
    auto om = feature_points(col, scale, true);
    auto scheme = partition_to_scheme(optimal_partition_dp(om, 4), true);
    EXPECT_EQ(scheme.size(), 5u);
    auto sc = ScaleVector::constant(col.size(), scale);
    EXPECT_NO_THROW(quantize_stochastic(col, scheme, sc, r));
}

TEST(PartitionText, RoundTripAndErrors) {
    std::vector<Partition> parts{{{0.0, 0.25, 1.0}, 0.1, 0.01}, {{0.0, 1.0}, 0.2, 0.02}};
    std::stringstream ss;
    write_partitions(ss, parts);
    auto back = read_partitions(ss);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0], parts[0].boundaries);
    EXPECT_EQ(back[1], parts[1].boundaries);

    std::istringstream bad1("0\n0.5\n0.4\n1\n");
    EXPECT_THROW(read_partitions(bad1), ParseError);
    std::istringstream bad2("0\nabc\n1\n");
    EXPECT_THROW(read_partitions(bad2), ParseError);
    std::istringstream bad3("");
    EXPECT_THROW(read_partitions(bad3), ParseError);
}
