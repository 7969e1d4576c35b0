#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "rpointhop/spatial.h"
#include "test_util.h"

using namespace rpointhop;

namespace {

// Full sort by (distance, index).
std::vector<std::size_t> brute_knn(const Points& pts, const Eigen::Vector3d& q, std::size_t k) {
    std::vector<std::size_t> idx(pts.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double da = (pts[a] - q).squaredNorm(), db = (pts[b] - q).squaredNorm();
        return da != db ? da < db : a < b;
    });
    idx.resize(k);
    return idx;
}

// Quadratic max-min selection with explicit distance-to-set recomputation.
std::vector<std::size_t> brute_fps(const Points& pts, std::size_t m, std::size_t start) {
    std::vector<std::size_t> sel{start};
    while (sel.size() < m) {
        double best = -1.0;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double d = std::numeric_limits<double>::infinity();
            for (std::size_t s : sel) d = std::min(d, (pts[i] - pts[s]).squaredNorm());
            if (std::find(sel.begin(), sel.end(), i) == sel.end() && d > best) {
                best = d;
                arg = i;
            }
        }
        sel.push_back(arg);
    }
    return sel;
}

Points unit_square() { return {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}}; }

}  // namespace

TEST(Knn, SquareExample) {
    const KnnIndex index(unit_square());
    const auto nn = index.knn(Eigen::Vector3d(0, 0, 0), 3);
    ASSERT_EQ(nn.size(), 3u);
    EXPECT_EQ(nn[0].index, 0u);
    EXPECT_EQ(nn[0].distance, 0.0);
    // (1,0,0) and (0,1,0) tie at distance 1; lower index first.
    EXPECT_EQ(nn[1].index, 1u);
    EXPECT_EQ(nn[2].index, 2u);
    EXPECT_EQ(nn[1].distance, 1.0);
}

TEST(Knn, RejectsBadK) {
    const KnnIndex index(unit_square());
    EXPECT_THROW(index.knn(Eigen::Vector3d::Zero(), 0), std::invalid_argument);
    EXPECT_THROW(index.knn(Eigen::Vector3d::Zero(), 5), std::invalid_argument);
    EXPECT_EQ(index.knn(Eigen::Vector3d::Zero(), 4).size(), 4u);
}

TEST(Knn, MatchesBruteForceOnRandomInstances) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> size(5, 600);
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t n = size(rng);
        const Points pts = rpointhop::testing::random_points(n, rng);
        const KnnIndex index(pts);
        const std::size_t k = 1 + rng() % n;
        const Eigen::Vector3d q = rpointhop::testing::random_points(1, rng)[0];
        EXPECT_EQ(index.knn_indices(q, k), brute_knn(pts, q, k)) << "instance " << inst;
        const std::size_t self = rng() % n;
        const auto nn = index.knn(pts[self], std::min<std::size_t>(k, 8));
        EXPECT_EQ(nn.front().distance, 0.0);
    }
}

TEST(Knn, DuplicatesAndGridTies) {
    Points pts;
    for (int x = 0; x < 6; ++x)
        for (int y = 0; y < 6; ++y)
            for (int z = 0; z < 6; ++z) pts.emplace_back(x, y, z);
    pts.push_back(pts[10]);
    pts.push_back(pts[10]);
    const KnnIndex index(pts);
    for (std::size_t q : {0u, 10u, 43u, 100u, 215u}) {
        for (std::size_t k : {1u, 7u, 27u, 50u}) EXPECT_EQ(index.knn_indices(pts[q], k), brute_knn(pts, pts[q], k));
    }
}

TEST(Knn, DistancesAscending) {
    std::mt19937_64 rng(4);
    const Points pts = rpointhop::testing::random_points(500, rng);
    const KnnIndex index(pts);
    const auto nn = index.knn(Eigen::Vector3d(0.1, 0.2, 0.3), 60);
    for (std::size_t i = 1; i < nn.size(); ++i) EXPECT_LE(nn[i - 1].distance, nn[i].distance);
}

TEST(Fps, SquareExample) {
    // From corner 0, the diagonal corner is farthest; then 1 and 2 tie and 1 wins.
    EXPECT_EQ(farthest_point_sample(unit_square(), 3, 0), (std::vector<std::size_t>{0, 3, 1}));
}

TEST(Fps, MatchesBruteForceOnRandomInstances) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> size(2, 300);
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t n = size(rng);
        const Points pts = rpointhop::testing::random_points(n, rng);
        const std::size_t m = 1 + rng() % n;
        const std::size_t start = rng() % n;
        EXPECT_EQ(farthest_point_sample(pts, m, start), brute_fps(pts, m, start)) << "instance " << inst;
    }
}

TEST(Fps, DistinctAndMaxMinProperty) {
    std::mt19937_64 rng(6);
    const Points pts = rpointhop::testing::random_points(400, rng);
    const auto sel = farthest_point_sample(pts, 100, 0);
    EXPECT_EQ(std::set<std::size_t>(sel.begin(), sel.end()).size(), sel.size());
    // Each pick's distance to earlier picks is non-increasing.
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < sel.size(); ++i) {
        double d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < i; ++j) d = std::min(d, (pts[sel[i]] - pts[sel[j]]).norm());
        EXPECT_LE(d, prev + 1e-15);
        prev = d;
    }
}

TEST(Fps, GridTiesMatchBruteForce) {
    Points pts;
    for (int x = 0; x < 5; ++x)
        for (int y = 0; y < 5; ++y) pts.emplace_back(x, y, 0);
    EXPECT_EQ(farthest_point_sample(pts, 25, 12), brute_fps(pts, 25, 12));
}

TEST(Fps, RejectsBadArguments) {
    EXPECT_THROW(farthest_point_sample(unit_square(), 5, 0), std::invalid_argument);
    EXPECT_THROW(farthest_point_sample(unit_square(), 0, 0), std::invalid_argument);
    EXPECT_THROW(farthest_point_sample(unit_square(), 2, 4), std::invalid_argument);
}
