#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "rpnet/geometry.hpp"
#include "rpnet/gradcheck.hpp"
#include "rpnet/rng.hpp"

using namespace rpnet;

namespace {

// Independent reference implementations, deliberately structured differently
// from the library: double loops and full sorts.

Tensor oracle_pairwise(const Tensor& a, const Tensor& b) {
    Tensor out({a.extent(0), b.extent(0)});
    for (std::size_t i = 0; i < a.extent(0); ++i)
        for (std::size_t j = 0; j < b.extent(0); ++j) {
            double acc = 0.0;
            for (std::size_t d = 0; d < 3; ++d) {
                const double diff = a.at(i, d) - b.at(j, d);
                acc += diff * diff;
            }
            out.at(i, j) = acc;
        }
    return out;
}

std::vector<std::size_t> oracle_fps(const Tensor& pts, std::size_t m, std::size_t seed) {
    std::vector<std::size_t> picked{seed};
    const std::size_t n = pts.extent(0);
    while (picked.size() < m) {
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            double nearest = 1e300;
            for (std::size_t p : picked) {
                double d = 0.0;
                for (std::size_t c = 0; c < 3; ++c) {
                    const double diff = pts.at(i, c) - pts.at(p, c);
                    d += diff * diff;
                }
                nearest = std::min(nearest, d);
            }
            if (nearest > best_d) {
                best_d = nearest;
                best = i;
            }
        }
        picked.push_back(best);
    }
    return picked;
}

IndexArray oracle_knn(const Tensor& query, const Tensor& source, std::size_t k) {
    const std::size_t m = query.extent(0), n = source.extent(0);
    IndexArray out({m, k}, std::vector<std::size_t>(m * k));
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < n; ++j) {
            double d = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double diff = query.at(i, c) - source.at(j, c);
                d += diff * diff;
            }
            all.emplace_back(d, j);
        }
        std::sort(all.begin(), all.end());
        for (std::size_t j = 0; j < k; ++j) out.at(i, j) = all[j].second;
    }
    return out;
}

IndexArray oracle_ball(const Tensor& query, const Tensor& source, double radius, std::size_t g) {
    const std::size_t m = query.extent(0), n = source.extent(0);
    IndexArray out({m, g}, std::vector<std::size_t>(m * g));
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<std::size_t> hits;
        for (std::size_t j = 0; j < n && hits.size() < g; ++j) {
            double d = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double diff = query.at(i, c) - source.at(j, c);
                d += diff * diff;
            }
            if (d <= radius * radius) hits.push_back(j);
        }
        if (hits.empty()) {
            double best = 1e300;
            std::size_t nearest = 0;
            for (std::size_t j = 0; j < n; ++j) {
                double d = 0.0;
                for (std::size_t c = 0; c < 3; ++c) {
                    const double diff = query.at(i, c) - source.at(j, c);
                    d += diff * diff;
                }
                if (d < best) {
                    best = d;
                    nearest = j;
                }
            }
            hits.push_back(nearest);
        }
        for (std::size_t j = 0; j < g; ++j) out.at(i, j) = j < hits.size() ? hits[j] : hits[0];
    }
    return out;
}

Tensor collinear_points() {
    Tensor pts({5, 3});
    const double xs[5] = {0, 1, 2, 3, 10};
    for (std::size_t i = 0; i < 5; ++i) pts.at(i, 0) = xs[i];
    return pts;
}

}  // namespace

TEST(PairwiseSqDist, ZeroDiagonalOnSelf) {
    Rng rng(1);
    Tensor pts = random_tensor(rng, {6, 3});
    Tensor d = pairwise_sq_dist(pts, pts);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(d.at(i, i), 0.0);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(d.at(i, j), d.at(j, i));
}

TEST(PairwiseSqDist, UnitDisplacement) {
    Tensor a({1, 3}), b({1, 3});
    b.at(0, 0) = 1.0;
    EXPECT_EQ(pairwise_sq_dist(a, b).at(0, 0), 1.0);
}

TEST(PairwiseSqDist, MatchesDoubleLoopOracle) {
    Rng rng(2);
    Tensor a = random_tensor(rng, {4, 3});
    Tensor b = random_tensor(rng, {4, 3});
    EXPECT_LT(max_abs_diff(pairwise_sq_dist(a, b), oracle_pairwise(a, b)), 1e-12);
}

TEST(Fps, SinglePointIsSeed) {
    Rng rng(3);
    Tensor pts = random_tensor(rng, {10, 3});
    EXPECT_EQ(farthest_point_sample(pts, 1, 4), (std::vector<std::size_t>{4}));
}

TEST(Fps, FullSampleIsPermutation) {
    Rng rng(4);
    Tensor pts = random_tensor(rng, {12, 3});
    auto got = farthest_point_sample(pts, 12, 0);
    std::set<std::size_t> unique(got.begin(), got.end());
    EXPECT_EQ(unique.size(), 12u);
}

TEST(Fps, CollinearHandInstance) {
    // x = {0,1,2,3,10}, seed 0: farthest from 0 is x=10 (index 4); then the
    // point maximizing min distance to {0,10} is x=3 (index 3).
    auto got = farthest_point_sample(collinear_points(), 3, 0);
    EXPECT_EQ(got, (std::vector<std::size_t>{0, 4, 3}));
    EXPECT_EQ(oracle_fps(collinear_points(), 3, 0), got);
}

TEST(Fps, CountErrorWhenOversampling) {
    Tensor pts({3, 3});
    EXPECT_THROW(farthest_point_sample(pts, 4, 0), CountError);
}

TEST(Fps, DeterministicAndDuplicateFree) {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor pts = random_tensor(rng, {20, 3});
        auto a = farthest_point_sample(pts, 13, 2);
        auto b = farthest_point_sample(pts, 13, 2);
        EXPECT_EQ(a, b);
        std::set<std::size_t> unique(a.begin(), a.end());
        EXPECT_EQ(unique.size(), a.size());
    }
}

TEST(Knn, CoincidentQueryFindsItselfFirst) {
    Rng rng(6);
    Tensor source = random_tensor(rng, {9, 3});
    Tensor query({1, 3});
    for (std::size_t d = 0; d < 3; ++d) query.at(0, d) = source.at(5, d);
    IndexArray idx = knn(query, source, 3);
    EXPECT_EQ(idx.at(0, 0), 5u);
}

TEST(Knn, FullNeighborhoodSortedByDistance) {
    Rng rng(7);
    Tensor source = random_tensor(rng, {8, 3});
    Tensor query = random_tensor(rng, {1, 3});
    IndexArray idx = knn(query, source, 8);
    Tensor d = pairwise_sq_dist(query, source);
    for (std::size_t j = 1; j < 8; ++j)
        EXPECT_LE(d.at(0, idx.at(0, j - 1)), d.at(0, idx.at(0, j)));
}

TEST(Knn, HandInstanceMatchesSortOracle) {
    Tensor source = collinear_points();
    Tensor query({2, 3});
    query.at(0, 0) = 2.4;
    query.at(1, 0) = 9.0;
    IndexArray got = knn(query, source, 3);
    IndexArray want = oracle_knn(query, source, 3);
    EXPECT_EQ(got.data, want.data);
}

TEST(Knn, CountError) {
    Tensor pts({4, 3});
    EXPECT_THROW(knn(pts, pts, 5), CountError);
}

TEST(Knn, RigidTransformInvariantIndices) {
    Rng rng(8);
    Tensor source = random_tensor(rng, {16, 3});
    Tensor query = random_tensor(rng, {5, 3});
    IndexArray base = knn(query, source, 4);

    const double c = std::cos(0.3), s = std::sin(0.3);
    auto transform = [&](const Tensor& pts) {
        Tensor out = pts;
        for (std::size_t i = 0; i < pts.extent(0); ++i) {
            const double x = pts.at(i, 0), z = pts.at(i, 2);
            out.at(i, 0) = x * c + z * s + 0.7;
            out.at(i, 1) = pts.at(i, 1) - 0.2;
            out.at(i, 2) = -x * s + z * c + 1.1;
        }
        return out;
    };
    IndexArray moved = knn(transform(query), transform(source), 4);
    EXPECT_EQ(base.data, moved.data);
}

TEST(BallQuery, TinyRadiusSelfOnly) {
    Rng rng(9);
    Tensor pts = random_tensor(rng, {7, 3});
    IndexArray idx = ball_query(pts, pts, 1e-9, 4);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(idx.at(i, j), i);
}

TEST(BallQuery, HugeRadiusCoversAll) {
    Rng rng(10);
    Tensor pts = random_tensor(rng, {5, 3});
    IndexArray idx = ball_query(pts, pts, 100.0, 5);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(idx.at(i, j), j);  // index order
}

TEST(BallQuery, HandInstanceMatchesFilterPadOracle) {
    Tensor source({6, 3});
    const double xs[6] = {0.0, 0.1, 0.2, 1.0, 1.1, 5.0};
    for (std::size_t i = 0; i < 6; ++i) source.at(i, 0) = xs[i];
    Tensor query({2, 3});
    query.at(0, 0) = 0.05;
    query.at(1, 0) = 3.0;  // nothing within radius: pads with the nearest point
    IndexArray got = ball_query(query, source, 0.25, 4);
    IndexArray want = oracle_ball(query, source, 0.25, 4);
    EXPECT_EQ(got.data, want.data);
    EXPECT_EQ(got.at(1, 0), 4u);  // |3.0 - 1.1| < |5.0 - 3.0|
}

TEST(BallQuery, EmptySourceRejected) {
    Tensor query({1, 3});
    EXPECT_THROW(ball_query(query, query, 0.0, 2), ConfigError);  // bad radius
}

TEST(BallQuery, RadiusBoundHolds) {
    Rng rng(11);
    Tensor source = random_tensor(rng, {32, 3});
    Tensor query = random_tensor(rng, {8, 3});
    const double radius = 0.6;
    IndexArray idx = ball_query(query, source, radius, 6);
    Tensor d = pairwise_sq_dist(query, source);
    for (std::size_t i = 0; i < 8; ++i) {
        const double first = d.at(i, idx.at(i, 0));
        if (first > radius * radius) continue;  // no hits: row padded with the nearest point
        for (std::size_t j = 0; j < 6; ++j) EXPECT_LE(d.at(i, idx.at(i, j)), radius * radius);
    }
}

TEST(SampleAndGroup, DegenerateIdentityGrouping) {
    Rng rng(12);
    PointCloud cloud;
    cloud.coords = random_tensor(rng, {10, 3});
    GroupScale scale;
    scale.kind = GroupScale::Kind::knn;
    scale.k = 1;
    Grouped g = sample_and_group(cloud, 10, scale);
    for (std::size_t i = 0; i < 10; ++i)
        EXPECT_EQ(g.index.neighbor_idx.at(i, 0), g.index.centroid_idx[i]);
}

TEST(SampleAndGroup, SelfInclusionAtSlotZero) {
    Rng rng(13);
    PointCloud cloud;
    cloud.coords = random_tensor(rng, {24, 3});
    cloud.feats = random_tensor(rng, {24, 5});
    GroupScale scale;
    scale.k = 6;
    Grouped g = sample_and_group(cloud, 8, scale);
    for (std::size_t i = 0; i < 8; ++i) {
        EXPECT_EQ(g.index.neighbor_idx.at(i, 0), g.index.centroid_idx[i]);
        for (std::size_t d = 0; d < 3; ++d)
            EXPECT_EQ(g.grouped_coords.at(i, 0, d), cloud.coords.at(g.index.centroid_idx[i], d));
    }
    EXPECT_EQ(g.grouped_feats.shape(), (Shape{8, 6, 5}));
}

TEST(SampleAndGroup, MatchesOracleComposition) {
    Rng rng(14);
    PointCloud cloud;
    cloud.coords = random_tensor(rng, {8, 3});
    GroupScale scale;
    scale.k = 3;
    Grouped g = sample_and_group(cloud, 4, scale);

    auto fps = oracle_fps(cloud.coords, 4, 0);
    EXPECT_EQ(g.index.centroid_idx, fps);
    Tensor centroids = gather_rows(cloud.coords, IndexArray({4}, fps)).reshaped({4, 3});
    IndexArray nbr = oracle_knn(centroids, cloud.coords, 3);
    enforce_self_first(nbr, fps);
    EXPECT_EQ(g.index.neighbor_idx.data, nbr.data);
}

TEST(SampleAndGroup, ShuffledCloudYieldsSameGroupsAsSets) {
    Rng rng(15);
    PointCloud cloud;
    cloud.coords = random_tensor(rng, {12, 3});
    GroupScale scale;
    scale.k = 4;
    Grouped base = sample_and_group(cloud, 12, scale, 0);

    std::vector<std::size_t> perm(12);
    for (std::size_t i = 0; i < 12; ++i) perm[i] = i;
    rng.shuffle(perm);
    PointCloud shuffled;
    shuffled.coords = gather_rows(cloud.coords, IndexArray({12}, perm)).reshaped({12, 3});
    std::size_t seed_pos = 0;  // position of original index 0 after the shuffle
    for (std::size_t i = 0; i < 12; ++i)
        if (perm[i] == 0) seed_pos = i;
    Grouped moved = sample_and_group(shuffled, 12, scale, seed_pos);

    for (std::size_t i = 0; i < 12; ++i) {
        std::multiset<std::size_t> a, b;
        for (std::size_t j = 0; j < 4; ++j) {
            a.insert(base.index.neighbor_idx.at(i, j));
            b.insert(perm[moved.index.neighbor_idx.at(i, j)]);  // map back to original ids
        }
        EXPECT_EQ(a, b) << "group " << i;
    }
}

// Fast randomized version of the acceptance oracle sweep.
TEST(GeometryOracles, RandomizedAgreement) {
    Rng rng(16);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 4 + rng.uniform_index(28);
        Tensor pts = random_tensor(rng, {n, 3});
        const std::size_t m = 1 + rng.uniform_index(n);
        EXPECT_EQ(farthest_point_sample(pts, m, 0), oracle_fps(pts, m, 0));
        const std::size_t k = 1 + rng.uniform_index(n);
        Tensor query = random_tensor(rng, {3, 3});
        EXPECT_EQ(knn(query, pts, k).data, oracle_knn(query, pts, k).data);
        const double radius = 0.2 + rng.uniform(0.0, 1.0);
        EXPECT_EQ(ball_query(query, pts, radius, 4).data, oracle_ball(query, pts, radius, 4).data);
    }
}
