#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "rpnet/tensor.hpp"

namespace rpnet {

// ---------------------------------------------------------------------------
// Point cloud: N x 3 coordinates plus optional per-point features and labels.
// ---------------------------------------------------------------------------

struct PointCloud {
    Tensor coords;            // [N, 3]
    Tensor feats;             // [N, C] or empty
    std::vector<int> labels;  // per-point class ids or empty

    std::size_t n_points() const { return coords.empty() ? 0 : coords.extent(0); }
    bool has_feats() const { return !feats.empty(); }
    bool has_labels() const { return !labels.empty(); }

    void validate() const {
        if (coords.rank() != 2 || coords.extent(1) != 3 || coords.extent(0) < 1)
            throw ShapeError("point cloud coords must be [N,3] with N >= 1, got " +
                             shape_str(coords.shape()));
        if (!coords.all_finite()) throw ShapeError("point cloud has non-finite coordinates");
        if (has_feats() && feats.extent(0) != n_points())
            throw ShapeError("feature rows do not match point count");
        if (has_labels() && labels.size() != n_points())
            throw ShapeError("label count does not match point count");
    }
};

// Output of sampling + grouping: per centroid, its source index and the
// indices of its G neighbors. Slot 0 of every neighbor row is the centroid.
struct GroupIndex {
    std::vector<std::size_t> centroid_idx;  // [M]
    IndexArray neighbor_idx;                // [M, G]
};

// ---------------------------------------------------------------------------
// Pairwise squared distances: out[i,j] = |a_i - b_j|^2.
// ---------------------------------------------------------------------------

inline Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != 3 || b.extent(1) != 3)
        throw ShapeError("pairwise_sq_dist expects [M,3] and [N,3]");
    const std::size_t m = a.extent(0), n = b.extent(0);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double ax = a.at(i, 0), ay = a.at(i, 1), az = a.at(i, 2);
        for (std::size_t j = 0; j < n; ++j) {
            const double dx = ax - b.at(j, 0);
            const double dy = ay - b.at(j, 1);
            const double dz = az - b.at(j, 2);
            out.at(i, j) = dx * dx + dy * dy + dz * dz;
        }
    }
    return out;
}

inline double sq_dist_rows(const Tensor& pts, std::size_t i, std::size_t j) {
    const double dx = pts.at(i, 0) - pts.at(j, 0);
    const double dy = pts.at(i, 1) - pts.at(j, 1);
    const double dz = pts.at(i, 2) - pts.at(j, 2);
    return dx * dx + dy * dy + dz * dz;
}

// ---------------------------------------------------------------------------
// Farthest point sampling: greedy max-min selection starting at seed_idx.
// Ties break to the lowest index. Deterministic given (points, seed_idx).
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> farthest_point_sample(const Tensor& coords, std::size_t m,
                                                      std::size_t seed_idx = 0) {
    const std::size_t n = coords.extent(0);
    if (m < 1 || m > n)
        throw CountError("farthest_point_sample: requested " + std::to_string(m) + " of " +
                         std::to_string(n) + " points");
    if (seed_idx >= n) throw IndexError("farthest_point_sample: seed index out of range");

    std::vector<std::size_t> picked;
    picked.reserve(m);
    picked.push_back(seed_idx);

    std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
    std::size_t last = seed_idx;
    for (std::size_t round = 1; round < m; ++round) {
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = std::min(min_d[i], sq_dist_rows(coords, i, last));
            min_d[i] = d;
            if (d > best_d) {  // strict: first maximum wins on ties
                best_d = d;
                best = i;
            }
        }
        picked.push_back(best);
        last = best;
    }
    return picked;
}

// ---------------------------------------------------------------------------
// k nearest neighbors, ascending by squared distance, ties to lowest index.
// ---------------------------------------------------------------------------

inline IndexArray knn(const Tensor& query, const Tensor& source, std::size_t k) {
    if (query.rank() != 2 || source.rank() != 2 || query.extent(1) != 3 || source.extent(1) != 3)
        throw ShapeError("knn expects [M,3] query and [N,3] source");
    const std::size_t m = query.extent(0), n = source.extent(0);
    if (k < 1 || k > n)
        throw CountError("knn: k=" + std::to_string(k) + " out of range for " + std::to_string(n) +
                         " source points");

    IndexArray out({m, k}, std::vector<std::size_t>(m * k));
    std::vector<std::pair<double, std::size_t>> cand(n);
    for (std::size_t i = 0; i < m; ++i) {
        const double qx = query.at(i, 0), qy = query.at(i, 1), qz = query.at(i, 2);
        for (std::size_t j = 0; j < n; ++j) {
            const double dx = qx - source.at(j, 0);
            const double dy = qy - source.at(j, 1);
            const double dz = qz - source.at(j, 2);
            cand[j] = {dx * dx + dy * dy + dz * dz, j};
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (std::size_t j = 0; j < k; ++j) out.at(i, j) = cand[j].second;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ball query: up to G indices with distance <= radius, in index order.
// Short rows pad by repeating the first hit; a row with no hits repeats the
// nearest source point, so padded entries always reference a real neighbor.
// ---------------------------------------------------------------------------

inline IndexArray ball_query(const Tensor& query, const Tensor& source, double radius,
                             std::size_t g) {
    if (query.rank() != 2 || source.rank() != 2 || query.extent(1) != 3 || source.extent(1) != 3)
        throw ShapeError("ball_query expects [M,3] query and [N,3] source");
    if (radius <= 0.0) throw ConfigError("ball_query: radius must be positive");
    if (g < 1) throw ConfigError("ball_query: group size must be >= 1");
    const std::size_t m = query.extent(0), n = source.extent(0);
    if (n == 0) throw CountError("ball_query: empty source");

    const double r2 = radius * radius;
    IndexArray out({m, g}, std::vector<std::size_t>(m * g));
    for (std::size_t i = 0; i < m; ++i) {
        const double qx = query.at(i, 0), qy = query.at(i, 1), qz = query.at(i, 2);
        std::size_t found = 0;
        std::size_t nearest = 0;
        double nearest_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n && found < g; ++j) {
            const double dx = qx - source.at(j, 0);
            const double dy = qy - source.at(j, 1);
            const double dz = qz - source.at(j, 2);
            const double d = dx * dx + dy * dy + dz * dz;
            if (d < nearest_d) {
                nearest_d = d;
                nearest = j;
            }
            if (d <= r2) out.at(i, found++) = j;
        }
        if (found == 0) {
            // continue the nearest scan over the remaining points
            for (std::size_t j = 0; j < n; ++j) {
                const double dx = qx - source.at(j, 0);
                const double dy = qy - source.at(j, 1);
                const double dz = qz - source.at(j, 2);
                const double d = dx * dx + dy * dy + dz * dz;
                if (d < nearest_d) {
                    nearest_d = d;
                    nearest = j;
                }
            }
            for (std::size_t j = 0; j < g; ++j) out.at(i, j) = nearest;
        } else {
            for (std::size_t j = found; j < g; ++j) out.at(i, j) = out.at(i, 0);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling + grouping composed: FPS centroids, kNN or ball-query neighbors,
// gathered coordinates and features. Neighbor slot 0 is forced to be the
// centroid itself so one-point groups stay well-defined.
// ---------------------------------------------------------------------------

struct GroupScale {
    enum class Kind { knn, ball };
    Kind kind = Kind::knn;
    std::size_t k = 32;      // knn
    double radius = 0.2;     // ball
    std::size_t g = 32;      // ball group size

    std::size_t group_size() const { return kind == Kind::knn ? k : g; }
};

struct Grouped {
    GroupIndex index;
    Tensor grouped_coords;  // [M, G, 3]
    Tensor grouped_feats;   // [M, G, C] (empty when the cloud has no features)
};

inline void enforce_self_first(IndexArray& neighbors, const std::vector<std::size_t>& centroids) {
    const std::size_t m = neighbors.extent(0), g = neighbors.extent(1);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t self = centroids[i];
        std::size_t pos = g;
        for (std::size_t j = 0; j < g; ++j)
            if (neighbors.at(i, j) == self) {
                pos = j;
                break;
            }
        if (pos == g)
            neighbors.at(i, g - 1) = self, pos = g - 1;  // duplicate points crowded it out
        std::swap(neighbors.at(i, 0), neighbors.at(i, pos));
    }
}

inline Grouped sample_and_group(const PointCloud& cloud, std::size_t m, const GroupScale& scale,
                                std::size_t seed_idx = 0) {
    cloud.validate();
    Grouped out;
    out.index.centroid_idx = farthest_point_sample(cloud.coords, m, seed_idx);

    IndexArray centroid_rows({m}, out.index.centroid_idx);
    Tensor centroid_coords = gather_rows(cloud.coords, centroid_rows);

    if (scale.kind == GroupScale::Kind::knn)
        out.index.neighbor_idx = knn(centroid_coords, cloud.coords, scale.k);
    else
        out.index.neighbor_idx = ball_query(centroid_coords, cloud.coords, scale.radius, scale.g);
    enforce_self_first(out.index.neighbor_idx, out.index.centroid_idx);

    out.grouped_coords = gather_rows(cloud.coords, out.index.neighbor_idx);
    if (cloud.has_feats()) out.grouped_feats = gather_rows(cloud.feats, out.index.neighbor_idx);
    return out;
}

}  // namespace rpnet
