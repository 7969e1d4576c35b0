#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "rpointhop/cloud.h"

namespace rpointhop {

struct Neighbor {
    std::size_t index;
    double distance;
};

/// Exact k-nearest-neighbor index over a fixed point set (k-d tree).
///
/// Results are ordered by ascending Euclidean distance, ties broken by
/// ascending point index, and match a brute-force scan exactly. The index
/// keeps its own copy of the coordinates; it is immutable after construction
/// and safe to query concurrently.
class KnnIndex {
public:
    explicit KnnIndex(Points points);
    explicit KnnIndex(const PointCloud& cloud) : KnnIndex(cloud.coords()) {}

    std::size_t size() const { return points_.size(); }
    const Points& points() const { return points_; }

    /// Throws std::invalid_argument when k is 0 or exceeds size().
    std::vector<Neighbor> knn(const Eigen::Vector3d& query, std::size_t k) const;

    /// Index-only convenience form of knn().
    std::vector<std::size_t> knn_indices(const Eigen::Vector3d& query, std::size_t k) const;

private:
    struct Node {
        Eigen::Vector3d lo, hi;  // bounding box of the subtree
        std::uint32_t begin, end;
        std::int32_t left = -1, right = -1;
    };

    std::int32_t build(std::uint32_t begin, std::uint32_t end);

    Points points_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

inline KnnIndex build_index(const PointCloud& cloud) { return KnnIndex(cloud); }

/// Greedy max-min subsampling. First pick is `start`; each later pick
/// maximizes the distance to the selected set, ties to the lower index.
std::vector<std::size_t> farthest_point_sample(const Points& points, std::size_t m, std::size_t start = 0);
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m, std::size_t start = 0);

}  // namespace rpointhop
