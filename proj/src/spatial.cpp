#include "rpointhop/spatial.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>

namespace rpointhop {

namespace {

constexpr std::uint32_t kLeafSize = 12;

inline double squared_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    const double dx = a.x() - b.x();
    const double dy = a.y() - b.y();
    const double dz = a.z() - b.z();
    return dx * dx + dy * dy + dz * dz;
}

struct Candidate {
    double d2;
    std::size_t index;
    bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

}  // namespace

KnnIndex::KnnIndex(Points points) : points_(std::move(points)) {
    if (points_.empty()) throw std::invalid_argument("KnnIndex needs at least one point");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(points_.size()));
}

std::int32_t KnnIndex::build(std::uint32_t begin, std::uint32_t end) {
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = node.hi = points_[order_[begin]];
    for (std::uint32_t i = begin + 1; i < end; ++i) {
        node.lo = node.lo.cwiseMin(points_[order_[i]]);
        node.hi = node.hi.cwiseMax(points_[order_[i]]);
    }
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) return id;

    int axis = 0;
    (node.hi - node.lo).maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                         const double va = points_[a](axis), vb = points_[b](axis);
                         return va < vb || (va == vb && a < b);
                     });
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
}

std::vector<Neighbor> KnnIndex::knn(const Eigen::Vector3d& query, std::size_t k) const {
    if (k == 0 || k > points_.size()) {
        throw std::invalid_argument("knn: k=" + std::to_string(k) + " but index holds " +
                                    std::to_string(points_.size()) + " points");
    }
    // Max-heap of the best k so far under (d2, index) ordering.
    std::priority_queue<Candidate> best;
    auto box_distance = [&](const Node& n) {
        const Eigen::Vector3d d = (n.lo - query).cwiseMax(query - n.hi).cwiseMax(0.0);
        return d.squaredNorm();
    };
    std::vector<std::int32_t> stack{0};
    while (!stack.empty()) {
        const Node& n = nodes_[static_cast<std::size_t>(stack.back())];
        stack.pop_back();
        // Equal bounds are not pruned: a tie may still win on index.
        if (best.size() == k && box_distance(n) > best.top().d2) continue;
        if (n.left < 0) {
            for (std::uint32_t i = n.begin; i < n.end; ++i) {
                const Candidate c{squared_distance(points_[order_[i]], query), order_[i]};
                if (best.size() < k) {
                    best.push(c);
                } else if (c < best.top()) {
                    best.pop();
                    best.push(c);
                }
            }
            continue;
        }
        const Node& l = nodes_[static_cast<std::size_t>(n.left)];
        const Node& r = nodes_[static_cast<std::size_t>(n.right)];
        // Visit the nearer child first (pushed last).
        if (box_distance(l) <= box_distance(r)) {
            stack.push_back(n.right);
            stack.push_back(n.left);
        } else {
            stack.push_back(n.left);
            stack.push_back(n.right);
        }
    }
    std::vector<Neighbor> out(best.size());
    for (std::size_t i = out.size(); i-- > 0;) {
        out[i] = {best.top().index, std::sqrt(best.top().d2)};
        best.pop();
    }
    return out;
}

std::vector<std::size_t> KnnIndex::knn_indices(const Eigen::Vector3d& query, std::size_t k) const {
    auto nn = knn(query, k);
    std::vector<std::size_t> out(nn.size());
    for (std::size_t i = 0; i < nn.size(); ++i) out[i] = nn[i].index;
    return out;
}

std::vector<std::size_t> farthest_point_sample(const Points& points, std::size_t m, std::size_t start) {
    const std::size_t n = points.size();
    if (m < 1 || m > n) {
        throw std::invalid_argument("farthest_point_sample: requested " + std::to_string(m) + " of " +
                                    std::to_string(n) + " points");
    }
    if (start >= n) throw std::invalid_argument("farthest_point_sample: start index out of range");
    std::vector<std::size_t> selected{start};
    selected.reserve(m);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    std::vector<char> taken(n, 0);
    taken[start] = 1;
    std::size_t last = start;
    while (selected.size() < m) {
        std::size_t best = n;
        double best_d2 = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            min_d2[i] = std::min(min_d2[i], squared_distance(points[i], points[last]));
            if (!taken[i] && min_d2[i] > best_d2) {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        selected.push_back(best);
        taken[best] = 1;
        last = best;
    }
    return selected;
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m, std::size_t start) {
    return farthest_point_sample(cloud.coords(), m, start);
}

}  // namespace rpointhop
