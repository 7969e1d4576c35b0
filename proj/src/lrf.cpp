#include "rpointhop/lrf.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace rpointhop {

LocalPca local_pca(std::span<const Eigen::Vector3d> points) {
    if (points.size() < 3) throw std::invalid_argument("local_pca needs at least 3 points");
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : points) mean += p;
    mean /= static_cast<double>(points.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : points) {
        const Eigen::Vector3d d = p - mean;
        cov.noalias() += d * d.transpose();
    }
    cov /= static_cast<double>(points.size());
    if (!cov.allFinite()) throw std::invalid_argument("local_pca: covariance is not finite");

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
    if (solver.info() != Eigen::Success) throw std::invalid_argument("local_pca: eigensolver failed");
    LocalPca out;
    // Eigen sorts ascending.
    for (int k = 0; k < 3; ++k) {
        out.eigenvalues(k) = solver.eigenvalues()(2 - k);
        out.eigenvectors.row(k) = solver.eigenvectors().col(2 - k).transpose().normalized();
    }
    return out;
}

AxisMoments axis_moments(std::span<const double> values) {
    if (values.empty()) return {0.0, 0.0, 0.0};
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    AxisMoments m{median, 0.0, 0.0};
    for (double v : values) {
        if (v < median) m.left += median - v;
        else if (v > median) m.right += v - median;
    }
    return m;
}

int disambiguate_axis(std::span<const double> values) {
    const AxisMoments m = axis_moments(values);
    return m.left < m.right ? 1 : -1;
}

Lrf compute_lrf(const PointCloud& cloud, std::size_t point_index, std::size_t k_lrf, const KnnIndex& index) {
    if (k_lrf < 3) throw std::invalid_argument("compute_lrf: k_lrf must be at least 3");
    const Eigen::Vector3d& origin = cloud.point(point_index);
    const auto nn = index.knn(origin, k_lrf);
    Points neighborhood;
    neighborhood.reserve(nn.size());
    for (const auto& n : nn) neighborhood.push_back(index.points()[n.index]);
    const LocalPca pca = local_pca(neighborhood);
    return {origin, pca.eigenvectors, pca.eigenvalues};
}

namespace {

std::array<AxisMoments, 3> projected_moments(const Lrf& lrf, std::span<const Eigen::Vector3d> neighbors) {
    std::array<AxisMoments, 3> out;
    std::vector<double> coords(neighbors.size());
    for (int a = 0; a < 3; ++a) {
        for (std::size_t i = 0; i < neighbors.size(); ++i) {
            coords[i] = lrf.axes.row(a).dot(neighbors[i] - lrf.origin);
        }
        out[static_cast<std::size_t>(a)] = axis_moments(coords);
    }
    return out;
}

}  // namespace

SignState resolve_signs(const Lrf& lrf, std::span<const Eigen::Vector3d> neighbors) {
    if (neighbors.empty()) throw std::invalid_argument("resolve_signs: empty neighborhood");
    const auto moments = projected_moments(lrf, neighbors);
    SignState s;
    for (std::size_t a = 0; a < 3; ++a) s.flips[a] = moments[a].left < moments[a].right ? 1 : -1;
    return s;
}

double sign_margin(const Lrf& lrf, std::span<const Eigen::Vector3d> neighbors) {
    const auto moments = projected_moments(lrf, neighbors);
    double margin = std::abs(moments[0].left - moments[0].right);
    for (std::size_t a = 1; a < 3; ++a) margin = std::min(margin, std::abs(moments[a].left - moments[a].right));
    return margin;
}

Eigen::Matrix3d oriented_axes(const Lrf& lrf, const SignState& signs) {
    Eigen::Matrix3d a = lrf.axes;
    for (int k = 0; k < 3; ++k) a.row(k) *= static_cast<double>(signs.flips[static_cast<std::size_t>(k)]);
    return a;
}

Points project_to_lrf(std::span<const Eigen::Vector3d> points, const Lrf& lrf, const SignState& signs) {
    const Eigen::Matrix3d a = oriented_axes(lrf, signs);
    Points out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(a * (p - lrf.origin));
    return out;
}

Eigen::Vector4d geometric_features(const Eigen::Vector3d& eigenvalues) {
    const double sum = eigenvalues.sum();
    if (!(eigenvalues(0) > 0.0) || !(sum > 0.0)) {
        throw std::invalid_argument("geometric_features: eigenvalues are all zero");
    }
    const Eigen::Vector3d e = eigenvalues.cwiseMax(0.0) / sum;
    double entropy = 0.0;
    for (int k = 0; k < 3; ++k) {
        if (e(k) > 0.0) entropy -= e(k) * std::log(e(k));
    }
    return {(e(0) - e(1)) / e(0), (e(1) - e(2)) / e(0), e(2) / e(0), entropy};
}

Eigen::Matrix<double, 7, 1> geometric_attributes(const Lrf& lrf, const SignState& signs) {
    Eigen::Matrix<double, 7, 1> out;
    out.head<3>() = oriented_axes(lrf, signs).row(2).transpose();
    out.tail<4>() = geometric_features(lrf.eigenvalues);
    return out;
}

}  // namespace rpointhop
