#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "rpointhop/cloud.h"
#include "rpointhop/spatial.h"

namespace rpointhop {

/// Local reference frame at one point. Rows of `axes` are the unit
/// eigenvectors p, q, r of the local covariance, ordered by descending
/// eigenvalue. Axis signs are left as the eigensolver produced them; the
/// orientation used for attributes comes from resolve_signs().
struct Lrf {
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    Eigen::Matrix3d axes = Eigen::Matrix3d::Identity();
    Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();
};

/// Per-axis reflection (the diagonal of R'), each entry +1 or -1.
struct SignState {
    std::array<int, 3> flips{1, 1, 1};

    bool operator==(const SignState&) const = default;
};

struct LocalPca {
    Eigen::Matrix3d eigenvectors;  // rows, descending eigenvalue
    Eigen::Vector3d eigenvalues;   // descending
};

/// Eigendecomposition of the (1/n) covariance of mean-centered points.
/// Throws std::invalid_argument for fewer than 3 points or a non-finite covariance.
LocalPca local_pca(std::span<const Eigen::Vector3d> points);

/// First-order moments of 1-D values about their median.
struct AxisMoments {
    double median;
    double left;   // sum |p_i - median| over p_i < median
    double right;  // sum |p_i - median| over p_i > median
};

/// Median is the middle element for odd counts and the mean of the two
/// middle elements for even counts, so negating the input negates it.
AxisMoments axis_moments(std::span<const double> values);

/// +1 when the right moment is strictly larger, -1 otherwise (ties included).
int disambiguate_axis(std::span<const double> values);

Lrf compute_lrf(const PointCloud& cloud, std::size_t point_index, std::size_t k_lrf, const KnnIndex& index);

/// Signs from the moments of `neighbors - lrf.origin` projected on each axis.
SignState resolve_signs(const Lrf& lrf, std::span<const Eigen::Vector3d> neighbors);

/// Smallest |M^l - M^r| over the three axes; near zero means the sign choice
/// can flip under rounding.
double sign_margin(const Lrf& lrf, std::span<const Eigen::Vector3d> neighbors);

/// diag(signs) * axes * (p - origin) for each point.
Points project_to_lrf(std::span<const Eigen::Vector3d> points, const Lrf& lrf, const SignState& signs);

/// Axis rows after applying the sign flips.
Eigen::Matrix3d oriented_axes(const Lrf& lrf, const SignState& signs);

/// (linearity, planarity, sphericity, eigen-entropy) from descending eigenvalues.
Eigen::Vector4d geometric_features(const Eigen::Vector3d& eigenvalues);

/// Per-point auxiliary attributes: sign-resolved third axis (surface normal
/// estimate) followed by the four geometric features.
constexpr std::size_t kGeometricAuxWidth = 7;
Eigen::Matrix<double, 7, 1> geometric_attributes(const Lrf& lrf, const SignState& signs);

}  // namespace rpointhop
