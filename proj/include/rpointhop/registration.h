#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rpointhop/cloud.h"
#include "rpointhop/pipeline.h"

namespace rpointhop {

struct CorrespondenceSet {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (target row, source row)
    Points coords_target;
    Points coords_source;
    std::vector<double> feature_distance;
    std::vector<double> ratio;  // d_first / d_second, 1 when d_second is 0
    std::size_t distance_stage_pairs = 0;  // pairs kept before the ratio filter

    std::size_t size() const { return pairs.size(); }
};

enum class MatchMode { count, threshold };

struct RansacParams {
    std::size_t iterations = 512;
    std::size_t sample_size = 4;
    double inlier_radius = 0.05;
    std::uint64_t seed = 0;
};

struct MatchParams {
    std::size_t m1 = 256;
    std::size_t m2 = 128;
    MatchMode mode = MatchMode::count;
    double t1 = 0.0;
    double t2 = 0.0;
    /// When false the m1 distance-selected pairs are used as is.
    bool ratio_test = true;
    bool use_ransac = false;
    RansacParams ransac;

    /// Throws std::invalid_argument.
    void validate() const;
};

/// D(i, j) = ||target_i - source_j||.
Eigen::MatrixXd feature_distance_matrix(const Eigen::MatrixXd& target, const Eigen::MatrixXd& source);
Eigen::MatrixXd feature_distance_matrix(const FeatureSet& target, const FeatureSet& source);

/// Selection on a precomputed distance matrix; coordinates are left empty.
CorrespondenceSet match_distances(const Eigen::MatrixXd& distances, const MatchParams& params);
CorrespondenceSet match(const FeatureSet& target, const FeatureSet& source, const MatchParams& params);

/// Least-squares rigid transform mapping coords_target onto coords_source,
/// reflection-corrected. Throws std::invalid_argument for fewer than three
/// pairs or collinear points.
RigidTransform estimate_transform(const Points& target, const Points& source);
RigidTransform estimate_transform(const CorrespondenceSet& correspondences);

struct RansacResult {
    RigidTransform transform;
    std::vector<std::size_t> inliers;  // indices into the correspondence set
};

/// Throws std::runtime_error if no hypothesis reaches three inliers.
RansacResult ransac_estimate(const CorrespondenceSet& correspondences, const RansacParams& params);

struct IcpResult {
    RigidTransform transform;
    std::vector<double> mse;  // mean squared pairing distance: initial, then after each iteration
    std::size_t iterations = 0;
};

/// Point-to-point ICP refining a transform that maps `target` onto `source`.
IcpResult icp_refine(const PointCloud& source, const PointCloud& target, const RigidTransform& initial,
                     std::size_t max_iters = 50, double tol = 1e-10);

/// RMS distance from each transformed target point to its nearest source point.
double alignment_residual(const PointCloud& source, const PointCloud& target, const RigidTransform& tf);

struct RegisterOptions {
    MatchParams match;
    bool icp_refine = false;
    std::size_t icp_max_iters = 50;
    double icp_tol = 1e-10;
    std::uint64_t seed = 0;
};

struct RegistrationReport {
    RigidTransform transform;
    std::size_t target_points = 0;  // descriptor rows
    std::size_t source_points = 0;
    std::size_t pairs_after_distance = 0;
    std::size_t pairs_used = 0;
    std::size_t ransac_inliers = 0;
    double mean_pair_residual = 0.0;  // over the pairs that fixed the transform
    double residual_before_icp = 0.0;
    double residual = 0.0;
    std::size_t icp_iterations = 0;
    double runtime_seconds = 0.0;
};

struct RegistrationResult {
    RigidTransform transform;  // maps target onto source
    PointCloud aligned_source;
    RegistrationReport report;
};

/// Count-mode m1 larger than the target descriptor count is clamped to it, and
/// m2 is scaled by the same factor.
RegistrationResult register_clouds(const RPointHopModel& model, const PointCloud& source, const PointCloud& target,
                                   const RegisterOptions& options = {});

/// Structured text report; include_runtime=false keeps it reproducible byte for byte.
std::string format_report(const RegistrationReport& report, bool include_runtime = true);

/// Angles (degrees) with R = Rz(z) Ry(y) Rx(x).
Eigen::Vector3d euler_xyz_degrees(const Eigen::Matrix3d& r);
Eigen::Matrix3d rotation_from_euler_degrees(const Eigen::Vector3d& angles);
bool near_gimbal_lock(const Eigen::Matrix3d& r);

/// Signed per-axis Euler differences (pred - gt) wrapped to (-180, 180].
Eigen::Vector3d rotation_error(const Eigen::Matrix3d& pred, const Eigen::Matrix3d& gt);
Eigen::Vector3d translation_error(const Eigen::Vector3d& pred, const Eigen::Vector3d& gt);

/// Geodesic angle of pred * gt^T, in degrees.
double angular_error_degrees(const Eigen::Matrix3d& pred, const Eigen::Matrix3d& gt);

struct ErrorAggregate {
    double mse = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
};

/// Pools every component of every error vector.
ErrorAggregate aggregate_errors(const std::vector<Eigen::Vector3d>& errors);

}  // namespace rpointhop
