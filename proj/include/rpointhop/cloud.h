#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace rpointhop {

using Points = std::vector<Eigen::Vector3d>;

/// N >= 1 finite 3D points with an optional N x D_aux attribute block.
class PointCloud {
public:
    /// Throws std::invalid_argument if empty, non-finite, or aux rows != N.
    explicit PointCloud(Points coords, Eigen::MatrixXd aux = Eigen::MatrixXd());

    std::size_t size() const { return coords_.size(); }
    const Points& coords() const { return coords_; }
    const Eigen::Vector3d& point(std::size_t i) const { return coords_[i]; }

    bool has_aux() const { return aux_.rows() > 0; }
    std::size_t aux_width() const { return static_cast<std::size_t>(aux_.cols()); }
    const Eigen::MatrixXd& aux() const { return aux_; }

    /// Rows `indices` (in that order), aux rows included.
    PointCloud select(const std::vector<std::size_t>& indices) const;

private:
    Points coords_;
    Eigen::MatrixXd aux_;
};

/// Proper rigid motion p -> R p + t.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static RigidTransform identity() { return {}; }

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

    /// True when R^T R = I and det R = +1 within `tol`.
    bool is_valid(double tol = 1e-9) const;
};

enum class CloudFormat { off, ply_ascii, xyz };

/// Maps "off", "ply", "ply-ascii", "xyz" (or a file extension) to a format.
CloudFormat parse_cloud_format(const std::string& name);
CloudFormat format_from_extension(const std::string& path);

PointCloud load_cloud(const std::string& path, CloudFormat format);
PointCloud load_cloud(const std::string& path);
void save_cloud(const PointCloud& cloud, const std::string& path, CloudFormat format);
void save_cloud(const PointCloud& cloud, const std::string& path);

struct Normalization {
    PointCloud cloud;
    Eigen::Vector3d centroid;
    double scale;
};

/// Centers on the centroid and divides by the max radius. Coincident points
/// get scale 1 and a logged warning.
Normalization normalize_unit_sphere(const PointCloud& cloud);

/// m distinct indices chosen by a seeded partial Fisher-Yates shuffle,
/// returned in ascending order.
std::vector<std::size_t> random_sample_indices(std::size_t n, std::size_t m, std::uint64_t seed);
PointCloud random_sample(const PointCloud& cloud, std::size_t m, std::uint64_t seed);

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& tf);

/// G' = R^T (G - t); undoes apply_transform.
PointCloud align_inverse(const PointCloud& cloud, const RigidTransform& tf);

RigidTransform inverse(const RigidTransform& tf);
/// (a * b)(p) = a(b(p)).
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

/// "rotation: 9 numbers row-major" / "translation: 3 numbers", 17 significant digits.
void save_transform(const RigidTransform& tf, const std::string& path);
RigidTransform load_transform(const std::string& path);
std::string format_transform(const RigidTransform& tf);

}  // namespace rpointhop
