#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Geometry>

#include "rpointhop/cloud.h"

namespace rpointhop::testing {

inline Points random_points(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Points pts(n);
    for (auto& p : pts) p = Eigen::Vector3d(u(rng), u(rng), u(rng));
    return pts;
}

// Uniform over SO(3) via a normalized Gaussian quaternion.
inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    return Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng)).normalized().toRotationMatrix();
}

inline RigidTransform random_rigid(std::mt19937_64& rng, double shift = 0.5) {
    std::uniform_real_distribution<double> u(-shift, shift);
    RigidTransform tf;
    tf.rotation = random_rotation(rng);
    tf.translation = Eigen::Vector3d(u(rng), u(rng), u(rng));
    return tf;
}

inline Eigen::Matrix3d rot_z(double deg) {
    return Eigen::AngleAxisd(deg * 3.14159265358979323846 / 180.0, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("rph_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace rpointhop::testing
