#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rpointhop/cloud.h"
#include "rpointhop/pipeline.h"
#include "rpointhop/registration.h"

namespace rpointhop {

enum class BenchMethod {
    rpointhop,  // learned features, matching, closed-form estimate
    icp_only,   // point-to-point ICP from the identity
};

struct ExperimentSpec {
    double max_angle_deg = 45.0;
    double translation_range = 0.5;
    double noise_std = 0.0;
    double partial_fraction = 1.0;
    /// Crop the target too, with its own anchor.
    bool both_partial = false;
    std::size_t trials = 10;
    std::uint64_t seed = 0;
    bool use_ratio_test = true;
    bool use_ransac = false;
    bool icp_refine = false;
    BenchMethod method = BenchMethod::rpointhop;

    /// Throws std::invalid_argument.
    void validate() const;
};

struct SampledTransform {
    RigidTransform transform;
    Eigen::Vector3d euler_deg;  // (x, y, z) as drawn
};

/// Angles uniform on [0, max_angle] per axis, R = Rz Ry Rx; t uniform on [-range, range]^3.
SampledTransform sample_rigid_transform(const ExperimentSpec& spec, std::uint64_t trial_seed);

/// The floor(fraction * N) nearest neighbors of a random anchor point (anchor included).
PointCloud make_partial(const PointCloud& cloud, double fraction, std::uint64_t seed);

/// I.i.d. zero-mean Gaussian offsets per coordinate.
PointCloud add_noise(const PointCloud& cloud, double std_dev, std::uint64_t seed);

/// Object-like test shape: the union of two to five randomly sized and placed
/// boxes, closed cylinders and ellipsoids, surface-sampled roughly in
/// proportion to area and scaled into the unit ball.
PointCloud synthetic_shape(std::size_t num_points, std::uint64_t seed);

struct TrialResult {
    std::size_t trial = 0;
    std::size_t cloud_index = 0;
    Eigen::Vector3d gt_euler = Eigen::Vector3d::Zero();
    bool ok = false;
    std::string error;
    RigidTransform predicted;
    Eigen::Vector3d rotation_error = Eigen::Vector3d::Zero();     // degrees, per Euler axis
    Eigen::Vector3d translation_error = Eigen::Vector3d::Zero();
    double angular_error = 0.0;                                   // degrees
    bool gimbal = false;
    double residual = 0.0;
    double runtime_seconds = 0.0;
};

struct BenchReport {
    std::string label;
    ExperimentSpec spec;
    std::vector<TrialResult> trials;
    ErrorAggregate rotation;     // over successful trials
    ErrorAggregate translation;
    std::size_t failures = 0;
    double total_runtime_seconds = 0.0;

    /// Mean over successful trials of the per-trial mean absolute Euler error.
    double mean_rotation_error() const;
};

/// Trial t uses cloud derive(seed, t) mod |clouds| and its own transform,
/// crop and noise draws, so two runs with the same seed see identical trials.
BenchReport run_benchmark(const RPointHopModel& model, const std::vector<PointCloud>& test_clouds,
                          const ExperimentSpec& spec, const std::string& label = "");

/// Delimited per-trial table followed by the MSE/RMSE/MAE block. Runtimes are
/// left out unless requested so reports stay byte-identical across runs.
std::string format_bench_report(const BenchReport& report, bool include_runtime = false);

}  // namespace rpointhop
