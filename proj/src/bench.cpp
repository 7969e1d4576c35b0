#include "rpointhop/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <Eigen/Geometry>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "rpointhop/parallel.h"
#include "rpointhop/random.h"
#include "rpointhop/spatial.h"

namespace rpointhop {

void ExperimentSpec::validate() const {
    if (!(max_angle_deg >= 0.0 && max_angle_deg <= 180.0)) throw std::invalid_argument("max angle must be in [0, 180]");
    if (!(translation_range >= 0.0)) throw std::invalid_argument("translation range must be non-negative");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("noise std must be non-negative");
    if (!(partial_fraction > 0.0 && partial_fraction <= 1.0)) {
        throw std::invalid_argument("partial fraction must be in (0, 1]");
    }
    if (trials == 0) throw std::invalid_argument("trials must be positive");
}

SampledTransform sample_rigid_transform(const ExperimentSpec& spec, std::uint64_t trial_seed) {
    Rng rng = make_rng(trial_seed);
    boost::random::uniform_real_distribution<double> angle(0.0, spec.max_angle_deg);
    boost::random::uniform_real_distribution<double> shift(-spec.translation_range, spec.translation_range);
    SampledTransform s;
    for (int a = 0; a < 3; ++a) s.euler_deg(a) = spec.max_angle_deg > 0.0 ? angle(rng) : 0.0;
    s.transform.rotation = rotation_from_euler_degrees(s.euler_deg);
    for (int a = 0; a < 3; ++a) s.transform.translation(a) = spec.translation_range > 0.0 ? shift(rng) : 0.0;
    return s;
}

PointCloud make_partial(const PointCloud& cloud, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("partial fraction must be in (0, 1]");
    const auto keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(cloud.size())));
    if (keep < 1) throw std::invalid_argument("partial fraction keeps no points");
    if (keep == cloud.size()) return cloud;
    Rng rng = make_rng(seed);
    boost::random::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
    const std::size_t anchor = pick(rng);
    std::vector<std::size_t> idx = KnnIndex(cloud).knn_indices(cloud.point(anchor), keep);
    std::sort(idx.begin(), idx.end());
    return cloud.select(idx);
}

PointCloud add_noise(const PointCloud& cloud, double std_dev, std::uint64_t seed) {
    if (!(std_dev >= 0.0)) throw std::invalid_argument("noise std must be non-negative");
    if (std_dev == 0.0) return cloud;
    Rng rng = make_rng(seed);
    boost::random::normal_distribution<double> noise(0.0, std_dev);
    Points pts = cloud.coords();
    for (auto& p : pts)
        for (int a = 0; a < 3; ++a) p(a) += noise(rng);
    return PointCloud(std::move(pts), cloud.aux());
}

PointCloud synthetic_shape(std::size_t num_points, std::uint64_t seed) {
    if (num_points == 0) throw std::invalid_argument("synthetic shape needs at least one point");
    constexpr double kPi = 3.14159265358979323846;
    Rng rng = make_rng(seed);
    boost::random::uniform_real_distribution<double> unit(0.0, 1.0);
    boost::random::normal_distribution<double> gauss(0.0, 1.0);

    enum class Kind { box, cylinder, ellipsoid };
    struct Part {
        Kind kind;
        Eigen::Vector3d size;  // full extents
        Eigen::Vector3d position;
        Eigen::Matrix3d orientation;
        double area;
    };
    std::vector<Part> parts(2 + static_cast<std::size_t>(unit(rng) * 4.0));
    double total_area = 0.0;
    for (auto& p : parts) {
        p.kind = static_cast<Kind>(static_cast<int>(unit(rng) * 3.0));
        p.size = Eigen::Vector3d(0.1 + 0.9 * unit(rng), 0.1 + 0.9 * unit(rng), 0.1 + 0.9 * unit(rng));
        p.position = Eigen::Vector3d(unit(rng), unit(rng), unit(rng)) - Eigen::Vector3d::Constant(0.5);
        const Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
        p.orientation = q.normalized().toRotationMatrix();
        const Eigen::Vector3d& s = p.size;
        switch (p.kind) {
            case Kind::box: p.area = 2.0 * (s.x() * s.y() + s.y() * s.z() + s.x() * s.z()); break;
            case Kind::cylinder: p.area = kPi * s.x() * s.z() + 0.5 * kPi * s.x() * s.x(); break;
            case Kind::ellipsoid: p.area = kPi * (s.x() * s.y() + s.y() * s.z() + s.x() * s.z()) / 3.0; break;
        }
        total_area += p.area;
    }

    auto half = [&] { return unit(rng) < 0.5 ? -0.5 : 0.5; };
    Points pts(num_points);
    for (auto& out : pts) {
        double u = unit(rng) * total_area;
        std::size_t k = 0;
        while (k + 1 < parts.size() && u > parts[k].area) u -= parts[k++].area;
        const Part& p = parts[k];
        const Eigen::Vector3d& s = p.size;
        Eigen::Vector3d local;
        if (p.kind == Kind::box) {
            const double faces[3] = {s.y() * s.z(), s.x() * s.z(), s.x() * s.y()};
            const double w = unit(rng) * (faces[0] + faces[1] + faces[2]);
            const int axis = w < faces[0] ? 0 : (w < faces[0] + faces[1] ? 1 : 2);
            local = Eigen::Vector3d(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5).cwiseProduct(s);
            local(axis) = half() * s(axis);
        } else if (p.kind == Kind::cylinder) {
            const double side = kPi * s.x() * s.z();
            const double theta = 2.0 * kPi * unit(rng);
            if (unit(rng) * p.area < side) {
                local = Eigen::Vector3d(0.5 * s.x() * std::cos(theta), 0.5 * s.x() * std::sin(theta),
                                        (unit(rng) - 0.5) * s.z());
            } else {
                const double r = 0.5 * s.x() * std::sqrt(unit(rng));
                local = Eigen::Vector3d(r * std::cos(theta), r * std::sin(theta), half() * s.z());
            }
        } else {
            Eigen::Vector3d d;
            do {
                d = Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
            } while (d.squaredNorm() < 1e-12);
            local = 0.5 * s.cwiseProduct(d.normalized());
        }
        out = p.orientation * local + p.position;
    }
    return normalize_unit_sphere(PointCloud(std::move(pts))).cloud;
}

double BenchReport::mean_rotation_error() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& t : trials) {
        if (!t.ok) continue;
        sum += t.rotation_error.cwiseAbs().mean();
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

BenchReport run_benchmark(const RPointHopModel& model, const std::vector<PointCloud>& test_clouds,
                          const ExperimentSpec& spec, const std::string& label) {
    spec.validate();
    if (test_clouds.empty()) throw std::invalid_argument("no test clouds");
    const auto start = std::chrono::steady_clock::now();

    BenchReport report;
    report.label = label;
    report.spec = spec;
    report.trials.resize(spec.trials);
    parallel_for(spec.trials, [&](std::size_t t) {
        const auto trial_start = std::chrono::steady_clock::now();
        const std::uint64_t ts = derive_seed(spec.seed, t);
        TrialResult& r = report.trials[t];
        r.trial = t;
        r.cloud_index = static_cast<std::size_t>(derive_seed(ts, 0) % test_clouds.size());
        const SampledTransform gt = sample_rigid_transform(spec, derive_seed(ts, 1));
        r.gt_euler = gt.euler_deg;

        // The harness never trains on sources; only the scoring below sees gt.
        PointCloud target = test_clouds[r.cloud_index];
        PointCloud source = apply_transform(target, gt.transform);
        source = make_partial(source, spec.partial_fraction, derive_seed(ts, 2));
        source = add_noise(source, spec.noise_std, derive_seed(ts, 3));
        if (spec.both_partial) target = make_partial(target, spec.partial_fraction, derive_seed(ts, 4));

        try {
            if (spec.method == BenchMethod::icp_only) {
                r.predicted = icp_refine(source, target, RigidTransform::identity()).transform;
                r.residual = alignment_residual(source, target, r.predicted);
            } else {
                RegisterOptions options;
                options.seed = derive_seed(ts, 5);
                options.match.ratio_test = spec.use_ratio_test;
                options.match.use_ransac = spec.use_ransac;
                options.icp_refine = spec.icp_refine;
                const RegistrationResult reg = register_clouds(model, source, target, options);
                r.predicted = reg.transform;
                r.residual = reg.report.residual;
            }
            r.rotation_error = rotation_error(r.predicted.rotation, gt.transform.rotation);
            r.translation_error = translation_error(r.predicted.translation, gt.transform.translation);
            r.angular_error = angular_error_degrees(r.predicted.rotation, gt.transform.rotation);
            r.gimbal = near_gimbal_lock(gt.transform.rotation) || near_gimbal_lock(r.predicted.rotation);
            r.ok = true;
        } catch (const std::exception& e) {
            r.ok = false;
            r.error = e.what();
        }
        r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - trial_start).count();
    });

    std::vector<Eigen::Vector3d> rot, trans;
    for (const auto& r : report.trials) {
        if (!r.ok) {
            ++report.failures;
            continue;
        }
        rot.push_back(r.rotation_error);
        trans.push_back(r.translation_error);
    }
    report.rotation = aggregate_errors(rot);
    report.translation = aggregate_errors(trans);
    report.total_runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

std::string format_bench_report(const BenchReport& report, bool include_runtime) {
    const ExperimentSpec& s = report.spec;
    std::ostringstream out;
    out.precision(10);
    out << "# benchmark: " << (report.label.empty() ? "default" : report.label) << '\n';
    out << "# method: " << (s.method == BenchMethod::icp_only ? "icp-only" : "rpointhop")
        << " ratio_test=" << (s.use_ratio_test ? 1 : 0) << " ransac=" << (s.use_ransac ? 1 : 0)
        << " icp_refine=" << (s.icp_refine ? 1 : 0) << '\n';
    out << "# max_angle_deg=" << s.max_angle_deg << " translation_range=" << s.translation_range
        << " noise_std=" << s.noise_std << " partial=" << s.partial_fraction
        << " both_partial=" << (s.both_partial ? 1 : 0) << " trials=" << s.trials << " seed=" << s.seed << '\n';
    out << "# scale: desk-scale synthetic protocol with a small training corpus; errors are not comparable "
           "to results from training on a large shape benchmark\n";
    out << "# rotation errors: signed per-axis differences of X-Y-Z Euler angles (R = Rz Ry Rx), degrees\n";
    out << "trial,cloud,gt_x,gt_y,gt_z,err_rx,err_ry,err_rz,err_tx,err_ty,err_tz,angular_err,residual,gimbal,status";
    if (include_runtime) out << ",runtime_s";
    out << '\n';
    for (const auto& r : report.trials) {
        out << r.trial << ',' << r.cloud_index << ',' << r.gt_euler.x() << ',' << r.gt_euler.y() << ','
            << r.gt_euler.z();
        if (r.ok) {
            for (int a = 0; a < 3; ++a) out << ',' << r.rotation_error(a);
            for (int a = 0; a < 3; ++a) out << ',' << r.translation_error(a);
            out << ',' << r.angular_error << ',' << r.residual << ',' << (r.gimbal ? 1 : 0) << ",ok";
        } else {
            std::string msg = r.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            out << ",,,,,,,,,," << "failed: " << msg;
        }
        if (include_runtime) out << ',' << r.runtime_seconds;
        out << '\n';
    }
    out << "# aggregate (" << report.trials.size() - report.failures << " ok, " << report.failures << " failed)\n";
    out << "MSE(R),RMSE(R),MAE(R),MSE(t),RMSE(t),MAE(t)\n";
    out << report.rotation.mse << ',' << report.rotation.rmse << ',' << report.rotation.mae << ','
        << report.translation.mse << ',' << report.translation.rmse << ',' << report.translation.mae << '\n';
    if (include_runtime) out << "# total_runtime_s: " << report.total_runtime_seconds << '\n';
    return out.str();
}

}  // namespace rpointhop
