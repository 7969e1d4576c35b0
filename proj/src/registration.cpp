#include "rpointhop/registration.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <boost/random/uniform_int_distribution.hpp>

#include "rpointhop/parallel.h"
#include "rpointhop/random.h"
#include "rpointhop/spatial.h"

namespace rpointhop {

void MatchParams::validate() const {
    if (m1 == 0) throw std::invalid_argument("m1 must be positive");
    if (ratio_test && (m2 == 0 || m2 > m1)) throw std::invalid_argument("m2 must be in [1, m1]");
    if (mode == MatchMode::threshold && (!(t1 > 0.0) || (ratio_test && !(t2 > 0.0)))) {
        throw std::invalid_argument("thresholds must be positive in threshold mode");
    }
    if (use_ransac && (ransac.sample_size < 3 || ransac.iterations == 0 || !(ransac.inlier_radius > 0.0))) {
        throw std::invalid_argument("RANSAC needs sample_size >= 3, iterations > 0 and a positive inlier radius");
    }
}

Eigen::MatrixXd feature_distance_matrix(const Eigen::MatrixXd& target, const Eigen::MatrixXd& source) {
    if (target.cols() != source.cols()) {
        throw std::invalid_argument("feature dimension mismatch: " + std::to_string(target.cols()) + " vs " +
                                    std::to_string(source.cols()));
    }
    Eigen::MatrixXd d(target.rows(), source.rows());
    parallel_for(static_cast<std::size_t>(target.rows()), [&](std::size_t i) {
        const auto row = target.row(static_cast<Eigen::Index>(i));
        for (Eigen::Index j = 0; j < source.rows(); ++j) {
            d(static_cast<Eigen::Index>(i), j) = (row - source.row(j)).norm();
        }
    });
    if (!d.allFinite()) throw std::invalid_argument("non-finite feature distance");
    return d;
}

Eigen::MatrixXd feature_distance_matrix(const FeatureSet& target, const FeatureSet& source) {
    return feature_distance_matrix(target.features, source.features);
}

CorrespondenceSet match_distances(const Eigen::MatrixXd& distances, const MatchParams& params) {
    params.validate();
    const auto rows = static_cast<std::size_t>(distances.rows());
    if (params.mode == MatchMode::count && params.m1 > rows) {
        throw std::invalid_argument("m1 = " + std::to_string(params.m1) + " exceeds the " + std::to_string(rows) +
                                    " target descriptors");
    }
    if (distances.cols() < 1) throw std::invalid_argument("no source descriptors");

    struct Candidate {
        std::size_t target, source;
        double distance, ratio;
    };
    std::vector<Candidate> all(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        Eigen::Index best = 0, second = -1;
        for (Eigen::Index j = 1; j < distances.cols(); ++j) {
            const double v = distances(r, j);
            if (v < distances(r, best)) {
                second = best;
                best = j;
            } else if (second < 0 || v < distances(r, second)) {
                second = j;
            }
        }
        const double d1 = distances(r, best);
        const double d2 = second < 0 ? 0.0 : distances(r, second);
        all[i] = {i, static_cast<std::size_t>(best), d1, d2 > 0.0 ? d1 / d2 : 1.0};
    }

    auto by_distance = [](const Candidate& a, const Candidate& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.target < b.target;
    };
    auto by_ratio = [](const Candidate& a, const Candidate& b) {
        if (a.ratio != b.ratio) return a.ratio < b.ratio;
        return a.distance != b.distance ? a.distance < b.distance : a.target < b.target;
    };

    std::vector<Candidate> kept;
    std::size_t distance_stage = 0;
    if (params.mode == MatchMode::count) {
        std::sort(all.begin(), all.end(), by_distance);
        kept.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(params.m1));
        distance_stage = kept.size();
        if (params.ratio_test) {
            std::sort(kept.begin(), kept.end(), by_ratio);
            kept.resize(std::min(kept.size(), params.m2));
        }
    } else {
        for (const auto& c : all)
            if (c.distance < params.t1) kept.push_back(c);
        std::sort(kept.begin(), kept.end(), by_distance);
        distance_stage = kept.size();
        if (params.ratio_test) {
            std::erase_if(kept, [&](const Candidate& c) { return !(c.ratio < params.t2); });
            std::sort(kept.begin(), kept.end(), by_ratio);
        }
    }
    if (kept.empty()) throw std::runtime_error("no correspondences left after filtering");

    CorrespondenceSet out;
    out.distance_stage_pairs = distance_stage;
    for (const auto& c : kept) {
        out.pairs.emplace_back(c.target, c.source);
        out.feature_distance.push_back(c.distance);
        out.ratio.push_back(c.ratio);
    }
    return out;
}

CorrespondenceSet match(const FeatureSet& target, const FeatureSet& source, const MatchParams& params) {
    CorrespondenceSet out = match_distances(feature_distance_matrix(target, source), params);
    for (const auto& [t, s] : out.pairs) {
        out.coords_target.push_back(target.coords[t]);
        out.coords_source.push_back(source.coords[s]);
    }
    return out;
}

RigidTransform estimate_transform(const Points& target, const Points& source) {
    if (target.size() != source.size()) throw std::invalid_argument("correspondence coordinate count mismatch");
    const std::size_t n = target.size();
    if (n < 3) throw std::invalid_argument("need at least 3 correspondences, got " + std::to_string(n));

    Eigen::Vector3d f_mean = Eigen::Vector3d::Zero(), g_mean = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        f_mean += target[i];
        g_mean += source[i];
    }
    f_mean /= static_cast<double>(n);
    g_mean /= static_cast<double>(n);

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    Eigen::Matrix3d spread = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d f = target[i] - f_mean;
        cov += f * (source[i] - g_mean).transpose();
        spread += f * f.transpose();
    }
    // Rank check on the target spread: collinear or coincident points leave
    // the rotation about their common line undetermined.
    const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(spread, Eigen::EigenvaluesOnly).eigenvalues();
    if (!(ev(2) > 0.0) || ev(1) <= 1e-12 * ev(2)) {
        throw std::invalid_argument("correspondences are collinear; rotation is undetermined");
    }

    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d& u = svd.matrixU();
    const Eigen::Matrix3d& v = svd.matrixV();
    Eigen::Vector3d d(1.0, 1.0, (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0);

    RigidTransform tf;
    tf.rotation = v * d.asDiagonal() * u.transpose();
    tf.translation = -tf.rotation * f_mean + g_mean;
    return tf;
}

RigidTransform estimate_transform(const CorrespondenceSet& correspondences) {
    return estimate_transform(correspondences.coords_target, correspondences.coords_source);
}

RansacResult ransac_estimate(const CorrespondenceSet& c, const RansacParams& params) {
    const std::size_t n = c.size();
    if (params.sample_size < 3) throw std::invalid_argument("RANSAC sample size must be at least 3");
    if (n < params.sample_size) {
        throw std::invalid_argument("RANSAC needs " + std::to_string(params.sample_size) + " pairs, got " +
                                    std::to_string(n));
    }
    const double r2 = params.inlier_radius * params.inlier_radius;
    auto inliers_of = [&](const RigidTransform& tf) {
        std::vector<std::size_t> in;
        for (std::size_t i = 0; i < n; ++i)
            if ((tf.apply(c.coords_target[i]) - c.coords_source[i]).squaredNorm() < r2) in.push_back(i);
        return in;
    };

    std::vector<std::size_t> counts(params.iterations, 0);
    parallel_for(params.iterations, [&](std::size_t it) {
        Rng rng = make_rng(derive_seed(params.seed, it));
        std::vector<std::size_t> pool(n);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        Points ft, fs;
        for (std::size_t s = 0; s < params.sample_size; ++s) {
            boost::random::uniform_int_distribution<std::size_t> pick(s, n - 1);
            std::swap(pool[s], pool[pick(rng)]);
            ft.push_back(c.coords_target[pool[s]]);
            fs.push_back(c.coords_source[pool[s]]);
        }
        try {
            counts[it] = inliers_of(estimate_transform(ft, fs)).size();
        } catch (const std::invalid_argument&) {
            counts[it] = 0;
        }
    });

    // First iteration with the largest inlier count wins.
    const auto best_it = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    if (counts[best_it] < 3) throw std::runtime_error("RANSAC found no hypothesis with at least 3 inliers");

    // Recompute the winning hypothesis serially; it is a pure function of its seed.
    Rng rng = make_rng(derive_seed(params.seed, best_it));
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    Points ft, fs;
    for (std::size_t s = 0; s < params.sample_size; ++s) {
        boost::random::uniform_int_distribution<std::size_t> pick(s, n - 1);
        std::swap(pool[s], pool[pick(rng)]);
        ft.push_back(c.coords_target[pool[s]]);
        fs.push_back(c.coords_source[pool[s]]);
    }
    RansacResult result;
    result.inliers = inliers_of(estimate_transform(ft, fs));
    Points it, is;
    for (std::size_t i : result.inliers) {
        it.push_back(c.coords_target[i]);
        is.push_back(c.coords_source[i]);
    }
    try {
        result.transform = estimate_transform(it, is);
    } catch (const std::invalid_argument&) {
        result.transform = estimate_transform(ft, fs);
    }
    return result;
}

namespace {

double pairing_mse(const KnnIndex& index, const Points& target, const RigidTransform& tf, Points* matched) {
    double sum = 0.0;
    if (matched) matched->resize(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const Neighbor nb = index.knn(tf.apply(target[i]), 1).front();
        sum += nb.distance * nb.distance;
        if (matched) (*matched)[i] = index.points()[nb.index];
    }
    return sum / static_cast<double>(target.size());
}

}  // namespace

IcpResult icp_refine(const PointCloud& source, const PointCloud& target, const RigidTransform& initial,
                     std::size_t max_iters, double tol) {
    const KnnIndex index(source);
    IcpResult result;
    result.transform = initial;
    Points matched;
    double prev = pairing_mse(index, target.coords(), initial, &matched);
    result.mse.push_back(prev);
    RigidTransform current = initial;
    for (std::size_t it = 0; it < max_iters; ++it) {
        RigidTransform next;
        try {
            next = estimate_transform(target.coords(), matched);
        } catch (const std::invalid_argument&) {
            break;
        }
        Points next_matched;
        const double mse = pairing_mse(index, target.coords(), next, &next_matched);
        if (mse > prev) break;
        current = next;
        matched = std::move(next_matched);
        result.mse.push_back(mse);
        result.iterations = it + 1;
        const bool converged = prev - mse < tol;
        prev = mse;
        if (converged) break;
    }
    if (result.mse.back() < result.mse.front()) result.transform = current;
    return result;
}

double alignment_residual(const PointCloud& source, const PointCloud& target, const RigidTransform& tf) {
    const KnnIndex index(source);
    return std::sqrt(pairing_mse(index, target.coords(), tf, nullptr));
}

RegistrationResult register_clouds(const RPointHopModel& model, const PointCloud& source, const PointCloud& target,
                                   const RegisterOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    ExtractOptions extract;
    extract.adapt_to_small_clouds = true;
    const FeatureSet ft = extract_features(model, target, derive_seed(options.seed, 1), extract);
    const FeatureSet fs = extract_features(model, source, derive_seed(options.seed, 2), extract);

    RegistrationReport report;
    report.target_points = ft.size();
    report.source_points = fs.size();

    // Adapted small or cropped clouds can yield fewer descriptors than m1; shrink
    // both counts by the same factor so the ratio stage keeps its selectivity.
    MatchParams mp = options.match;
    if (mp.mode == MatchMode::count && mp.m1 > ft.size()) {
        const double factor = static_cast<double>(ft.size()) / static_cast<double>(mp.m1);
        mp.m1 = ft.size();
        mp.m2 = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(static_cast<double>(mp.m2) * factor)), 1,
                                        mp.m1);
    }
    const CorrespondenceSet pairs = match(ft, fs, mp);
    report.pairs_used = pairs.size();
    report.pairs_after_distance = pairs.distance_stage_pairs;

    RigidTransform tf;
    std::vector<std::size_t> used(pairs.size());
    std::iota(used.begin(), used.end(), std::size_t{0});
    if (options.match.use_ransac) {
        RansacParams rp = options.match.ransac;
        rp.seed = derive_seed(options.seed ^ rp.seed, 3);
        RansacResult rr = ransac_estimate(pairs, rp);
        tf = rr.transform;
        used = std::move(rr.inliers);
        report.ransac_inliers = used.size();
    } else {
        tf = estimate_transform(pairs);
    }
    double pair_res = 0.0;
    for (std::size_t i : used) pair_res += (tf.apply(pairs.coords_target[i]) - pairs.coords_source[i]).norm();
    report.mean_pair_residual = pair_res / static_cast<double>(used.size());

    report.residual_before_icp = alignment_residual(source, target, tf);
    report.residual = report.residual_before_icp;
    if (options.icp_refine) {
        const IcpResult icp = icp_refine(source, target, tf, options.icp_max_iters, options.icp_tol);
        tf = icp.transform;
        report.icp_iterations = icp.iterations;
        report.residual = alignment_residual(source, target, tf);
    }
    report.transform = tf;
    report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {tf, align_inverse(source, tf), report};
}

std::string format_report(const RegistrationReport& r, bool include_runtime) {
    std::ostringstream out;
    out.precision(17);
    out << "convention: transform maps target onto source (p_source = R p_target + t); "
           "aligned_source = R^T (source - t)\n";
    out << "rotation:";
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out << ' ' << r.transform.rotation(i, j);
    out << "\ntranslation:";
    for (int i = 0; i < 3; ++i) out << ' ' << r.transform.translation(i);
    const Eigen::Vector3d e = euler_xyz_degrees(r.transform.rotation);
    out << "\neuler_xyz_deg: " << e.x() << ' ' << e.y() << ' ' << e.z() << '\n';
    out << "target_descriptors: " << r.target_points << '\n';
    out << "source_descriptors: " << r.source_points << '\n';
    out << "pairs_after_distance: " << r.pairs_after_distance << '\n';
    out << "pairs_used: " << r.pairs_used << '\n';
    out << "ransac_inliers: " << r.ransac_inliers << '\n';
    out << "mean_pair_residual: " << r.mean_pair_residual << '\n';
    out << "residual_before_icp: " << r.residual_before_icp << '\n';
    out << "icp_iterations: " << r.icp_iterations << '\n';
    out << "residual: " << r.residual << '\n';
    if (include_runtime) out << "runtime_seconds: " << r.runtime_seconds << '\n';
    return out.str();
}

namespace {

constexpr double kDeg = 180.0 / 3.14159265358979323846;

double wrap_degrees(double d) {
    d = std::fmod(d, 360.0);
    if (d <= -180.0) d += 360.0;
    if (d > 180.0) d -= 360.0;
    return d;
}

}  // namespace

Eigen::Vector3d euler_xyz_degrees(const Eigen::Matrix3d& r) {
    const double x = std::atan2(r(2, 1), r(2, 2));
    const double y = -std::asin(std::clamp(r(2, 0), -1.0, 1.0));
    const double z = std::atan2(r(1, 0), r(0, 0));
    return Eigen::Vector3d(x, y, z) * kDeg;
}

Eigen::Matrix3d rotation_from_euler_degrees(const Eigen::Vector3d& a) {
    const Eigen::Vector3d rad = a / kDeg;
    return (Eigen::AngleAxisd(rad.z(), Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(rad.y(), Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(rad.x(), Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
}

bool near_gimbal_lock(const Eigen::Matrix3d& r) {
    return std::abs(std::abs(euler_xyz_degrees(r).y()) - 90.0) < 1e-9;
}

Eigen::Vector3d rotation_error(const Eigen::Matrix3d& pred, const Eigen::Matrix3d& gt) {
    const Eigen::Vector3d d = euler_xyz_degrees(pred) - euler_xyz_degrees(gt);
    return {wrap_degrees(d.x()), wrap_degrees(d.y()), wrap_degrees(d.z())};
}

Eigen::Vector3d translation_error(const Eigen::Vector3d& pred, const Eigen::Vector3d& gt) { return pred - gt; }

double angular_error_degrees(const Eigen::Matrix3d& pred, const Eigen::Matrix3d& gt) {
    const double c = std::clamp(((pred * gt.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) * kDeg;
}

ErrorAggregate aggregate_errors(const std::vector<Eigen::Vector3d>& errors) {
    ErrorAggregate a;
    if (errors.empty()) return a;
    double sq = 0.0, ab = 0.0;
    for (const auto& e : errors) {
        sq += e.squaredNorm();
        ab += e.cwiseAbs().sum();
    }
    const double n = 3.0 * static_cast<double>(errors.size());
    a.mse = sq / n;
    a.rmse = std::sqrt(a.mse);
    a.mae = ab / n;
    return a;
}

}  // namespace rpointhop
