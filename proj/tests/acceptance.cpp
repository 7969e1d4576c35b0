// Acceptance checks. Prints one PASS/FAIL line per criterion with the
// measured values and exits non-zero when any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/random/uniform_int_distribution.hpp>

#include "rpointhop/bench.h"
#include "rpointhop/cloud.h"
#include "rpointhop/pipeline.h"
#include "rpointhop/random.h"
#include "rpointhop/registration.h"
#include "rpointhop/saab.h"
#include "rpointhop/spatial.h"
#include "test_util.h"

using namespace rpointhop;
namespace rt = rpointhop::testing;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << detail << std::endl;
    if (!pass) ++failures;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double median(std::vector<double> v) {
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
    const double hi = v[n / 2];
    if (n % 2 == 1) return hi;
    return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2)));
}

PointCloud unit_cloud(std::uint64_t seed) { return normalize_unit_sphere(synthetic_shape(1024, seed)).cloud; }

std::vector<PointCloud> corpus(std::uint64_t base, std::size_t count) {
    std::vector<PointCloud> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(unit_cloud(derive_seed(base, i)));
    return out;
}

struct CliRun {
    int code;
    std::string out;
};

CliRun run_cli(const std::string& args) {
    const std::string cmd = std::string(RPOINTHOP_CLI) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return {-1, ""};
    std::string out;
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) out += buf.data();
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void kabsch_oracle() {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> count(10, 500);
    double worst_r = 0.0, worst_t = 0.0;
    const auto start = std::chrono::steady_clock::now();
    for (int s = 0; s < 100; ++s) {
        const Points a = rt::random_points(count(rng), rng);
        const RigidTransform gt = rt::random_rigid(rng);
        Points b;
        for (const auto& p : a) b.push_back(gt.apply(p));
        const RigidTransform est = estimate_transform(a, b);
        worst_r = std::max(worst_r, (est.rotation - gt.rotation).cwiseAbs().maxCoeff());
        worst_t = std::max(worst_t, (est.translation - gt.translation).cwiseAbs().maxCoeff());
    }
    const double secs = seconds_since(start);
    report(1, "Kabsch oracle", worst_r < 1e-9 && worst_t < 1e-9 && secs < 1.0,
           "max |dR| " + fmt(worst_r) + ", max |dt| " + fmt(worst_t) + ", " + fmt(secs) + " s");
}

void feature_invariance(const RPointHopModel& model, const std::vector<PointCloud>& test) {
    ExperimentSpec spec;  // angles <= 45 deg, translations <= 0.5
    std::size_t ok = 0, total = 0, degenerate = 0;
    for (std::size_t c = 0; c < test.size(); ++c) {
        const SampledTransform gt = sample_rigid_transform(spec, derive_seed(11, c));
        const FeatureSet a = extract_features(model, test[c], 5);
        const FeatureSet b = extract_features(model, apply_transform(test[c], gt.transform), 5);
        const Eigen::MatrixXd d = feature_distance_matrix(a.features, a.features);
        std::vector<double> pairwise;
        for (Eigen::Index i = 0; i < d.rows(); ++i) {
            for (Eigen::Index j = i + 1; j < d.cols(); ++j) pairwise.push_back(d(i, j));
        }
        const double tol = 1e-4 * median(pairwise);
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a.eigen_gap[i] < 1e-6 || a.sign_margin[i] <= 1e-9) {
                ++degenerate;
                continue;
            }
            ++total;
            // Same seed, so row i of both sets describes the same input point.
            if (a.point_indices[i] == b.point_indices[i] && (a.features.row(i) - b.features.row(i)).norm() < tol) ++ok;
        }
    }
    const double frac = total ? static_cast<double>(ok) / static_cast<double>(total) : 0.0;
    report(2, "feature invariance", total > 0 && frac >= 0.95,
           std::to_string(ok) + "/" + std::to_string(total) + " = " + fmt(frac) + " within 1e-4 x median (" +
               std::to_string(degenerate) + " degenerate excluded)");
}

void full_overlap(const RPointHopModel& model, const std::vector<PointCloud>& test) {
    ExperimentSpec spec;
    spec.trials = 50;
    spec.seed = 31;
    const BenchReport r = run_benchmark(model, test, spec);
    report(3, "full overlap registration", r.failures == 0 && r.rotation.mae < 1.0 && r.translation.mae < 0.005,
           "MAE(R) " + fmt(r.rotation.mae) + " deg, MAE(t) " + fmt(r.translation.mae) + ", failures " +
               std::to_string(r.failures));
}

double trial_error(const TrialResult& t) { return t.ok ? t.rotation_error.cwiseAbs().mean() : 180.0; }

void ratio_ablation(const RPointHopModel& model, const std::vector<PointCloud>& test) {
    ExperimentSpec spec;
    spec.trials = 50;
    spec.partial_fraction = 0.75;
    spec.seed = 41;
    const BenchReport with = run_benchmark(model, test, spec);
    spec.use_ratio_test = false;
    const BenchReport without = run_benchmark(model, test, spec);
    std::vector<double> ew, eo;
    for (std::size_t i = 0; i < spec.trials; ++i) {
        ew.push_back(trial_error(with.trials[i]));
        eo.push_back(trial_error(without.trials[i]));
    }
    Rng rng = make_rng(43);
    boost::random::uniform_int_distribution<std::size_t> pick(0, spec.trials - 1);
    const int resamples = 1000;
    int wins = 0;
    for (int b = 0; b < resamples; ++b) {
        double sw = 0.0, so = 0.0;
        for (std::size_t i = 0; i < spec.trials; ++i) {
            const std::size_t k = pick(rng);
            sw += ew[k];
            so += eo[k];
        }
        if (sw <= so) ++wins;
    }
    const double frac = static_cast<double>(wins) / resamples;
    double mw = 0.0, mo = 0.0;
    for (std::size_t i = 0; i < spec.trials; ++i) {
        mw += ew[i] / static_cast<double>(spec.trials);
        mo += eo[i] / static_cast<double>(spec.trials);
    }
    report(4, "ratio-test ablation", frac >= 0.8,
           "mean rotation error " + fmt(mw) + " deg with vs " + fmt(mo) + " deg without; with <= without in " +
               fmt(frac) + " of " + std::to_string(resamples) + " bootstrap resamples");
}

void noise_icp(const RPointHopModel& model, const std::vector<PointCloud>& test) {
    ExperimentSpec spec;
    spec.trials = 30;
    spec.noise_std = 0.01;
    spec.seed = 51;
    const BenchReport plain = run_benchmark(model, test, spec);
    spec.icp_refine = true;
    const BenchReport refined = run_benchmark(model, test, spec);
    const double a = plain.mean_rotation_error(), b = refined.mean_rotation_error();
    report(5, "noise robustness with ICP", refined.failures == 0 && b <= a,
           "mean rotation error " + fmt(a) + " deg without ICP, " + fmt(b) + " deg with ICP");
}

void angle_sweep(const RPointHopModel& model, const std::vector<PointCloud>& test) {
    const std::array<double, 5> angles{10, 45, 90, 135, 180};
    std::map<double, double> rph, icp;
    std::string detail;
    for (double angle : angles) {
        ExperimentSpec spec;
        spec.trials = 20;
        spec.max_angle_deg = angle;
        spec.seed = 61;
        rph[angle] = run_benchmark(model, test, spec).rotation.mae;
        spec.method = BenchMethod::icp_only;
        icp[angle] = run_benchmark(model, test, spec).rotation.mae;
        detail += " " + fmt(angle) + ":" + fmt(rph[angle]) + "/" + fmt(icp[angle]);
    }
    const bool flat = rph[180] < 3.0 * rph[10];
    const bool steep = icp[180] > 10.0 * icp[10];
    report(6, "angle sweep", flat && steep,
           "MAE(R) R-PointHop/ICP per angle" + detail + "; R-PointHop 180/10 ratio " + fmt(rph[180] / rph[10]) +
               " (< 3 required), ICP ratio " + fmt(icp[180] / icp[10]) + " (> 10 required)");
}

void saab_properties(const RPointHopModel& model) {
    double ortho = 0.0, energy_sum = 0.0;
    auto check_layer = [&](const SaabLayer& l) {
        const Eigen::MatrixXd g = l.filters * l.filters.transpose();
        ortho = std::max(ortho, (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff());
        energy_sum = std::max(energy_sum, std::abs(l.energies.sum() - 1.0));
    };
    check_layer(model.hop1_layer);
    for (const auto& hop : model.later_hops) {
        for (const auto& [id, layer] : hop) check_layer(layer);
    }

    // Non-negativity on convex combinations of the training samples.
    std::mt19937_64 rng(71);
    Eigen::MatrixXd train(400, 24);
    std::uniform_real_distribution<double> u(-1.0, 2.0);
    for (Eigen::Index i = 0; i < train.size(); ++i) train.data()[i] = u(rng);
    const SaabLayer layer = saab_fit(train);
    check_layer(layer);
    std::uniform_int_distribution<Eigen::Index> row(0, train.rows() - 1);
    std::uniform_int_distribution<int> parts(1, 6);
    std::exponential_distribution<double> w(1.0);
    double min_out = std::numeric_limits<double>::infinity();
    for (int s = 0; s < 10000; ++s) {
        const int m = parts(rng);
        Eigen::VectorXd x = Eigen::VectorXd::Zero(train.cols());
        double total = 0.0;
        for (int j = 0; j < m; ++j) {
            const double wj = w(rng);
            x += wj * train.row(row(rng)).transpose();
            total += wj;
        }
        min_out = std::min(min_out, saab_apply(layer, x / total).minCoeff());
    }

    // Channel-wise versus joint fit on the same K channels.
    const std::size_t channels = 4;
    std::map<ChannelId, Eigen::MatrixXd> per_channel;
    Eigen::MatrixXd joint(300, static_cast<Eigen::Index>(8 * channels));
    for (std::size_t c = 0; c < channels; ++c) {
        Eigen::MatrixXd m(300, 8);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
        per_channel[c] = m;
        joint.middleCols(static_cast<Eigen::Index>(8 * c), 8) = m;
    }
    std::size_t cw_params = 0;
    for (const auto& [id, l] : cw_saab_fit(per_channel)) cw_params += l.parameter_count();
    const std::size_t joint_params = saab_fit(joint).parameter_count();

    report(7, "Saab properties", ortho < 1e-9 && energy_sum < 1e-9 && min_out >= 0.0 && cw_params < joint_params,
           "orthonormality " + fmt(ortho) + ", |sum energy - 1| " + fmt(energy_sum) + ", min output " + fmt(min_out) +
               " over 10000 in-hull samples, c/w params " + std::to_string(cw_params) + " vs joint " +
               std::to_string(joint_params));
}

void determinism() {
    const rt::TempDir dir("accept");
    std::ofstream(dir.file("small.cfg")) << "k_lrf = 16\nnum_points = 256,128,64\nk_neighbors = 16,16,16\nseed = 3\n";
    bool ok = run_cli("synth --output-dir " + dir.file("train") + " --count 8 --points 300 --seed 81").code == 0 &&
              run_cli("synth --output-dir " + dir.file("test") + " --count 3 --points 256 --seed 82").code == 0;
    for (const char* out : {"m1.bin", "m2.bin"}) {
        ok = ok && run_cli("train --input-dir " + dir.file("train") + " --config " + dir.file("small.cfg") +
                           " --seed 3 --output " + dir.file(out))
                           .code == 0;
    }
    const std::string bench = "benchmark --model " + dir.file("m1.bin") + " --test-dir " + dir.file("test") +
                              " --trials 5 --seed 83 --partial 0.75 --noise-std 0.01 --output ";
    ok = ok && run_cli(bench + dir.file("b1.txt")).code == 0 && run_cli(bench + dir.file("b2.txt")).code == 0;
    const std::string m1 = slurp(dir.file("m1.bin")), b1 = slurp(dir.file("b1.txt"));
    const bool same_model = !m1.empty() && m1 == slurp(dir.file("m2.bin"));
    const bool same_bench = !b1.empty() && b1 == slurp(dir.file("b2.txt"));
    report(8, "determinism", ok && same_model && same_bench,
           std::string("train outputs ") + (same_model ? "identical" : "differ") + ", benchmark outputs " +
               (same_bench ? "identical" : "differ") + (ok ? "" : ", CLI run failed"));
}

void model_size(const RPointHopModel& model) {
    const rt::TempDir dir("size");
    save_model(model, dir.file("default.bin"));
    const auto bytes = std::filesystem::file_size(dir.file("default.bin"));
    report(9, "model size", bytes < 1000000, std::to_string(bytes) + " bytes, feature_dim " +
                                                 std::to_string(model.feature_dim()));
}

std::vector<std::size_t> brute_knn(const Points& pts, const Eigen::Vector3d& q, std::size_t k) {
    std::vector<std::size_t> idx(pts.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double da = (pts[a] - q).squaredNorm(), db = (pts[b] - q).squaredNorm();
        return da != db ? da < db : a < b;
    });
    idx.resize(k);
    return idx;
}

std::vector<std::size_t> brute_fps(const Points& pts, std::size_t m, std::size_t start) {
    std::vector<std::size_t> out{start};
    std::vector<double> dist(pts.size(), std::numeric_limits<double>::infinity());
    std::vector<bool> taken(pts.size(), false);
    taken[start] = true;
    while (out.size() < m) {
        for (std::size_t i = 0; i < pts.size(); ++i) dist[i] = std::min(dist[i], (pts[i] - pts[out.back()]).squaredNorm());
        std::size_t best = pts.size();
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (!taken[i] && (best == pts.size() || dist[i] > dist[best])) best = i;
        }
        taken[best] = true;
        out.push_back(best);
    }
    return out;
}

void spatial_oracles() {
    std::mt19937_64 rng(91);
    std::uniform_int_distribution<std::size_t> size(20, 400);
    int knn_ok = 0, fps_ok = 0;
    for (int s = 0; s < 200; ++s) {
        const Points pts = rt::random_points(size(rng), rng);
        const KnnIndex index(pts);
        const Eigen::Vector3d q = rt::random_points(1, rng)[0];
        const std::size_t k = 1 + rng() % pts.size();
        if (index.knn_indices(q, k) == brute_knn(pts, q, k)) ++knn_ok;
    }
    for (int s = 0; s < 200; ++s) {
        const Points pts = rt::random_points(size(rng), rng);
        const std::size_t m = 1 + rng() % pts.size();
        const std::size_t start = rng() % pts.size();
        if (farthest_point_sample(pts, m, start) == brute_fps(pts, m, start)) ++fps_ok;
    }
    report(10, "knn and FPS oracles", knn_ok == 200 && fps_ok == 200,
           "knn " + std::to_string(knn_ok) + "/200, FPS " + std::to_string(fps_ok) + "/200 exact");
}

}  // namespace

int main() {
    try {
        kabsch_oracle();
        spatial_oracles();

        const auto start = std::chrono::steady_clock::now();
        const RPointHopModel model = train(corpus(101, 50), ModelConfig{});
        std::cout << "# trained default model on 50 clouds in " << fmt(seconds_since(start)) << " s" << std::endl;
        const std::vector<PointCloud> test = corpus(202, 20);

        feature_invariance(model, test);
        full_overlap(model, test);
        ratio_ablation(model, test);
        noise_icp(model, test);
        angle_sweep(model, test);
        saab_properties(model);
        determinism();
        model_size(model);
    } catch (const std::exception& e) {
        std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
        return 1;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
