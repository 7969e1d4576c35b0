// Command-line front end: train, register, features, benchmark, synth.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rpointhop/bench.h"
#include "rpointhop/cloud.h"
#include "rpointhop/errors.h"
#include "rpointhop/pipeline.h"
#include "rpointhop/random.h"
#include "rpointhop/registration.h"

namespace fs = std::filesystem;
using namespace rpointhop;

namespace {

bool is_cloud_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".off" || ext == ".ply" || ext == ".xyz";
}

std::vector<PointCloud> load_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_cloud_file(e.path())) files.push_back(e.path());
    if (files.empty()) throw IoError("no point clouds found in '" + dir + "'");
    std::sort(files.begin(), files.end());
    std::vector<PointCloud> clouds;
    for (const auto& f : files) clouds.push_back(load_cloud(f.string()));
    spdlog::info("loaded {} clouds from {}", clouds.size(), dir);
    return clouds;
}

// Writes to a sibling temp file and renames, so a failed run leaves no partial artifact.
void write_file(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("failed writing '" + path + "'");
    }
    fs::rename(tmp, path);
}

std::string default_aligned_path(const std::string& report_path) {
    fs::path p(report_path);
    return (p.parent_path() / (p.stem().string() + "_aligned.xyz")).string();
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_st("rpointhop"));
    spdlog::set_pattern("[%l] %v");

    CLI::App app{"R-PointHop point cloud registration"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    // train
    auto* train_cmd = app.add_subcommand("train", "Fit a model on a directory of clouds");
    std::string train_dir, config_path, model_out;
    std::uint64_t train_seed = 0;
    bool train_seed_set = false;
    train_cmd->add_option("--input-dir", train_dir, "Directory of .off/.ply/.xyz clouds")->required();
    train_cmd->add_option("--config", config_path, "key = value config file");
    train_cmd->add_option("--output", model_out, "Model file to write")->required();
    auto* seed_opt = train_cmd->add_option("--seed", train_seed, "Overrides the config seed");

    // register
    auto* reg_cmd = app.add_subcommand("register", "Estimate the transform mapping target onto source");
    std::string reg_model, reg_source, reg_target, reg_out, reg_aligned;
    bool reg_ransac = false, reg_icp = false, reg_no_ratio = false;
    std::uint64_t reg_seed = 0;
    reg_cmd->add_option("--model", reg_model)->required();
    reg_cmd->add_option("--source", reg_source)->required();
    reg_cmd->add_option("--target", reg_target)->required();
    reg_cmd->add_option("--output", reg_out, "Transform report")->required();
    reg_cmd->add_option("--aligned-output", reg_aligned, "Aligned source cloud (default: <output>_aligned.xyz)");
    reg_cmd->add_flag("--ransac", reg_ransac);
    reg_cmd->add_flag("--icp-refine", reg_icp);
    reg_cmd->add_flag("--no-ratio-test", reg_no_ratio);
    reg_cmd->add_option("--seed", reg_seed);

    // features
    auto* feat_cmd = app.add_subcommand("features", "Write per-point descriptors");
    std::string feat_model, feat_in, feat_out;
    std::uint64_t feat_seed = 0;
    feat_cmd->add_option("--model", feat_model)->required();
    feat_cmd->add_option("--input", feat_in)->required();
    feat_cmd->add_option("--output", feat_out)->required();
    feat_cmd->add_option("--seed", feat_seed);

    // benchmark
    auto* bench_cmd = app.add_subcommand("benchmark", "Synthetic registration benchmark");
    std::string bench_model, bench_dir, bench_out;
    ExperimentSpec spec;
    bool ablation = false, icp_only = false, no_ratio = false;
    bench_cmd->add_option("--model", bench_model);
    bench_cmd->add_option("--test-dir", bench_dir)->required();
    bench_cmd->add_option("--max-angle", spec.max_angle_deg, "Degrees, per axis")->check(CLI::Range(0.0, 180.0));
    bench_cmd->add_option("--translation-range", spec.translation_range);
    bench_cmd->add_option("--noise-std", spec.noise_std);
    bench_cmd->add_option("--partial", spec.partial_fraction, "Fraction of source points kept");
    bench_cmd->add_flag("--both-partial", spec.both_partial, "Crop the target too");
    bench_cmd->add_option("--trials", spec.trials);
    bench_cmd->add_option("--seed", spec.seed);
    auto* ablation_opt = bench_cmd->add_flag("--ablation", ablation, "Paired runs with and without the ratio test");
    auto* icp_only_opt = bench_cmd->add_flag("--icp-only", icp_only, "ICP from the identity instead of features");
    auto* no_ratio_opt = bench_cmd->add_flag("--no-ratio-test", no_ratio);
    bench_cmd->add_flag("--ransac", spec.use_ransac);
    bench_cmd->add_flag("--icp-refine", spec.icp_refine);
    bench_cmd->add_option("--output", bench_out, "Report file (default: stdout)");
    ablation_opt->excludes(icp_only_opt)->excludes(no_ratio_opt);
    icp_only_opt->excludes(no_ratio_opt);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Write a corpus of synthetic shapes");
    std::string synth_dir, synth_format = "xyz";
    std::size_t synth_count = 10, synth_points = 1024;
    std::uint64_t synth_seed = 0;
    synth_cmd->add_option("--output-dir", synth_dir)->required();
    synth_cmd->add_option("--count", synth_count);
    synth_cmd->add_option("--points", synth_points);
    synth_cmd->add_option("--seed", synth_seed);
    synth_cmd->add_option("--format", synth_format)->check(CLI::IsMember({"off", "ply", "xyz"}));

    CLI11_PARSE(app, argc, argv);
    if (verbose) spdlog::set_level(spdlog::level::debug);
    train_seed_set = seed_opt->count() > 0;

    try {
        if (*train_cmd) {
            ModelConfig config = config_path.empty() ? ModelConfig{} : load_config(config_path);
            if (train_seed_set) config.seed = train_seed;
            const auto corpus = load_dir(train_dir);
            const RPointHopModel model = train(corpus, config);
            save_model(model, model_out);
            std::cout << "feature_dim: " << model.feature_dim() << '\n';
            const auto channels = model.surviving_channels();
            for (std::size_t h = 0; h < channels.size(); ++h) {
                std::cout << "hop " << h + 1 << " channels: " << channels[h] << '\n';
            }
            std::cout << "parameters: " << model.parameter_count() << '\n';
        } else if (*reg_cmd) {
            const RPointHopModel model = load_model(reg_model);
            const PointCloud source = load_cloud(reg_source);
            const PointCloud target = load_cloud(reg_target);
            RegisterOptions options;
            options.seed = reg_seed;
            options.match.use_ransac = reg_ransac;
            options.match.ratio_test = !reg_no_ratio;
            options.icp_refine = reg_icp;
            const RegistrationResult result = register_clouds(model, source, target, options);
            spdlog::info("registration took {:.3f} s", result.report.runtime_seconds);
            const std::string aligned = reg_aligned.empty() ? default_aligned_path(reg_out) : reg_aligned;
            save_cloud(result.aligned_source, aligned);
            write_file(reg_out, format_report(result.report, false));
        } else if (*feat_cmd) {
            const RPointHopModel model = load_model(feat_model);
            const PointCloud cloud = load_cloud(feat_in);
            const FeatureSet fs = extract_features(model, cloud, feat_seed);
            std::ostringstream out;
            out.precision(17);
            out << "index,x,y,z";
            for (std::size_t d = 0; d < fs.dim(); ++d) out << ",f" << d;
            out << '\n';
            for (std::size_t i = 0; i < fs.size(); ++i) {
                out << fs.point_indices[i] << ',' << fs.coords[i].x() << ',' << fs.coords[i].y() << ','
                    << fs.coords[i].z();
                for (std::size_t d = 0; d < fs.dim(); ++d) out << ',' << fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
                out << '\n';
            }
            write_file(feat_out, out.str());
        } else if (*bench_cmd) {
            if (bench_model.empty() && !icp_only) throw std::invalid_argument("--model is required unless --icp-only");
            const RPointHopModel model = bench_model.empty() ? RPointHopModel{} : load_model(bench_model);
            const auto clouds = load_dir(bench_dir);
            spec.method = icp_only ? BenchMethod::icp_only : BenchMethod::rpointhop;
            spec.use_ratio_test = !no_ratio;
            spec.validate();
            std::string text;
            if (ablation) {
                ExperimentSpec with = spec, without = spec;
                with.use_ratio_test = true;
                without.use_ratio_test = false;
                const BenchReport a = run_benchmark(model, clouds, with, "with ratio test");
                const BenchReport b = run_benchmark(model, clouds, without, "without ratio test");
                spdlog::info("benchmark took {:.2f} s", a.total_runtime_seconds + b.total_runtime_seconds);
                text = format_bench_report(a) + "\n" + format_bench_report(b);
            } else {
                const BenchReport r = run_benchmark(model, clouds, spec, icp_only ? "icp only" : "");
                spdlog::info("benchmark took {:.2f} s", r.total_runtime_seconds);
                text = format_bench_report(r);
            }
            if (bench_out.empty()) {
                std::cout << text;
            } else {
                write_file(bench_out, text);
            }
        } else if (*synth_cmd) {
            fs::create_directories(synth_dir);
            const CloudFormat format = parse_cloud_format(synth_format);
            for (std::size_t i = 0; i < synth_count; ++i) {
                char name[32];
                std::snprintf(name, sizeof name, "shape_%04zu.%s", i, synth_format.c_str());
                save_cloud(synthetic_shape(synth_points, derive_seed(synth_seed, i)),
                           (fs::path(synth_dir) / name).string(), format);
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
