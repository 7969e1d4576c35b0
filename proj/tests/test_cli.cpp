#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rpointhop/cloud.h"
#include "rpointhop/pipeline.h"
#include "test_util.h"

using namespace rpointhop;
using rpointhop::testing::TempDir;

namespace {

struct CliRun {
    int code;
    std::string out;  // stdout and stderr
};

CliRun run(const std::string& args) {
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

// Small corpus and model shared by the tests in this file.
class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("cli");
        std::ofstream(dir_->file("small.cfg")) << "k_lrf = 16\nnum_points = 256,128,64\nk_neighbors = 16,16,16\n";
        ASSERT_EQ(run("synth --output-dir " + dir_->file("train") + " --count 4 --points 300 --seed 1").code, 0);
        ASSERT_EQ(run("synth --output-dir " + dir_->file("test") + " --count 2 --points 256 --seed 2 --format ply").code,
                  0);
        const CliRun t = run("train --input-dir " + dir_->file("train") + " --config " + dir_->file("small.cfg") +
                          " --output " + dir_->file("model.bin"));
        ASSERT_EQ(t.code, 0) << t.out;
        train_out_ = new std::string(t.out);
    }
    static void TearDownTestSuite() {
        delete dir_;
        delete train_out_;
    }
    static TempDir* dir_;
    static std::string* train_out_;
};

TempDir* CliTest::dir_ = nullptr;
std::string* CliTest::train_out_ = nullptr;

}  // namespace

TEST_F(CliTest, TrainPrintsSummaryAndIsDeterministic) {
    EXPECT_NE(train_out_->find("feature_dim: "), std::string::npos);
    EXPECT_NE(train_out_->find("hop 3 channels: "), std::string::npos);
    EXPECT_NE(train_out_->find("parameters: "), std::string::npos);
    const CliRun again = run("train --input-dir " + dir_->file("train") + " --config " + dir_->file("small.cfg") +
                          " --output " + dir_->file("model2.bin"));
    ASSERT_EQ(again.code, 0);
    EXPECT_EQ(slurp(dir_->file("model.bin")), slurp(dir_->file("model2.bin")));
    EXPECT_EQ(load_model(dir_->file("model.bin")).config.hops.size(), 3u);
}

TEST_F(CliTest, RegisterWritesReportAndAlignedCloud) {
    const PointCloud target = load_cloud(dir_->file("test/shape_0000.ply"));
    RigidTransform gt;
    gt.rotation = rpointhop::testing::rot_z(35);
    gt.translation = Eigen::Vector3d(0.1, 0.2, -0.1);
    save_cloud(apply_transform(target, gt), dir_->file("source.xyz"));
    const std::string args = "register --model " + dir_->file("model.bin") + " --source " + dir_->file("source.xyz") +
                             " --target " + dir_->file("test/shape_0000.ply") + " --output ";
    const CliRun r = run(args + dir_->file("reg.txt"));
    ASSERT_EQ(r.code, 0) << r.out;
    const std::string report = slurp(dir_->file("reg.txt"));
    EXPECT_EQ(report.rfind("convention:", 0), 0u);
    EXPECT_NE(report.find("pairs_used: "), std::string::npos);
    const PointCloud aligned = load_cloud(dir_->file("reg_aligned.xyz"));
    ASSERT_EQ(aligned.size(), target.size());
    for (std::size_t i = 0; i < target.size(); ++i) EXPECT_LT((aligned.point(i) - target.point(i)).norm(), 1e-5);

    ASSERT_EQ(run(args + dir_->file("reg2.txt")).code, 0);
    EXPECT_EQ(slurp(dir_->file("reg2.txt")), report);
}

TEST_F(CliTest, FeaturesCsv) {
    const CliRun r = run("features --model " + dir_->file("model.bin") + " --input " + dir_->file("test/shape_0001.ply") +
                      " --output " + dir_->file("f.csv"));
    ASSERT_EQ(r.code, 0) << r.out;
    std::istringstream in(slurp(dir_->file("f.csv")));
    std::string header, line;
    std::getline(in, header);
    EXPECT_EQ(header.rfind("index,x,y,z,f0", 0), 0u);
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 64u);
}

TEST_F(CliTest, BenchmarkIsByteIdenticalAcrossRuns) {
    const std::string args = "benchmark --model " + dir_->file("model.bin") + " --test-dir " + dir_->file("test") +
                             " --trials 3 --seed 5 --output ";
    ASSERT_EQ(run(args + dir_->file("b1.txt")).code, 0);
    ASSERT_EQ(run(args + dir_->file("b2.txt")).code, 0);
    const std::string text = slurp(dir_->file("b1.txt"));
    EXPECT_FALSE(text.empty());
    EXPECT_EQ(text, slurp(dir_->file("b2.txt")));
    EXPECT_NE(text.find("MAE(R)"), std::string::npos);

    const CliRun abl = run("benchmark --model " + dir_->file("model.bin") + " --test-dir " + dir_->file("test") +
                        " --trials 2 --ablation");
    ASSERT_EQ(abl.code, 0) << abl.out;
    EXPECT_NE(abl.out.find("# benchmark: with ratio test"), std::string::npos);
    EXPECT_NE(abl.out.find("# benchmark: without ratio test"), std::string::npos);
}

TEST_F(CliTest, ErrorsExitNonZero) {
    std::filesystem::create_directories(dir_->file("empty"));
    const CliRun empty = run("train --input-dir " + dir_->file("empty") + " --output " + dir_->file("x.bin"));
    EXPECT_EQ(empty.code, 1);
    EXPECT_NE(empty.out.find("no point clouds found"), std::string::npos);
    EXPECT_FALSE(std::filesystem::exists(dir_->file("x.bin")));

    const CliRun missing = run("register --model " + dir_->file("nope.bin") + " --source " + dir_->file("source.xyz") +
                            " --target " + dir_->file("source.xyz") + " --output " + dir_->file("r.txt"));
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.out.find("error: "), std::string::npos);

    std::ofstream(dir_->file("bad.bin")) << "RPH1 not really a model";
    const CliRun bad = run("features --model " + dir_->file("bad.bin") + " --input " + dir_->file("source.xyz") +
                        " --output " + dir_->file("f2.csv"));
    EXPECT_EQ(bad.code, 1);

    EXPECT_NE(run("benchmark --test-dir " + dir_->file("test") + " --icp-only --no-ratio-test").code, 0);
    EXPECT_NE(run("benchmark --test-dir " + dir_->file("test")).code, 0);
    EXPECT_NE(run("").code, 0);
}
