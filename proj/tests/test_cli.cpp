#include "ggds/cli.hpp"
#include "ggds/io.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>

#include <unistd.h>

using namespace ggds;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code;
    std::string out, err;
};

CliRun run(std::vector<std::string> args) {
    args.insert(args.begin(), "ggds");
    std::vector<const char *> argv;
    for (const auto &a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli_main(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("ggds_cli_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string p(const std::string &name) const { return (dir_ / name).string(); }

    void write_text(const std::string &name, const std::string &text) const {
        write_file_atomic(p(name), std::vector<std::uint8_t>(text.begin(), text.end()));
    }

    // 8 x 8 m block: one road along y = 1 and one 3 x 3 m building, 4 m tall.
    void write_map() const {
        write_text("map.json", R"({"extent": [0, 0, 8, 8],
            "roads": [{"points": [[0, 1], [8, 1]], "width": 2}],
            "buildings": [{"polygon": [[3, 4], [6, 4], [6, 7], [3, 7]], "height": 4}]})");
    }

    void write_trajectory(int poses, int size) const {
        std::string t = "{\"fps\": 10, \"poses\": [";
        for (int i = 0; i < poses; ++i) {
            t += std::string(i ? "," : "") + "{\"position\": [" + std::to_string(2.0 + 0.8 * i) +
                 ", 0.5, 1.6], \"look_at\": [4.5, 5.5, 1.0], \"fov_deg\": 60, \"width\": " + std::to_string(size) +
                 ", \"height\": " + std::to_string(size) + "}";
        }
        write_text("traj.json", t + "]}");
    }

    fs::path dir_;
};

} // namespace

TEST_F(CliTest, UnknownSubcommandIsUsageError) {
    const CliRun r = run({"frobnicate"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    EXPECT_NE(r.err.find("optimize"), std::string::npos);
}

TEST_F(CliTest, NoSubcommandAndBadFlagsAreUsageErrors) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"layout", "--map"}).code, 2);
    EXPECT_EQ(run({"init", "--mesh", "m.obj"}).code, 2);
    EXPECT_EQ(run({"export", "--scene", "a", "--out", "b", "--format", "zip"}).code, 2);
}

TEST_F(CliTest, HelpExitsCleanly) {
    const CliRun r = run({"optimize", "--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("lambda_norm"), std::string::npos);
}

TEST_F(CliTest, MissingInputFileNamesThePath) {
    const std::string missing = p("no_such_map.json");
    const CliRun r = run({"layout", "--map", missing, "--voxels", p("v.lsdv"), "--mesh", p("m.obj")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find(missing), std::string::npos);
}

TEST_F(CliTest, BadPriorIsRuntimeError) {
    write_map();
    write_trajectory(1, 16);
    ASSERT_EQ(run({"layout", "--map", p("map.json"), "--voxels", p("v.lsdv"), "--mesh", p("m.obj")}).code, 0);
    ASSERT_EQ(run({"init", "--mesh", p("m.obj"), "--out", p("s.ply")}).code, 0);
    const CliRun r = run({"optimize", "--scene", p("s.ply"), "--out", p("o.ply"), "--trajectory", p("traj.json"),
                       "--prior", "builtin:unicorn", "--set", "steps=1"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("unicorn"), std::string::npos);
    const CliRun cfg = run({"optimize", "--scene", p("s.ply"), "--out", p("o.ply"), "--trajectory", p("traj.json"),
                         "--set", "stepz=1"});
    EXPECT_EQ(cfg.code, 1);
    EXPECT_NE(cfg.err.find("stepz"), std::string::npos);
}

TEST_F(CliTest, EndToEndSmoke) {
    write_map();
    write_trajectory(5, 32);
    CliRun r = run({"layout", "--map", p("map.json"), "--voxels", p("block.lsdv"), "--mesh", p("block.obj"), "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(p("block.obj.manifest.json")));
    const VoxelGrid grid = load_voxels(p("block.lsdv"));
    EXPECT_EQ(grid.spec.dims[0], 16);

    r = run({"init", "--mesh", p("block.obj"), "--out", p("init.ply")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto init = load_scene<float>(p("init.ply"));
    EXPECT_FALSE(init.proxy.empty());

    r = run({"optimize", "--scene", p("init.ply"), "--out", p("opt.ply"), "--trajectory", p("traj.json"), "--config",
             GGDS_DEFAULT_CONFIG, "--set", "steps=200", "--set", "densify_every=50", "--set", "checkpoint_every=100",
             "--set", "jitter_views=3", "--prior", "builtin:gaussian:0.5:0.2", "--seed", "11"});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char *f : {"opt.ply", "opt.env.pfm", "opt.proxy.obj", "opt.loss.csv", "opt.ply.manifest.json",
                          "opt.ckpt_000100.ply", "opt.ckpt_000200.ply"})
        EXPECT_TRUE(fs::exists(p(f))) << f;
    const auto log = read_file(p("opt.loss.csv"));
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 201);
    const auto manifest = read_file(p("opt.ply.manifest.json"));
    const std::string mtext(manifest.begin(), manifest.end());
    EXPECT_NE(mtext.find("\"seed\": 11"), std::string::npos);
    EXPECT_NE(mtext.find("opt.loss.csv"), std::string::npos);
    EXPECT_NE(mtext.find("steps = 200"), std::string::npos);

    r = run({"render", "--scene", p("opt.ply"), "--trajectory", p("traj.json"), "--out-dir", p("frames")});
    ASSERT_EQ(r.code, 0) << r.err;
    for (int i = 0; i < 5; ++i)
        EXPECT_TRUE(fs::exists(p("frames/frame_0000" + std::to_string(i) + ".png"))) << i;
    EXPECT_EQ(std::distance(fs::directory_iterator(p("frames")), fs::directory_iterator{}), 6);

    r = run({"render", "--scene", p("opt.ply"), "--trajectory", p("traj.json"), "--out-dir", p("deferred"),
             "--deferred", "--pfm", "--prior", "builtin:gaussian:0.5:0.2"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto frame = load_pfm(p("deferred/frame_00004.pfm"));
    EXPECT_EQ(frame.width, 32);

    r = run({"export", "--scene", p("opt.ply"), "--out", p("asset.ply")});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"compose", "--scene", p("opt.ply"), "--asset", p("asset.ply"), "--out", p("composed.ply"), "--translate",
             "10,0,0", "--relight"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto composed = load_scene<float>(p("composed.ply"));
    const auto optimized = load_scene<float>(p("opt.ply"));
    EXPECT_EQ(composed.splats.size(), 2 * optimized.splats.size());
    EXPECT_EQ(composed.splats.back().center.x(), optimized.splats.back().center.x() + 10.0f);

    r = run({"export", "--scene", p("opt.ply"), "--out", p("proxy.obj"), "--format", "proxy-obj"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(load_obj(p("proxy.obj")).faces.size(), init.proxy.faces.size());
}

TEST_F(CliTest, SameSeedGivesByteIdenticalExports) {
    write_map();
    write_trajectory(2, 24);
    ASSERT_EQ(run({"layout", "--map", p("map.json"), "--voxels", p("v.lsdv"), "--mesh", p("m.obj")}).code, 0);
    ASSERT_EQ(run({"init", "--mesh", p("m.obj"), "--out", p("s.ply")}).code, 0);
    auto opt = [&](const std::string &out, const std::string &seed) {
        const CliRun r = run({"optimize", "--scene", p("s.ply"), "--out", p(out), "--trajectory", p("traj.json"), "--set",
                           "steps=30", "--set", "jitter_views=2", "--seed", seed});
        ASSERT_EQ(r.code, 0) << r.err;
        ASSERT_EQ(run({"export", "--scene", p(out), "--out", p(out + ".export")}).code, 0);
    };
    opt("a.ply", "5");
    opt("b.ply", "5");
    opt("c.ply", "6");
    EXPECT_EQ(read_file(p("a.ply.export")), read_file(p("b.ply.export")));
    EXPECT_EQ(read_file(p("a.env.pfm")), read_file(p("b.env.pfm")));
    EXPECT_NE(read_file(p("a.ply.export")), read_file(p("c.ply.export")));
}

TEST_F(CliTest, DeltaPriorFromPfmAndLayoutWithDiffusionSampler) {
    write_map();
    write_trajectory(1, 16);
    CliRun r = run({"layout", "--map", p("map.json"), "--voxels", p("v.lsdv"), "--mesh", p("m.obj"), "--sampler",
                 "diffusion", "--chunk-extent", "5", "--overlap", "2", "--seed", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
    ASSERT_EQ(run({"init", "--mesh", p("m.obj"), "--out", p("s.ply")}).code, 0);
    Image<float> target(16, 16, 3, 0.25f);
    save_pfm(p("target.pfm"), target);
    r = run({"optimize", "--scene", p("s.ply"), "--out", p("o.ply"), "--trajectory", p("traj.json"), "--set",
             "steps=5", "--prior", "builtin:delta:" + p("target.pfm")});
    ASSERT_EQ(r.code, 0) << r.err;
    Image<float> wrong(7, 7, 3, 0.25f);
    save_pfm(p("wrong.pfm"), wrong);
    r = run({"optimize", "--scene", p("s.ply"), "--out", p("o.ply"), "--trajectory", p("traj.json"), "--set",
             "steps=5", "--prior", "builtin:delta:" + p("wrong.pfm")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("wrong.pfm"), std::string::npos);
}

TEST_F(CliTest, BenchReportsThroughputAndGpuContext) {
    const CliRun r = run({"bench", "--splats", "2000", "--size", "64", "--frames", "1", "--threads", "2", "--report",
                       p("bench.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("fps"), std::string::npos);
    EXPECT_NE(r.out.find("960p"), std::string::npos);
    EXPECT_TRUE(fs::exists(p("bench.json")));
    EXPECT_TRUE(fs::exists(p("bench.json.manifest.json")));
}
