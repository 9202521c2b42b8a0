#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include "biskip/checkpoint.hpp"
#include "biskip/errors.hpp"
#include "biskip/image_io.hpp"
#include "cli.hpp"
#include "../unit/support.hpp"

using namespace biskip;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kSmallModel = {"--set", "model.channels_path=8,8,8,8,8", "--set",
                                              "model.channels_skip=4,4,4,4,4", "--set",
                                              "model.resblocks_per_scale=1"};

struct Result {
    int code;
    std::string out;
    std::string err;
};

class CliTest : public ::testing::Test {
protected:
    void SetUp() override { ::setenv("BISKIP_RUN_DIR", (dir / "runs").c_str(), 1); }
    void TearDown() override { ::unsetenv("BISKIP_RUN_DIR"); }

    Result run(std::vector<std::string> args, bool small_model = false) {
        if (small_model) args.insert(args.end(), kSmallModel.begin(), kSmallModel.end());
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return {code, out.str(), err.str()};
    }

    std::vector<fs::path> runs_of(const std::string& command) const {
        std::vector<fs::path> v;
        if (!fs::exists(dir / "runs")) return v;
        for (const auto& e : fs::directory_iterator(dir / "runs")) {
            if (e.path().filename().string().rfind(command + "-", 0) == 0) v.push_back(e.path());
        }
        std::sort(v.begin(), v.end());
        return v;
    }

    void make_data(const fs::path& root, int n = 2, int size = 32) {
        const Result r = run({"make-synth", "--n", std::to_string(n), "--size", std::to_string(size), "--seed", "3",
                              "--set", "synth.kernel_size=5", "-o", root.string()});
        ASSERT_EQ(r.code, 0) << r.err;
    }

    fs::path train_small(const fs::path& data, int epochs = 2) {
        const Result r = run({"train", "--data", data.string(), "--epochs", std::to_string(epochs), "--crop", "32",
                              "--scheme", "SA1P-BS", "--lr0", "1e-3"},
                             true);
        EXPECT_EQ(r.code, 0) << r.err;
        return runs_of("train").back();
    }

    TempDir dir{"cli"};
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST(Settings, DefaultsRoundTripThroughText) {
    const cli::Settings d = cli::Settings::defaults();
    cli::Settings back = cli::Settings::defaults();
    back.set("train.lr0", "5");
    back.merge_text(d.to_text());
    EXPECT_EQ(back.values(), d.values());
    const TrainConfig c = cli::train_config(d);
    EXPECT_EQ(c.lr0, TrainConfig{}.lr0);
    EXPECT_EQ(c.scheme_string(), "SA1P-BS");
    EXPECT_EQ(c.d_g_ratio, 2);
    EXPECT_EQ(c.weights.gamma1, LossWeights{}.gamma1);
}

TEST(Settings, UnknownKeysAndBadValuesAreRejected) {
    cli::Settings s = cli::Settings::defaults();
    EXPECT_THROW(s.assign("train.lr=1"), SpecError);
    EXPECT_THROW(s.assign("no equals sign"), SpecError);
    EXPECT_THROW(s.merge_text("# ok\ntrain.epochs = 3\nbogus.key = 1\n"), SpecError);
    s.set("train.epochs", "three");
    EXPECT_THROW(cli::train_config(s), SpecError);
    s = cli::Settings::defaults();
    s.set("train.penalty_weighted", "maybe");
    EXPECT_THROW(cli::train_config(s), SpecError);
}

TEST(Settings, SchemeSuffixSetsVariant) {
    cli::Settings s = cli::Settings::defaults();
    s.assign("train.scheme=A2-S");
    cli::normalize(s);
    EXPECT_EQ(s.get("model.variant"), "S");
    EXPECT_EQ(s.get("train.scheme"), "A2-S");
    s.assign("train.scheme=1P");
    s.assign("model.variant=BS-w/o-R");
    cli::normalize(s);
    EXPECT_EQ(s.get("train.scheme"), "1P-BS-w/o-R");
    EXPECT_EQ(cli::train_config(s).generator.variant, ModelVariant::BS_wo_R);
}

TEST(Settings, CommentsAndWhitespace) {
    cli::Settings s = cli::Settings::defaults();
    s.merge_text("  train.epochs = 12   # twelve\n\n# full line\nseed.init=9\n");
    EXPECT_EQ(s.integer("train.epochs"), 12);
    EXPECT_EQ(s.seed("seed.init"), 9u);
}

TEST(RunDir, CollisionsGetSuffixes) {
    TempDir dir;
    const auto now = std::chrono::system_clock::from_time_t(1700000000);
    const fs::path a = cli::make_run_dir(dir.path(), "train", now);
    const fs::path b = cli::make_run_dir(dir.path(), "train", now);
    const fs::path c = cli::make_run_dir(dir.path(), "train", now);
    EXPECT_EQ(a.filename(), "train-20231114-221320");
    EXPECT_EQ(b.filename(), "train-20231114-221320-2");
    EXPECT_EQ(c.filename(), "train-20231114-221320-3");
}

TEST(ExitCodes, ErrorClasses) {
    EXPECT_EQ(cli::exit_code_for(SpecError("x")), 1);
    EXPECT_EQ(cli::exit_code_for(CheckpointError("x")), 1);
    EXPECT_EQ(cli::exit_code_for(DataError("x")), 2);
    EXPECT_EQ(cli::exit_code_for(DimensionError("x")), 2);
    EXPECT_EQ(cli::exit_code_for(NumericError("x")), 3);
    EXPECT_EQ(cli::exit_code_for(std::runtime_error("x")), 4);
}

TEST_F(CliTest, MakeSynthWritesGoProLayout) {
    make_data(dir / "data", 3, 32);
    for (const char* sub : {"blur", "sharp", "kernels"}) {
        EXPECT_EQ(std::distance(fs::directory_iterator(dir / "data" / sub), fs::directory_iterator{}), 3) << sub;
    }
    ASSERT_EQ(runs_of("make-synth").size(), 1u);
    const auto m = nlohmann::json::parse(read_file(runs_of("make-synth")[0] / "manifest.json"));
    EXPECT_EQ(m["status"], "ok");
    EXPECT_EQ(m["settings"]["synth.count"], "3");
    EXPECT_EQ(m["seeds"]["synth"], "3");
}

TEST_F(CliTest, TrainWritesRunArtifacts) {
    make_data(dir / "data");
    const fs::path r = train_small(dir / "data");
    EXPECT_TRUE(fs::exists(r / "checkpoints" / "epoch_0002.ckpt"));
    const std::string config = read_file(r / "config.txt");
    EXPECT_NE(config.find("train.scheme=SA1P-BS\n"), std::string::npos);
    EXPECT_NE(config.find("seed.init=1\n"), std::string::npos);
    const auto m = nlohmann::json::parse(read_file(r / "manifest.json"));
    EXPECT_EQ(m["scheme"], "SA1P-BS");
    EXPECT_EQ(m["exit_code"], 0);
    EXPECT_EQ(m["seeds"]["alpha"], "3");
    EXPECT_FALSE(m["version"].get<std::string>().empty());
    std::istringstream report(read_file(r / "train_report.jsonl"));
    int lines = 0;
    for (std::string l; std::getline(report, l);) ++lines;
    EXPECT_EQ(lines, 2);

    // The echoed config reproduces the run.
    const Result again = run({"train", "--config", (r / "config.txt").string()});
    ASSERT_EQ(again.code, 0) << again.err;
    EXPECT_EQ(read_file(runs_of("train").back() / "train_report.jsonl"), read_file(r / "train_report.jsonl"));
}

TEST_F(CliTest, TrainSchemeAndVariantFlags) {
    make_data(dir / "data");
    const Result r = run({"train", "--data", (dir / "data").string(), "--epochs", "2", "--crop", "32", "--scheme",
                          "A2", "--variant", "S"},
                         true);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("A2-S"), std::string::npos);
    EXPECT_NE(read_file(runs_of("train").back() / "config.txt").find("train.scheme=A2-S\n"), std::string::npos);
}

TEST_F(CliTest, TrainErrorCodes) {
    Result r = run({"train", "--data", (dir / "missing").string(), "--epochs", "2"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find((dir / "missing").string()), std::string::npos);

    r = run({"train", "--data", (dir / "missing").string(), "--set", "train.nonsense=1"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("train.nonsense"), std::string::npos);

    std::ofstream(dir / "bad.cfg") << "train.epochs=2\nmodel.depth=4\n";
    r = run({"train", "--config", (dir / "bad.cfg").string()});
    EXPECT_EQ(r.code, 1);

    r = run({"train", "--data", (dir / "missing").string(), "--scheme", "A"});
    EXPECT_EQ(r.code, 1);

    r = run({"train", "--no-such-flag"});
    EXPECT_EQ(r.code, 1);

    make_data(dir / "data");
    r = run({"train", "--data", (dir / "data").string(), "--epochs", "2", "--crop", "32", "--scheme", "A1", "--lr0",
             "1e300"},
            true);
    EXPECT_EQ(r.code, 3);
    const auto m = nlohmann::json::parse(read_file(runs_of("train").back() / "manifest.json"));
    EXPECT_EQ(m["exit_code"], 3);
}

TEST_F(CliTest, DeblurFileAndDirectory) {
    make_data(dir / "data");
    const fs::path ck = train_small(dir / "data") / "checkpoints" / "epoch_0002.ckpt";

    // Arbitrary size is padded and cropped back.
    write_png(dir / "odd.png", ByteImage(45, 70, 3, 90));
    Result r = run({"deblur", "--checkpoint", ck.string(), "-i", (dir / "odd.png").string(), "-o",
                    (dir / "odd_out.png").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const ByteImage out = read_image(dir / "odd_out.png");
    EXPECT_EQ(out.height, 45);
    EXPECT_EQ(out.width, 70);

    fs::create_directories(dir / "in" / "nested");
    write_png(dir / "in" / "a.png", ByteImage(32, 32, 3, 10));
    write_png(dir / "in" / "nested" / "b.png", ByteImage(40, 33, 3, 200));
    r = run({"deblur", "--checkpoint", ck.string(), "-i", (dir / "in").string(), "-o", (dir / "outdir").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "outdir" / "a.png"));
    EXPECT_EQ(read_image(dir / "outdir" / "nested" / "b.png").width, 33);

    std::ofstream(dir / "corrupt.png") << "not a png";
    r = run({"deblur", "--checkpoint", ck.string(), "-i", (dir / "corrupt.png").string()});
    EXPECT_EQ(r.code, 2);
    r = run({"deblur", "--checkpoint", (dir / "corrupt.png").string(), "-i", (dir / "odd.png").string()});
    EXPECT_EQ(r.code, 1);
}

TEST_F(CliTest, EvaluateWritesReports) {
    make_data(dir / "data", 3, 32);
    const fs::path ck = train_small(dir / "data") / "checkpoints" / "epoch_0002.ckpt";
    const Result r = run({"evaluate", "--checkpoint", ck.string(), "--data", (dir / "data").string(), "--saliency"});
    ASSERT_EQ(r.code, 0) << r.err;
    const fs::path e = runs_of("evaluate").back();
    std::istringstream csv(read_file(e / "eval.csv"));
    int lines = 0;
    for (std::string l; std::getline(csv, l);) ++lines;
    EXPECT_EQ(lines, 4);
    const auto j = nlohmann::json::parse(read_file(e / "eval_summary.json"));
    EXPECT_EQ(j["count"], 3);
    int maps = 0;
    for (const auto& f : fs::directory_iterator(e / "saliency")) maps += f.path().string().ends_with("_saliency.png");
    EXPECT_EQ(maps, 9);

    fs::create_directories(dir / "bad" / "blur");
    fs::create_directories(dir / "bad" / "sharp");
    write_png(dir / "bad" / "blur" / "p.png", ByteImage(32, 32, 3));
    write_png(dir / "bad" / "sharp" / "p.png", ByteImage(32, 40, 3));
    const Result bad = run({"evaluate", "--checkpoint", ck.string(), "--data", (dir / "bad").string()});
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.err.find("p.png"), std::string::npos);
}

TEST_F(CliTest, FitPriorSnapshotsAndDivisibility) {
    make_data(dir / "data", 1, 32);
    const fs::path target = dir / "data" / "sharp" / "synth_0000.png";
    Result r = run({"fit-prior", "--target", target.string(), "--iters", "4", "--snap", "2,4"}, true);
    ASSERT_EQ(r.code, 0) << r.err;
    const fs::path p = runs_of("fit-prior").back();
    EXPECT_TRUE(fs::exists(p / "snapshot_0002.png"));
    EXPECT_TRUE(fs::exists(p / "snapshot_0004.png"));
    EXPECT_TRUE(fs::exists(p / "output.png"));
    std::istringstream trace(read_file(p / "prior_trace.csv"));
    int lines = 0;
    for (std::string l; std::getline(trace, l);) ++lines;
    EXPECT_EQ(lines, 6);

    write_png(dir / "hundred.png", ByteImage(100, 100, 3, 50));
    r = run({"fit-prior", "--target", (dir / "hundred.png").string(), "--iters", "2"}, true);
    EXPECT_EQ(r.code, 2);
    r = run({"fit-prior", "--target", target.string(), "--iters", "2", "--snap", "5"}, true);
    EXPECT_EQ(r.code, 1);
}

TEST(CliBinary, ExitCodesFromProcess) {
    TempDir dir;
    const std::string env = "BISKIP_RUN_DIR=" + (dir / "runs").string() + " ";
    const std::string bin = BISKIP_CLI_BINARY;
    auto status = [&](const std::string& args) {
        const int s = std::system((env + bin + " " + args + " >/dev/null 2>&1").c_str());
        return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
    };
    EXPECT_EQ(status("--help"), 0);
    EXPECT_EQ(status(""), 1);
    EXPECT_EQ(status("train --data " + (dir / "none").string()), 2);
    EXPECT_EQ(status("train --set nope=1"), 1);
    EXPECT_EQ(status("make-synth --n 1 --size 32 --set synth.kernel_size=5 -o " + (dir / "d").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "d" / "blur" / "synth_0000.png"));
}
