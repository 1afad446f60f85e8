#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "ssnn/cli.hpp"
#include "ssnn/config.hpp"

using namespace ssnn;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "ssnn");
    std::vector<char*> argv;
    for (std::string& a : args) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("ssnn_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("config keys parse and unknown keys list the registry") {
    CliConfig cfg;
    cfg.apply("train.learning_rate", "0.25");
    CHECK(cfg.train.learning_rate == 0.25);
    cfg.apply("train.mode", "relaxed");
    CHECK(cfg.train.mode == TrainMode::Relaxed);
    cfg.apply("pendulum.dt", "0.02");
    CHECK(cfg.pendulum.dt == 0.02);
    cfg.apply_assignment("train.K = 4");
    CHECK(cfg.train.dims.K == 4);

    try {
        cfg.apply("train.nonsense", "1");
        FAIL("expected usage_error");
    } catch (const usage_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("train.learning_rate") != std::string::npos);
        CHECK(msg.find("pendulum.dt") != std::string::npos);
    }
    CHECK_THROWS_AS(cfg.apply("train.iterations", "ten"), usage_error);
}

TEST_CASE("config files support comments and sections") {
    TempDir dir;
    std::string path = dir / "run.cfg";
    {
        std::ofstream out(path);
        out << "# experiment setup\n";
        out << "train.iterations = 42   #短 run\n";
        out << "\n";
        out << "pendulum.noise_std = 0.125\n";
    }
    CliConfig cfg;
    cfg.load_file(path);
    CHECK(cfg.train.iterations == 42);
    CHECK(cfg.pendulum.noise_std == 0.125);
}

TEST_CASE("gen-data is byte-reproducible under a fixed seed") {
    TempDir dir;
    for (const std::string kind : {"pendulum", "ssnn"}) {
        std::string a = dir / (kind + "_a"), b = dir / (kind + "_b");
        REQUIRE(run({"gen-data", "--kind", kind, "--out", a, "--count", "3", "--length", "40", "--seed",
                     "7"}) == 0);
        REQUIRE(run({"gen-data", "--kind", kind, "--out", b, "--count", "3", "--length", "40", "--seed",
                     "7"}) == 0);
        CHECK(slurp(a + ".csv") == slurp(b + ".csv"));
        if (kind == "ssnn") {
            CHECK(slurp(a + ".truth.csv") == slurp(b + ".truth.csv"));
            CHECK(slurp(a + ".model.ckpt") == slurp(b + ".model.ckpt"));
        } else {
            CHECK(slurp(a + ".targets.csv") == slurp(b + ".targets.csv"));
        }
    }
}

TEST_CASE("train, sample, eval and oracle chain together") {
    TempDir dir;
    std::string data = dir / "data";
    REQUIRE(run({"gen-data", "--kind", "ssnn", "--out", data, "--count", "4", "--length", "20", "--seed",
                 "11", "--set", "train.K=2", "--set", "train.M=3", "--set", "train.m=2"}) == 0);

    std::string ckpt = dir / "model.ckpt";
    std::string hist = dir / "history.jsonl";
    REQUIRE(run({"train", "--data", data + ".csv", "--out", ckpt, "--history", hist, "--seed", "3",
                 "--set", "train.iterations=8", "--set", "train.K=2", "--set", "train.M=3", "--set",
                 "train.batch_size=2", "--set", "train.e=3", "--set", "train.q=3", "--set",
                 "train.h=2"}) == 0);
    CHECK(fs::exists(ckpt));

    // history is one JSON object per iteration
    std::ifstream h(hist);
    int lines = 0;
    std::string line;
    while (std::getline(h, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 8);

    std::string sampled = dir / "sampled";
    REQUIRE(run({"sample", "--ckpt", ckpt, "--count", "2", "--length", "15", "--out", sampled, "--seed",
                 "5"}) == 0);
    CHECK(fs::exists(sampled + ".csv"));
    CHECK(fs::exists(sampled + ".truth.csv"));

    std::string report = dir / "report.json";
    REQUIRE(run({"eval", "--ckpt", ckpt, "--data", data + ".csv", "--truth", data + ".truth.csv",
                 "--report", report, "--elbo-samples", "4", "--seed", "2"}) == 0);
    std::string rj = slurp(report);
    CHECK(rj.find("\"report_version\": 1") != std::string::npos);
    CHECK(rj.find("error_mean") != std::string::npos);

    REQUIRE(run({"oracle", "--ckpt", ckpt, "--data", data + ".csv", "--out", dir / "oracle.json",
                 "--map-out", dir / "map.csv"}) == 0);
    CHECK(fs::exists(dir / "oracle.json"));
    CHECK(fs::exists(dir / "map.csv"));
}

TEST_CASE("same-seed train runs produce identical artifacts") {
    TempDir dir;
    std::string data = dir / "data";
    REQUIRE(run({"gen-data", "--kind", "ssnn", "--out", data, "--count", "3", "--length", "15", "--seed",
                 "21", "--set", "train.K=2", "--set", "train.M=2", "--set", "train.m=2"}) == 0);

    auto train_once = [&](const std::string& tag) {
        std::string ckpt = dir / (tag + ".ckpt");
        std::string hist = dir / (tag + ".jsonl");
        REQUIRE(run({"train", "--data", data + ".csv", "--out", ckpt, "--history", hist, "--seed", "9",
                     "--set", "train.iterations=6", "--set", "train.K=2", "--set", "train.M=2", "--set",
                     "train.e=3", "--set", "train.q=3", "--set", "train.h=2", "--set",
                     "train.batch_size=2"}) == 0);
        return std::make_pair(slurp(ckpt), slurp(hist));
    };
    auto [c1, h1] = train_once("run1");
    auto [c2, h2] = train_once("run2");
    CHECK(c1 == c2);
    CHECK(h1 == h2);
}

TEST_CASE("eval with mismatched dims exits 2 with a dimension message") {
    TempDir dir;
    std::string narrow = dir / "narrow";
    REQUIRE(run({"gen-data", "--kind", "ssnn", "--out", narrow, "--count", "2", "--length", "10",
                 "--seed", "13", "--set", "train.K=2", "--set", "train.M=2", "--set", "train.m=2"}) == 0);
    std::string wide = dir / "wide";
    REQUIRE(run({"gen-data", "--kind", "ssnn", "--out", wide, "--count", "2", "--length", "10", "--seed",
                 "13", "--set", "train.K=2", "--set", "train.M=2", "--set", "train.m=3"}) == 0);

    CHECK(run({"eval", "--ckpt", narrow + ".model.ckpt", "--data", wide + ".csv"}) == 2);
}

TEST_CASE("usage errors exit 1") {
    TempDir dir;
    CHECK(run({"definitely-not-a-command"}) == 1);
    CHECK(run({"gen-data", "--kind", "pendulum", "--out", dir / "x", "--set", "bogus.key=1"}) == 1);
    CHECK(run({"gen-data", "--kind", "marble", "--out", dir / "y"}) == 1);
}

TEST_CASE("gradcheck passes on a tiny instance") {
    CHECK(run({"gradcheck", "--T", "3", "--K", "2", "--M", "2", "--obs-dim", "2", "--h", "2", "--e", "2",
               "--q", "2", "--seed", "5"}) == 0);
}
