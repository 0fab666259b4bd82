#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "fairlong/io.hpp"

namespace fs = std::filesystem;

namespace {

struct Workspace {
    fs::path root;
    Workspace() {
        const auto tag = std::chrono::steady_clock::now().time_since_epoch().count();
        root = fs::temp_directory_path() / ("fairlong-cli-" + std::to_string(tag));
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }
    std::string file(const std::string& name) const { return (root / name).string(); }
};

int run(const std::string& args, const std::string& log) {
    const std::string cmd =
        std::string(FAIRLONG_CLI_PATH) + " " + args + " >" + log + ".out 2>" + log + ".err";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kSmallConfig =
    "[dataset]\n"
    "n = 120\n"
    "d = 2\n"
    "horizon = 3\n"
    "[model]\n"
    "h1 = 8\n"
    "h2 = 8\n"
    "gru_hidden = 8\n"
    "dim_z = 2\n"
    "[training]\n"
    "epochs = 3\n"
    "batch_size = 64\n"
    "rcgan_rounds = 5\n"
    "rgd_rounds = 2\n"
    "target_T = 3\n"
    "[evaluation]\n"
    "n_repeats = 2\n"
    "target_T = 3\n"
    "start_step = 1\n"
    "horizon = 3\n"
    "[seed]\n"
    "master = 424242\n";

}  // namespace

TEST_CASE("full pipeline: generate, train, evaluate, report") {
    Workspace ws;
    std::ofstream(ws.file("cfg.ini")) << kSmallConfig;
    const std::string common = "--config " + ws.file("cfg.ini") + " --out " + ws.file("out");

    REQUIRE(run("generate " + common, ws.file("gen")) == 0);
    CHECK(fs::exists(ws.file("out/train.csv")));
    CHECK(fs::exists(ws.file("out/val.csv")));
    CHECK(fs::exists(ws.file("out/test.csv")));
    CHECK(fs::exists(ws.file("out/ground_truth.json")));

    // deeplf before its prerequisites exist -> prerequisite exit code
    CHECK(run("train " + common + " --phase deeplf", ws.file("pre")) == 3);

    REQUIRE(run("train " + common + " --phase phase1", ws.file("p1")) == 0);
    CHECK(fs::exists(ws.file("out/phase1.json")));
    CHECK(fs::exists(ws.file("out/train_phase1.log.jsonl")));

    REQUIRE(run("train " + common + " --phase rcgan", ws.file("gan")) == 0);
    CHECK(fs::exists(ws.file("out/generator.json")));
    CHECK(fs::exists(ws.file("out/discriminator.json")));

    REQUIRE(run("train " + common + " --phase deeplf", ws.file("lf")) == 0);
    CHECK(fs::exists(ws.file("out/deeplf.json")));

    REQUIRE(run("train " + common + " --phase baseline-dp", ws.file("dp")) == 0);
    CHECK(fs::exists(ws.file("out/baseline-dp.json")));

    // the saved phase1 checkpoint is loadable and structurally sound
    fairlong::MlpClassifierParams clf = fairlong::io::load_classifier(ws.file("out/phase1.json"));
    CHECK(clf.d == 2);

    const std::string models = ws.file("out/phase1.json") + " " + ws.file("out/deeplf.json") +
                               " " + ws.file("out/baseline-dp.json");
    REQUIRE(run("evaluate " + common + " --setting 1 --models " + models, ws.file("ev")) == 0);
    CHECK(fs::exists(ws.file("out/report_phase1.json")));
    CHECK(fs::exists(ws.file("out/report_deeplf.json")));
    CHECK(fs::exists(ws.file("out/comparison.csv")));
    {
        std::string comparison = slurp(ws.file("out/comparison.csv"));
        CHECK(comparison.find("model,mean_accuracy,mean_local_unfairness,long_term_j1") !=
              std::string::npos);
        CHECK(comparison.find("deeplf") != std::string::npos);
    }

    // setting 2 extrapolates past the training range via the generator
    REQUIRE(run("evaluate " + common + " --setting 2 --models " + models, ws.file("ev2")) == 0);
    auto rep = nlohmann::json::parse(slurp(ws.file("out/report_deeplf.json")));
    CHECK(rep.at("setting") == "range-[3,5]");

    // aggregate saved reports
    REQUIRE(run("report --config " + ws.file("cfg.ini") + " --out " + ws.file("out") +
                    " --reports " + ws.file("out/report_phase1.json") + " " +
                    ws.file("out/report_deeplf.json"),
                ws.file("rep")) == 0);
    CHECK(slurp(ws.file("rep.out")).find("deeplf") != std::string::npos);
}

TEST_CASE("generation and training are byte-identical under one seed") {
    Workspace ws;
    std::ofstream(ws.file("cfg.ini")) << kSmallConfig;
    for (const char* out : {"a", "b"}) {
        const std::string common =
            "--config " + ws.file("cfg.ini") + " --out " + ws.file(out);
        REQUIRE(run("generate " + common, ws.file(std::string("g") + out)) == 0);
        REQUIRE(run("train " + common + " --phase phase1", ws.file(std::string("t") + out)) == 0);
    }
    CHECK(slurp(ws.file("a/train.csv")) == slurp(ws.file("b/train.csv")));
    CHECK(slurp(ws.file("a/test.csv")) == slurp(ws.file("b/test.csv")));
    CHECK(slurp(ws.file("a/ground_truth.json")) == slurp(ws.file("b/ground_truth.json")));
    CHECK(slurp(ws.file("a/phase1.json")) == slurp(ws.file("b/phase1.json")));
}

TEST_CASE("seed override changes the generated data") {
    Workspace ws;
    std::ofstream(ws.file("cfg.ini")) << kSmallConfig;
    REQUIRE(run("generate --config " + ws.file("cfg.ini") + " --out " + ws.file("a"),
                ws.file("ga")) == 0);
    REQUIRE(run("generate --config " + ws.file("cfg.ini") + " --out " + ws.file("b") +
                    " --seed 99",
                ws.file("gb")) == 0);
    CHECK(slurp(ws.file("a/train.csv")) != slurp(ws.file("b/train.csv")));
}

TEST_CASE("invalid configs exit with the validation code and name the field") {
    Workspace ws;
    std::ofstream(ws.file("bad.ini")) << "[training]\nsplit_train = 0.9\n";
    CHECK(run("generate --config " + ws.file("bad.ini") + " --out " + ws.file("out"),
              ws.file("bad")) == 2);
    CHECK(slurp(ws.file("bad.err")).find("split") != std::string::npos);

    std::ofstream(ws.file("unknown.ini")) << "[dataset]\nwat = 1\n";
    CHECK(run("generate --config " + ws.file("unknown.ini") + " --out " + ws.file("out"),
              ws.file("unk")) == 2);
    CHECK(slurp(ws.file("unk.err")).find("dataset.wat") != std::string::npos);

    CHECK(run("train --config " + ws.file("bad.ini") + " --out " + ws.file("out") +
                  " --phase nosuch",
              ws.file("ph")) == 2);
}

TEST_CASE("the default config produces the full-scale dataset shape") {
    Workspace ws;
    // defaults everywhere; only the ground-truth fit is shortened
    std::ofstream(ws.file("cfg.ini")) << "[training]\nepochs = 2\n";
    const std::string common = "--config " + ws.file("cfg.ini") + " --out " + ws.file("out");
    REQUIRE(run("generate " + common, ws.file("gen")) == 0);
    CHECK(slurp(ws.file("gen.out")).find("n=10000 d=6 horizon=10") != std::string::npos);
    // 70/10/20 split of 10000 individuals
    fairlong::TimeSeriesDataset train = fairlong::io::load_dataset_csv(ws.file("out/train.csv"));
    CHECK(train.n == 7000);
    CHECK(train.d == 6);
    CHECK(train.horizon == 10);
}
