#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "hicodit/checkpoint.hpp"
#include "hicodit/config.hpp"
#include "hicodit/corpus_io.hpp"

using namespace hicodit;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
  protected:
    static fs::path dir;

    static void SetUpTestSuite() {
        dir = fs::temp_directory_path() / ("hicodit_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
        ASSERT_EQ(run("gen-data --out " + p("train.hcdt") + " -n 100").code, 0);
        ASSERT_EQ(run("gen-data --out " + p("held.hcdt") + " -n 40 --stream 1").code, 0);
        ASSERT_EQ(run("train --corpus " + p("train.hcdt") + " --out " + p("m.ckpt") + " --iters 10 --stable-csv").code, 0);
    }

    static void TearDownTestSuite() { fs::remove_all(dir); }

    static std::string p(const std::string& name) { return (dir / name).string(); }

    static CliResult run(const std::string& args, const std::string& env = "") {
        const fs::path log = dir / "last.log";
        const std::string cmd = env + " " + std::string(HICODIT_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
        const int st = std::system(cmd.c_str());
        return {WEXITSTATUS(st), slurp(log)};
    }

    static void write(const std::string& name, const std::string& text) { std::ofstream(p(name)) << text; }
};

fs::path Cli::dir;

}  // namespace

TEST_F(Cli, GenDataRecordsAndHeader) {
    const TokenCorpus c = read_corpus_file(p("train.hcdt"));
    EXPECT_EQ(c.grids.size(), 100u);
    EXPECT_EQ(c.header, (CorpusHeader{4, 8, 8, 1}));
    std::ifstream side(p("train.hcdt.conditions.jsonl"));
    int lines = 0;
    for (std::string l; std::getline(side, l);) ++lines;
    EXPECT_EQ(lines, 100);
}

TEST_F(Cli, GenDataByteIdentical) {
    ASSERT_EQ(run("gen-data --out " + p("again.hcdt") + " -n 100").code, 0);
    EXPECT_EQ(slurp(p("again.hcdt")), slurp(p("train.hcdt")));
    EXPECT_EQ(slurp(p("again.hcdt.conditions.jsonl")), slurp(p("train.hcdt.conditions.jsonl")));
    ASSERT_EQ(run("gen-data --out " + p("other.hcdt") + " -n 100 --seed 99").code, 0);
    EXPECT_NE(slurp(p("other.hcdt")), slurp(p("train.hcdt")));
}

TEST_F(Cli, GenDataUsageErrors) {
    EXPECT_EQ(run("gen-data --out " + p("zero.hcdt") + " -n 0").code, 2);
    EXPECT_EQ(run("gen-data --out /nonexistent_dir/x.hcdt -n 5").code, 2);
    EXPECT_EQ(run("gen-data -n 5").code, 2);
    EXPECT_EQ(run("").code, 2);
}

TEST_F(Cli, TrainWritesMetricsRows) {
    const std::string csv = slurp(p("m.ckpt.metrics.csv"));
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "iter,dse_loss,id_loss,total_loss,mask_fraction_mean,wall_ms");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 10);
}

TEST_F(Cli, TrainZeroLearningRateKeepsInitialParameters) {
    ASSERT_EQ(run("train --corpus " + p("train.hcdt") + " --out " + p("lr0.ckpt") + " --iters 5 --lr 0").code, 0);
    const ScoreNetwork loaded = load_checkpoint(p("lr0.ckpt"));
    EXPECT_TRUE(loaded.parameters() == make_network(ExperimentConfig{}).parameters());
}

TEST_F(Cli, TrainErrors) {
    EXPECT_EQ(run("train --corpus " + p("missing.hcdt") + " --out " + p("x.ckpt")).code, 2);
    const CliResult nan = run("train --corpus " + p("train.hcdt") + " --out " + p("nan.ckpt") + " --iters 20 --fault-nan-after 4");
    EXPECT_EQ(nan.code, 2);
    EXPECT_NE(nan.out.find("last good iteration 4"), std::string::npos) << nan.out;
    EXPECT_FALSE(fs::exists(p("nan.ckpt")));
}

TEST_F(Cli, TrainAblationFlags) {
    ASSERT_EQ(run("train --corpus " + p("train.hcdt") + " --out " + p("flat.ckpt") + " --iters 2 --flat-ablation").code, 0);
    EXPECT_EQ(load_checkpoint(p("flat.ckpt")).config().variant, NetworkVariant::flat);
    ASSERT_EQ(run("train --corpus " + p("train.hcdt") + " --out " + p("ss.ckpt") + " --iters 2 --single-scale-adaln").code, 0);
    EXPECT_EQ(load_checkpoint(p("ss.ckpt")).config().variant, NetworkVariant::single_scale);
}

TEST_F(Cli, SampleDefaultsAndReproducibility) {
    const std::string base = "sample --ckpt " + p("m.ckpt") + " --conditions " + p("held.hcdt.conditions.jsonl");
    const CliResult a = run(base + " --out " + p("s1.hcdt") + " --seed 3");
    ASSERT_EQ(a.code, 0) << a.out;
    EXPECT_NE(a.out.find("(64 steps)"), std::string::npos) << a.out;
    ASSERT_EQ(run(base + " --out " + p("s2.hcdt") + " --seed 3").code, 0);
    EXPECT_EQ(slurp(p("s1.hcdt")), slurp(p("s2.hcdt")));
    ASSERT_EQ(run(base + " --out " + p("s3.hcdt") + " --seed 3", "HCDT_THREADS=3").code, 0);
    EXPECT_EQ(slurp(p("s1.hcdt")), slurp(p("s3.hcdt")));
    const TokenCorpus c = read_corpus_file(p("s1.hcdt"));
    EXPECT_EQ(c.grids.size(), 40u);
    for (const auto& g : c.grids) EXPECT_EQ(g.masked_count(), 0);
    ASSERT_EQ(run(base + " --out " + p("s4.hcdt") + " --seed 3 --steps 8 --w-lip 0").code, 0);
}

TEST_F(Cli, SampleNullMarkers) {
    write("nulls.jsonl", "{\"lip\": null, \"id\": null, \"emotions\": null}\n{\"emotions\": [1, 2]}\n");
    const CliResult r = run("sample --ckpt " + p("m.ckpt") + " --conditions " + p("nulls.jsonl") + " --out " + p("n.hcdt"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(read_corpus_file(p("n.hcdt")).grids.size(), 2u);
    write("badshape.jsonl", "{\"emotions\": [1, 2, 3]}\n");
    EXPECT_EQ(run("sample --ckpt " + p("m.ckpt") + " --conditions " + p("badshape.jsonl") + " --out " + p("b.hcdt")).code, 2);
}

TEST_F(Cli, SampleCheckpointConfigMismatch) {
    write("c32.json", "{\"network\": {\"channels\": 32}}");
    const CliResult r = run("sample --ckpt " + p("m.ckpt") + " --config " + p("c32.json") + " --conditions " +
                      p("held.hcdt.conditions.jsonl") + " --out " + p("mm.hcdt"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("mismatch"), std::string::npos) << r.out;
}

TEST_F(Cli, EvalOracleTable) {
    const CliResult r = run("eval --config " + std::string(HICODIT_SOURCE_DIR) + "/configs/desk.json --oracle --corpus " +
                      p("held.hcdt") + " --out " + p("eval.csv") + " --samples 40");
    ASSERT_EQ(r.code, 0) << r.out;
    const std::string csv = slurp(p("eval.csv"));
    for (const char* key : {"metric,value", "heldout_dse,", "oracle_dse,", "accuracy_level0,", "accuracy,", "bayes_rate,",
                            "lip_agreement,", "emotion_agreement,"}) {
        EXPECT_NE(csv.find(key), std::string::npos) << key;
    }
    EXPECT_EQ(csv.find("sample_tv"), std::string::npos);  // desk config is not enumerable
    EXPECT_EQ(run("eval --config " + std::string(HICODIT_SOURCE_DIR) + "/configs/desk.json --corpus " + p("held.hcdt") +
                  " --out " + p("e.csv"))
                  .code,
              2);
}

TEST_F(Cli, VerifyOnlyAndFault) {
    const CliResult g = run("verify --only dropout");
    EXPECT_EQ(g.code, 0) << g.out;
    EXPECT_NE(g.out.find("PASS dropout/"), std::string::npos);
    EXPECT_EQ(g.out.find("marginals/"), std::string::npos);
    const CliResult f = run("verify --only marginals --fault sigma-bar-nonmonotone");
    EXPECT_EQ(f.code, 1) << f.out;
    EXPECT_NE(f.out.find("FAIL marginals/sigma_bar_strictly_increasing"), std::string::npos) << f.out;
    EXPECT_EQ(run("verify --only nope").code, 2);
}

TEST_F(Cli, VerifyGradientsSubsuite) {
    const CliResult g = run("verify --only gradients");
    EXPECT_EQ(g.code, 0) << g.out;
    EXPECT_NE(g.out.find("PASS gradients/desk_network_hierarchical"), std::string::npos) << g.out;
    EXPECT_EQ(g.out.find("dropout/"), std::string::npos);
}

TEST_F(Cli, ConfigUnknownKeyRejected) {
    write("bad.json", "{\"train\": {\"learning_rate\": 0.1}}");
    const CliResult r = run("train --config " + p("bad.json") + " --corpus " + p("train.hcdt") + " --out " + p("y.ckpt"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("unknown key 'learning_rate'"), std::string::npos) << r.out;
}

TEST(Config, DefaultsAndRoundTrip) {
    const ExperimentConfig d = config_from_json(nlohmann::json::object());
    EXPECT_EQ(d.train.lambda_id, 100.0);
    EXPECT_EQ(d.guidance.steps, 64);
    EXPECT_EQ(d.network_config().channels, 64);
    ExperimentConfig c;
    c.train.lr = 0.003;
    c.network.variant = NetworkVariant::single_scale;
    c.synth.noise_eps = 0.05;
    const ExperimentConfig back = config_from_json(config_to_json(c));
    EXPECT_EQ(config_to_json(back), config_to_json(c));
    EXPECT_EQ(back.network_config(), c.network_config());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"bogus": {}})")), std::invalid_argument);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"network": {"chanels": 8}})")), std::invalid_argument);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"schedule": {"kind": "cosine"}})")), std::invalid_argument);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"state_space": {"split": 4}})")), std::exception);
}

TEST(Config, ShippedDeskConfigLoads) {
    const ExperimentConfig c = load_config(std::string(HICODIT_SOURCE_DIR) + "/configs/desk.json");
    const NetworkConfig n = c.network_config();
    EXPECT_EQ(n.levels, 4);
    EXPECT_EQ(n.split, 1);
    EXPECT_EQ(n.vocab, 8);
    EXPECT_EQ(n.frames, 8);
    EXPECT_EQ(n.channels, 64);
    EXPECT_EQ(n.low_blocks + n.high_blocks, 4);
}
