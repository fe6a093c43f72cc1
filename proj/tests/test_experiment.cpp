#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "debias/errors.hpp"
#include "debias/experiment.hpp"

using namespace debias;
using nlohmann::json;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() / ("debias_exp_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

const char* kTinyConfig = R"(
# tiny experiment for fast pipeline tests
[data]
num_labels = 3
signal_dim = 6
bias_dims = [3]
bias_strengths = [0.9]
signal_noise = 0.45
train_size = 300
dev_size = 120
test_indomain_size = 120
test_ood_size = 90
seed = 9

[loss]
kind = "PoE"
gamma = 2.0

[train]
epochs = 3
batch_size = 32
learning_rate = 0.4
seed = 5

[run]
losses = ["CE", "PoE"]
seeds = [1, 2]

[output]
dir = "PLACEHOLDER"
)";

ExperimentConfig tiny_config(const std::filesystem::path& out_dir, json* echo = nullptr) {
    std::string text = kTinyConfig;
    text.replace(text.find("PLACEHOLDER"), 11, out_dir.string());
    const json tree = parse_toml(text, "tiny.toml");
    if (echo) *echo = tree;
    return config_from_tree(tree);
}

}  // namespace

TEST_CASE("toml subset: sections, scalars, arrays, comments") {
    const json tree = parse_toml(R"(
# top comment
title = "debias \"quoted\" demo"   # trailing comment
count = 42
ratio = -0.75
flag = true
empty = []

[loss]
kind = "DFL"
gammas = [0.5, 1, 2]

[data.ingest]
train = "data/train.jsonl"
)",
                                 "test.toml");
    CHECK(tree.at("title").get<std::string>() == "debias \"quoted\" demo");
    CHECK(tree.at("count").get<int>() == 42);
    CHECK(tree.at("ratio").get<double>() == -0.75);
    CHECK(tree.at("flag").get<bool>() == true);
    CHECK(tree.at("empty").is_array());
    CHECK(tree.at("loss").at("kind").get<std::string>() == "DFL");
    CHECK(tree.at("loss").at("gammas").size() == 3);
    CHECK(tree.at("data").at("ingest").at("train").get<std::string>() == "data/train.jsonl");
}

TEST_CASE("toml subset errors carry the line number") {
    auto expect_line = [](const char* text, const char* fragment) {
        try {
            parse_toml(text, "bad.toml");
            FAIL("expected ConfigError for: ", text);
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find(fragment) != std::string::npos);
        }
    };
    expect_line("key_without_value\n", "line 1");
    expect_line("\n\nx = \"unterminated\n", "line 3");
    expect_line("bad!key = 1\n", "invalid key");
    expect_line("[]\n", "empty section");
    expect_line("x = [1, \"two\n", "line 1");
    expect_line("x = 99999999999999999999999999\n", "integer out of range");
}

TEST_CASE("missing required key is named exactly") {
    try {
        config_from_tree(parse_toml("[train]\nepochs = 3\n", "x.toml"));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()) == "missing required key: loss.kind");
    }
}

TEST_CASE("unknown keys and sections are rejected by name") {
    try {
        config_from_tree(parse_toml("[loss]\nkind = \"CE\"\ngama = 1\n", "x.toml"));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("loss.gama") != std::string::npos);
    }
    CHECK_THROWS_AS(config_from_tree(parse_toml("[lose]\nkind = \"CE\"\n", "x.toml")),
                    ConfigError);
}

TEST_CASE("config defaults and field mapping") {
    const json tree = parse_toml(R"(
[loss]
kind = "DFL"
gamma = 3.0

[data]
num_labels = 3
train_size = 100

[eval]
label_map = [0, 1, 1]
label_map_names = ["ent", "not_ent"]
)",
                                 "cfg.toml");
    const ExperimentConfig cfg = config_from_tree(tree);
    CHECK(cfg.loss.kind == LossKind::DFL);
    CHECK(cfg.loss.gamma == 3.0);
    CHECK(cfg.loss.alpha == 1.0);
    CHECK(cfg.train.loss.kind == LossKind::DFL);
    CHECK(cfg.train.epochs == 20);
    REQUIRE(cfg.gen.has_value());
    CHECK(cfg.gen->train_size == 100);
    CHECK(cfg.gen->bias_strengths == std::vector<double>{0.9});
    REQUIRE(cfg.label_map.has_value());
    CHECK(cfg.label_map->target_of == std::vector<std::size_t>{0, 1, 1});
    CHECK(cfg.label_map->target_names == std::vector<std::string>{"ent", "not_ent"});
    CHECK(cfg.run_losses ==
          std::vector<LossKind>{LossKind::CE, LossKind::PoE, LossKind::DFL});
    CHECK(cfg.run_seeds == std::vector<std::uint64_t>{1, 2, 3, 4});
    CHECK(cfg.out_dir == std::filesystem::path("out"));
}

TEST_CASE("generator keys cannot mix with ingest paths") {
    CHECK_THROWS_AS(config_from_tree(parse_toml(R"(
[loss]
kind = "CE"
[data]
num_labels = 3
[data.ingest]
train = "t.jsonl"
)",
                                                "cfg.toml")),
                    ConfigError);
}

TEST_CASE("bad hyperparameters are rejected at schema time") {
    CHECK_THROWS_AS(
        config_from_tree(parse_toml("[loss]\nkind = \"CE\"\ngamma = -1.0\n", "x.toml")),
        ConfigError);
    CHECK_THROWS_AS(
        config_from_tree(parse_toml("[loss]\nkind = \"Huh\"\n", "x.toml")), ConfigError);
    CHECK_THROWS_AS(config_from_tree(parse_toml(
                        "[loss]\nkind = \"CE\"\n[data]\nbias_strengths = [0.1]\n", "x.toml")),
                    ConfigError);
}

TEST_CASE("materialize_data names generated splits") {
    const auto dir = temp_dir("mat");
    const ExperimentConfig cfg = tiny_config(dir);
    const auto data = materialize_data(cfg);
    CHECK(data.count("train") == 1);
    CHECK(data.count("dev") == 1);
    CHECK(data.count("test_indomain") == 1);
    CHECK(data.count("test_ood") == 1);
    std::filesystem::remove_all(dir);
}

TEST_CASE("materialize_data ingests JSONL splits") {
    const auto dir = temp_dir("ingest");
    const ExperimentConfig gen_cfg = tiny_config(dir);
    const auto generated = materialize_data(gen_cfg);
    save_jsonl(generated.at("train"), dir / "train.jsonl");
    save_jsonl(generated.at("dev"), dir / "dev.jsonl");

    json tree = parse_toml("[loss]\nkind = \"CE\"\n", "x.toml");
    tree["data"]["ingest"]["train"] = (dir / "train.jsonl").string();
    tree["data"]["ingest"]["dev"] = (dir / "dev.jsonl").string();
    const ExperimentConfig cfg = config_from_tree(tree);
    const auto data = materialize_data(cfg);
    CHECK(data.at("train").size() == generated.at("train").size());
    CHECK(data.at("dev").size() == generated.at("dev").size());
    std::filesystem::remove_all(dir);
}

TEST_CASE("branches_for adapts the branch list to the loss kind") {
    ExperimentConfig cfg;
    CHECK(branches_for(LossKind::CE, cfg, 2).empty());
    CHECK(branches_for(LossKind::PoE, cfg, 2).size() == 1);
    CHECK(branches_for(LossKind::JointPoE, cfg, 2).size() == 2);
    CHECK(branches_for(LossKind::JointDFL, cfg, 3).size() == 3);

    BiasExtractor second;
    second.channel = 1;
    cfg.branches = {second};
    CHECK(branches_for(LossKind::DFL, cfg, 2)[0].channel == 1);
    CHECK(branches_for(LossKind::JointPoE, cfg, 2).size() == 1);
}

TEST_CASE("cmd_gen writes per-split files and a manifest, deterministically") {
    const auto dir = temp_dir("gen");
    json echo;
    const ExperimentConfig cfg = tiny_config(dir, &echo);
    const auto artifacts = cmd_gen(cfg, echo);
    REQUIRE(artifacts.size() == 4);
    for (const auto& p : artifacts) CHECK(std::filesystem::exists(p));
    CHECK(std::filesystem::exists(dir / "manifest.json"));

    const std::string train_bytes = slurp(dir / "data" / "train.jsonl");
    const std::string manifest_bytes = slurp(dir / "manifest.json");
    cmd_gen(cfg, echo);  // rerun in place
    CHECK(slurp(dir / "data" / "train.jsonl") == train_bytes);
    CHECK(slurp(dir / "manifest.json") == manifest_bytes);

    json manifest = json::parse(manifest_bytes);
    CHECK(manifest.at("command") == "gen");
    CHECK(manifest.at("artifacts").size() == 4);
    for (const auto& [name, digest] : manifest.at("artifacts").items()) {
        CHECK(digest.get<std::string>().substr(0, 6) == "fnv64:");
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("cmd_train produces checkpoint, trace and reports") {
    const auto dir = temp_dir("train");
    json echo;
    const ExperimentConfig cfg = tiny_config(dir, &echo);
    const auto artifacts = cmd_train(cfg, echo);
    CHECK(std::filesystem::exists(dir / "checkpoint.json"));
    CHECK(std::filesystem::exists(dir / "trace.csv"));
    CHECK(std::filesystem::exists(dir / "report_dev.json"));
    CHECK(std::filesystem::exists(dir / "report_test_ood.csv"));
    CHECK(std::filesystem::exists(dir / "manifest.json"));

    const EvalReport dev = load_report_json(dir / "report_dev.json");
    CHECK(dev.model == "PoE");
    CHECK(dev.pearson_vs_bias.has_value());
    std::filesystem::remove_all(dir);
}

TEST_CASE("cmd_sweep writes the grid table and the selected row") {
    const auto dir = temp_dir("sweep");
    json echo;
    ExperimentConfig cfg = tiny_config(dir, &echo);
    cfg.loss.kind = LossKind::DFL;
    cfg.sweep.gamma = {0.5, 2.0};
    const auto artifacts = cmd_sweep(cfg, echo);
    CHECK(std::filesystem::exists(dir / "sweep.csv"));
    CHECK(std::filesystem::exists(dir / "sweep_best.json"));

    std::ifstream in(dir / "sweep.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);  // header + 2 grid points
    std::filesystem::remove_all(dir);
}

TEST_CASE("cmd_run emits the full artifact tree and is rerun-identical") {
    const auto dir = temp_dir("run");
    json echo;
    ExperimentConfig cfg = tiny_config(dir, &echo);
    cfg.sweep.gamma = {0.5, 2.0};  // exercises the gamma curve
    cmd_run(cfg, echo);

    CHECK(std::filesystem::exists(dir / "data" / "train.jsonl"));
    CHECK(std::filesystem::exists(dir / "runs" / "CE" / "seed1" / "checkpoint.json"));
    CHECK(std::filesystem::exists(dir / "runs" / "PoE" / "seed2" / "trace.csv"));
    CHECK(std::filesystem::exists(dir / "runs" / "PoE" / "seed1" / "report_test_ood.json"));
    CHECK(std::filesystem::exists(dir / "summary" / "comparison.csv"));
    CHECK(std::filesystem::exists(dir / "plots" / "pearson_bars.csv"));
    CHECK(std::filesystem::exists(dir / "plots" / "gamma_curve.csv"));
    CHECK(std::filesystem::exists(dir / "manifest.json"));

    const std::string comparison = slurp(dir / "summary" / "comparison.csv");
    CHECK(comparison.find("CE") != std::string::npos);
    CHECK(comparison.find("PoE") != std::string::npos);

    // byte-identical rerun
    const std::string pearson_bytes = slurp(dir / "plots" / "pearson_bars.csv");
    const std::string curve_bytes = slurp(dir / "plots" / "gamma_curve.csv");
    cmd_run(cfg, echo);
    CHECK(slurp(dir / "summary" / "comparison.csv") == comparison);
    CHECK(slurp(dir / "plots" / "pearson_bars.csv") == pearson_bytes);
    CHECK(slurp(dir / "plots" / "gamma_curve.csv") == curve_bytes);
    std::filesystem::remove_all(dir);
}

TEST_CASE("cmd_report reproduces the paper-shape delta arithmetic") {
    const auto dir = temp_dir("report");
    EvalReport ce;
    ce.model = "CE";
    ce.split = "test_ood";
    ce.n = 10000;
    ce.accuracy = 0.5649;
    ce.per_label_accuracy = {0.5649};
    ce.label_names = {"all"};
    ce.dataset_fingerprint = 0xabcd;
    EvalReport poe = ce;
    poe.model = "PoE";
    poe.accuracy = 0.6625;
    save_report_json(ce, dir / "ce.json");
    save_report_json(poe, dir / "poe.json");

    std::string table;
    const std::string csv = cmd_report({dir / "ce.json", dir / "poe.json"}, &table);
    // 66.25 - 56.49 = +9.76, printed rounded to one decimal as in the tables
    CHECK(table.find("+9.8") != std::string::npos);
    CHECK(csv.find(",0.0976") != std::string::npos);

    EvalReport wrong = poe;
    wrong.split = "dev";
    save_report_json(wrong, dir / "wrong.json");
    CHECK_THROWS_AS(cmd_report({dir / "ce.json", dir / "wrong.json"}, nullptr),
                    DimensionError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("file_digest is stable and content-sensitive") {
    const auto dir = temp_dir("digest");
    {
        std::ofstream out(dir / "a.txt");
        out << "hello";
    }
    const std::string d1 = file_digest(dir / "a.txt");
    CHECK(d1 == file_digest(dir / "a.txt"));
    {
        std::ofstream out(dir / "a.txt");
        out << "hellO";
    }
    CHECK(d1 != file_digest(dir / "a.txt"));
    CHECK_THROWS_AS(file_digest(dir / "missing.txt"), ParseError);
    std::filesystem::remove_all(dir);
}
