#pragma once
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "debias/data.hpp"
#include "debias/eval.hpp"
#include "debias/hardset.hpp"
#include "debias/losses.hpp"
#include "debias/trainer.hpp"

namespace debias {

/// Declarative experiment description, 1:1 with the config file tree.
struct ExperimentConfig {
    // [data]: generator settings, or [data.ingest] split-name = jsonl path
    std::optional<BiasConfig> gen;
    std::map<std::string, std::filesystem::path> ingest;

    // [model]
    ModelConfig model;
    std::vector<BiasExtractor> branches;  // empty = derived per loss kind

    // [loss] (mirrored into train.loss)
    LossSpec loss;

    // [train]
    TrainConfig train;

    // [eval]; empty split list = dev plus every test split
    std::vector<std::string> eval_splits;
    std::optional<LabelMap> label_map;

    // [run]: pipeline variants and seeds; deltas are against losses[0]
    std::vector<LossKind> run_losses = {LossKind::CE, LossKind::PoE, LossKind::DFL};
    std::vector<std::uint64_t> run_seeds = {1, 2, 3, 4};

    // [sweep]
    SweepGrid sweep;
    std::string sweep_select = "dev";  // split used for model selection

    // [output]
    std::filesystem::path out_dir = "out";
};

/// Minimal TOML reader covering the config surface: [section] headers,
/// key = value lines with strings, numbers, booleans and single-line flat
/// arrays, and # comments. Throws ConfigError naming the line on
/// malformed input.
nlohmann::json parse_toml(const std::string& text, const std::string& origin);
nlohmann::json parse_toml_file(const std::filesystem::path& path);

/// Schema check; messages name the offending key, e.g.
/// "missing required key: loss.kind".
ExperimentConfig config_from_tree(const nlohmann::json& tree);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Datasets by split name: "train", "dev", "test_indomain" and
/// "test_ood" (or "test_ood_b<j>" per channel when K > 1).
std::map<std::string, Dataset> materialize_data(const ExperimentConfig& cfg);

/// Branch inputs appropriate for a loss kind: CE trains no branch,
/// single-bias losses one branch (config's first, else channel 0), joint
/// losses one branch per configured entry or per data channel.
std::vector<BiasExtractor> branches_for(LossKind kind, const ExperimentConfig& cfg,
                                        std::size_t num_channels);

/// FNV-1a over the file bytes, as "fnv64:<hex>".
std::string file_digest(const std::filesystem::path& path);

/// manifest.json with the config echo, seeds and per-artifact digests;
/// enough to reproduce and verify a run.
void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const nlohmann::json& config_echo, const std::vector<std::uint64_t>& seeds,
                    const std::vector<std::filesystem::path>& artifacts);

// subcommand backends; the CLI maps exceptions onto exit codes

/// `gen`: one JSONL per split under out_dir/data plus a manifest.
std::vector<std::filesystem::path> cmd_gen(const ExperimentConfig& cfg,
                                           const nlohmann::json& config_echo);

/// `train`: single model with cfg.loss; checkpoint, trace CSV and one
/// report JSON/CSV per eval split (dev report carries the bias-loss
/// correlation).
std::vector<std::filesystem::path> cmd_train(const ExperimentConfig& cfg,
                                             const nlohmann::json& config_echo);

/// `sweep`: grid over gamma/alpha/beta; sweep.csv plus the selected row.
std::vector<std::filesystem::path> cmd_sweep(const ExperimentConfig& cfg,
                                             const nlohmann::json& config_echo);

/// `run`: full pipeline. Every loss in run_losses is trained over
/// run_seeds, evaluated on each split, correlated against a separately
/// trained bias-only probe, and summarized in a delta table against the
/// first loss. Emits plot data (gamma curve when sweep.gamma is set,
/// pearson bars) and a manifest.
std::vector<std::filesystem::path> cmd_run(const ExperimentConfig& cfg,
                                           const nlohmann::json& config_echo);

struct HardsetArgs {
    std::filesystem::path train_path;
    std::filesystem::path target_path;
    BiasExtractor extractor;
    HardsetConfig probe;
    std::uint64_t seed = 0;
    std::filesystem::path out_stem;
};
std::vector<std::filesystem::path> cmd_hardset(const HardsetArgs& args);

struct EvalArgs {
    std::filesystem::path model_path;
    std::filesystem::path data_path;
    std::optional<LabelMap> map;
    std::string model_name;
    std::filesystem::path out_prefix;  // writes <prefix>.json and <prefix>.csv
};
std::vector<std::filesystem::path> cmd_eval(const EvalArgs& args);

/// `report`: aggregates EvalReport JSONs into one comparison table keyed
/// by model, deltas against the first file. Returns the CSV text and
/// pretty-prints a percent table to `table_out` when non-null.
std::string cmd_report(const std::vector<std::filesystem::path>& report_paths,
                       std::string* table_out);

}  // namespace debias
