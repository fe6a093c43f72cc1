// debias: config-driven trainer and evaluator for the bias-robust loss
// family (PoE / DFL / RUBi and their joint multi-bias variants) on
// featurized or synthetic biased datasets.
//
// Exit codes: 0 success, 1 runtime failure, 2 config/usage error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "debias/errors.hpp"
#include "debias/experiment.hpp"

namespace {

using debias::ExperimentConfig;
using nlohmann::json;

// config tree from --config merged with explicit flag overrides; flags win
struct ConfigCli {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* cmd, bool config_required) {
        auto* opt = cmd->add_option("-c,--config", config_path, "experiment config (TOML)");
        if (config_required) opt->required();
        cmd->add_option("-o,--out", out_dir, "output directory (overrides output.dir)");
        cmd->add_option("--seed", seed, "seed override (train.seed / data.seed for gen)");
    }

    json tree(const char* seed_key) const {
        json t = config_path.empty() ? json::object() : debias::parse_toml_file(config_path);
        if (!out_dir.empty()) t["output"]["dir"] = out_dir;
        if (seed) t[seed_key]["seed"] = *seed;
        return t;
    }
};

debias::LabelMap parse_label_map(const std::vector<std::size_t>& targets,
                                 const std::vector<std::string>& names) {
    debias::LabelMap map;
    map.target_of = targets;
    map.target_names = names;
    return map;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"bias-robust training toolkit"};
    app.require_subcommand(1);

    // gen ------------------------------------------------------------------
    ConfigCli gen_cfg;
    std::optional<double> gen_p;
    std::optional<std::size_t> gen_labels, gen_signal_dim, gen_train, gen_dev, gen_test,
        gen_ood;
    std::optional<double> gen_noise;
    std::vector<std::size_t> gen_bias_dims;
    std::vector<double> gen_bias_strengths;
    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic biased dataset");
    gen_cfg.attach(gen, false);
    gen->add_option("--p", gen_p, "bias strength for a single channel");
    gen->add_option("--num-labels", gen_labels);
    gen->add_option("--signal-dim", gen_signal_dim);
    gen->add_option("--noise", gen_noise, "signal noise sigma");
    gen->add_option("--train-size", gen_train);
    gen->add_option("--dev-size", gen_dev);
    gen->add_option("--test-size", gen_test);
    gen->add_option("--ood-size", gen_ood);
    gen->add_option("--bias-dims", gen_bias_dims)->delimiter(',');
    gen->add_option("--bias-strengths", gen_bias_strengths)->delimiter(',');

    // train ------------------------------------------------------------------
    ConfigCli train_cfg;
    std::string train_loss;
    CLI::App* train = app.add_subcommand("train", "train one model with the configured loss");
    train_cfg.attach(train, true);
    train->add_option("--loss", train_loss, "loss kind override (CE|PoE|DFL|RUBi|JointPoE|JointDFL)");

    // eval ------------------------------------------------------------------
    debias::EvalArgs eval_args;
    std::vector<std::size_t> eval_map;
    std::vector<std::string> eval_map_names;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("-m,--model", eval_args.model_path, "checkpoint path")->required();
    eval->add_option("-d,--data", eval_args.data_path, "dataset JSONL")->required();
    eval->add_option("-o,--out", eval_args.out_prefix, "output prefix (.json/.csv)")
        ->required();
    eval->add_option("--name", eval_args.model_name, "model tag in the report");
    eval->add_option("--map", eval_map, "label map, target index per source label")
        ->delimiter(',');
    eval->add_option("--map-names", eval_map_names, "target label names")->delimiter(',');

    // hardset ------------------------------------------------------------------
    debias::HardsetArgs hs;
    std::string hs_extractor = "hypothesis_only";
    CLI::App* hardset =
        app.add_subcommand("hardset", "split a target set by a bias-only probe");
    hardset->add_option("--train", hs.train_path, "training JSONL for the probe")->required();
    hardset->add_option("--target", hs.target_path, "target JSONL to split")->required();
    hardset->add_option("-o,--out", hs.out_stem, "output stem")->required();
    hardset->add_option("--extractor", hs_extractor, "hypothesis_only|overlap_heuristics");
    hardset->add_option("--channel", hs.extractor.channel, "bias channel for hypothesis_only");
    hardset->add_option("--epochs", hs.probe.epochs);
    hardset->add_option("--batch", hs.probe.batch_size);
    hardset->add_option("--lr", hs.probe.learning_rate);
    hardset->add_option("--seed", hs.seed);

    // sweep ------------------------------------------------------------------
    ConfigCli sweep_cfg;
    std::vector<double> sweep_gamma, sweep_alpha, sweep_beta;
    CLI::App* sweep = app.add_subcommand("sweep", "hyperparameter grid over gamma/alpha/beta");
    sweep_cfg.attach(sweep, true);
    sweep->add_option("--gamma", sweep_gamma, "gamma grid")->delimiter(',');
    sweep->add_option("--alpha", sweep_alpha, "alpha grid")->delimiter(',');
    sweep->add_option("--beta", sweep_beta, "beta grid")->delimiter(',');

    // run ------------------------------------------------------------------
    ConfigCli run_cfg;
    std::vector<std::uint64_t> run_seeds;
    std::vector<std::string> run_losses;
    CLI::App* run = app.add_subcommand("run", "full pipeline: data, variants, reports, plots");
    run_cfg.attach(run, true);
    run->add_option("--seeds", run_seeds, "seeds for the averaged runs")->delimiter(',');
    run->add_option("--losses", run_losses, "loss kinds to train")->delimiter(',');

    // report ------------------------------------------------------------------
    std::vector<std::string> report_inputs;
    std::string report_out;
    CLI::App* report =
        app.add_subcommand("report", "aggregate report JSONs; deltas vs the first");
    report->add_option("reports", report_inputs, "EvalReport JSON files")
        ->required()
        ->expected(-1);
    report->add_option("-o,--out", report_out, "write the comparison CSV here");

    app.parse(argc, argv);

    if (gen->parsed()) {
        json tree = gen_cfg.tree("data");
        if (!tree.contains("data")) tree["data"] = json::object();
        json& d = tree["data"];
        if (gen_p) d["bias_strengths"] = std::vector<double>{*gen_p};
        if (gen_labels) d["num_labels"] = *gen_labels;
        if (gen_signal_dim) d["signal_dim"] = *gen_signal_dim;
        if (gen_noise) d["signal_noise"] = *gen_noise;
        if (gen_train) d["train_size"] = *gen_train;
        if (gen_dev) d["dev_size"] = *gen_dev;
        if (gen_test) d["test_indomain_size"] = *gen_test;
        if (gen_ood) d["test_ood_size"] = *gen_ood;
        if (!gen_bias_dims.empty()) d["bias_dims"] = gen_bias_dims;
        if (!gen_bias_strengths.empty()) d["bias_strengths"] = gen_bias_strengths;
        if (!tree.contains("loss")) tree["loss"]["kind"] = "CE";  // gen never trains
        debias::cmd_gen(debias::config_from_tree(tree), tree);
        return 0;
    }
    if (train->parsed()) {
        json tree = train_cfg.tree("train");
        if (!train_loss.empty()) tree["loss"]["kind"] = train_loss;
        debias::cmd_train(debias::config_from_tree(tree), tree);
        return 0;
    }
    if (eval->parsed()) {
        if (!eval_map.empty()) eval_args.map = parse_label_map(eval_map, eval_map_names);
        debias::cmd_eval(eval_args);
        return 0;
    }
    if (hardset->parsed()) {
        hs.extractor.kind = debias::extractor_kind_from_string(hs_extractor);
        debias::cmd_hardset(hs);
        return 0;
    }
    if (sweep->parsed()) {
        json tree = sweep_cfg.tree("train");
        if (!sweep_gamma.empty()) tree["sweep"]["gamma"] = sweep_gamma;
        if (!sweep_alpha.empty()) tree["sweep"]["alpha"] = sweep_alpha;
        if (!sweep_beta.empty()) tree["sweep"]["beta"] = sweep_beta;
        debias::cmd_sweep(debias::config_from_tree(tree), tree);
        return 0;
    }
    if (run->parsed()) {
        json tree = run_cfg.tree("train");
        if (!run_seeds.empty()) tree["run"]["seeds"] = run_seeds;
        if (!run_losses.empty()) tree["run"]["losses"] = run_losses;
        debias::cmd_run(debias::config_from_tree(tree), tree);
        return 0;
    }
    if (report->parsed()) {
        std::vector<std::filesystem::path> paths(report_inputs.begin(), report_inputs.end());
        std::string table;
        const std::string csv = debias::cmd_report(paths, &table);
        std::fputs(table.c_str(), stdout);
        if (!report_out.empty()) {
            std::ofstream out(report_out);
            if (!out) throw debias::ParseError("cannot write " + report_out);
            out << csv;
        }
        return 0;
    }
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return 0;  // --help
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const debias::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
