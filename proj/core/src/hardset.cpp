#include "debias/hardset.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "debias/errors.hpp"
#include "debias/trainer.hpp"

namespace debias {

namespace {

// dataset whose signal features are the extracted bias features; lets the
// probe reuse the ordinary training loop
Dataset bias_feature_view(const Dataset& source, const BiasExtractor& extractor) {
    Dataset view;
    view.num_labels = source.num_labels;
    view.label_names = source.label_names;
    view.split_tag = source.split_tag;
    view.examples.reserve(source.size());
    for (const Example& ex : source.examples) {
        Example bare;
        bare.id = ex.id;
        bare.x = extract_bias_features(ex, extractor);
        bare.y = ex.y;
        view.examples.push_back(std::move(bare));
    }
    return view;
}

}  // namespace

Classifier train_bias_probe(const Dataset& train, const BiasExtractor& extractor,
                            const HardsetConfig& cfg, std::uint64_t seed) {
    if (train.examples.empty()) {
        throw DimensionError("train_bias_probe: empty training split");
    }
    const Dataset probe_train = bias_feature_view(train, extractor);
    TrainConfig tc;
    tc.loss.kind = LossKind::CE;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.learning_rate = cfg.learning_rate;
    tc.optimizer = OptimizerKind::Sgd;
    tc.seed = seed;
    return run_training(probe_train, nullptr, nullptr, ModelConfig{}, tc).model.base;
}

HardSplit build_hard_split(const Dataset& train, const Dataset& target,
                           const BiasExtractor& extractor, const HardsetConfig& cfg,
                           std::uint64_t seed) {
    if (train.num_labels != target.num_labels) {
        throw DimensionError("build_hard_split: train and target label spaces differ");
    }
    if (target.examples.empty()) {
        throw DimensionError("build_hard_split: empty target split");
    }

    HardSplit split;
    split.bias_model = train_bias_probe(train, extractor, cfg, seed);
    split.hard.num_labels = split.easy.num_labels = target.num_labels;
    split.hard.label_names = split.easy.label_names = target.label_names;
    split.hard.split_tag = split.easy.split_tag = target.split_tag;
    std::size_t correct = 0;
    for (const Example& ex : target.examples) {
        const std::size_t pred =
            argmax(forward(split.bias_model, extract_bias_features(ex, extractor)));
        if (pred == ex.y) {
            ++correct;
            split.easy.examples.push_back(ex);
        } else {
            split.hard.examples.push_back(ex);
        }
    }
    split.bias_model_accuracy =
        static_cast<double>(correct) / static_cast<double>(target.size());
    return split;
}

void save_hard_split(const HardSplit& split, const std::filesystem::path& stem) {
    const std::filesystem::path hard_path = stem.string() + ".hard.jsonl";
    const std::filesystem::path easy_path = stem.string() + ".easy.jsonl";
    save_jsonl(split.hard, hard_path);
    save_jsonl(split.easy, easy_path);
    nlohmann::json sidecar;
    sidecar["hard_count"] = split.hard.size();
    sidecar["easy_count"] = split.easy.size();
    sidecar["bias_model_accuracy"] = split.bias_model_accuracy;
    std::ofstream out(stem.string() + ".json");
    if (!out) {
        throw ParseError("cannot open hard-split sidecar for writing: " + stem.string() +
                         ".json");
    }
    out << sidecar.dump(2) << '\n';
}

}  // namespace debias
