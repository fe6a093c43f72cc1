#pragma once
#include <cstdint>
#include <filesystem>

#include "debias/data.hpp"
#include "debias/model.hpp"

namespace debias {

/// Partition of a target split by a bias-only probe: `hard` holds every
/// example the probe misclassifies, `easy` the rest.
struct HardSplit {
    Dataset hard;
    Dataset easy;
    double bias_model_accuracy = 0.0;  // probe accuracy on the full target
    Classifier bias_model;             // the trained probe, for reuse in analyses
};

/// Training setup for the bias-only probe: a linear classifier over the
/// extracted bias features, trained with plain CE and SGD.
struct HardsetConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 0.5;
};

/// CE + SGD fit of a linear classifier on the extracted bias features.
Classifier train_bias_probe(const Dataset& train, const BiasExtractor& extractor,
                            const HardsetConfig& cfg, std::uint64_t seed);

/// Fits the probe on the training split's bias features, then splits
/// `target` by prediction correctness. The probe scores 0 on `hard` and 1
/// on `easy` by construction.
HardSplit build_hard_split(const Dataset& train, const Dataset& target,
                           const BiasExtractor& extractor, const HardsetConfig& cfg,
                           std::uint64_t seed);

/// Writes <stem>.hard.jsonl, <stem>.easy.jsonl and a <stem>.json sidecar
/// with counts and the probe accuracy.
void save_hard_split(const HardSplit& split, const std::filesystem::path& stem);

}  // namespace debias
