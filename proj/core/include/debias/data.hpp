#pragma once
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "debias/math.hpp"

namespace debias {

/// One training/eval record: signal features, K bias-feature channels and
/// a label. Ingested text-pair records may additionally carry token
/// sequences for the heuristic extractors.
struct Example {
    std::string id;
    Vector x;                      // signal features
    std::vector<Vector> x_bias;    // bias feature channels x^{b_j}
    std::size_t y = 0;
    std::vector<std::string> premise_tokens;
    std::vector<std::string> hypothesis_tokens;
};

enum class SplitTag { Train, Dev, TestInDomain, TestOod };
std::string to_string(SplitTag t);
SplitTag split_tag_from_string(const std::string& s);

struct Dataset {
    std::vector<Example> examples;
    std::size_t num_labels = 0;
    std::vector<std::string> label_names;
    SplitTag split_tag = SplitTag::Train;

    std::size_t size() const { return examples.size(); }
    std::size_t signal_dim() const { return examples.empty() ? 0 : examples.front().x.size(); }
    std::vector<std::size_t> bias_dims() const;
};

/// Synthetic task: label-conditional Gaussian signal plus one or more
/// spurious one-hot channels that agree with the label with probability
/// p_j on train/dev/in-domain test. Each out-of-domain test set balances
/// one channel exactly so that channel is worthless there.
struct BiasConfig {
    std::size_t num_labels = 3;
    std::size_t signal_dim = 20;
    std::vector<std::size_t> bias_dims = {3};
    std::vector<double> bias_strengths = {0.9};  // p_j in [1/|Y|, 1]
    double signal_noise = 0.5;                   // sigma_n >= 0
    std::size_t train_size = 2000;
    std::size_t dev_size = 500;
    std::size_t test_indomain_size = 1000;
    std::size_t test_ood_size = 1000;
    std::uint64_t seed = 0;

    std::size_t num_channels() const { return bias_dims.size(); }
    void validate() const;  // throws ConfigError
};

struct GeneratedSplits {
    Dataset train;
    Dataset dev;
    Dataset test_indomain;
    /// One balanced split per bias channel: every (bias value, label) cell
    /// has exactly the same count; the requested size is padded up to a
    /// multiple of |Y|^2 when needed. Other channels keep their training
    /// correlation.
    std::vector<Dataset> test_ood;
};

/// Deterministic under config.seed: two calls produce identical datasets.
GeneratedSplits generate(const BiasConfig& config);

/// Selects which features feed a bias-only model.
///   HypothesisOnly    — the designated bias slot (channel) for featurized
///                       records, or a hashed bag of hypothesis tokens for
///                       ingested text pairs.
///   OverlapHeuristics — 4 premise/hypothesis overlap features, in order:
///                       all hypothesis words inside premise, contiguous
///                       subsequence, ordered (gappy) subsequence, token
///                       overlap count normalized by premise length.
struct BiasExtractor {
    enum class Kind { HypothesisOnly, OverlapHeuristics };
    Kind kind = Kind::HypothesisOnly;
    std::size_t channel = 0;
    std::size_t bow_dim = 64;
};

BiasExtractor::Kind extractor_kind_from_string(const std::string& s);
std::string to_string(BiasExtractor::Kind k);

Vector extract_bias_features(const Example& example, const BiasExtractor& extractor);

/// Hashed (FNV-1a) bag-of-words counts over `dim` buckets.
Vector bag_of_words(const std::vector<std::string>& tokens, std::size_t dim);

/// JSONL with a one-line JSON header {num_labels, label_names, signal_dim,
/// bias_dims, split_tag} followed by one record per line. Round-trips are
/// exact including every double.
Dataset load_jsonl(const std::filesystem::path& path);
void save_jsonl(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace debias
