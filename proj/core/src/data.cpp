#include "debias/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "debias/errors.hpp"

namespace debias {

using nlohmann::json;

std::string to_string(SplitTag t) {
    switch (t) {
        case SplitTag::Train: return "train";
        case SplitTag::Dev: return "dev";
        case SplitTag::TestInDomain: return "test_indomain";
        case SplitTag::TestOod: return "test_ood";
    }
    return "?";
}

SplitTag split_tag_from_string(const std::string& s) {
    if (s == "train") return SplitTag::Train;
    if (s == "dev") return SplitTag::Dev;
    if (s == "test_indomain") return SplitTag::TestInDomain;
    if (s == "test_ood") return SplitTag::TestOod;
    throw ParseError("unknown split tag: " + s);
}

std::vector<std::size_t> Dataset::bias_dims() const {
    std::vector<std::size_t> dims;
    if (examples.empty()) return dims;
    for (const Vector& b : examples.front().x_bias) dims.push_back(b.size());
    return dims;
}

void BiasConfig::validate() const {
    if (num_labels < 2) {
        throw ConfigError("data.num_labels must be >= 2");
    }
    if (signal_dim < num_labels) {
        throw ConfigError("data.signal_dim must be >= num_labels (class means are one-hot)");
    }
    if (bias_dims.empty() || bias_dims.size() != bias_strengths.size()) {
        throw ConfigError("data.bias_dims and data.bias_strengths must be non-empty and equal length");
    }
    for (std::size_t d : bias_dims) {
        if (d < num_labels) {
            throw ConfigError("data.bias_dims entries must be >= num_labels");
        }
    }
    const double chance = 1.0 / static_cast<double>(num_labels);
    for (double p : bias_strengths) {
        if (!(p >= chance - 1e-12) || !(p <= 1.0)) {
            throw ConfigError("data.bias_strengths entries must lie in [1/num_labels, 1]");
        }
    }
    if (!(signal_noise >= 0.0) || !std::isfinite(signal_noise)) {
        throw ConfigError("data.signal_noise must be finite and >= 0");
    }
    if (train_size == 0 || dev_size == 0 || test_indomain_size == 0 || test_ood_size == 0) {
        throw ConfigError("data split sizes must be positive");
    }
}

namespace {

Vector gaussian_signal(std::size_t label, const BiasConfig& cfg, SeededRng& rng) {
    Vector x(cfg.signal_dim);
    for (std::size_t d = 0; d < cfg.signal_dim; ++d) {
        const double mean = (d == label) ? 1.0 : 0.0;
        x[d] = mean + cfg.signal_noise * rng.normal();
    }
    return x;
}

Vector onehot(std::size_t value, std::size_t dim) {
    Vector v(dim, 0.0);
    v[value] = 1.0;
    return v;
}

// bias value: the true label with probability p, otherwise uniform over
// the remaining labels
std::size_t corrupt_label(std::size_t label, double p, std::size_t num_labels, SeededRng& rng) {
    if (rng.uniform() < p) return label;
    std::size_t other = rng.uniform_int(num_labels - 1);
    if (other >= label) ++other;
    return other;
}

std::vector<std::string> default_label_names(std::size_t n) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("label" + std::to_string(i));
    return names;
}

Dataset sampled_split(const BiasConfig& cfg, SplitTag tag, const std::string& id_prefix,
                      std::size_t size, SeededRng rng) {
    Dataset ds;
    ds.num_labels = cfg.num_labels;
    ds.label_names = default_label_names(cfg.num_labels);
    ds.split_tag = tag;
    ds.examples.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
        Example ex;
        ex.id = id_prefix + "-" + std::to_string(i);
        ex.y = rng.uniform_int(cfg.num_labels);
        ex.x = gaussian_signal(ex.y, cfg, rng);
        for (std::size_t j = 0; j < cfg.num_channels(); ++j) {
            const std::size_t value =
                corrupt_label(ex.y, cfg.bias_strengths[j], cfg.num_labels, rng);
            ex.x_bias.push_back(onehot(value, cfg.bias_dims[j]));
        }
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

// channel `balanced` cycles through every (bias value, label) cell the
// same number of times. Remaining channels are drawn uniformly over the
// label space, independent of the label: out of domain, no shortcut works
Dataset balanced_ood_split(const BiasConfig& cfg, std::size_t balanced, SeededRng rng) {
    Dataset ds;
    ds.num_labels = cfg.num_labels;
    ds.label_names = default_label_names(cfg.num_labels);
    ds.split_tag = SplitTag::TestOod;
    const std::size_t cells = cfg.num_labels * cfg.num_labels;
    const std::size_t per_cell = (cfg.test_ood_size + cells - 1) / cells;  // pad up
    ds.examples.reserve(per_cell * cells);
    std::size_t idx = 0;
    const std::string prefix =
        cfg.num_channels() == 1 ? std::string("test_ood")
                                : "test_ood_b" + std::to_string(balanced + 1);
    for (std::size_t rep = 0; rep < per_cell; ++rep) {
        for (std::size_t value = 0; value < cfg.num_labels; ++value) {
            for (std::size_t label = 0; label < cfg.num_labels; ++label) {
                Example ex;
                ex.id = prefix + "-" + std::to_string(idx++);
                ex.y = label;
                ex.x = gaussian_signal(label, cfg, rng);
                for (std::size_t j = 0; j < cfg.num_channels(); ++j) {
                    const std::size_t v = (j == balanced)
                                              ? value
                                              : rng.uniform_int(cfg.num_labels);
                    ex.x_bias.push_back(onehot(v, cfg.bias_dims[j]));
                }
                ds.examples.push_back(std::move(ex));
            }
        }
    }
    return ds;
}

}  // namespace

GeneratedSplits generate(const BiasConfig& config) {
    config.validate();
    SeededRng root(config.seed);
    GeneratedSplits out;
    out.train = sampled_split(config, SplitTag::Train, "train", config.train_size, root.split());
    out.dev = sampled_split(config, SplitTag::Dev, "dev", config.dev_size, root.split());
    out.test_indomain = sampled_split(config, SplitTag::TestInDomain, "test_indomain",
                                      config.test_indomain_size, root.split());
    for (std::size_t j = 0; j < config.num_channels(); ++j) {
        out.test_ood.push_back(balanced_ood_split(config, j, root.split()));
    }
    return out;
}

BiasExtractor::Kind extractor_kind_from_string(const std::string& s) {
    if (s == "hypothesis_only") return BiasExtractor::Kind::HypothesisOnly;
    if (s == "overlap_heuristics") return BiasExtractor::Kind::OverlapHeuristics;
    throw ConfigError("unknown bias extractor: " + s);
}

std::string to_string(BiasExtractor::Kind k) {
    return k == BiasExtractor::Kind::HypothesisOnly ? "hypothesis_only" : "overlap_heuristics";
}

Vector bag_of_words(const std::vector<std::string>& tokens, std::size_t dim) {
    if (dim == 0) {
        throw ConfigError("bag_of_words: dim must be positive");
    }
    Vector bag(dim, 0.0);
    for (const std::string& tok : tokens) {
        std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
        for (unsigned char c : tok) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        bag[h % dim] += 1.0;
    }
    return bag;
}

namespace {

bool is_contiguous_subsequence(const std::vector<std::string>& needle,
                               const std::vector<std::string>& haystack) {
    if (needle.empty() || needle.size() > haystack.size()) return false;
    for (std::size_t start = 0; start + needle.size() <= haystack.size(); ++start) {
        if (std::equal(needle.begin(), needle.end(), haystack.begin() + start)) return true;
    }
    return false;
}

bool is_ordered_subsequence(const std::vector<std::string>& needle,
                            const std::vector<std::string>& haystack) {
    if (needle.empty()) return false;
    std::size_t i = 0;
    for (const std::string& tok : haystack) {
        if (i < needle.size() && tok == needle[i]) ++i;
    }
    return i == needle.size();
}

Vector overlap_features(const Example& ex) {
    if (ex.premise_tokens.empty() && ex.hypothesis_tokens.empty()) {
        throw DimensionError("overlap_heuristics: example " + ex.id +
                             " has no premise/hypothesis token payload");
    }
    const auto& prem = ex.premise_tokens;
    const auto& hyp = ex.hypothesis_tokens;
    const std::unordered_set<std::string> prem_set(prem.begin(), prem.end());
    bool all_included = !hyp.empty();
    for (const std::string& tok : hyp) {
        if (!prem_set.count(tok)) {
            all_included = false;
            break;
        }
    }
    double shared = 0.0;
    for (const std::string& tok : prem) {
        if (std::find(hyp.begin(), hyp.end(), tok) != hyp.end()) shared += 1.0;
    }
    const double ratio = prem.empty() ? 0.0 : shared / static_cast<double>(prem.size());
    return Vector{all_included ? 1.0 : 0.0,
                  is_contiguous_subsequence(hyp, prem) ? 1.0 : 0.0,
                  is_ordered_subsequence(hyp, prem) ? 1.0 : 0.0, ratio};
}

}  // namespace

Vector extract_bias_features(const Example& example, const BiasExtractor& extractor) {
    switch (extractor.kind) {
        case BiasExtractor::Kind::HypothesisOnly:
            if (!example.x_bias.empty()) {
                if (extractor.channel >= example.x_bias.size()) {
                    throw DimensionError("extract_bias_features: channel " +
                                         std::to_string(extractor.channel) +
                                         " out of range for example " + example.id);
                }
                return example.x_bias[extractor.channel];
            }
            if (!example.hypothesis_tokens.empty()) {
                return bag_of_words(example.hypothesis_tokens, extractor.bow_dim);
            }
            throw DimensionError("extract_bias_features: example " + example.id +
                                 " has neither a bias slot nor hypothesis tokens");
        case BiasExtractor::Kind::OverlapHeuristics:
            return overlap_features(example);
    }
    throw ConfigError("extract_bias_features: unhandled extractor kind");
}

namespace {

json example_to_json(const Example& ex) {
    json j;
    j["id"] = ex.id;
    j["x"] = ex.x;
    j["x_bias"] = ex.x_bias;
    j["y"] = ex.y;
    if (!ex.premise_tokens.empty()) j["premise"] = ex.premise_tokens;
    if (!ex.hypothesis_tokens.empty()) j["hypothesis"] = ex.hypothesis_tokens;
    return j;
}

Example example_from_json(const json& j) {
    Example ex;
    ex.id = j.at("id").get<std::string>();
    ex.x = j.at("x").get<Vector>();
    ex.x_bias = j.at("x_bias").get<std::vector<Vector>>();
    ex.y = j.at("y").get<std::size_t>();
    if (j.contains("premise")) ex.premise_tokens = j["premise"].get<std::vector<std::string>>();
    if (j.contains("hypothesis")) {
        ex.hypothesis_tokens = j["hypothesis"].get<std::vector<std::string>>();
    }
    return ex;
}

}  // namespace

Dataset load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open dataset: " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    Dataset ds;
    bool have_header = false;
    std::size_t want_signal_dim = 0;
    std::vector<std::size_t> want_bias_dims;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(path.string() + " line " + std::to_string(line_no) +
                             ": malformed JSON: " + e.what());
        }
        try {
            if (!have_header) {
                ds.num_labels = j.at("num_labels").get<std::size_t>();
                ds.label_names = j.at("label_names").get<std::vector<std::string>>();
                want_signal_dim = j.at("signal_dim").get<std::size_t>();
                want_bias_dims = j.at("bias_dims").get<std::vector<std::size_t>>();
                ds.split_tag = split_tag_from_string(j.value("split_tag", "train"));
                if (ds.num_labels == 0 || ds.label_names.size() != ds.num_labels) {
                    throw ParseError(path.string() + ": header label names inconsistent");
                }
                have_header = true;
                continue;
            }
            Example ex = example_from_json(j);
            if (ex.y >= ds.num_labels) {
                throw ParseError(path.string() + ": record " + ex.id + " has label " +
                                 std::to_string(ex.y) + " outside " +
                                 std::to_string(ds.num_labels) + " labels");
            }
            if (ex.x.size() != want_signal_dim || ex.x_bias.size() != want_bias_dims.size()) {
                throw ParseError(path.string() + ": record " + ex.id +
                                 " has inconsistent feature dimensions");
            }
            for (std::size_t k = 0; k < want_bias_dims.size(); ++k) {
                if (ex.x_bias[k].size() != want_bias_dims[k]) {
                    throw ParseError(path.string() + ": record " + ex.id +
                                     " has inconsistent bias dimensions");
                }
            }
            require_finite(ex.x, "dataset record x");
            for (const Vector& b : ex.x_bias) require_finite(b, "dataset record x_bias");
            ds.examples.push_back(std::move(ex));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
    }
    if (!have_header) {
        throw ParseError(path.string() + ": missing header line");
    }
    return ds;
}

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ParseError("cannot open dataset for writing: " + path.string());
    }
    json header;
    header["num_labels"] = dataset.num_labels;
    header["label_names"] = dataset.label_names;
    header["signal_dim"] = dataset.signal_dim();
    header["bias_dims"] = dataset.bias_dims();
    header["split_tag"] = to_string(dataset.split_tag);
    out << header.dump() << '\n';
    for (const Example& ex : dataset.examples) {
        out << example_to_json(ex).dump() << '\n';
    }
}

}  // namespace debias
