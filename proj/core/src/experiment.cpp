#include "debias/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "debias/errors.hpp"

namespace debias {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TOML subset parser

namespace {

constexpr std::uint64_t kProbeStream = 0x70726f6265ULL;

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct TomlParser {
    std::string origin;
    std::size_t line_no = 0;
    json root = json::object();
    json* section = nullptr;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(origin + " line " + std::to_string(line_no) + ": " + msg);
    }

    static bool valid_key(const std::string& k) {
        if (k.empty()) return false;
        for (char c : k) {
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') {
                return false;
            }
        }
        return true;
    }

    std::string strip_comment(const std::string& line) const {
        bool in_string = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char c = line[i];
            if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
            if (c == '#' && !in_string) return line.substr(0, i);
        }
        return line;
    }

    json parse_scalar(const std::string& raw) const {
        const std::string v = trim(raw);
        if (v.empty()) fail("empty value");
        if (v.front() == '"') {
            if (v.size() < 2 || v.back() != '"') fail("unterminated string");
            std::string out;
            for (std::size_t i = 1; i + 1 < v.size(); ++i) {
                char c = v[i];
                if (c == '\\') {
                    if (i + 1 >= v.size() - 1) fail("dangling escape");
                    const char e = v[++i];
                    switch (e) {
                        case 'n': c = '\n'; break;
                        case 't': c = '\t'; break;
                        case '"': c = '"'; break;
                        case '\\': c = '\\'; break;
                        default: fail(std::string("unsupported escape \\") + e);
                    }
                }
                out.push_back(c);
            }
            return json(out);
        }
        if (v == "true") return json(true);
        if (v == "false") return json(false);
        const bool integer =
            v.find_first_not_of("+-0123456789") == std::string::npos && v != "+" && v != "-";
        errno = 0;
        char* end = nullptr;
        if (integer) {
            const long long parsed = std::strtoll(v.c_str(), &end, 10);
            if (errno == 0 && end == v.c_str() + v.size()) return json(parsed);
            if (v.front() != '-') {
                errno = 0;
                const unsigned long long uparsed = std::strtoull(v.c_str(), &end, 10);
                if (errno == 0 && end == v.c_str() + v.size()) return json(uparsed);
            }
            fail("integer out of range: " + v);
        }
        const double parsed = std::strtod(v.c_str(), &end);
        if (end != v.c_str() + v.size()) fail("cannot parse value: " + v);
        return json(parsed);
    }

    json parse_value(const std::string& raw) const {
        const std::string v = trim(raw);
        if (v.empty()) fail("empty value");
        if (v.front() != '[') return parse_scalar(v);
        if (v.back() != ']') fail("unterminated array");
        json arr = json::array();
        const std::string inner = trim(v.substr(1, v.size() - 2));
        if (inner.empty()) return arr;
        // split on commas outside strings
        std::string cur;
        bool in_string = false;
        for (std::size_t i = 0; i < inner.size(); ++i) {
            const char c = inner[i];
            if (c == '"' && (i == 0 || inner[i - 1] != '\\')) in_string = !in_string;
            if (c == ',' && !in_string) {
                arr.push_back(parse_scalar(cur));
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (in_string) fail("unterminated string in array");
        arr.push_back(parse_scalar(cur));
        return arr;
    }

    void open_section(const std::string& header) {
        if (header.size() < 2 || header.back() != ']') fail("malformed section header");
        const std::string path = trim(header.substr(1, header.size() - 2));
        if (path.empty()) fail("empty section name");
        json* node = &root;
        std::size_t start = 0;
        while (start <= path.size()) {
            const std::size_t dot = path.find('.', start);
            const std::string part =
                trim(path.substr(start, dot == std::string::npos ? dot : dot - start));
            if (!valid_key(part)) fail("invalid section name: " + path);
            node = &(*node)[part];
            if (!node->is_object() && !node->is_null()) {
                fail("section [" + path + "] collides with a value");
            }
            if (node->is_null()) *node = json::object();
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        section = node;
    }

    void feed(const std::string& raw_line) {
        ++line_no;
        const std::string line = trim(strip_comment(raw_line));
        if (line.empty()) return;
        if (line.front() == '[') {
            open_section(line);
            return;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (!valid_key(key)) fail("invalid key: " + key);
        json* target = section ? section : &root;
        (*target)[key] = parse_value(line.substr(eq + 1));
    }
};

}  // namespace

json parse_toml(const std::string& text, const std::string& origin) {
    TomlParser parser;
    parser.origin = origin;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) parser.feed(line);
    return parser.root;
}

json parse_toml_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_toml(buf.str(), path.string());
}

// ---------------------------------------------------------------------------
// schema

namespace {

class TreeReader {
public:
    explicit TreeReader(const json& tree) : tree_(tree) {}

    const json* find(const std::string& path) const {
        const json* node = &tree_;
        std::size_t start = 0;
        while (true) {
            const std::size_t dot = path.find('.', start);
            const std::string part =
                path.substr(start, dot == std::string::npos ? dot : dot - start);
            if (!node->is_object() || !node->contains(part)) return nullptr;
            node = &(*node)[part];
            if (dot == std::string::npos) return node;
            start = dot + 1;
        }
    }

    bool has(const std::string& path) const { return find(path) != nullptr; }

    [[noreturn]] static void type_error(const std::string& path, const char* want) {
        throw ConfigError("config key " + path + " must be " + want);
    }

    std::string require_string(const std::string& path) const {
        const json* v = find(path);
        if (!v) throw ConfigError("missing required key: " + path);
        if (!v->is_string()) type_error(path, "a string");
        return v->get<std::string>();
    }

    std::string string_or(const std::string& path, const std::string& def) const {
        const json* v = find(path);
        if (!v) return def;
        if (!v->is_string()) type_error(path, "a string");
        return v->get<std::string>();
    }

    double number_or(const std::string& path, double def) const {
        const json* v = find(path);
        if (!v) return def;
        if (!v->is_number()) type_error(path, "a number");
        return v->get<double>();
    }

    std::size_t size_or(const std::string& path, std::size_t def) const {
        const json* v = find(path);
        if (!v) return def;
        if (!v->is_number_integer() && !v->is_number_unsigned()) {
            type_error(path, "a non-negative integer");
        }
        if (v->is_number_integer() && v->get<long long>() < 0) {
            type_error(path, "a non-negative integer");
        }
        return v->get<std::size_t>();
    }

    std::uint64_t u64_or(const std::string& path, std::uint64_t def) const {
        const json* v = find(path);
        if (!v) return def;
        if (!v->is_number_integer() && !v->is_number_unsigned()) {
            type_error(path, "an integer");
        }
        return v->get<std::uint64_t>();
    }

    bool bool_or(const std::string& path, bool def) const {
        const json* v = find(path);
        if (!v) return def;
        if (!v->is_boolean()) type_error(path, "a boolean");
        return v->get<bool>();
    }

    std::vector<double> num_list_or(const std::string& path) const {
        const json* v = find(path);
        if (!v) return {};
        if (!v->is_array()) type_error(path, "an array of numbers");
        std::vector<double> out;
        for (const json& e : *v) {
            if (!e.is_number()) type_error(path, "an array of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }

    std::vector<std::size_t> size_list_or(const std::string& path) const {
        const json* v = find(path);
        if (!v) return {};
        if (!v->is_array()) type_error(path, "an array of non-negative integers");
        std::vector<std::size_t> out;
        for (const json& e : *v) {
            if (!e.is_number_integer() && !e.is_number_unsigned()) {
                type_error(path, "an array of non-negative integers");
            }
            if (e.is_number_integer() && e.get<long long>() < 0) {
                type_error(path, "an array of non-negative integers");
            }
            out.push_back(e.get<std::size_t>());
        }
        return out;
    }

    std::vector<std::uint64_t> u64_list_or(const std::string& path) const {
        const json* v = find(path);
        if (!v) return {};
        if (!v->is_array()) type_error(path, "an array of integers");
        std::vector<std::uint64_t> out;
        for (const json& e : *v) {
            if (!e.is_number_integer() && !e.is_number_unsigned()) {
                type_error(path, "an array of integers");
            }
            out.push_back(e.get<std::uint64_t>());
        }
        return out;
    }

    std::vector<std::string> str_list_or(const std::string& path) const {
        const json* v = find(path);
        if (!v) return {};
        if (!v->is_array()) type_error(path, "an array of strings");
        std::vector<std::string> out;
        for (const json& e : *v) {
            if (!e.is_string()) type_error(path, "an array of strings");
            out.push_back(e.get<std::string>());
        }
        return out;
    }

private:
    const json& tree_;
};

const std::set<std::string> kGeneratorKeys = {
    "num_labels",     "signal_dim", "bias_dims",          "bias_strengths",
    "signal_noise",   "train_size", "dev_size",           "test_indomain_size",
    "test_ood_size",  "seed",       "ingest"};

void reject_unknown_keys(const json& tree) {
    static const std::map<std::string, std::set<std::string>> known = {
        {"data", kGeneratorKeys},
        {"model",
         {"base_hidden", "branch_hidden", "encoder_hidden", "encoder_out", "branch_channels",
          "branch_extractors", "bow_dim"}},
        {"loss", {"kind", "gamma", "alpha", "beta", "bias_class_weights"}},
        {"train",
         {"epochs", "batch_size", "learning_rate", "optimizer", "adam_beta1", "adam_beta2",
          "adam_epsilon", "seed", "shuffle", "eval_every"}},
        {"eval", {"splits", "label_map", "label_map_names"}},
        {"run", {"losses", "seeds"}},
        {"sweep", {"gamma", "alpha", "beta", "select"}},
        {"output", {"dir"}},
    };
    for (const auto& [section, value] : tree.items()) {
        auto it = known.find(section);
        if (it == known.end()) {
            throw ConfigError("unknown config section: " + section);
        }
        if (!value.is_object()) {
            throw ConfigError("config section " + section + " must be a [" + section +
                              "] table");
        }
        for (const auto& [key, sub] : value.items()) {
            if (!it->second.count(key)) {
                throw ConfigError("unknown config key: " + section + "." + key);
            }
            (void)sub;
        }
    }
}

}  // namespace

ExperimentConfig config_from_tree(const json& tree) {
    reject_unknown_keys(tree);
    TreeReader r(tree);
    ExperimentConfig cfg;

    // [loss]
    cfg.loss.kind = loss_kind_from_string(r.require_string("loss.kind"));
    cfg.loss.gamma = r.number_or("loss.gamma", 2.0);
    cfg.loss.alpha = r.number_or("loss.alpha", 1.0);
    cfg.loss.beta = r.number_or("loss.beta", 1.0);
    cfg.loss.bias_class_weights = r.num_list_or("loss.bias_class_weights");

    // [data]
    if (r.has("data.ingest")) {
        const json* ingest = r.find("data.ingest");
        if (!ingest->is_object()) TreeReader::type_error("data.ingest", "a table of paths");
        for (const auto& [split, path] : ingest->items()) {
            if (!path.is_string()) {
                TreeReader::type_error("data.ingest." + split, "a path string");
            }
            cfg.ingest[split] = path.get<std::string>();
        }
        for (const std::string key :
             {"num_labels", "signal_dim", "bias_dims", "bias_strengths", "signal_noise"}) {
            if (r.has("data." + key)) {
                throw ConfigError("config [data] cannot mix generator keys with data.ingest");
            }
        }
    } else if (r.has("data")) {
        BiasConfig gen;
        gen.num_labels = r.size_or("data.num_labels", gen.num_labels);
        gen.signal_dim = r.size_or("data.signal_dim", gen.signal_dim);
        if (r.has("data.bias_dims")) gen.bias_dims = r.size_list_or("data.bias_dims");
        if (r.has("data.bias_strengths")) {
            gen.bias_strengths = r.num_list_or("data.bias_strengths");
        }
        gen.signal_noise = r.number_or("data.signal_noise", gen.signal_noise);
        gen.train_size = r.size_or("data.train_size", gen.train_size);
        gen.dev_size = r.size_or("data.dev_size", gen.dev_size);
        gen.test_indomain_size = r.size_or("data.test_indomain_size", gen.test_indomain_size);
        gen.test_ood_size = r.size_or("data.test_ood_size", gen.test_ood_size);
        gen.seed = r.u64_or("data.seed", gen.seed);
        cfg.gen = gen;
    }

    // [model]
    cfg.model.base_hidden = r.size_list_or("model.base_hidden");
    cfg.model.branch_hidden = r.size_list_or("model.branch_hidden");
    cfg.model.encoder_hidden = r.size_list_or("model.encoder_hidden");
    cfg.model.encoder_out = r.size_or("model.encoder_out", 0);
    {
        const std::vector<std::size_t> channels = r.size_list_or("model.branch_channels");
        const std::vector<std::string> kinds = r.str_list_or("model.branch_extractors");
        const std::size_t bow_dim = r.size_or("model.bow_dim", 64);
        if (!channels.empty() && !kinds.empty() && channels.size() != kinds.size()) {
            throw ConfigError(
                "model.branch_channels and model.branch_extractors must have equal length");
        }
        const std::size_t n = std::max(channels.size(), kinds.size());
        for (std::size_t j = 0; j < n; ++j) {
            BiasExtractor e;
            e.kind = j < kinds.size() ? extractor_kind_from_string(kinds[j])
                                      : BiasExtractor::Kind::HypothesisOnly;
            e.channel = j < channels.size() ? channels[j] : j;
            e.bow_dim = bow_dim;
            cfg.branches.push_back(e);
        }
    }

    // [train]
    cfg.train.epochs = r.size_or("train.epochs", cfg.train.epochs);
    cfg.train.batch_size = r.size_or("train.batch_size", cfg.train.batch_size);
    cfg.train.learning_rate = r.number_or("train.learning_rate", cfg.train.learning_rate);
    cfg.train.optimizer = optimizer_kind_from_string(r.string_or("train.optimizer", "sgd"));
    cfg.train.adam.beta1 = r.number_or("train.adam_beta1", cfg.train.adam.beta1);
    cfg.train.adam.beta2 = r.number_or("train.adam_beta2", cfg.train.adam.beta2);
    cfg.train.adam.epsilon = r.number_or("train.adam_epsilon", cfg.train.adam.epsilon);
    cfg.train.seed = r.u64_or("train.seed", cfg.train.seed);
    cfg.train.shuffle = r.bool_or("train.shuffle", cfg.train.shuffle);
    cfg.train.eval_every = r.size_or("train.eval_every", cfg.train.eval_every);
    cfg.train.loss = cfg.loss;

    // [eval]
    cfg.eval_splits = r.str_list_or("eval.splits");
    {
        const std::vector<std::size_t> map = r.size_list_or("eval.label_map");
        if (!map.empty()) {
            LabelMap lm;
            lm.target_of = map;
            lm.target_names = r.str_list_or("eval.label_map_names");
            cfg.label_map = lm;
        } else if (r.has("eval.label_map_names")) {
            throw ConfigError("eval.label_map_names requires eval.label_map");
        }
    }

    // [run]
    if (r.has("run.losses")) {
        cfg.run_losses.clear();
        for (const std::string& name : r.str_list_or("run.losses")) {
            cfg.run_losses.push_back(loss_kind_from_string(name));
        }
        if (cfg.run_losses.empty()) {
            throw ConfigError("run.losses must not be empty");
        }
    }
    if (r.has("run.seeds")) {
        cfg.run_seeds = r.u64_list_or("run.seeds");
        if (cfg.run_seeds.empty()) {
            throw ConfigError("run.seeds must not be empty");
        }
    }

    // [sweep]
    cfg.sweep.gamma = r.num_list_or("sweep.gamma");
    cfg.sweep.alpha = r.num_list_or("sweep.alpha");
    cfg.sweep.beta = r.num_list_or("sweep.beta");
    cfg.sweep_select = r.string_or("sweep.select", cfg.sweep_select);

    // [output]
    cfg.out_dir = r.string_or("output.dir", cfg.out_dir.string());

    if (cfg.gen) cfg.gen->validate();
    // hyperparameter ranges; the class-weight length is rechecked against
    // the real label count at train time
    cfg.loss.validate(cfg.gen ? cfg.gen->num_labels : cfg.loss.bias_class_weights.size());
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    return config_from_tree(parse_toml_file(path));
}

std::map<std::string, Dataset> materialize_data(const ExperimentConfig& cfg) {
    std::map<std::string, Dataset> data;
    if (cfg.gen && !cfg.ingest.empty()) {
        throw ConfigError("config [data] cannot mix generator keys with data.ingest");
    }
    if (cfg.gen) {
        GeneratedSplits splits = generate(*cfg.gen);
        data["train"] = std::move(splits.train);
        data["dev"] = std::move(splits.dev);
        data["test_indomain"] = std::move(splits.test_indomain);
        if (splits.test_ood.size() == 1) {
            data["test_ood"] = std::move(splits.test_ood.front());
        } else {
            for (std::size_t j = 0; j < splits.test_ood.size(); ++j) {
                data["test_ood_b" + std::to_string(j + 1)] = std::move(splits.test_ood[j]);
            }
        }
        return data;
    }
    if (cfg.ingest.empty()) {
        throw ConfigError("missing required key: data (generator settings or data.ingest)");
    }
    for (const auto& [split, path] : cfg.ingest) {
        data[split] = load_jsonl(path);
    }
    std::size_t labels = 0;
    for (const auto& [split, ds] : data) {
        if (labels == 0) labels = ds.num_labels;
        if (ds.num_labels != labels) {
            throw ConfigError("ingested splits disagree on num_labels");
        }
    }
    if (!data.count("train")) {
        throw ConfigError("data.ingest must provide a train split");
    }
    return data;
}

std::vector<BiasExtractor> branches_for(LossKind kind, const ExperimentConfig& cfg,
                                        std::size_t num_channels) {
    switch (kind) {
        case LossKind::CE:
            return {};
        case LossKind::PoE:
        case LossKind::DFL:
        case LossKind::RUBi: {
            if (!cfg.branches.empty()) return {cfg.branches.front()};
            BiasExtractor e;
            e.channel = 0;
            return {e};
        }
        case LossKind::JointPoE:
        case LossKind::JointDFL: {
            if (!cfg.branches.empty()) return cfg.branches;
            std::vector<BiasExtractor> out;
            for (std::size_t j = 0; j < std::max<std::size_t>(num_channels, 1); ++j) {
                BiasExtractor e;
                e.channel = j;
                out.push_back(e);
            }
            return out;
        }
    }
    return {};
}

// ---------------------------------------------------------------------------
// artifacts

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot hash missing artifact: " + path.string());
    }
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    char hex[24];
    std::snprintf(hex, sizeof(hex), "fnv64:%016llx", static_cast<unsigned long long>(h));
    return hex;
}

void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const json& config_echo, const std::vector<std::uint64_t>& seeds,
                    const std::vector<std::filesystem::path>& artifacts) {
    json manifest;
    manifest["command"] = command;
    manifest["config"] = config_echo;
    manifest["seeds"] = seeds;
    json files = json::object();
    for (const std::filesystem::path& p : artifacts) {
        files[std::filesystem::relative(p, out_dir).generic_string()] = file_digest(p);
    }
    manifest["artifacts"] = files;
    std::ofstream out(out_dir / "manifest.json");
    if (!out) {
        throw ParseError("cannot write manifest in " + out_dir.string());
    }
    out << manifest.dump(2) << '\n';
}

namespace {

std::string fmt_percent(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * x);
    return buf;
}

std::string fmt_delta_percent(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.1f", 100.0 * x);
    return buf;
}

const Dataset* find_split(const std::map<std::string, Dataset>& data, const std::string& name) {
    auto it = data.find(name);
    return it == data.end() ? nullptr : &it->second;
}

// first out-of-domain split in name order: "test_ood" or "test_ood_b1"
const Dataset* first_ood(const std::map<std::string, Dataset>& data) {
    if (const Dataset* d = find_split(data, "test_ood")) return d;
    return find_split(data, "test_ood_b1");
}

std::vector<std::string> resolve_eval_splits(const ExperimentConfig& cfg,
                                             const std::map<std::string, Dataset>& data) {
    std::vector<std::string> splits;
    if (cfg.eval_splits.empty()) {
        for (const auto& [name, ds] : data) {
            if (name != "train") splits.push_back(name);
        }
        return splits;
    }
    for (const std::string& name : cfg.eval_splits) {
        if (!data.count(name)) {
            throw ConfigError("eval split not available: " + name);
        }
        splits.push_back(name);
    }
    return splits;
}

const LabelMap* map_of(const ExperimentConfig& cfg) {
    return cfg.label_map ? &*cfg.label_map : nullptr;
}

}  // namespace

std::vector<std::filesystem::path> cmd_gen(const ExperimentConfig& cfg,
                                           const json& config_echo) {
    if (!cfg.gen) {
        throw ConfigError("gen requires [data] generator settings");
    }
    std::map<std::string, Dataset> data = materialize_data(cfg);
    const std::filesystem::path dir = cfg.out_dir / "data";
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> artifacts;
    for (const auto& [name, ds] : data) {
        const std::filesystem::path p = dir / (name + ".jsonl");
        save_jsonl(ds, p);
        artifacts.push_back(p);
    }
    write_manifest(cfg.out_dir, "gen", config_echo, {cfg.gen->seed}, artifacts);
    return artifacts;
}

namespace {

// one full training of `kind` at `seed`, following the config's shapes
TrainedRun train_variant(const ExperimentConfig& cfg,
                         const std::map<std::string, Dataset>& data, LossKind kind,
                         std::uint64_t seed) {
    const Dataset& train_data = data.at("train");
    TrainConfig tc = cfg.train;
    tc.loss = cfg.loss;
    tc.loss.kind = kind;
    tc.seed = seed;
    tc.branch_inputs = branches_for(kind, cfg, train_data.bias_dims().size());
    const Dataset* dev = find_split(data, "dev");
    return run_training(train_data, dev, first_ood(data), cfg.model, tc);
}

}  // namespace

std::vector<std::filesystem::path> cmd_train(const ExperimentConfig& cfg,
                                             const json& config_echo) {
    const std::map<std::string, Dataset> data = materialize_data(cfg);
    const Dataset& train_data = data.at("train");

    TrainedRun run = train_variant(cfg, data, cfg.loss.kind, cfg.train.seed);

    std::filesystem::create_directories(cfg.out_dir);
    std::vector<std::filesystem::path> artifacts;
    const std::filesystem::path ckpt = cfg.out_dir / "checkpoint.json";
    save_model(run.model, ckpt);
    artifacts.push_back(ckpt);
    const std::filesystem::path trace = cfg.out_dir / "trace.csv";
    save_trace_csv(run.trace, trace);
    artifacts.push_back(trace);

    // bias-only probe for the loss-correlation column on dev
    std::optional<double> dev_pearson;
    if (const Dataset* dev = find_split(data, "dev")) {
        BiasExtractor probe_input;
        probe_input.channel = 0;
        const Classifier probe = train_bias_probe(train_data, probe_input, HardsetConfig{},
                                                  derive_seed(cfg.train.seed, kProbeStream));
        dev_pearson = pearson(elementwise_loss_vector(run.model, *dev),
                              elementwise_loss_vector(probe, *dev, probe_input));
    }

    for (const std::string& split : resolve_eval_splits(cfg, data)) {
        EvalReport report =
            accuracy(run.model, data.at(split), map_of(cfg), to_string(cfg.loss.kind));
        if (split == "dev") report.pearson_vs_bias = dev_pearson;
        const std::filesystem::path jpath = cfg.out_dir / ("report_" + split + ".json");
        const std::filesystem::path cpath = cfg.out_dir / ("report_" + split + ".csv");
        save_report_json(report, jpath);
        save_report_csv(report, cpath);
        artifacts.push_back(jpath);
        artifacts.push_back(cpath);
    }
    write_manifest(cfg.out_dir, "train", config_echo, {cfg.train.seed}, artifacts);
    return artifacts;
}

std::vector<std::filesystem::path> cmd_sweep(const ExperimentConfig& cfg,
                                             const json& config_echo) {
    if (cfg.sweep.empty()) {
        throw ConfigError("sweep requires at least one non-empty [sweep] axis");
    }
    const std::map<std::string, Dataset> data = materialize_data(cfg);
    const Dataset* select = find_split(data, cfg.sweep_select);
    if (!select) {
        throw ConfigError("sweep.select split not available: " + cfg.sweep_select);
    }
    const Dataset* ood = first_ood(data);
    if (!ood) {
        throw ConfigError("sweep requires an out-of-domain test split");
    }
    TrainConfig tc = cfg.train;
    tc.loss = cfg.loss;
    tc.branch_inputs = branches_for(cfg.loss.kind, cfg, data.at("train").bias_dims().size());

    const SweepResult result = sweep(cfg.sweep, tc, cfg.model, data.at("train"), *select, *ood);

    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path csv = cfg.out_dir / "sweep.csv";
    save_sweep_csv(result, csv);
    const SweepRow& best = result.rows[result.best];
    json best_json{{"gamma", best.gamma},
                   {"alpha", best.alpha},
                   {"beta", best.beta},
                   {"seed", best.seed},
                   {"select_split", cfg.sweep_select},
                   {"select_accuracy", best.dev_report.accuracy},
                   {"ood_accuracy", best.ood_report.accuracy}};
    const std::filesystem::path best_path = cfg.out_dir / "sweep_best.json";
    {
        std::ofstream out(best_path);
        if (!out) throw ParseError("cannot write " + best_path.string());
        out << best_json.dump(2) << '\n';
    }
    std::vector<std::uint64_t> seeds;
    for (const SweepRow& row : result.rows) seeds.push_back(row.seed);
    write_manifest(cfg.out_dir, "sweep", config_echo, seeds, {csv, best_path});
    return {csv, best_path};
}

std::vector<std::filesystem::path> cmd_run(const ExperimentConfig& cfg,
                                           const json& config_echo) {
    const std::map<std::string, Dataset> data = materialize_data(cfg);
    const Dataset& train_data = data.at("train");
    std::filesystem::create_directories(cfg.out_dir);
    std::vector<std::filesystem::path> artifacts;

    if (cfg.gen) {
        const std::filesystem::path dir = cfg.out_dir / "data";
        std::filesystem::create_directories(dir);
        for (const auto& [name, ds] : data) {
            const std::filesystem::path p = dir / (name + ".jsonl");
            save_jsonl(ds, p);
            artifacts.push_back(p);
        }
    }

    const std::vector<std::string> eval_splits = resolve_eval_splits(cfg, data);
    const Dataset* dev = find_split(data, "dev");

    // one bias-only probe per seed, shared by every loss variant
    BiasExtractor probe_input;
    probe_input.channel = 0;
    std::map<std::uint64_t, Classifier> probes;
    std::map<std::uint64_t, Vector> probe_dev_losses, probe_train_losses;
    for (std::uint64_t seed : cfg.run_seeds) {
        probes.emplace(seed, train_bias_probe(train_data, probe_input, HardsetConfig{},
                                              derive_seed(seed, kProbeStream)));
        const Classifier& probe = probes.at(seed);
        probe_train_losses[seed] = elementwise_loss_vector(probe, train_data, probe_input);
        if (dev) probe_dev_losses[seed] = elementwise_loss_vector(probe, *dev, probe_input);
    }

    // loss kind -> split -> per-seed reports
    std::map<std::string, std::map<std::string, std::vector<EvalReport>>> reports;
    std::string pearson_csv = "loss,seed,split,pearson\n";
    for (LossKind kind : cfg.run_losses) {
        const std::string name = to_string(kind);
        for (std::uint64_t seed : cfg.run_seeds) {
            TrainedRun run = train_variant(cfg, data, kind, seed);
            const std::filesystem::path run_dir =
                cfg.out_dir / "runs" / name / ("seed" + std::to_string(seed));
            std::filesystem::create_directories(run_dir);
            save_model(run.model, run_dir / "checkpoint.json");
            save_trace_csv(run.trace, run_dir / "trace.csv");
            artifacts.push_back(run_dir / "checkpoint.json");
            artifacts.push_back(run_dir / "trace.csv");

            const double train_r = pearson(elementwise_loss_vector(run.model, train_data),
                                           probe_train_losses.at(seed));
            pearson_csv += name + "," + std::to_string(seed) + ",train," +
                           std::to_string(train_r) + "\n";
            std::optional<double> dev_r;
            if (dev) {
                dev_r = pearson(elementwise_loss_vector(run.model, *dev),
                                probe_dev_losses.at(seed));
                pearson_csv += name + "," + std::to_string(seed) + ",dev," +
                               std::to_string(*dev_r) + "\n";
            }

            for (const std::string& split : eval_splits) {
                EvalReport report = accuracy(run.model, data.at(split), map_of(cfg), name);
                if (split == "dev") report.pearson_vs_bias = dev_r;
                const std::filesystem::path rpath = run_dir / ("report_" + split + ".json");
                save_report_json(report, rpath);
                artifacts.push_back(rpath);
                reports[name][split].push_back(std::move(report));
            }
        }
    }

    // mean report per (loss, split) across seeds
    auto mean_report = [&](const std::vector<EvalReport>& rs) {
        EvalReport mean = rs.front();
        const double inv = 1.0 / static_cast<double>(rs.size());
        mean.accuracy = 0.0;
        std::fill(mean.per_label_accuracy.begin(), mean.per_label_accuracy.end(), 0.0);
        double pearson_sum = 0.0;
        bool have_pearson = true;
        for (const EvalReport& r : rs) {
            mean.accuracy += r.accuracy * inv;
            for (std::size_t i = 0; i < mean.per_label_accuracy.size(); ++i) {
                mean.per_label_accuracy[i] += r.per_label_accuracy[i] * inv;
            }
            if (r.pearson_vs_bias) {
                pearson_sum += *r.pearson_vs_bias * inv;
            } else {
                have_pearson = false;
            }
        }
        mean.pearson_vs_bias =
            have_pearson ? std::optional<double>(pearson_sum) : std::nullopt;
        return mean;
    };

    const std::string first_name = to_string(cfg.run_losses.front());
    std::string comparison_csv;
    std::string table;
    for (const std::string& split : eval_splits) {
        std::map<std::string, EvalReport> means;
        for (LossKind kind : cfg.run_losses) {
            const std::string name = to_string(kind);
            means.emplace(name, mean_report(reports.at(name).at(split)));
        }
        const EvalReport& baseline = means.at(first_name);
        table += "split " + split + " (mean over " + std::to_string(cfg.run_seeds.size()) +
                 " seeds, delta vs " + first_name + ")\n";
        table += "  loss      acc%     delta\n";
        for (LossKind kind : cfg.run_losses) {
            const std::string name = to_string(kind);
            const EvalReport& rep = means.at(name);
            if (comparison_csv.empty()) {
                comparison_csv = report_csv_header(rep, true) + "\n";
            }
            const ReportDelta delta = compare_reports(rep, baseline);
            comparison_csv += report_csv_row(rep, &delta) + "\n";
            char line[128];
            std::snprintf(line, sizeof(line), "  %-9s %7s  %7s\n", name.c_str(),
                          fmt_percent(rep.accuracy).c_str(),
                          name == first_name ? "" : fmt_delta_percent(delta.accuracy).c_str());
            table += line;
        }
    }
    const std::filesystem::path summary_dir = cfg.out_dir / "summary";
    std::filesystem::create_directories(summary_dir);
    {
        std::ofstream out(summary_dir / "comparison.csv");
        if (!out) throw ParseError("cannot write comparison.csv");
        out << comparison_csv;
    }
    artifacts.push_back(summary_dir / "comparison.csv");
    std::fputs(table.c_str(), stdout);

    const std::filesystem::path plot_dir = cfg.out_dir / "plots";
    std::filesystem::create_directories(plot_dir);
    {
        std::ofstream out(plot_dir / "pearson_bars.csv");
        if (!out) throw ParseError("cannot write pearson_bars.csv");
        out << pearson_csv;
    }
    artifacts.push_back(plot_dir / "pearson_bars.csv");

    // gamma curve (in-domain vs out-of-domain accuracy per gamma)
    if (!cfg.sweep.gamma.empty()) {
        const Dataset* indomain = find_split(data, "test_indomain");
        if (!indomain) indomain = dev;
        const Dataset* ood = first_ood(data);
        if (indomain && ood) {
            std::string curve = "gamma,seed,indomain_acc,ood_acc\n";
            for (double gamma : cfg.sweep.gamma) {
                double mean_in = 0.0, mean_ood = 0.0;
                for (std::uint64_t seed : cfg.run_seeds) {
                    ExperimentConfig point = cfg;
                    point.loss.gamma = gamma;
                    TrainedRun run = train_variant(point, data, LossKind::DFL, seed);
                    const double acc_in = accuracy(run.model, *indomain).accuracy;
                    const double acc_ood = accuracy(run.model, *ood).accuracy;
                    mean_in += acc_in / static_cast<double>(cfg.run_seeds.size());
                    mean_ood += acc_ood / static_cast<double>(cfg.run_seeds.size());
                    curve += std::to_string(gamma) + "," + std::to_string(seed) + "," +
                             std::to_string(acc_in) + "," + std::to_string(acc_ood) + "\n";
                }
                curve += std::to_string(gamma) + ",mean," + std::to_string(mean_in) + "," +
                         std::to_string(mean_ood) + "\n";
            }
            std::ofstream out(plot_dir / "gamma_curve.csv");
            if (!out) throw ParseError("cannot write gamma_curve.csv");
            out << curve;
            artifacts.push_back(plot_dir / "gamma_curve.csv");
        }
    }

    write_manifest(cfg.out_dir, "run", config_echo, cfg.run_seeds, artifacts);
    return artifacts;
}

std::vector<std::filesystem::path> cmd_hardset(const HardsetArgs& args) {
    const Dataset train = load_jsonl(args.train_path);
    const Dataset target = load_jsonl(args.target_path);
    const HardSplit split =
        build_hard_split(train, target, args.extractor, args.probe, args.seed);
    std::filesystem::create_directories(args.out_stem.parent_path().empty()
                                            ? std::filesystem::path(".")
                                            : args.out_stem.parent_path());
    save_hard_split(split, args.out_stem);
    return {std::filesystem::path(args.out_stem.string() + ".hard.jsonl"),
            std::filesystem::path(args.out_stem.string() + ".easy.jsonl"),
            std::filesystem::path(args.out_stem.string() + ".json")};
}

std::vector<std::filesystem::path> cmd_eval(const EvalArgs& args) {
    const TwoBranchModel model = load_model(args.model_path);
    const Dataset data = load_jsonl(args.data_path);
    const EvalReport report =
        accuracy(model, data, args.map ? &*args.map : nullptr, args.model_name);
    const std::filesystem::path jpath = args.out_prefix.string() + ".json";
    const std::filesystem::path cpath = args.out_prefix.string() + ".csv";
    save_report_json(report, jpath);
    save_report_csv(report, cpath);
    return {jpath, cpath};
}

std::string cmd_report(const std::vector<std::filesystem::path>& report_paths,
                       std::string* table_out) {
    if (report_paths.empty()) {
        throw ConfigError("report: no input reports given");
    }
    std::vector<EvalReport> reports;
    for (const std::filesystem::path& p : report_paths) {
        reports.push_back(load_report_json(p));
    }
    const EvalReport& baseline = reports.front();
    std::string csv = report_csv_header(baseline, true) + "\n";
    std::string table = "split " + baseline.split + " (delta vs " + baseline.model + ")\n";
    table += "  model     acc%     delta\n";
    for (const EvalReport& rep : reports) {
        const ReportDelta delta = compare_reports(rep, baseline);
        csv += report_csv_row(rep, &delta) + "\n";
        char line[128];
        std::snprintf(line, sizeof(line), "  %-9s %7s  %7s\n", rep.model.c_str(),
                      fmt_percent(rep.accuracy).c_str(),
                      &rep == &baseline ? "" : fmt_delta_percent(delta.accuracy).c_str());
        table += line;
    }
    if (table_out) *table_out = table;
    return csv;
}

}  // namespace debias
