#include "debias/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "debias/errors.hpp"
#include "debias/losses.hpp"
#include "debias/trainer.hpp"

namespace debias {

using nlohmann::json;

LabelMap LabelMap::identity(std::size_t num_labels) {
    LabelMap m;
    m.target_of.resize(num_labels);
    for (std::size_t i = 0; i < num_labels; ++i) m.target_of[i] = i;
    return m;
}

std::size_t LabelMap::num_targets() const {
    std::size_t n = 0;
    for (std::size_t t : target_of) n = std::max(n, t + 1);
    return n;
}

std::size_t LabelMap::apply(std::size_t source) const {
    if (source >= target_of.size()) {
        throw DimensionError("LabelMap: unmapped source label " + std::to_string(source));
    }
    return target_of[source];
}

void LabelMap::validate(std::size_t num_source_labels) const {
    if (target_of.size() != num_source_labels) {
        throw ConfigError("label map must cover every source label (" +
                          std::to_string(num_source_labels) + " expected, " +
                          std::to_string(target_of.size()) + " mapped)");
    }
    const std::size_t targets = num_targets();
    if (targets > num_source_labels) {
        throw ConfigError("label map target space larger than source space");
    }
    if (!target_names.empty() && target_names.size() != targets) {
        throw ConfigError("label map target names must match the target space");
    }
    std::vector<bool> hit(targets, false);
    for (std::size_t t : target_of) hit[t] = true;
    for (std::size_t t = 0; t < targets; ++t) {
        if (!hit[t]) {
            throw ConfigError("label map target " + std::to_string(t) + " is never produced");
        }
    }
}

std::uint64_t dataset_fingerprint(const Dataset& data) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](unsigned char c) {
        h ^= c;
        h *= 1099511628211ULL;
    };
    for (const Example& ex : data.examples) {
        for (char c : ex.id) mix(static_cast<unsigned char>(c));
        mix(0x1f);
    }
    return h;
}

namespace {

std::vector<std::string> target_label_names(const Dataset& data, const LabelMap* map) {
    if (!map) return data.label_names;
    if (!map->target_names.empty()) return map->target_names;
    // synthesize names by joining the collapsed source names
    std::vector<std::string> names(map->num_targets());
    for (std::size_t src = 0; src < map->target_of.size(); ++src) {
        std::string& slot = names[map->target_of[src]];
        const std::string& src_name =
            src < data.label_names.size() ? data.label_names[src] : std::to_string(src);
        if (!slot.empty()) slot += "+";
        slot += src_name;
    }
    return names;
}

EvalReport accuracy_impl(const std::function<std::size_t(const Example&)>& predictor,
                         const Dataset& data, const LabelMap* map,
                         const std::string& model_name) {
    if (data.examples.empty()) {
        throw DimensionError("accuracy: empty dataset");
    }
    if (map) map->validate(data.num_labels);
    EvalReport report;
    report.model = model_name;
    report.split = to_string(data.split_tag);
    report.n = data.size();
    report.label_names = target_label_names(data, map);
    report.dataset_fingerprint = dataset_fingerprint(data);
    const std::size_t targets = map ? map->num_targets() : data.num_labels;
    std::vector<std::size_t> correct(targets, 0), count(targets, 0);
    std::size_t total_correct = 0;
    for (const Example& ex : data.examples) {
        std::size_t pred = predictor(ex);
        std::size_t gold = ex.y;
        if (map) {
            pred = map->apply(pred);
            gold = map->apply(gold);
        } else if (gold >= targets) {
            throw DimensionError("accuracy: label " + std::to_string(gold) +
                                 " outside the model's label space");
        }
        ++count[gold];
        if (pred == gold) {
            ++correct[gold];
            ++total_correct;
        }
    }
    report.accuracy = static_cast<double>(total_correct) / static_cast<double>(report.n);
    report.per_label_accuracy.resize(targets, 0.0);
    for (std::size_t t = 0; t < targets; ++t) {
        report.per_label_accuracy[t] =
            count[t] ? static_cast<double>(correct[t]) / static_cast<double>(count[t]) : 0.0;
    }
    return report;
}

}  // namespace

EvalReport accuracy(const TwoBranchModel& model, const Dataset& data, const LabelMap* map,
                    const std::string& model_name) {
    return accuracy_impl([&](const Example& ex) { return predict(model, ex); }, data, map,
                         model_name);
}

EvalReport accuracy(const Classifier& classifier, const Dataset& data,
                    const BiasExtractor& extractor, const LabelMap* map,
                    const std::string& model_name) {
    return accuracy_impl(
        [&](const Example& ex) { return argmax(forward(classifier, extract_bias_features(ex, extractor))); },
        data, map, model_name);
}

Vector elementwise_loss_vector(const TwoBranchModel& model, const Dataset& data) {
    Vector losses;
    losses.reserve(data.size());
    for (const Example& ex : data.examples) {
        losses.push_back(ce_loss(base_logits(model, ex), ex.y).value);
    }
    return losses;
}

Vector elementwise_loss_vector(const Classifier& classifier, const Dataset& data,
                               const BiasExtractor& extractor) {
    Vector losses;
    losses.reserve(data.size());
    for (const Example& ex : data.examples) {
        losses.push_back(ce_loss(forward(classifier, extract_bias_features(ex, extractor)), ex.y).value);
    }
    return losses;
}

double pearson(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw DimensionError("pearson: length mismatch");
    }
    if (a.size() < 2) {
        throw DimensionError("pearson: need at least two points");
    }
    const double n = static_cast<double>(a.size());
    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        mean_a += a[i];
        mean_b += b[i];
    }
    mean_a /= n;
    mean_b /= n;
    double cov = 0.0, var_a = 0.0, var_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - mean_a;
        const double db = b[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0) {
        throw std::domain_error("pearson: undefined for zero-variance input");
    }
    return cov / std::sqrt(var_a * var_b);
}

ReportDelta compare_reports(const EvalReport& candidate, const EvalReport& baseline) {
    if (candidate.split != baseline.split) {
        throw DimensionError("compare_reports: split mismatch (" + candidate.split + " vs " +
                             baseline.split + ")");
    }
    if (candidate.dataset_fingerprint != baseline.dataset_fingerprint) {
        throw DimensionError("compare_reports: reports describe different datasets");
    }
    if (candidate.per_label_accuracy.size() != baseline.per_label_accuracy.size()) {
        throw DimensionError("compare_reports: label spaces differ");
    }
    ReportDelta delta;
    delta.baseline = baseline.model;
    delta.accuracy = candidate.accuracy - baseline.accuracy;
    delta.per_label_accuracy.resize(candidate.per_label_accuracy.size());
    for (std::size_t i = 0; i < delta.per_label_accuracy.size(); ++i) {
        delta.per_label_accuracy[i] =
            candidate.per_label_accuracy[i] - baseline.per_label_accuracy[i];
    }
    if (candidate.pearson_vs_bias && baseline.pearson_vs_bias) {
        delta.pearson_vs_bias = *candidate.pearson_vs_bias - *baseline.pearson_vs_bias;
    }
    return delta;
}

namespace {

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string fmt_hex64(std::uint64_t x) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& report) {
    json j;
    j["model"] = report.model;
    j["split"] = report.split;
    j["n"] = report.n;
    j["accuracy"] = report.accuracy;
    j["per_label_accuracy"] = report.per_label_accuracy;
    j["label_names"] = report.label_names;
    j["pearson_vs_bias"] =
        report.pearson_vs_bias ? json(*report.pearson_vs_bias) : json(nullptr);
    j["fingerprint"] = fmt_hex64(report.dataset_fingerprint);
    return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport report;
    report.model = j.value("model", "");
    report.split = j.at("split").get<std::string>();
    report.n = j.at("n").get<std::size_t>();
    report.accuracy = j.at("accuracy").get<double>();
    report.per_label_accuracy = j.at("per_label_accuracy").get<std::vector<double>>();
    report.label_names = j.at("label_names").get<std::vector<std::string>>();
    if (j.contains("pearson_vs_bias") && !j["pearson_vs_bias"].is_null()) {
        report.pearson_vs_bias = j["pearson_vs_bias"].get<double>();
    }
    report.dataset_fingerprint =
        std::stoull(j.at("fingerprint").get<std::string>(), nullptr, 16);
    return report;
}

void save_report_json(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ParseError("cannot open report for writing: " + path.string());
    }
    out << report_to_json(report).dump(2) << '\n';
}

EvalReport load_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open report: " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("malformed report " + path.string() + ": " + e.what());
    }
    try {
        return report_from_json(j);
    } catch (const json::exception& e) {
        throw ParseError("report " + path.string() + " missing fields: " + e.what());
    }
}

std::string report_csv_header(const EvalReport& report, bool with_delta) {
    std::string h = "model,split,n,acc";
    for (const std::string& name : report.label_names) h += ",acc_" + name;
    h += ",pearson";
    if (with_delta) {
        h += ",delta_acc";
        for (const std::string& name : report.label_names) h += ",delta_" + name;
        h += ",delta_pearson";
    }
    return h;
}

std::string report_csv_row(const EvalReport& report, const ReportDelta* delta) {
    std::string row = report.model + "," + report.split + "," + std::to_string(report.n) + "," +
                      fmt_double(report.accuracy);
    for (double a : report.per_label_accuracy) row += "," + fmt_double(a);
    row += ",";
    if (report.pearson_vs_bias) row += fmt_double(*report.pearson_vs_bias);
    if (delta) {
        row += "," + fmt_double(delta->accuracy);
        for (double a : delta->per_label_accuracy) row += "," + fmt_double(a);
        row += ",";
        if (delta->pearson_vs_bias) row += fmt_double(*delta->pearson_vs_bias);
    }
    return row;
}

void save_report_csv(const EvalReport& report, const std::filesystem::path& path,
                     const ReportDelta* delta) {
    std::ofstream out(path);
    if (!out) {
        throw ParseError("cannot open report for writing: " + path.string());
    }
    out << report_csv_header(report, delta != nullptr) << '\n'
        << report_csv_row(report, delta) << '\n';
}

}  // namespace debias
