#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "debias/data.hpp"
#include "debias/model.hpp"

namespace debias {

/// Surjective collapse of the model's label space onto a target space,
/// e.g. {entailment, neutral, contradiction} -> {entailment, not_entailment}.
/// Applied to both predictions and gold labels before comparison.
struct LabelMap {
    std::vector<std::size_t> target_of;      // indexed by source label
    std::vector<std::string> target_names;   // optional; synthesized when empty

    static LabelMap identity(std::size_t num_labels);
    std::size_t num_targets() const;
    std::size_t apply(std::size_t source) const;  // throws DimensionError if unmapped
    void validate(std::size_t num_source_labels) const;
};

struct EvalReport {
    std::string model;   // tag for report tables, usually the loss kind
    std::string split;
    std::size_t n = 0;
    double accuracy = 0.0;
    std::vector<double> per_label_accuracy;  // target label space
    std::vector<std::string> label_names;    // target label space
    std::optional<double> pearson_vs_bias;
    std::uint64_t dataset_fingerprint = 0;   // FNV-1a over example ids
};

/// Candidate-minus-baseline differences produced by compare_reports.
struct ReportDelta {
    std::string baseline;
    double accuracy = 0.0;
    std::vector<double> per_label_accuracy;
    std::optional<double> pearson_vs_bias;
};

std::uint64_t dataset_fingerprint(const Dataset& data);

/// Accuracy of the base model (bias branches are never consulted).
EvalReport accuracy(const TwoBranchModel& model, const Dataset& data,
                    const LabelMap* map = nullptr, const std::string& model_name = "");

/// Accuracy of a standalone classifier over extracted bias features.
EvalReport accuracy(const Classifier& classifier, const Dataset& data,
                    const BiasExtractor& extractor, const LabelMap* map = nullptr,
                    const std::string& model_name = "");

/// Per-example cross-entropy of the base model, in dataset order.
Vector elementwise_loss_vector(const TwoBranchModel& model, const Dataset& data);

/// Per-example cross-entropy of a standalone classifier over extracted
/// bias features, in dataset order.
Vector elementwise_loss_vector(const Classifier& classifier, const Dataset& data,
                               const BiasExtractor& extractor);

/// Pearson r via two-pass centering. Requires equal lengths >= 2; throws
/// std::domain_error when either argument has zero variance.
double pearson(const Vector& a, const Vector& b);

/// Candidate minus baseline, per metric. Throws DimensionError when the
/// reports describe different splits or datasets.
ReportDelta compare_reports(const EvalReport& candidate, const EvalReport& baseline);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
void save_report_json(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report_json(const std::filesystem::path& path);

/// CSV column order: model, split, n, acc, one acc_<label> column per
/// target label, pearson, then (when a delta is given) delta_acc,
/// delta_<label>..., delta_pearson. Optional empty cells stay blank.
std::string report_csv_header(const EvalReport& report, bool with_delta);
std::string report_csv_row(const EvalReport& report, const ReportDelta* delta = nullptr);
void save_report_csv(const EvalReport& report, const std::filesystem::path& path,
                     const ReportDelta* delta = nullptr);

}  // namespace debias
