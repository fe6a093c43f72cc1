#pragma once
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "debias/data.hpp"
#include "debias/eval.hpp"
#include "debias/losses.hpp"
#include "debias/model.hpp"

namespace debias {

struct TrainConfig {
    LossSpec loss;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 0.1;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    AdamParams adam;
    std::uint64_t seed = 0;
    bool shuffle = true;
    std::size_t eval_every = 1;
    /// Input selector per bias branch; empty means branch j reads bias
    /// channel j.
    std::vector<BiasExtractor> branch_inputs;

    void validate() const;  // throws ConfigError
};

struct EpochRecord {
    std::size_t epoch = 0;          // 1-based
    double combined_loss = 0.0;     // mean combined loss over the epoch
    double bias_loss = 0.0;         // mean bias-only CE over branches (unscaled by beta)
    std::optional<double> dev_accuracy;
    std::optional<double> ood_accuracy;
};

struct TrainTrace {
    std::vector<EpochRecord> epochs;
};

/// Columns: epoch,combined_loss,bias_loss,dev_acc,ood_acc (blank when not
/// evaluated that epoch).
void save_trace_csv(const TrainTrace& trace, const std::filesystem::path& path);

/// The base model consumes the concatenation of the signal features and
/// every bias channel, mirroring an input that contains its artifacts.
Vector full_input(const Example& example);

/// Full-input layout with everything but bias channel `channel` zeroed;
/// the bias-only view a shared encoder sees (hypothesis-only analog).
Vector bias_slot_view(const Example& example, std::size_t channel);

/// Base-path logits: encoder -> base head when an encoder is present.
Vector base_logits(const TwoBranchModel& model, const Example& example);

/// Branch j logits over its extractor's features (or, with a shared
/// encoder, over the frozen encoding of the branch's bias slot view).
Vector branch_logits(const TwoBranchModel& model, std::size_t branch, const Example& example,
                     const std::vector<BiasExtractor>& branch_inputs);

/// Gradients for every parameter group of a TwoBranchModel. The combined
/// loss writes only into base/encoder; the bias-only CE writes only into
/// its branch. Tests assert the untouched groups stay exactly zero.
struct ModelGradients {
    ClassifierGrads base;
    std::optional<ClassifierGrads> encoder;
    std::vector<ClassifierGrads> bias_branches;

    void scale(double s);
};

ModelGradients zero_gradients(const TwoBranchModel& model);

/// Adds `scale` times the combined-loss gradient for one example into
/// `grads` (base group only; bias logits are treated as constants).
/// Returns the per-example combined loss value.
double accumulate_combined(const TwoBranchModel& model, const Example& example,
                           const LossSpec& spec, const std::vector<BiasExtractor>& branch_inputs,
                           ModelGradients& grads, double scale);

/// Adds `scale` times the bias-only CE gradient of every branch into
/// `grads` (branch groups only; never base or encoder). Returns the mean
/// per-branch CE value for the example.
double accumulate_bias_ce(const TwoBranchModel& model, const Example& example,
                          const Vector* class_weights,
                          const std::vector<BiasExtractor>& branch_inputs, ModelGradients& grads,
                          double scale);

/// End-to-end two-branch loop: per batch, the combined loss updates the
/// base group and the beta-scaled bias-only CE updates each branch, with
/// one optimizer per parameter group. Deterministic under cfg.seed; a
/// non-finite loss aborts with a TrainingError naming the batch.
TrainTrace train(TwoBranchModel& model, const Dataset& train_data, const TrainConfig& cfg,
                 const Dataset* dev = nullptr, const Dataset* ood = nullptr);

/// Argmax of the base-path logits; bias branches are never consulted.
std::size_t predict(const TwoBranchModel& model, const Vector& full_input_vector);
std::size_t predict(const TwoBranchModel& model, const Example& example);

/// Model shapes for building fresh TwoBranchModels per run.
struct ModelConfig {
    std::vector<std::size_t> base_hidden;     // empty = linear base
    std::vector<std::size_t> branch_hidden;   // empty = linear branches
    std::vector<std::size_t> encoder_hidden;  // hidden widths of the optional encoder
    std::size_t encoder_out = 0;              // representation dim; 0 = no encoder
};

/// Fresh model matching dataset dims and the configured branch inputs.
TwoBranchModel build_model(const Dataset& data, const ModelConfig& shapes,
                           const std::vector<BiasExtractor>& branch_inputs, SeededRng& rng);

struct TrainedRun {
    TwoBranchModel model;
    TrainTrace trace;
};

/// Canonical "build a fresh model then train it" path. Model weights are
/// derived from cfg.seed, so two runs with equal configs match bit for
/// bit; the single-train CLI and every sweep grid point go through here.
TrainedRun run_training(const Dataset& train_data, const Dataset* dev, const Dataset* ood,
                        const ModelConfig& shapes, const TrainConfig& cfg);

struct SweepGrid {
    std::vector<double> gamma;
    std::vector<double> alpha;
    std::vector<double> beta;

    bool empty() const { return gamma.empty() && alpha.empty() && beta.empty(); }
};

struct SweepRow {
    double gamma = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    std::uint64_t seed = 0;
    EvalReport dev_report;
    EvalReport ood_report;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    /// Index of the row with the best dev accuracy (model selection on the
    /// named dev split); ties resolve to the earliest grid point.
    std::size_t best = 0;
};

/// Trains one model per grid point (cartesian product; an empty axis uses
/// the base config's value). Grid point i runs with seed cfg.seed + i.
/// Honors the DEBIAS_WORKERS environment variable for parallel points;
/// results are deterministic regardless of worker count.
SweepResult sweep(const SweepGrid& grid, const TrainConfig& base_cfg, const ModelConfig& shapes,
                  const Dataset& train_data, const Dataset& dev, const Dataset& ood);

void save_sweep_csv(const SweepResult& result, const std::filesystem::path& path);

}  // namespace debias
