#pragma once
#include <span>
#include <string>
#include <vector>

#include "debias/math.hpp"

namespace debias {

enum class LossKind { CE, PoE, DFL, RUBi, JointPoE, JointDFL };

LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LossKind k);

/// Which combined loss trains the base model, plus its hyperparameters.
///   gamma — DFL focusing parameter; gamma = 0 recovers plain CE.
///   alpha — strength multiplier on the bias log-softmax term in PoE;
///           alpha = 0 recovers CE, alpha = 1 the plain product of experts.
///   beta  — weight of the bias-only CE inside the total training objective.
///   bias_class_weights — per-label weights for the bias-only CE (empty =
///           uniform); used e.g. to give two label groups equal pull.
struct LossSpec {
    LossKind kind = LossKind::CE;
    double gamma = 2.0;
    double alpha = 1.0;
    double beta = 1.0;
    Vector bias_class_weights;

    /// Throws ConfigError when a hyperparameter is out of range or the
    /// class-weight vector does not match the label count.
    void validate(std::size_t num_labels) const;
};

/// Per-example loss value and gradients with respect to the logits that
/// produced it. Combined losses treat bias logits as constants, so their
/// d_bias_logits are identically zero; only the bias-only CE routes a
/// nonzero gradient to its own branch.
struct LossOutput {
    double value = 0.0;
    Vector d_base_logits;
    std::vector<Vector> d_bias_logits;
};

/// Plain (optionally class-weighted) cross entropy of `logits` at `label`.
/// The gradient lands in d_base_logits regardless of which branch the
/// logits came from; callers route it.
LossOutput ce_loss(const Vector& logits, std::size_t label, const Vector* class_weights = nullptr);

/// Product-of-experts combination: log_softmax(base) + alpha * log_softmax(bias).
/// With alpha = 1 the softmax of the result is the normalized elementwise
/// product of the two softmax distributions.
Vector poe_combine(const Vector& base_logits, const Vector& bias_logits, double alpha);

/// CE of the PoE-combined classifier. d_base_logits has the closed form
/// softmax(f_C) - onehot(label).
LossOutput poe_loss(const Vector& base_logits, const Vector& bias_logits, std::size_t label,
                    double alpha);

/// Debiased focal loss: (1 - p_bias_y)^gamma * CE(base). The modulating
/// factor is computed from the bias log-softmax complement, which stays
/// accurate when p_bias_y approaches 1.
LossOutput dfl_loss(const Vector& base_logits, const Vector& bias_logits, std::size_t label,
                    double gamma);

/// Elementwise product of base logits with a logistic mask of the bias
/// logits; mask entries are clamped to the open interval (0, 1).
Vector rubi_combine(const Vector& base_logits, const Vector& bias_logits);

/// CE of the RUBi-combined classifier; d_base = mask * (softmax(f_C) - onehot).
LossOutput rubi_loss(const Vector& base_logits, const Vector& bias_logits, std::size_t label);

/// Multi-bias PoE: log_softmax(base) + alpha * sum_j log_softmax(bias_j).
Vector joint_poe_combine(const Vector& base_logits, const std::vector<Vector>& bias_logits,
                         double alpha);
LossOutput joint_poe_loss(const Vector& base_logits, const std::vector<Vector>& bias_logits,
                          std::size_t label, double alpha);

/// Elementwise arithmetic mean of the bias logit vectors. The joint DFL
/// applies the focal modulation to the softmax of this average.
Vector joint_bias_average(const std::vector<Vector>& bias_logits);
LossOutput joint_dfl_loss(const Vector& base_logits, const std::vector<Vector>& bias_logits,
                          std::size_t label, double gamma);

/// Dispatch on spec.kind. CE ignores bias logits; PoE/DFL/RUBi require
/// exactly one bias vector; the joint variants accept K >= 1.
LossOutput combined_loss(const LossSpec& spec, const Vector& base_logits,
                         const std::vector<Vector>& bias_logits, std::size_t label);

struct BatchItem {
    Vector base_logits;
    std::vector<Vector> bias_logits;
    std::size_t label = 0;
};

struct BatchLoss {
    double value = 0.0;  // mean combined loss over the batch
    std::vector<LossOutput> per_example;
};

/// Mean-reduced combined loss over a non-empty batch, summed in batch
/// order so results are reproducible.
BatchLoss batch_loss(const LossSpec& spec, std::span<const BatchItem> batch);

}  // namespace debias
