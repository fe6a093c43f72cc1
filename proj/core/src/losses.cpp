#include "debias/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "debias/errors.hpp"

namespace debias {

namespace {

// exp(-745) is the last representable magnitude before -inf would appear
// in downstream sums; clamping here keeps losses finite at p -> 0.
constexpr double kMinLogProb = -745.0;

double clamped_log_prob(double log_prob) { return std::max(log_prob, kMinLogProb); }

void check_label(std::size_t label, std::size_t num_labels) {
    if (label >= num_labels) {
        throw DimensionError("label " + std::to_string(label) + " out of range for " +
                             std::to_string(num_labels) + " labels");
    }
}

void check_same_dim(const Vector& a, const Vector& b, const char* who) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(who) + ": dimension mismatch " +
                             std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
}

// CE at `label` scaled by `mult`; shared by ce_loss and dfl_loss so that
// DFL with gamma = 0 reproduces CE bit for bit.
LossOutput scaled_ce(const Vector& logits, std::size_t label, double mult) {
    check_label(label, logits.size());
    const Vector lsm = log_softmax(logits);
    LossOutput out;
    out.value = mult * -clamped_log_prob(lsm[label]);
    out.d_base_logits.resize(lsm.size());
    for (std::size_t k = 0; k < lsm.size(); ++k) {
        const double target = (k == label) ? 1.0 : 0.0;
        out.d_base_logits[k] = mult * (std::exp(lsm[k]) - target);
    }
    return out;
}

// 1 - softmax(logits)[label], evaluated as the sum of the remaining
// probability mass so it keeps full relative accuracy near 0.
double complement_prob(const Vector& lsm, std::size_t label) {
    double c = 0.0;
    for (std::size_t k = 0; k < lsm.size(); ++k) {
        if (k != label) c += std::exp(lsm[k]);
    }
    return c;
}

double stable_logistic(double x) {
    double v;
    if (x >= 0.0) {
        v = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        v = e / (1.0 + e);
    }
    // keep the mask inside the open interval even past the saturation point
    const double hi = std::nextafter(1.0, 0.0);
    const double lo = std::numeric_limits<double>::min();
    return std::clamp(v, lo, hi);
}

std::vector<Vector> zeros_like(const std::vector<Vector>& vs) {
    std::vector<Vector> out;
    out.reserve(vs.size());
    for (const Vector& v : vs) out.emplace_back(v.size(), 0.0);
    return out;
}

}  // namespace

LossKind loss_kind_from_string(const std::string& s) {
    std::string key;
    for (char c : s) {
        if (c == '_' || c == '-') continue;
        key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (key == "ce") return LossKind::CE;
    if (key == "poe") return LossKind::PoE;
    if (key == "dfl") return LossKind::DFL;
    if (key == "rubi") return LossKind::RUBi;
    if (key == "jointpoe") return LossKind::JointPoE;
    if (key == "jointdfl") return LossKind::JointDFL;
    throw ConfigError("unknown loss kind: " + s);
}

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::CE: return "CE";
        case LossKind::PoE: return "PoE";
        case LossKind::DFL: return "DFL";
        case LossKind::RUBi: return "RUBi";
        case LossKind::JointPoE: return "JointPoE";
        case LossKind::JointDFL: return "JointDFL";
    }
    return "?";
}

void LossSpec::validate(std::size_t num_labels) const {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
        throw ConfigError("loss.gamma must be finite and >= 0");
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw ConfigError("loss.alpha must be finite and > 0");
    }
    if (!(beta >= 0.0) || !std::isfinite(beta)) {
        throw ConfigError("loss.beta must be finite and >= 0");
    }
    if (!bias_class_weights.empty()) {
        if (bias_class_weights.size() != num_labels) {
            throw ConfigError("loss.bias_class_weights must have one entry per label");
        }
        for (double w : bias_class_weights) {
            if (!(w > 0.0) || !std::isfinite(w)) {
                throw ConfigError("loss.bias_class_weights entries must be finite and > 0");
            }
        }
    }
}

LossOutput ce_loss(const Vector& logits, std::size_t label, const Vector* class_weights) {
    double w = 1.0;
    if (class_weights && !class_weights->empty()) {
        if (class_weights->size() != logits.size()) {
            throw DimensionError("ce_loss: class_weights dim mismatch");
        }
        check_label(label, logits.size());
        w = (*class_weights)[label];
    }
    return scaled_ce(logits, label, w);
}

Vector joint_poe_combine(const Vector& base_logits, const std::vector<Vector>& bias_logits,
                         double alpha) {
    if (bias_logits.empty()) {
        throw ConfigError("joint_poe_combine: needs at least one bias branch");
    }
    Vector combined = log_softmax(base_logits);
    for (const Vector& b : bias_logits) {
        check_same_dim(base_logits, b, "joint_poe_combine");
        const Vector lsb = log_softmax(b);
        for (std::size_t k = 0; k < combined.size(); ++k) combined[k] += alpha * lsb[k];
    }
    return combined;
}

Vector poe_combine(const Vector& base_logits, const Vector& bias_logits, double alpha) {
    return joint_poe_combine(base_logits, {bias_logits}, alpha);
}

LossOutput joint_poe_loss(const Vector& base_logits, const std::vector<Vector>& bias_logits,
                          std::size_t label, double alpha) {
    check_label(label, base_logits.size());
    const Vector fc = joint_poe_combine(base_logits, bias_logits, alpha);
    const Vector lsm = log_softmax(fc);
    LossOutput out;
    out.value = -clamped_log_prob(lsm[label]);
    out.d_base_logits.resize(lsm.size());
    for (std::size_t k = 0; k < lsm.size(); ++k) {
        const double target = (k == label) ? 1.0 : 0.0;
        // exact: the log-softmax Jacobian term cancels because the
        // combined residual sums to zero
        out.d_base_logits[k] = std::exp(lsm[k]) - target;
    }
    out.d_bias_logits = zeros_like(bias_logits);
    return out;
}

LossOutput poe_loss(const Vector& base_logits, const Vector& bias_logits, std::size_t label,
                    double alpha) {
    return joint_poe_loss(base_logits, {bias_logits}, label, alpha);
}

LossOutput dfl_loss(const Vector& base_logits, const Vector& bias_logits, std::size_t label,
                    double gamma) {
    check_same_dim(base_logits, bias_logits, "dfl_loss");
    check_label(label, base_logits.size());
    if (!(gamma >= 0.0)) {
        throw ConfigError("dfl_loss: gamma must be >= 0");
    }
    const Vector bias_lsm = log_softmax(bias_logits);
    const double modulation = std::pow(complement_prob(bias_lsm, label), gamma);
    LossOutput out = scaled_ce(base_logits, label, modulation);
    out.d_bias_logits = zeros_like({bias_logits});
    return out;
}

Vector rubi_combine(const Vector& base_logits, const Vector& bias_logits) {
    check_same_dim(base_logits, bias_logits, "rubi_combine");
    Vector fc(base_logits.size());
    for (std::size_t k = 0; k < fc.size(); ++k) {
        fc[k] = base_logits[k] * stable_logistic(bias_logits[k]);
    }
    return fc;
}

LossOutput rubi_loss(const Vector& base_logits, const Vector& bias_logits, std::size_t label) {
    check_same_dim(base_logits, bias_logits, "rubi_loss");
    check_label(label, base_logits.size());
    const Vector fc = rubi_combine(base_logits, bias_logits);
    const Vector lsm = log_softmax(fc);
    LossOutput out;
    out.value = -clamped_log_prob(lsm[label]);
    out.d_base_logits.resize(lsm.size());
    for (std::size_t k = 0; k < lsm.size(); ++k) {
        const double target = (k == label) ? 1.0 : 0.0;
        out.d_base_logits[k] = stable_logistic(bias_logits[k]) * (std::exp(lsm[k]) - target);
    }
    out.d_bias_logits = zeros_like({bias_logits});
    return out;
}

Vector joint_bias_average(const std::vector<Vector>& bias_logits) {
    if (bias_logits.empty()) {
        throw ConfigError("joint_bias_average: needs at least one bias branch");
    }
    Vector avg(bias_logits.front().size(), 0.0);
    for (const Vector& b : bias_logits) {
        check_same_dim(bias_logits.front(), b, "joint_bias_average");
        for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += b[k];
    }
    const double inv = 1.0 / static_cast<double>(bias_logits.size());
    for (double& x : avg) x *= inv;
    return avg;
}

LossOutput joint_dfl_loss(const Vector& base_logits, const std::vector<Vector>& bias_logits,
                          std::size_t label, double gamma) {
    LossOutput out = dfl_loss(base_logits, joint_bias_average(bias_logits), label, gamma);
    out.d_bias_logits = zeros_like(bias_logits);
    return out;
}

LossOutput combined_loss(const LossSpec& spec, const Vector& base_logits,
                         const std::vector<Vector>& bias_logits, std::size_t label) {
    auto require_single = [&](const char* who) {
        if (bias_logits.size() != 1) {
            throw ConfigError(std::string(who) + " requires exactly one bias branch (got " +
                              std::to_string(bias_logits.size()) +
                              "); use the joint variant for several");
        }
    };
    switch (spec.kind) {
        case LossKind::CE: {
            LossOutput out = ce_loss(base_logits, label);
            out.d_bias_logits = zeros_like(bias_logits);
            return out;
        }
        case LossKind::PoE:
            require_single("PoE");
            return poe_loss(base_logits, bias_logits[0], label, spec.alpha);
        case LossKind::DFL:
            require_single("DFL");
            return dfl_loss(base_logits, bias_logits[0], label, spec.gamma);
        case LossKind::RUBi:
            require_single("RUBi");
            return rubi_loss(base_logits, bias_logits[0], label);
        case LossKind::JointPoE:
            return joint_poe_loss(base_logits, bias_logits, label, spec.alpha);
        case LossKind::JointDFL:
            return joint_dfl_loss(base_logits, bias_logits, label, spec.gamma);
    }
    throw ConfigError("combined_loss: unhandled loss kind");
}

BatchLoss batch_loss(const LossSpec& spec, std::span<const BatchItem> batch) {
    if (batch.empty()) {
        throw DimensionError("batch_loss: empty batch");
    }
    BatchLoss out;
    out.per_example.reserve(batch.size());
    double sum = 0.0;
    for (const BatchItem& item : batch) {
        out.per_example.push_back(
            combined_loss(spec, item.base_logits, item.bias_logits, item.label));
        sum += out.per_example.back().value;
    }
    out.value = sum / static_cast<double>(batch.size());
    return out;
}

}  // namespace debias
