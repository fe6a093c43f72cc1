#pragma once
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "debias/math.hpp"

namespace debias {

/// One affine layer: logits-or-activations = weight * x + bias.
struct Layer {
    Matrix weight;  // out x in
    Vector bias;    // out

    std::size_t in_dim() const { return weight.cols; }
    std::size_t out_dim() const { return weight.rows; }
};

/// Single affine map onto the label space.
struct LinearClassifier {
    Layer out;
};

/// Tanh MLP: hidden affine+tanh layers followed by a linear output layer.
/// Also serves as a shared encoder, in which case `out` produces the
/// representation instead of logits.
struct MlpClassifier {
    std::vector<Layer> hidden;
    Layer out;
};

using Classifier = std::variant<LinearClassifier, MlpClassifier>;

std::size_t input_dim(const Classifier& c);
std::size_t output_dim(const Classifier& c);

/// Per-layer parameter gradients; shapes mirror the owning model's layers
/// in layers_of() order (hidden..., out).
struct ClassifierGrads {
    std::vector<Layer> layers;

    void scale(double s);
    void accumulate(const ClassifierGrads& other);
    double max_abs() const;
};

ClassifierGrads zero_grads(const LinearClassifier& c);
ClassifierGrads zero_grads(const MlpClassifier& c);
ClassifierGrads zero_grads(const Classifier& c);

Vector forward(const LinearClassifier& c, const Vector& x);
Vector forward(const MlpClassifier& c, const Vector& x);
Vector forward(const Classifier& c, const Vector& x);

/// Analytic parameter gradients for dLoss/dlogits at input x. Activations
/// are recomputed internally, so no prior forward call is required. When
/// `d_input` is non-null it receives dLoss/dx (used to chain through a
/// shared encoder).
ClassifierGrads backward(const LinearClassifier& c, const Vector& x, const Vector& d_logits,
                         Vector* d_input = nullptr);
ClassifierGrads backward(const MlpClassifier& c, const Vector& x, const Vector& d_logits,
                         Vector* d_input = nullptr);
ClassifierGrads backward(const Classifier& c, const Vector& x, const Vector& d_logits,
                         Vector* d_input = nullptr);

/// Weights drawn uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.
Layer make_layer(std::size_t in, std::size_t out, SeededRng& rng);
LinearClassifier make_linear(std::size_t in, std::size_t out, SeededRng& rng);
MlpClassifier make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                       SeededRng& rng);
/// Empty `hidden` yields a LinearClassifier.
Classifier make_classifier(std::size_t in, const std::vector<std::size_t>& hidden,
                           std::size_t out, SeededRng& rng);

/// Mutable views over a model's layers, in gradient order.
std::vector<Layer*> layers_of(LinearClassifier& c);
std::vector<Layer*> layers_of(MlpClassifier& c);
std::vector<Layer*> layers_of(Classifier& c);

enum class OptimizerKind { Sgd, Adam };
OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One optimizer instance per parameter group. SGD: w -= lr * g. Adam:
/// standard bias-corrected recurrence. State is keyed by layer order, so
/// a given instance must always step the same parameter list.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate, AdamParams adam = {})
        : kind_(kind), lr_(learning_rate), adam_(adam) {}

    void step(const std::vector<Layer*>& params, const std::vector<const Layer*>& grads);

private:
    OptimizerKind kind_;
    double lr_;
    AdamParams adam_;
    std::uint64_t t_ = 0;
    std::vector<Vector> m_weight_, v_weight_, m_bias_, v_bias_;
};

/// Base model f_M plus K bias-only branches f_B_j. Parameter groups are
/// disjoint by construction; the optional encoder belongs to the base
/// group and is never updated by the bias-only loss.
struct TwoBranchModel {
    Classifier base;
    std::vector<Classifier> bias_branches;
    std::optional<MlpClassifier> shared_encoder;

    std::size_t num_branches() const { return bias_branches.size(); }
};

nlohmann::json classifier_to_json(const Classifier& c);
Classifier classifier_from_json(const nlohmann::json& j);

/// Versioned JSON checkpoint. Doubles round-trip bit-exactly.
void save_model(const TwoBranchModel& model, const std::filesystem::path& path);
TwoBranchModel load_model(const std::filesystem::path& path);

}  // namespace debias
