#include "debias/model.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "debias/errors.hpp"

namespace debias {

namespace {

void check_input(const Layer& l, const Vector& x, const char* who) {
    if (x.size() != l.in_dim()) {
        throw DimensionError(std::string(who) + ": input dim " + std::to_string(x.size()) +
                             " != expected " + std::to_string(l.in_dim()));
    }
}

Vector affine(const Layer& l, const Vector& x) {
    Vector out(l.out_dim());
    for (std::size_t i = 0; i < l.out_dim(); ++i) {
        double acc = l.bias[i];
        const double* row = &l.weight.values[i * l.weight.cols];
        for (std::size_t j = 0; j < l.in_dim(); ++j) acc += row[j] * x[j];
        out[i] = acc;
    }
    return out;
}

Vector tanh_vec(Vector v) {
    for (double& x : v) x = std::tanh(x);
    return v;
}

// d_out is dLoss/d(pre-bias output); writes dW, db and returns dLoss/dx.
Vector affine_backward(const Layer& l, const Vector& x, const Vector& d_out, Layer& grad) {
    for (std::size_t i = 0; i < l.out_dim(); ++i) {
        grad.bias[i] = d_out[i];
        double* grow = &grad.weight.values[i * grad.weight.cols];
        for (std::size_t j = 0; j < l.in_dim(); ++j) grow[j] = d_out[i] * x[j];
    }
    Vector d_in(l.in_dim(), 0.0);
    for (std::size_t i = 0; i < l.out_dim(); ++i) {
        const double* row = &l.weight.values[i * l.weight.cols];
        for (std::size_t j = 0; j < l.in_dim(); ++j) d_in[j] += row[j] * d_out[i];
    }
    return d_in;
}

Layer zero_like(const Layer& l) {
    Layer g;
    g.weight = Matrix(l.weight.rows, l.weight.cols, 0.0);
    g.bias.assign(l.bias.size(), 0.0);
    return g;
}

}  // namespace

std::size_t input_dim(const Classifier& c) {
    return std::visit(
        [](const auto& m) {
            if constexpr (std::is_same_v<std::decay_t<decltype(m)>, LinearClassifier>) {
                return m.out.in_dim();
            } else {
                return m.hidden.empty() ? m.out.in_dim() : m.hidden.front().in_dim();
            }
        },
        c);
}

std::size_t output_dim(const Classifier& c) {
    return std::visit([](const auto& m) { return m.out.out_dim(); }, c);
}

void ClassifierGrads::scale(double s) {
    for (Layer& l : layers) {
        for (double& w : l.weight.values) w *= s;
        for (double& b : l.bias) b *= s;
    }
}

void ClassifierGrads::accumulate(const ClassifierGrads& other) {
    if (other.layers.size() != layers.size()) {
        throw DimensionError("ClassifierGrads::accumulate: layer count mismatch");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Layer& a = layers[i];
        const Layer& b = other.layers[i];
        if (a.weight.values.size() != b.weight.values.size() || a.bias.size() != b.bias.size()) {
            throw DimensionError("ClassifierGrads::accumulate: shape mismatch");
        }
        for (std::size_t k = 0; k < a.weight.values.size(); ++k) {
            a.weight.values[k] += b.weight.values[k];
        }
        for (std::size_t k = 0; k < a.bias.size(); ++k) a.bias[k] += b.bias[k];
    }
}

double ClassifierGrads::max_abs() const {
    double m = 0.0;
    for (const Layer& l : layers) {
        for (double w : l.weight.values) m = std::max(m, std::abs(w));
        for (double b : l.bias) m = std::max(m, std::abs(b));
    }
    return m;
}

ClassifierGrads zero_grads(const LinearClassifier& c) {
    return ClassifierGrads{{zero_like(c.out)}};
}

ClassifierGrads zero_grads(const MlpClassifier& c) {
    ClassifierGrads g;
    for (const Layer& l : c.hidden) g.layers.push_back(zero_like(l));
    g.layers.push_back(zero_like(c.out));
    return g;
}

ClassifierGrads zero_grads(const Classifier& c) {
    return std::visit([](const auto& m) { return zero_grads(m); }, c);
}

Vector forward(const LinearClassifier& c, const Vector& x) {
    check_input(c.out, x, "LinearClassifier::forward");
    return affine(c.out, x);
}

Vector forward(const MlpClassifier& c, const Vector& x) {
    const Vector* cur = &x;
    Vector act;
    for (const Layer& l : c.hidden) {
        check_input(l, *cur, "MlpClassifier::forward");
        act = tanh_vec(affine(l, *cur));
        cur = &act;
    }
    check_input(c.out, *cur, "MlpClassifier::forward");
    return affine(c.out, *cur);
}

Vector forward(const Classifier& c, const Vector& x) {
    return std::visit([&](const auto& m) { return forward(m, x); }, c);
}

ClassifierGrads backward(const LinearClassifier& c, const Vector& x, const Vector& d_logits,
                         Vector* d_input) {
    check_input(c.out, x, "LinearClassifier::backward");
    if (d_logits.size() != c.out.out_dim()) {
        throw DimensionError("LinearClassifier::backward: d_logits dim mismatch");
    }
    ClassifierGrads g{{zero_like(c.out)}};
    Vector d_in = affine_backward(c.out, x, d_logits, g.layers[0]);
    if (d_input) *d_input = std::move(d_in);
    return g;
}

ClassifierGrads backward(const MlpClassifier& c, const Vector& x, const Vector& d_logits,
                         Vector* d_input) {
    if (d_logits.size() != c.out.out_dim()) {
        throw DimensionError("MlpClassifier::backward: d_logits dim mismatch");
    }
    // recompute activations
    std::vector<Vector> acts;  // acts[l] = activation after hidden layer l
    acts.reserve(c.hidden.size());
    const Vector* cur = &x;
    for (const Layer& l : c.hidden) {
        check_input(l, *cur, "MlpClassifier::backward");
        acts.push_back(tanh_vec(affine(l, *cur)));
        cur = &acts.back();
    }
    check_input(c.out, *cur, "MlpClassifier::backward");

    ClassifierGrads g = zero_grads(c);
    Vector d_act = affine_backward(c.out, *cur, d_logits, g.layers.back());
    for (std::size_t li = c.hidden.size(); li-- > 0;) {
        // through tanh: dz = da * (1 - a^2)
        Vector d_z(d_act.size());
        for (std::size_t k = 0; k < d_act.size(); ++k) {
            d_z[k] = d_act[k] * (1.0 - acts[li][k] * acts[li][k]);
        }
        const Vector& layer_in = (li == 0) ? x : acts[li - 1];
        d_act = affine_backward(c.hidden[li], layer_in, d_z, g.layers[li]);
    }
    if (d_input) *d_input = std::move(d_act);
    return g;
}

ClassifierGrads backward(const Classifier& c, const Vector& x, const Vector& d_logits,
                         Vector* d_input) {
    return std::visit([&](const auto& m) { return backward(m, x, d_logits, d_input); }, c);
}

Layer make_layer(std::size_t in, std::size_t out, SeededRng& rng) {
    if (in == 0 || out == 0) {
        throw DimensionError("make_layer: zero dimension");
    }
    Layer l;
    l.weight = Matrix(out, in);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : l.weight.values) w = rng.uniform(-bound, bound);
    l.bias.assign(out, 0.0);
    return l;
}

LinearClassifier make_linear(std::size_t in, std::size_t out, SeededRng& rng) {
    return LinearClassifier{make_layer(in, out, rng)};
}

MlpClassifier make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                       SeededRng& rng) {
    MlpClassifier c;
    std::size_t cur = in;
    for (std::size_t h : hidden) {
        c.hidden.push_back(make_layer(cur, h, rng));
        cur = h;
    }
    c.out = make_layer(cur, out, rng);
    return c;
}

Classifier make_classifier(std::size_t in, const std::vector<std::size_t>& hidden,
                           std::size_t out, SeededRng& rng) {
    if (hidden.empty()) return make_linear(in, out, rng);
    return make_mlp(in, hidden, out, rng);
}

std::vector<Layer*> layers_of(LinearClassifier& c) { return {&c.out}; }

std::vector<Layer*> layers_of(MlpClassifier& c) {
    std::vector<Layer*> out;
    for (Layer& l : c.hidden) out.push_back(&l);
    out.push_back(&c.out);
    return out;
}

std::vector<Layer*> layers_of(Classifier& c) {
    return std::visit([](auto& m) { return layers_of(m); }, c);
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adam") return OptimizerKind::Adam;
    throw ConfigError("unknown optimizer: " + s);
}

std::string to_string(OptimizerKind k) {
    return k == OptimizerKind::Sgd ? "sgd" : "adam";
}

void Optimizer::step(const std::vector<Layer*>& params, const std::vector<const Layer*>& grads) {
    if (params.size() != grads.size()) {
        throw DimensionError("Optimizer::step: parameter/gradient count mismatch");
    }
    if (kind_ == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            Layer& p = *params[i];
            const Layer& g = *grads[i];
            if (p.weight.values.size() != g.weight.values.size() ||
                p.bias.size() != g.bias.size()) {
                throw DimensionError("Optimizer::step: shape mismatch");
            }
            for (std::size_t k = 0; k < p.weight.values.size(); ++k) {
                p.weight.values[k] -= lr_ * g.weight.values[k];
            }
            for (std::size_t k = 0; k < p.bias.size(); ++k) p.bias[k] -= lr_ * g.bias[k];
        }
        return;
    }
    // Adam
    if (m_weight_.empty()) {
        for (const Layer* p : params) {
            m_weight_.emplace_back(p->weight.values.size(), 0.0);
            v_weight_.emplace_back(p->weight.values.size(), 0.0);
            m_bias_.emplace_back(p->bias.size(), 0.0);
            v_bias_.emplace_back(p->bias.size(), 0.0);
        }
    }
    if (m_weight_.size() != params.size()) {
        throw DimensionError("Optimizer::step: parameter group changed between steps");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(t_));
    auto update = [&](double* w, const double* g, Vector& m, Vector& v, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) {
            m[k] = adam_.beta1 * m[k] + (1.0 - adam_.beta1) * g[k];
            v[k] = adam_.beta2 * v[k] + (1.0 - adam_.beta2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            w[k] -= lr_ * mhat / (std::sqrt(vhat) + adam_.epsilon);
        }
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        Layer& p = *params[i];
        const Layer& g = *grads[i];
        if (p.weight.values.size() != g.weight.values.size() || p.bias.size() != g.bias.size()) {
            throw DimensionError("Optimizer::step: shape mismatch");
        }
        update(p.weight.values.data(), g.weight.values.data(), m_weight_[i], v_weight_[i],
               p.weight.values.size());
        update(p.bias.data(), g.bias.data(), m_bias_[i], v_bias_[i], p.bias.size());
    }
}

namespace {

using nlohmann::json;

json layer_to_json(const Layer& l) {
    return json{{"rows", l.weight.rows},
                {"cols", l.weight.cols},
                {"weight", l.weight.values},
                {"bias", l.bias}};
}

Layer layer_from_json(const json& j) {
    Layer l;
    l.weight.rows = j.at("rows").get<std::size_t>();
    l.weight.cols = j.at("cols").get<std::size_t>();
    l.weight.values = j.at("weight").get<std::vector<double>>();
    l.bias = j.at("bias").get<Vector>();
    if (l.weight.values.size() != l.weight.rows * l.weight.cols ||
        l.bias.size() != l.weight.rows) {
        throw ParseError("checkpoint layer has inconsistent shape");
    }
    return l;
}

json mlp_to_json(const MlpClassifier& m) {
    json hidden = json::array();
    for (const Layer& l : m.hidden) hidden.push_back(layer_to_json(l));
    return json{{"kind", "mlp"}, {"hidden", hidden}, {"out", layer_to_json(m.out)}};
}

MlpClassifier mlp_from_json(const json& j) {
    MlpClassifier m;
    for (const json& l : j.at("hidden")) m.hidden.push_back(layer_from_json(l));
    m.out = layer_from_json(j.at("out"));
    return m;
}

}  // namespace

nlohmann::json classifier_to_json(const Classifier& c) {
    if (const auto* lin = std::get_if<LinearClassifier>(&c)) {
        return json{{"kind", "linear"}, {"out", layer_to_json(lin->out)}};
    }
    return mlp_to_json(std::get<MlpClassifier>(c));
}

Classifier classifier_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "linear") {
        return LinearClassifier{layer_from_json(j.at("out"))};
    }
    if (kind == "mlp") {
        return mlp_from_json(j);
    }
    throw ParseError("unknown classifier kind: " + kind);
}

void save_model(const TwoBranchModel& model, const std::filesystem::path& path) {
    json j;
    j["format"] = "debias-model";
    j["version"] = 1;
    j["base"] = classifier_to_json(model.base);
    json branches = json::array();
    for (const Classifier& b : model.bias_branches) branches.push_back(classifier_to_json(b));
    j["bias_branches"] = branches;
    j["shared_encoder"] =
        model.shared_encoder ? mlp_to_json(*model.shared_encoder) : json(nullptr);
    std::ofstream out(path);
    if (!out) {
        throw ParseError("cannot open checkpoint for writing: " + path.string());
    }
    out << j.dump(2) << '\n';
}

TwoBranchModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open checkpoint: " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("malformed checkpoint " + path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "debias-model" || j.value("version", 0) != 1) {
        throw ParseError("unsupported checkpoint format in " + path.string());
    }
    TwoBranchModel m{classifier_from_json(j.at("base")), {}, std::nullopt};
    for (const json& b : j.at("bias_branches")) {
        m.bias_branches.push_back(classifier_from_json(b));
    }
    if (!j.at("shared_encoder").is_null()) {
        m.shared_encoder = mlp_from_json(j.at("shared_encoder"));
    }
    return m;
}

}  // namespace debias
