#include "debias/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <thread>

#include "debias/errors.hpp"

namespace debias {

namespace {

// fixed substreams so model init and shuffling never share draws
constexpr std::uint64_t kModelInitStream = 0x6d6f64656cULL;
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

BiasExtractor default_branch_input(std::size_t branch) {
    BiasExtractor e;
    e.kind = BiasExtractor::Kind::HypothesisOnly;
    e.channel = branch;
    return e;
}

BiasExtractor branch_input_for(const std::vector<BiasExtractor>& branch_inputs,
                               std::size_t branch) {
    return branch_inputs.empty() ? default_branch_input(branch) : branch_inputs.at(branch);
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("train.epochs must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("train.learning_rate must be finite and positive");
    }
    if (eval_every == 0) throw ConfigError("train.eval_every must be positive");
}

Vector full_input(const Example& example) {
    Vector v = example.x;
    for (const Vector& b : example.x_bias) v.insert(v.end(), b.begin(), b.end());
    return v;
}

Vector bias_slot_view(const Example& example, std::size_t channel) {
    if (channel >= example.x_bias.size()) {
        throw DimensionError("bias_slot_view: channel out of range");
    }
    std::size_t offset = example.x.size();
    for (std::size_t j = 0; j < channel; ++j) offset += example.x_bias[j].size();
    Vector v(full_input(example).size(), 0.0);
    const Vector& slot = example.x_bias[channel];
    std::copy(slot.begin(), slot.end(), v.begin() + static_cast<std::ptrdiff_t>(offset));
    return v;
}

Vector base_logits(const TwoBranchModel& model, const Example& example) {
    const Vector x = full_input(example);
    if (model.shared_encoder) {
        return forward(model.base, forward(*model.shared_encoder, x));
    }
    return forward(model.base, x);
}

namespace {

// the branch's own input vector; with a shared encoder this is the frozen
// encoding of the bias slot view
Vector branch_input_vector(const TwoBranchModel& model, std::size_t branch, const Example& example,
                           const std::vector<BiasExtractor>& branch_inputs) {
    const BiasExtractor extractor = branch_input_for(branch_inputs, branch);
    if (model.shared_encoder) {
        if (extractor.kind != BiasExtractor::Kind::HypothesisOnly) {
            throw ConfigError("shared encoder branches support hypothesis_only inputs only");
        }
        return forward(*model.shared_encoder, bias_slot_view(example, extractor.channel));
    }
    return extract_bias_features(example, extractor);
}

}  // namespace

Vector branch_logits(const TwoBranchModel& model, std::size_t branch, const Example& example,
                     const std::vector<BiasExtractor>& branch_inputs) {
    if (branch >= model.num_branches()) {
        throw DimensionError("branch_logits: branch index out of range");
    }
    return forward(model.bias_branches[branch],
                   branch_input_vector(model, branch, example, branch_inputs));
}

void ModelGradients::scale(double s) {
    base.scale(s);
    if (encoder) encoder->scale(s);
    for (ClassifierGrads& g : bias_branches) g.scale(s);
}

ModelGradients zero_gradients(const TwoBranchModel& model) {
    ModelGradients g;
    g.base = zero_grads(model.base);
    if (model.shared_encoder) g.encoder = zero_grads(*model.shared_encoder);
    for (const Classifier& b : model.bias_branches) g.bias_branches.push_back(zero_grads(b));
    return g;
}

double accumulate_combined(const TwoBranchModel& model, const Example& example,
                           const LossSpec& spec, const std::vector<BiasExtractor>& branch_inputs,
                           ModelGradients& grads, double scale) {
    const Vector x = full_input(example);
    Vector base_in = x;
    if (model.shared_encoder) base_in = forward(*model.shared_encoder, x);
    const Vector logits = forward(model.base, base_in);

    std::vector<Vector> bias_logit_list;
    bias_logit_list.reserve(model.num_branches());
    for (std::size_t j = 0; j < model.num_branches(); ++j) {
        bias_logit_list.push_back(branch_logits(model, j, example, branch_inputs));
    }

    LossOutput out = combined_loss(spec, logits, bias_logit_list, example.y);
    Vector d_logits = out.d_base_logits;
    for (double& g : d_logits) g *= scale;

    if (model.shared_encoder) {
        Vector d_encoding;
        grads.base.accumulate(backward(model.base, base_in, d_logits, &d_encoding));
        grads.encoder->accumulate(backward(*model.shared_encoder, x, d_encoding));
    } else {
        grads.base.accumulate(backward(model.base, base_in, d_logits));
    }
    return out.value;
}

double accumulate_bias_ce(const TwoBranchModel& model, const Example& example,
                          const Vector* class_weights,
                          const std::vector<BiasExtractor>& branch_inputs, ModelGradients& grads,
                          double scale) {
    if (model.num_branches() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t j = 0; j < model.num_branches(); ++j) {
        const Vector input = branch_input_vector(model, j, example, branch_inputs);
        const Vector logits = forward(model.bias_branches[j], input);
        LossOutput out = ce_loss(logits, example.y, class_weights);
        total += out.value;
        Vector d_logits = out.d_base_logits;
        for (double& g : d_logits) g *= scale;
        grads.bias_branches[j].accumulate(backward(model.bias_branches[j], input, d_logits));
    }
    return total / static_cast<double>(model.num_branches());
}

namespace {

void validate_model_against_data(const TwoBranchModel& model, const Dataset& data,
                                 const TrainConfig& cfg) {
    if (data.examples.empty()) {
        throw DimensionError("train: empty training dataset");
    }
    cfg.validate();
    cfg.loss.validate(data.num_labels);
    if (output_dim(model.base) != data.num_labels) {
        throw DimensionError("train: base output dim != num_labels");
    }
    if (!cfg.branch_inputs.empty() && cfg.branch_inputs.size() != model.num_branches()) {
        throw ConfigError("train.branch_inputs must have one entry per bias branch");
    }
    const std::size_t k = model.num_branches();
    switch (cfg.loss.kind) {
        case LossKind::CE:
            break;
        case LossKind::PoE:
        case LossKind::DFL:
        case LossKind::RUBi:
            if (k != 1) {
                throw ConfigError(to_string(cfg.loss.kind) +
                                  " needs exactly 1 bias branch, model has " + std::to_string(k));
            }
            break;
        case LossKind::JointPoE:
        case LossKind::JointDFL:
            if (k == 0) {
                throw ConfigError(to_string(cfg.loss.kind) + " needs at least 1 bias branch");
            }
            break;
    }
    // probe one example so dimension errors surface before the loop
    const Example& probe = data.examples.front();
    (void)base_logits(model, probe);
    for (std::size_t j = 0; j < k; ++j) (void)branch_logits(model, j, probe, cfg.branch_inputs);
}

struct GroupOptimizers {
    Optimizer base;
    std::vector<Optimizer> branches;
};

}  // namespace

TrainTrace train(TwoBranchModel& model, const Dataset& train_data, const TrainConfig& cfg,
                 const Dataset* dev, const Dataset* ood) {
    validate_model_against_data(model, train_data, cfg);

    // one optimizer per parameter group: base(+encoder), each branch
    Optimizer base_opt(cfg.optimizer, cfg.learning_rate, cfg.adam);
    std::vector<Optimizer> branch_opts;
    for (std::size_t j = 0; j < model.num_branches(); ++j) {
        branch_opts.emplace_back(cfg.optimizer, cfg.learning_rate, cfg.adam);
    }

    std::vector<Layer*> base_params = layers_of(model.base);
    if (model.shared_encoder) {
        for (Layer* l : layers_of(*model.shared_encoder)) base_params.push_back(l);
    }

    SeededRng shuffle_rng(derive_seed(cfg.seed, kShuffleStream));
    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), 0);

    const Vector* weights =
        cfg.loss.bias_class_weights.empty() ? nullptr : &cfg.loss.bias_class_weights;

    TrainTrace trace;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (cfg.shuffle) shuffle_rng.shuffle(order);
        double combined_sum = 0.0;
        double bias_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            ModelGradients grads = zero_gradients(model);
            double batch_combined = 0.0;
            double batch_bias = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const Example& ex = train_data.examples[order[i]];
                batch_combined +=
                    accumulate_combined(model, ex, cfg.loss, cfg.branch_inputs, grads, inv_batch);
                batch_bias += accumulate_bias_ce(model, ex, weights, cfg.branch_inputs, grads,
                                                 cfg.loss.beta * inv_batch);
            }
            if (!std::isfinite(batch_combined) || !std::isfinite(batch_bias)) {
                throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index));
            }
            combined_sum += batch_combined;
            bias_sum += batch_bias;

            std::vector<const Layer*> base_grads;
            for (const Layer& l : grads.base.layers) base_grads.push_back(&l);
            if (grads.encoder) {
                for (const Layer& l : grads.encoder->layers) base_grads.push_back(&l);
            }
            base_opt.step(base_params, base_grads);
            for (std::size_t j = 0; j < model.num_branches(); ++j) {
                std::vector<const Layer*> branch_grads;
                for (const Layer& l : grads.bias_branches[j].layers) branch_grads.push_back(&l);
                branch_opts[j].step(layers_of(model.bias_branches[j]), branch_grads);
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.combined_loss = combined_sum / static_cast<double>(train_data.size());
        rec.bias_loss = bias_sum / static_cast<double>(train_data.size());
        const bool eval_now = (epoch % cfg.eval_every == 0) || epoch == cfg.epochs;
        if (eval_now && dev) rec.dev_accuracy = accuracy(model, *dev).accuracy;
        if (eval_now && ood) rec.ood_accuracy = accuracy(model, *ood).accuracy;
        trace.epochs.push_back(rec);
    }
    return trace;
}

std::size_t predict(const TwoBranchModel& model, const Vector& full_input_vector) {
    if (model.shared_encoder) {
        return argmax(forward(model.base, forward(*model.shared_encoder, full_input_vector)));
    }
    return argmax(forward(model.base, full_input_vector));
}

std::size_t predict(const TwoBranchModel& model, const Example& example) {
    return predict(model, full_input(example));
}

TwoBranchModel build_model(const Dataset& data, const ModelConfig& shapes,
                           const std::vector<BiasExtractor>& branch_inputs, SeededRng& rng) {
    if (data.examples.empty()) {
        throw DimensionError("build_model: empty dataset");
    }
    const std::size_t full_dim = full_input(data.examples.front()).size();
    const std::size_t labels = data.num_labels;
    const std::size_t num_branches =
        branch_inputs.empty() ? data.bias_dims().size() : branch_inputs.size();

    TwoBranchModel model;
    const bool with_encoder = shapes.encoder_out > 0;
    if (with_encoder) {
        model.shared_encoder = make_mlp(full_dim, shapes.encoder_hidden, shapes.encoder_out, rng);
        model.base = make_classifier(shapes.encoder_out, shapes.base_hidden, labels, rng);
    } else {
        model.base = make_classifier(full_dim, shapes.base_hidden, labels, rng);
    }
    for (std::size_t j = 0; j < num_branches; ++j) {
        std::size_t in_dim;
        if (with_encoder) {
            in_dim = shapes.encoder_out;
        } else {
            const BiasExtractor extractor = branch_input_for(branch_inputs, j);
            in_dim = extract_bias_features(data.examples.front(), extractor).size();
        }
        model.bias_branches.push_back(
            make_classifier(in_dim, shapes.branch_hidden, labels, rng));
    }
    return model;
}

TrainedRun run_training(const Dataset& train_data, const Dataset* dev, const Dataset* ood,
                        const ModelConfig& shapes, const TrainConfig& cfg) {
    SeededRng init_rng(derive_seed(cfg.seed, kModelInitStream));
    TrainedRun run{build_model(train_data, shapes, cfg.branch_inputs, init_rng), {}};
    run.trace = train(run.model, train_data, cfg, dev, ood);
    return run;
}

void save_trace_csv(const TrainTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ParseError("cannot open trace for writing: " + path.string());
    }
    out << "epoch,combined_loss,bias_loss,dev_acc,ood_acc\n";
    for (const EpochRecord& r : trace.epochs) {
        out << r.epoch << ',' << fmt_double(r.combined_loss) << ',' << fmt_double(r.bias_loss)
            << ',' << (r.dev_accuracy ? fmt_double(*r.dev_accuracy) : "") << ','
            << (r.ood_accuracy ? fmt_double(*r.ood_accuracy) : "") << '\n';
    }
}

SweepResult sweep(const SweepGrid& grid, const TrainConfig& base_cfg, const ModelConfig& shapes,
                  const Dataset& train_data, const Dataset& dev, const Dataset& ood) {
    const std::vector<double> gammas = grid.gamma.empty()
                                           ? std::vector<double>{base_cfg.loss.gamma}
                                           : grid.gamma;
    const std::vector<double> alphas = grid.alpha.empty()
                                           ? std::vector<double>{base_cfg.loss.alpha}
                                           : grid.alpha;
    const std::vector<double> betas =
        grid.beta.empty() ? std::vector<double>{base_cfg.loss.beta} : grid.beta;
    if (gammas.empty() || alphas.empty() || betas.empty()) {
        throw ConfigError("sweep: empty grid");
    }

    struct Point {
        double gamma, alpha, beta;
    };
    std::vector<Point> points;
    for (double g : gammas) {
        for (double a : alphas) {
            for (double b : betas) points.push_back({g, a, b});
        }
    }

    SweepResult result;
    result.rows.resize(points.size());
    auto run_point = [&](std::size_t i) {
        TrainConfig cfg = base_cfg;
        cfg.loss.gamma = points[i].gamma;
        cfg.loss.alpha = points[i].alpha;
        cfg.loss.beta = points[i].beta;
        cfg.seed = base_cfg.seed + i;
        TrainedRun run = run_training(train_data, nullptr, nullptr, shapes, cfg);
        SweepRow row;
        row.gamma = cfg.loss.gamma;
        row.alpha = cfg.loss.alpha;
        row.beta = cfg.loss.beta;
        row.seed = cfg.seed;
        const std::string name = to_string(cfg.loss.kind);
        row.dev_report = accuracy(run.model, dev, nullptr, name);
        row.ood_report = accuracy(run.model, ood, nullptr, name);
        result.rows[i] = std::move(row);
    };

    std::size_t workers = 1;
    if (const char* env = std::getenv("DEBIAS_WORKERS")) {
        const long parsed = std::strtol(env, nullptr, 10);
        if (parsed > 1) workers = static_cast<std::size_t>(parsed);
    }
    workers = std::min(workers, points.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < points.size(); ++i) run_point(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < points.size(); i += workers) run_point(i);
            });
        }
        for (std::thread& t : pool) t.join();
    }

    result.best = 0;
    for (std::size_t i = 1; i < result.rows.size(); ++i) {
        if (result.rows[i].dev_report.accuracy > result.rows[result.best].dev_report.accuracy) {
            result.best = i;
        }
    }
    return result;
}

void save_sweep_csv(const SweepResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ParseError("cannot open sweep csv for writing: " + path.string());
    }
    out << "gamma,alpha,beta,seed,dev_acc,ood_acc\n";
    for (const SweepRow& row : result.rows) {
        out << fmt_double(row.gamma) << ',' << fmt_double(row.alpha) << ','
            << fmt_double(row.beta) << ',' << row.seed << ','
            << fmt_double(row.dev_report.accuracy) << ',' << fmt_double(row.ood_report.accuracy)
            << '\n';
    }
}

}  // namespace debias
