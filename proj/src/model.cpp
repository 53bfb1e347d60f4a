#include "dac/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dac/errors.hpp"

namespace dac {

std::size_t Architecture::parameter_count() const {
    if (hidden_dim == 0) return input_dim * n_classes + n_classes;
    return input_dim * hidden_dim + hidden_dim + hidden_dim * n_classes + n_classes;
}

OptimizerState OptimizerState::for_params(const ModelParams& params, double learning_rate) {
    OptimizerState s;
    s.first_moment.assign(params.values.size(), 0.0);
    s.second_moment.assign(params.values.size(), 0.0);
    s.learning_rate = learning_rate;
    return s;
}

namespace {

void check_shape(const ModelParams& params) {
    if (params.values.size() != params.arch.parameter_count())
        throw ContractViolation("ModelParams: value count does not match architecture");
}

// Views into the flat parameter (or gradient) vector.
template <typename T>
struct Layers {
    T* w1 = nullptr;
    T* b1 = nullptr;
    T* w2 = nullptr;
    T* b2 = nullptr;

    Layers(const Architecture& a, T* base) {
        if (a.hidden_dim == 0) {
            w2 = base;
            b2 = base + a.input_dim * a.n_classes;
        } else {
            w1 = base;
            b1 = w1 + a.hidden_dim * a.input_dim;
            w2 = b1 + a.hidden_dim;
            b2 = w2 + a.n_classes * a.hidden_dim;
        }
    }
};

// Per-sample scratch buffers, reused across a batch.
struct Workspace {
    std::vector<double> hidden;
    std::vector<double> logits;
    std::vector<double> delta_hidden;

    explicit Workspace(const Architecture& a) : hidden(a.hidden_dim), logits(a.n_classes), delta_hidden(a.hidden_dim) {}
};

// Fills ws.logits (and ws.hidden); returns log-sum-exp of the logits.
double compute_logits(const ModelParams& p, std::span<const double> x, Workspace& ws) {
    const Architecture& a = p.arch;
    Layers<const double> L(a, p.values.data());
    const double* input = x.data();
    std::size_t in_dim = a.input_dim;
    if (a.hidden_dim > 0) {
        for (std::size_t h = 0; h < a.hidden_dim; ++h) {
            const double* row = L.w1 + h * a.input_dim;
            double z = L.b1[h];
            for (std::size_t j = 0; j < a.input_dim; ++j) z += row[j] * x[j];
            ws.hidden[h] = z > 0.0 ? z : 0.0;
        }
        input = ws.hidden.data();
        in_dim = a.hidden_dim;
    }
    for (std::size_t c = 0; c < a.n_classes; ++c) {
        const double* row = L.w2 + c * in_dim;
        double z = L.b2[c];
        for (std::size_t j = 0; j < in_dim; ++j) z += row[j] * input[j];
        ws.logits[c] = z;
    }
    const double mx = *std::max_element(ws.logits.begin(), ws.logits.end());
    double sum = 0.0;
    for (double z : ws.logits) sum += std::exp(z - mx);
    return mx + std::log(sum);
}

void check_input(const ModelParams& p, std::span<const double> x) {
    if (x.size() != p.arch.input_dim)
        throw ContractViolation("forward: feature dimension " + std::to_string(x.size()) +
                                " does not match input_dim " + std::to_string(p.arch.input_dim));
}

// Adds the per-sample cross-entropy gradient into grad; returns the loss.
double accumulate_sample(const ModelParams& p, std::span<const double> x, int label, Workspace& ws,
                         std::vector<double>& grad) {
    const Architecture& a = p.arch;
    const double lse = compute_logits(p, x, ws);
    const double loss = lse - ws.logits[static_cast<std::size_t>(label)];

    Layers<const double> L(a, p.values.data());
    Layers<double> G(a, grad.data());
    const bool has_hidden = a.hidden_dim > 0;
    const double* input = has_hidden ? ws.hidden.data() : x.data();
    const std::size_t in_dim = has_hidden ? a.hidden_dim : a.input_dim;

    if (has_hidden) std::fill(ws.delta_hidden.begin(), ws.delta_hidden.end(), 0.0);
    for (std::size_t c = 0; c < a.n_classes; ++c) {
        const double d = std::exp(ws.logits[c] - lse) - (static_cast<int>(c) == label ? 1.0 : 0.0);
        double* grow = G.w2 + c * in_dim;
        for (std::size_t j = 0; j < in_dim; ++j) grow[j] += d * input[j];
        G.b2[c] += d;
        if (has_hidden) {
            const double* wrow = L.w2 + c * in_dim;
            for (std::size_t j = 0; j < in_dim; ++j) ws.delta_hidden[j] += d * wrow[j];
        }
    }
    if (has_hidden) {
        for (std::size_t h = 0; h < a.hidden_dim; ++h) {
            if (ws.hidden[h] <= 0.0) continue;
            const double d = ws.delta_hidden[h];
            double* grow = G.w1 + h * a.input_dim;
            for (std::size_t j = 0; j < a.input_dim; ++j) grow[j] += d * x[j];
            G.b1[h] += d;
        }
    }
    return loss;
}

void check_label(const ModelParams& p, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= p.arch.n_classes)
        throw ContractViolation("label " + std::to_string(label) + " outside model's class range");
}

}  // namespace

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
    if (arch.input_dim == 0 || arch.n_classes < 2)
        throw ConfigError("init_params: need input_dim >= 1 and n_classes >= 2");
    ModelParams p{arch, std::vector<double>(arch.parameter_count(), 0.0)};
    Rng rng = Rng::stream(seed, {static_cast<std::uint64_t>(StreamTag::init)});
    Layers<double> L(arch, p.values.data());
    auto fill = [&](double* w, std::size_t count, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < count; ++i) w[i] = rng.uniform(-bound, bound);
    };
    if (arch.hidden_dim > 0) {
        fill(L.w1, arch.hidden_dim * arch.input_dim, arch.input_dim);
        fill(L.w2, arch.n_classes * arch.hidden_dim, arch.hidden_dim);
    } else {
        fill(L.w2, arch.n_classes * arch.input_dim, arch.input_dim);
    }
    return p;
}

std::vector<double> forward(const ModelParams& params, std::span<const double> features) {
    check_shape(params);
    check_input(params, features);
    Workspace ws(params.arch);
    const double lse = compute_logits(params, features, ws);
    std::vector<double> probs(params.arch.n_classes);
    for (std::size_t c = 0; c < probs.size(); ++c) probs[c] = std::exp(ws.logits[c] - lse);
    return probs;
}

LossAndGrad loss_and_grad(const ModelParams& params, const Dataset& data,
                          std::span<const std::size_t> indices) {
    check_shape(params);
    if (indices.empty()) throw ContractViolation("loss_and_grad: empty batch");
    if (data.dim() != params.arch.input_dim) throw ContractViolation("loss_and_grad: feature dimension mismatch");
    LossAndGrad out{0.0, std::vector<double>(params.values.size(), 0.0)};
    Workspace ws(params.arch);
    for (std::size_t i : indices) {
        check_label(params, data.label(i));
        out.loss += accumulate_sample(params, data.features(i), data.label(i), ws, out.grad);
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    out.loss *= inv;
    for (double& g : out.grad) g *= inv;
    return out;
}

LossAndGrad loss_and_grad(const ModelParams& params, const Dataset& batch) {
    std::vector<std::size_t> all(batch.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return loss_and_grad(params, batch, all);
}

double dataset_loss(const ModelParams& params, const Dataset& data) {
    return evaluate(params, data).loss;
}

void adam_step(ModelParams& params, std::span<const double> grad, OptimizerState& state) {
    const std::size_t n = params.values.size();
    if (grad.size() != n || state.first_moment.size() != n || state.second_moment.size() != n)
        throw ContractViolation("adam_step: length mismatch between params, gradient and moments");
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(grad[i]))
            throw TrainingError("adam_step: non-finite gradient at coordinate " + std::to_string(i) +
                                " (step " + std::to_string(state.step_count) + ")");

    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = state.beta1 * m + (1.0 - state.beta1) * grad[i];
        v = state.beta2 * v + (1.0 - state.beta2) * grad[i] * grad[i];
        const double m_hat = m / correction1;
        const double v_hat = v / correction2;
        params.values[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
}

void train_local(ModelParams& params, const Dataset& train, int epochs, std::size_t batch_size,
                 OptimizerState& state, Rng& rng) {
    if (train.empty()) throw ConfigError("train_local: empty training set");
    if (epochs < 1) throw ConfigError("train_local: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train_local: batch_size must be >= 1");

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(std::span(order));
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t len = std::min(batch_size, order.size() - start);
            auto batch = std::span<const std::size_t>(order).subspan(start, len);
            const auto lg = loss_and_grad(params, train, batch);
            adam_step(params, lg.grad, state);
        }
    }
}

Evaluation evaluate(const ModelParams& params, const Dataset& data) {
    check_shape(params);
    if (data.empty()) throw ContractViolation("evaluate: empty dataset");
    if (data.dim() != params.arch.input_dim) throw ContractViolation("evaluate: feature dimension mismatch");
    Workspace ws(params.arch);
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int y = data.label(i);
        check_label(params, y);
        const double lse = compute_logits(params, data.features(i), ws);
        loss += lse - ws.logits[static_cast<std::size_t>(y)];
        // max_element returns the first maximum, i.e. the lowest index on ties.
        const auto best = std::max_element(ws.logits.begin(), ws.logits.end()) - ws.logits.begin();
        if (best == y) ++correct;
    }
    const double n = static_cast<double>(data.size());
    return {static_cast<double>(correct) / n, loss / n};
}

}  // namespace dac
