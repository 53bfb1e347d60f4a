#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dac/datagen.hpp"
#include "dac/rng.hpp"

namespace dac {

// hidden_dim == 0 selects plain softmax regression.
struct Architecture {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t n_classes = 0;

    std::size_t parameter_count() const;
    bool operator==(const Architecture&) const = default;
};

// Flat parameter vector. Layout, in order: first-layer weights
// (hidden x input, row-major), first-layer biases, output weights
// (classes x hidden), output biases. Without a hidden layer only the output
// block exists, with input_dim columns.
struct ModelParams {
    Architecture arch;
    std::vector<double> values;

    bool operator==(const ModelParams&) const = default;
};

struct OptimizerState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::uint64_t step_count = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static OptimizerState for_params(const ModelParams& params, double learning_rate);
    bool operator==(const OptimizerState&) const = default;
};

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

struct Evaluation {
    double accuracy = 0.0;
    double loss = 0.0;
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

// Class probabilities (softmax over the logits; ReLU hidden layer).
std::vector<double> forward(const ModelParams& params, std::span<const double> features);

// Mean cross-entropy over the batch and its exact gradient.
LossAndGrad loss_and_grad(const ModelParams& params, const Dataset& batch);
LossAndGrad loss_and_grad(const ModelParams& params, const Dataset& data,
                          std::span<const std::size_t> indices);

double dataset_loss(const ModelParams& params, const Dataset& data);

// In-place Adam update with bias correction. Throws TrainingError if the
// gradient has a non-finite entry.
void adam_step(ModelParams& params, std::span<const double> grad, OptimizerState& state);

// `epochs` shuffled passes over `train` in mini-batches of `batch_size`; the
// last batch of an epoch may be short.
void train_local(ModelParams& params, const Dataset& train, int epochs, std::size_t batch_size,
                 OptimizerState& state, Rng& rng);

// Argmax ties resolve to the lowest class index.
Evaluation evaluate(const ModelParams& params, const Dataset& data);

}  // namespace dac
