#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dflshield/model/dataset.hpp"
#include "dflshield/model/params.hpp"
#include "dflshield/util/rng.hpp"

namespace dflshield {

struct TrainConfig {
    double learning_rate = 0.05;  // alpha
    double l2_lambda = 0.0;       // lambda, applied to weights only
    int local_epochs = 1;
    int rounds = 20;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Network output for one example: class probabilities (softmax head) or
/// raw values (linear head).
std::vector<double> predict_output(const ModelParams& params, std::span<const double> x);

int predict_class(const ModelParams& params, std::span<const double> x);

/// Per-example loss l(y, f(x)): cross-entropy for softmax, 0.5*||f(x)-t||^2
/// for linear where t is one-hot (or the label itself for a single output).
double example_loss(const ModelParams& params, std::span<const double> x, int label);

/// Mean example_loss over a dataset.
double dataset_loss(const ModelParams& params, const Dataset& data);

/// Analytic gradient of example_loss w.r.t. every parameter, laid out like
/// ModelParams::values(). Throws NumericError naming the first layer (from the
/// output backwards) whose gradient is non-finite.
ModelParams example_gradient(const ModelParams& params, std::span<const double> x, int label);

/// `cfg.local_epochs` passes of per-example SGD:
///   theta <- theta - alpha * (grad + lambda * theta)
/// Example order is reshuffled each epoch from `order_rng`.
ModelParams train_local(const ModelParams& params, const Dataset& train, const TrainConfig& cfg,
                        Rng& order_rng);

}  // namespace dflshield
