#include "dflshield/model/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dflshield {

namespace {

double activate(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::tanh: return std::tanh(z);
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    }
    return z;
}

// Derivative expressed through the pre-activation z and the activation value.
double activate_grad(Activation a, double z, double act) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: return 1.0 - act * act;
        case Activation::sigmoid: return act * (1.0 - act);
    }
    return 1.0;
}

void softmax_inplace(std::vector<double>& z) {
    double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - m);
        sum += v;
    }
    for (auto& v : z) v /= sum;
}

struct ForwardTrace {
    std::vector<std::vector<double>> pre;   // z_l per layer
    std::vector<std::vector<double>> post;  // a_l per layer, post[0] = x
};

ForwardTrace forward(const ModelParams& params, std::span<const double> x) {
    const auto& arch = params.architecture();
    if (x.size() != arch.input_dim()) throw ShapeError("input dimension mismatch");
    ForwardTrace t;
    t.post.emplace_back(x.begin(), x.end());
    const std::size_t layers = arch.layer_count();
    for (std::size_t l = 0; l < layers; ++l) {
        const auto rows = arch.layer_sizes[l + 1];
        const auto cols = arch.layer_sizes[l];
        auto w = params.weights(l);
        auto b = params.biases(l);
        const auto& in = t.post.back();
        std::vector<double> z(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            double acc = b[i];
            const double* wr = w.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) acc += wr[j] * in[j];
            z[i] = acc;
        }
        std::vector<double> a(rows);
        if (l + 1 < layers) {
            for (std::size_t i = 0; i < rows; ++i) a[i] = activate(arch.activation, z[i]);
        } else {
            a = z;
            if (arch.output == OutputKind::softmax) softmax_inplace(a);
        }
        t.pre.push_back(std::move(z));
        t.post.push_back(std::move(a));
    }
    return t;
}

void check_label(const ModelArchitecture& arch, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= arch.class_count()) {
        throw ShapeError("label outside model class range");
    }
}

std::vector<double> linear_target(const ModelArchitecture& arch, int label) {
    std::vector<double> t(arch.output_dim(), 0.0);
    if (arch.output_dim() == 1) {
        t[0] = static_cast<double>(label);
    } else {
        t[static_cast<std::size_t>(label)] = 1.0;
    }
    return t;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be non-negative");
    if (!(l2_lambda >= 0.0)) throw std::invalid_argument("l2_lambda must be non-negative");
    if (local_epochs < 1) throw std::invalid_argument("local_epochs must be >= 1");
    if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
}

std::vector<double> predict_output(const ModelParams& params, std::span<const double> x) {
    return forward(params, x).post.back();
}

int predict_class(const ModelParams& params, std::span<const double> x) {
    auto out = predict_output(params, x);
    if (out.size() == 1) return out[0] >= 0.5 ? 1 : 0;
    return static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
}

double example_loss(const ModelParams& params, std::span<const double> x, int label) {
    const auto& arch = params.architecture();
    check_label(arch, label);
    auto out = predict_output(params, x);
    if (arch.output == OutputKind::softmax) {
        double p = std::max(out[static_cast<std::size_t>(label)], 1e-300);
        return -std::log(p);
    }
    auto t = linear_target(arch, label);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += 0.5 * (out[i] - t[i]) * (out[i] - t[i]);
    return s;
}

double dataset_loss(const ModelParams& params, const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("loss over empty dataset");
    double s = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) s += example_loss(params, data.row(i), data.label(i));
    return s / static_cast<double>(data.size());
}

ModelParams example_gradient(const ModelParams& params, std::span<const double> x, int label) {
    const auto& arch = params.architecture();
    check_label(arch, label);
    auto trace = forward(params, x);
    const std::size_t layers = arch.layer_count();

    // delta at the output: p - onehot for softmax+CE, out - t for squared error.
    std::vector<double> delta = trace.post.back();
    if (arch.output == OutputKind::softmax) {
        delta[static_cast<std::size_t>(label)] -= 1.0;
    } else {
        auto t = linear_target(arch, label);
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= t[i];
    }

    ModelParams grad(arch);
    for (std::size_t l = layers; l-- > 0;) {
        const auto rows = arch.layer_sizes[l + 1];
        const auto cols = arch.layer_sizes[l];
        const auto& in = trace.post[l];
        auto gw = grad.weights(l);
        auto gb = grad.biases(l);
        for (std::size_t i = 0; i < rows; ++i) {
            gb[i] = delta[i];
            double* gr = gw.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) gr[j] = delta[i] * in[j];
        }
        for (std::size_t i = 0; i < rows; ++i) {
            if (!std::isfinite(gb[i])) {
                throw NumericError("non-finite gradient in layer " + std::to_string(l), l);
            }
        }
        for (double g : gw) {
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in layer " + std::to_string(l), l);
            }
        }
        if (l == 0) break;
        auto w = params.weights(l);
        std::vector<double> next(cols, 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* wr = w.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) next[j] += wr[j] * delta[i];
        }
        const auto& z = trace.pre[l - 1];
        const auto& a = trace.post[l];
        for (std::size_t j = 0; j < cols; ++j) next[j] *= activate_grad(arch.activation, z[j], a[j]);
        delta = std::move(next);
    }
    return grad;
}

ModelParams train_local(const ModelParams& params, const Dataset& train, const TrainConfig& cfg,
                        Rng& order_rng) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("train_local on empty dataset");
    if (train.dim() != params.architecture().input_dim()) {
        throw ShapeError("dataset dimension does not match model input");
    }
    ModelParams theta = params;
    const auto& arch = theta.architecture();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const double alpha = cfg.learning_rate;
    const double lambda = cfg.l2_lambda;

    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        order_rng.shuffle(order.begin(), order.end());
        for (auto idx : order) {
            auto g = example_gradient(theta, train.row(idx), train.label(idx));
            for (std::size_t l = 0; l < arch.layer_count(); ++l) {
                auto w = theta.weights(l);
                auto gw = g.weights(l);
                for (std::size_t k = 0; k < w.size(); ++k) w[k] -= alpha * (gw[k] + lambda * w[k]);
                auto b = theta.biases(l);
                auto gb = g.biases(l);
                for (std::size_t k = 0; k < b.size(); ++k) b[k] -= alpha * gb[k];
            }
        }
    }
    return theta;
}

}  // namespace dflshield
