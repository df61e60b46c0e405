#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dflshield/util/bytes.hpp"
#include "dflshield/util/rng.hpp"

namespace dflshield {

/// Structural mismatch between parameter sets, datasets or architectures.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A non-finite value surfaced while training; carries the offending layer.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, std::size_t layer)
        : std::runtime_error(what), layer_(layer) {}
    std::size_t layer() const { return layer_; }

private:
    std::size_t layer_;
};

/// Hidden-layer nonlinearity (sigma).
enum class Activation : std::uint8_t { relu, tanh, sigmoid };

/// Output head. Softmax pairs with cross-entropy; linear with squared error.
enum class OutputKind : std::uint8_t { softmax, linear };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view s);

struct ModelArchitecture {
    std::vector<std::size_t> layer_sizes;  // d_0 .. d_n
    Activation activation = Activation::relu;
    OutputKind output = OutputKind::softmax;

    void validate() const;
    std::size_t layer_count() const { return layer_sizes.size() - 1; }
    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    /// Number of classes the head distinguishes (a single linear unit is binary).
    std::size_t class_count() const { return output_dim() == 1 ? 2 : output_dim(); }
    std::size_t parameter_count() const;

    bool operator==(const ModelArchitecture&) const = default;
};

/// The collection {w_i, b_i} for every layer, stored contiguously:
/// layer by layer, weights row-major (d_i x d_{i-1}) followed by biases (d_i).
class ModelParams {
public:
    explicit ModelParams(ModelArchitecture arch);

    /// Xavier-uniform weights, zero biases.
    static ModelParams initialize(const ModelArchitecture& arch, Rng& rng);

    const ModelArchitecture& architecture() const { return arch_; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    std::span<double> weights(std::size_t layer);
    std::span<const double> weights(std::size_t layer) const;
    std::span<double> biases(std::size_t layer);
    std::span<const double> biases(std::size_t layer) const;

    bool all_finite() const;
    bool same_shape(const ModelParams& other) const { return arch_ == other.arch_; }

    /// Self-describing binary form used inside ModelExchange payloads.
    /// Layout: "DFMP" | u8 activation | u8 output | u16 n | u32 d_0..d_{n-1} |
    /// parameter_count little-endian f64 values.
    Bytes to_wire() const;
    static ModelParams from_wire(ByteView data);

    /// Snapshot file pair: `<path>` raw little-endian f64 array and
    /// `<path>.json` sidecar holding layer_sizes/activation/output.
    void save_snapshot(const std::filesystem::path& path) const;
    static ModelParams load_snapshot(const std::filesystem::path& path);

    bool operator==(const ModelParams& other) const = default;

private:
    std::size_t layer_offset(std::size_t layer) const;

    ModelArchitecture arch_;
    std::vector<double> values_;
};

}  // namespace dflshield
