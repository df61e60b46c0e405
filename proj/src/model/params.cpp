#include "dflshield/model/params.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

namespace dflshield {

namespace {
constexpr char wire_magic[4] = {'D', 'F', 'M', 'P'};
constexpr std::size_t max_layers = 64;
constexpr std::size_t max_width = 1 << 20;
}  // namespace

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
    }
    return "unknown";
}

Activation parse_activation(std::string_view s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

void ModelArchitecture::validate() const {
    if (layer_sizes.size() < 2) {
        throw ShapeError("architecture needs at least 2 layers");
    }
    for (auto d : layer_sizes) {
        if (d == 0) throw ShapeError("layer size must be >= 1");
    }
}

std::size_t ModelArchitecture::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 1; i < layer_sizes.size(); ++i) {
        n += layer_sizes[i] * layer_sizes[i - 1] + layer_sizes[i];
    }
    return n;
}

ModelParams::ModelParams(ModelArchitecture arch) : arch_(std::move(arch)) {
    arch_.validate();
    values_.assign(arch_.parameter_count(), 0.0);
}

ModelParams ModelParams::initialize(const ModelArchitecture& arch, Rng& rng) {
    ModelParams p(arch);
    for (std::size_t l = 0; l < arch.layer_count(); ++l) {
        double fan_in = static_cast<double>(arch.layer_sizes[l]);
        double fan_out = static_cast<double>(arch.layer_sizes[l + 1]);
        double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& w : p.weights(l)) w = rng.uniform(-limit, limit);
    }
    return p;
}

std::size_t ModelParams::layer_offset(std::size_t layer) const {
    if (layer >= arch_.layer_count()) throw ShapeError("layer index out of range");
    std::size_t off = 0;
    for (std::size_t i = 0; i < layer; ++i) {
        off += arch_.layer_sizes[i + 1] * arch_.layer_sizes[i] + arch_.layer_sizes[i + 1];
    }
    return off;
}

std::span<double> ModelParams::weights(std::size_t layer) {
    auto off = layer_offset(layer);
    return std::span<double>(values_).subspan(off, arch_.layer_sizes[layer + 1] * arch_.layer_sizes[layer]);
}

std::span<const double> ModelParams::weights(std::size_t layer) const {
    auto off = layer_offset(layer);
    return std::span<const double>(values_).subspan(off, arch_.layer_sizes[layer + 1] * arch_.layer_sizes[layer]);
}

std::span<double> ModelParams::biases(std::size_t layer) {
    auto off = layer_offset(layer) + arch_.layer_sizes[layer + 1] * arch_.layer_sizes[layer];
    return std::span<double>(values_).subspan(off, arch_.layer_sizes[layer + 1]);
}

std::span<const double> ModelParams::biases(std::size_t layer) const {
    auto off = layer_offset(layer) + arch_.layer_sizes[layer + 1] * arch_.layer_sizes[layer];
    return std::span<const double>(values_).subspan(off, arch_.layer_sizes[layer + 1]);
}

bool ModelParams::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Bytes ModelParams::to_wire() const {
    ByteWriter w(16 + arch_.layer_sizes.size() * 4 + values_.size() * 8);
    w.raw(std::string_view(wire_magic, 4));
    w.u8(static_cast<std::uint8_t>(arch_.activation));
    w.u8(static_cast<std::uint8_t>(arch_.output));
    w.u16(static_cast<std::uint16_t>(arch_.layer_sizes.size()));
    for (auto d : arch_.layer_sizes) w.u32(static_cast<std::uint32_t>(d));
    for (double v : values_) w.f64_le(v);
    return std::move(w).take();
}

ModelParams ModelParams::from_wire(ByteView data) {
    ByteReader r(data);
    auto magic = r.raw(4);
    if (std::memcmp(magic.data(), wire_magic, 4) != 0) {
        throw DecodeError("not a ModelParams blob");
    }
    ModelArchitecture arch;
    auto act = r.u8();
    auto out = r.u8();
    if (act > 2 || out > 1) throw DecodeError("bad architecture tag");
    arch.activation = static_cast<Activation>(act);
    arch.output = static_cast<OutputKind>(out);
    auto n = r.u16();
    if (n < 2 || n > max_layers) throw DecodeError("bad layer count");
    for (std::uint16_t i = 0; i < n; ++i) {
        auto d = r.u32();
        if (d == 0 || d > max_width) throw DecodeError("bad layer width");
        arch.layer_sizes.push_back(d);
    }
    if (r.remaining() != arch.parameter_count() * 8) {
        throw DecodeError("parameter payload size mismatch");
    }
    ModelParams p(std::move(arch));
    for (auto& v : p.values_) v = r.f64_le();
    return p;
}

void ModelParams::save_snapshot(const std::filesystem::path& path) const {
    {
        ByteWriter w(values_.size() * 8);
        for (double v : values_) w.f64_le(v);
        std::ofstream out(path, std::ios::binary);
        const auto& b = w.bytes();
        out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
        if (!out) throw std::runtime_error("cannot write snapshot " + path.string());
    }
    nlohmann::json side;
    side["layer_sizes"] = arch_.layer_sizes;
    side["activation"] = std::string(to_string(arch_.activation));
    side["output"] = arch_.output == OutputKind::softmax ? "softmax" : "linear";
    side["dtype"] = "float64-le";
    std::ofstream js(path.string() + ".json");
    js << side.dump(2) << "\n";
    if (!js) throw std::runtime_error("cannot write snapshot sidecar");
}

ModelParams ModelParams::load_snapshot(const std::filesystem::path& path) {
    std::ifstream js(path.string() + ".json");
    if (!js) throw std::runtime_error("missing snapshot sidecar for " + path.string());
    auto side = nlohmann::json::parse(js);
    ModelArchitecture arch;
    arch.layer_sizes = side.at("layer_sizes").get<std::vector<std::size_t>>();
    arch.activation = parse_activation(side.value("activation", "relu"));
    arch.output = side.value("output", "softmax") == "linear" ? OutputKind::linear : OutputKind::softmax;
    ModelParams p(std::move(arch));

    std::ifstream in(path, std::ios::binary);
    Bytes raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (raw.size() != p.values_.size() * 8) {
        throw ShapeError("snapshot size does not match sidecar layer_sizes");
    }
    ByteReader r(raw);
    for (auto& v : p.values_) v = r.f64_le();
    return p;
}

}  // namespace dflshield
