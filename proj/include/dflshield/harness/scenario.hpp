#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dflshield/adversary/adversary.hpp"

namespace dflshield {

/// Bad scenario document. `field` is the dotted key, `line` 0 when unknown.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, std::size_t line, const std::string& what)
        : std::runtime_error(format(field, line, what)), field_(std::move(field)), line_(line) {}

    const std::string& field() const { return field_; }
    std::size_t line() const { return line_; }

private:
    static std::string format(const std::string& field, std::size_t line, const std::string& what) {
        std::string out = field.empty() ? std::string("config") : field;
        if (line != 0) out += " (line " + std::to_string(line) + ")";
        return out + ": " + what;
    }

    std::string field_;
    std::size_t line_;
};

struct AttackConfig {
    AttackPlan plan;
    /// Sampled rounds for the neighbour-sampling Monte Carlo under MTD.
    std::size_t monte_carlo_trials = 10'000;

    bool operator==(const AttackConfig&) const = default;
};

struct ScenarioConfig {
    // [scenario]
    std::string name = "scenario";
    std::uint64_t seed = 1;
    std::size_t nodes = 8;
    int rounds = 20;  // 0 deploys and stops
    SecuritySetting security = SecuritySetting::baseline;
    TopologyKind topology = TopologyKind::random;
    double edge_probability = 0.5;
    std::map<NodeId, Role> roles;
    std::map<NodeId, PeerAddress> listen;
    int rsa_bits = 2048;
    double receive_timeout_ms = 0.0;  // 0: derived from latency and fan-out
    std::int64_t token_ttl_ms = 0;    // 0: derived
    int session_renewal_rounds = 1;
    int rotation_rounds = 1;
    int key_renewal_rounds = 0;
    std::size_t sample_size = 0;  // 0: ceil(m/2)
    double compute_ns_per_mac = 1.0;
    std::string output_dir = "out";

    // [fabric]
    FabricConfig fabric;
    std::uint16_t tcp_port_base = 41000;

    // [train]
    TrainConfig train;
    std::vector<std::size_t> hidden{16};
    Activation activation = Activation::relu;
    /// CSV with a label,f0,f1,... header; relative paths resolve against
    /// `base_dir`. Empty: generate blobs from the fields below.
    std::string dataset;
    double test_fraction = 0.2;
    std::size_t blob_classes = 4;
    std::size_t blob_dim = 8;
    std::size_t blob_samples = 4000;

    // [attack]
    std::optional<AttackConfig> attack;

    std::filesystem::path base_dir;

    /// Throws ConfigError.
    void validate() const;
    std::filesystem::path dataset_path() const;

    bool operator==(const ScenarioConfig&) const = default;
};

/// Throws ConfigError with the offending field and line.
ScenarioConfig parse_scenario(std::string_view toml_text, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario(const std::filesystem::path& path);
std::string serialize_scenario(const ScenarioConfig& cfg);

}  // namespace dflshield
