#include "dflshield/harness/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

#define TOML_HEADER_ONLY 1
#include "toml.hpp"

namespace dflshield {

namespace {

class Reader {
public:
    explicit Reader(const toml::table& root) : root_(root) {}

    const toml::table* section(std::string_view name, const std::set<std::string>& allowed) {
        const auto* node = root_.get(name);
        if (!node) return nullptr;
        const auto* t = node->as_table();
        if (!t) throw ConfigError(std::string(name), line_of(*node), "expected a table");
        for (const auto& [key, value] : *t) {
            const std::string k(key.str());
            if (!allowed.count(k)) throw ConfigError(std::string(name) + "." + k, line_of(value), "unknown key");
            lines_[std::string(name) + "." + k] = line_of(value);
        }
        return t;
    }

    template <typename T>
    void read(const toml::table* t, std::string_view section, std::string_view key, T& out) {
        if (!t) return;
        const auto* node = t->get(key);
        if (!node) return;
        const std::string field = std::string(section) + "." + std::string(key);
        if constexpr (std::is_same_v<T, bool>) {
            auto v = node->value<bool>();
            if (!v) throw ConfigError(field, line_of(*node), "expected a boolean");
            out = *v;
        } else if constexpr (std::is_same_v<T, std::string>) {
            auto v = node->value<std::string>();
            if (!v) throw ConfigError(field, line_of(*node), "expected a string");
            out = *v;
        } else if constexpr (std::is_floating_point_v<T>) {
            auto v = node->value<double>();
            if (!v) throw ConfigError(field, line_of(*node), "expected a number");
            out = static_cast<T>(*v);
        } else {
            auto v = node->as_integer();
            if (!v) throw ConfigError(field, line_of(*node), "expected an integer");
            const std::int64_t raw = v->get();
            if (raw < 0 && !std::is_signed_v<T>) throw ConfigError(field, line_of(*node), "must not be negative");
            const bool too_big = raw > 0 && static_cast<std::uint64_t>(raw) >
                                                static_cast<std::uint64_t>(std::numeric_limits<T>::max());
            const bool too_small = std::is_signed_v<T> && raw < static_cast<std::int64_t>(std::numeric_limits<T>::min());
            if (too_big || too_small) {
                throw ConfigError(field, line_of(*node), "out of range");
            }
            out = static_cast<T>(raw);
        }
    }

    template <typename T, typename Parse>
    void read_enum(const toml::table* t, std::string_view section, std::string_view key, T& out, Parse parse) {
        std::string text;
        bool present = t && t->get(key);
        read(t, section, key, text);
        if (!present) return;
        auto v = parse(text);
        if (!v) throw ConfigError(std::string(section) + "." + std::string(key), line(section, key),
                                  "unknown value '" + text + "'");
        out = *v;
    }

    std::size_t line(std::string_view section, std::string_view key) const {
        auto it = lines_.find(std::string(section) + "." + std::string(key));
        return it == lines_.end() ? 0 : it->second;
    }
    const std::map<std::string, std::size_t>& lines() const { return lines_; }

    static std::size_t line_of(const toml::node& n) { return n.source().begin.line; }

private:
    const toml::table& root_;
    std::map<std::string, std::size_t> lines_;
};

NodeId parse_node_key(std::string_view field, std::string_view key, std::size_t line) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
        v = std::stoul(std::string(key), &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != key.size()) throw ConfigError(std::string(field), line, "keys must be node ids");
    return static_cast<NodeId>(v);
}

template <typename T>
std::vector<T> int_array(const toml::node* node, const std::string& field) {
    std::vector<T> out;
    if (!node) return out;
    const auto* arr = node->as_array();
    if (!arr) throw ConfigError(field, Reader::line_of(*node), "expected an array");
    for (const auto& el : *arr) {
        auto v = el.value<std::int64_t>();
        if (!v || *v < 0) throw ConfigError(field, Reader::line_of(el), "expected non-negative integers");
        out.push_back(static_cast<T>(*v));
    }
    return out;
}

std::optional<Backend> parse_backend(std::string_view s) {
    if (s == "sim") return Backend::simulated;
    if (s == "tcp") return Backend::tcp;
    return std::nullopt;
}

std::optional<Activation> parse_activation_opt(std::string_view s) {
    try {
        return parse_activation(s);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace

std::filesystem::path ScenarioConfig::dataset_path() const {
    if (dataset.empty()) return {};
    std::filesystem::path p(dataset);
    return p.is_absolute() ? p : base_dir / p;
}

void ScenarioConfig::validate() const {
    auto fail = [](const char* field, const std::string& what) { throw ConfigError(field, 0, what); };
    if (name.empty()) fail("scenario.name", "must not be empty");
    for (char c : name) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') {
            fail("scenario.name", "only letters, digits, '-', '_' and '.' are allowed");
        }
    }
    if (seed > static_cast<std::uint64_t>(INT64_MAX)) fail("scenario.seed", "must fit a signed 64-bit integer");
    if (nodes < 2) fail("scenario.nodes", "must be >= 2");
    if (rounds < 0) fail("scenario.rounds", "must not be negative");
    if (!(edge_probability >= 0.0 && edge_probability <= 1.0)) fail("scenario.edge_probability", "must be in [0, 1]");
    if (rsa_bits < 1024) fail("scenario.rsa_bits", "must be >= 1024");
    if (receive_timeout_ms < 0.0) fail("scenario.receive_timeout_ms", "must not be negative");
    if (token_ttl_ms < 0) fail("scenario.token_ttl_ms", "must not be negative");
    if (session_renewal_rounds < 1) fail("scenario.session_renewal_rounds", "must be >= 1");
    if (rotation_rounds < 1) fail("scenario.rotation_rounds", "must be >= 1");
    if (key_renewal_rounds < 0) fail("scenario.key_renewal_rounds", "must not be negative");
    if (sample_size > nodes - 1) fail("scenario.sample_size", "exceeds the number of peers");
    if (!(compute_ns_per_mac >= 0.0)) fail("scenario.compute_ns_per_mac", "must not be negative");
    if (output_dir.empty()) fail("scenario.output_dir", "must not be empty");
    for (const auto& [id, r] : roles) {
        if (id >= nodes) fail("scenario.roles", "node " + std::to_string(id) + " is not a participant");
    }
    std::set<PeerAddress> seen;
    for (const auto& [id, addr] : listen) {
        if (id >= nodes) fail("scenario.listen", "node " + std::to_string(id) + " is not a participant");
        if (!addr.valid()) fail("scenario.listen", "invalid address for node " + std::to_string(id));
        if (!seen.insert(addr).second) fail("scenario.listen", "address " + addr.to_string() + " used twice");
    }
    try {
        fabric.validate();
    } catch (const std::invalid_argument& e) {
        fail("fabric", e.what());
    }
    if (fabric.backend == Backend::tcp && tcp_port_base < PeerAddress::kMinPort) {
        fail("fabric.tcp_port_base", "must be >= 1024");
    }
    if (fabric.backend == Backend::tcp && static_cast<std::size_t>(tcp_port_base) + 8 > 65535) {
        fail("fabric.tcp_port_base", "leaves no room for the port pool");
    }
    TrainConfig t = train;
    t.rounds = std::max(rounds, 1);
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        fail("train", e.what());
    }
    for (auto h : hidden) {
        if (h == 0) fail("train.hidden", "layer widths must be positive");
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail("train.test_fraction", "must be in (0, 1)");
    if (dataset.empty()) {
        if (blob_classes < 2) fail("train.blob_classes", "must be >= 2");
        if (blob_dim < 1) fail("train.blob_dim", "must be >= 1");
        if (blob_samples < 2 * nodes) fail("train.blob_samples", "too few samples for the node count");
    } else if (!std::filesystem::exists(dataset_path())) {
        fail("train.dataset", "file not found: " + dataset_path().string());
    }
    if (attack) {
        const auto& plan = attack->plan;
        if (plan.start_round > plan.end_round) fail("attack.start_round", "is after end_round");
        if (plan.kind == AttackKind::eclipse && plan.target >= nodes) fail("attack.target", "is not a participant");
        if (plan.kind == AttackKind::eclipse && plan.attacker_ids.empty()) fail("attack.attackers", "must not be empty");
        try {
            attack->plan.validate(nodes);
        } catch (const std::invalid_argument& e) {
            fail("attack", e.what());
        }
        if (fabric.backend != Backend::simulated) fail("attack.kind", "attacks need the simulated backend");
    }
}

ScenarioConfig parse_scenario(std::string_view toml_text, const std::filesystem::path& base_dir) {
    toml::table root;
    try {
        root = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        throw ConfigError("", e.source().begin.line, std::string(e.description()));
    }
    for (const auto& [key, value] : root) {
        const std::string k(key.str());
        if (k != "scenario" && k != "fabric" && k != "train" && k != "attack") {
            throw ConfigError(k, Reader::line_of(value), "unknown section");
        }
    }

    ScenarioConfig cfg;
    cfg.base_dir = base_dir;
    Reader r(root);

    const auto* sc = r.section("scenario", {"name", "seed", "nodes", "rounds", "security", "topology",
                                            "edge_probability", "roles", "listen", "rsa_bits", "receive_timeout_ms",
                                            "token_ttl_ms", "session_renewal_rounds", "rotation_rounds",
                                            "key_renewal_rounds", "sample_size", "compute_ns_per_mac",
                                            "output_dir"});
    if (!sc) throw ConfigError("scenario", 0, "missing section");
    r.read(sc, "scenario", "name", cfg.name);
    std::int64_t seed = static_cast<std::int64_t>(cfg.seed);
    r.read(sc, "scenario", "seed", seed);
    if (seed < 0) throw ConfigError("scenario.seed", r.line("scenario", "seed"), "must not be negative");
    cfg.seed = static_cast<std::uint64_t>(seed);
    r.read(sc, "scenario", "nodes", cfg.nodes);
    r.read(sc, "scenario", "rounds", cfg.rounds);
    r.read_enum(sc, "scenario", "security", cfg.security, parse_security);
    r.read_enum(sc, "scenario", "topology", cfg.topology, parse_topology);
    r.read(sc, "scenario", "edge_probability", cfg.edge_probability);
    r.read(sc, "scenario", "rsa_bits", cfg.rsa_bits);
    r.read(sc, "scenario", "receive_timeout_ms", cfg.receive_timeout_ms);
    r.read(sc, "scenario", "token_ttl_ms", cfg.token_ttl_ms);
    r.read(sc, "scenario", "session_renewal_rounds", cfg.session_renewal_rounds);
    r.read(sc, "scenario", "rotation_rounds", cfg.rotation_rounds);
    r.read(sc, "scenario", "key_renewal_rounds", cfg.key_renewal_rounds);
    r.read(sc, "scenario", "sample_size", cfg.sample_size);
    r.read(sc, "scenario", "compute_ns_per_mac", cfg.compute_ns_per_mac);
    r.read(sc, "scenario", "output_dir", cfg.output_dir);
    if (const auto* node = sc->get("roles")) {
        const auto* t = node->as_table();
        if (!t) throw ConfigError("scenario.roles", Reader::line_of(*node), "expected a table of id = role");
        for (const auto& [key, value] : *t) {
            const auto line = Reader::line_of(value);
            NodeId id = parse_node_key("scenario.roles", key.str(), line);
            auto text = value.value<std::string>();
            auto role = text ? parse_role(*text) : std::nullopt;
            if (!role) throw ConfigError("scenario.roles", line, "unknown role");
            cfg.roles[id] = *role;
        }
    }
    if (const auto* node = sc->get("listen")) {
        const auto* t = node->as_table();
        if (!t) throw ConfigError("scenario.listen", Reader::line_of(*node), "expected a table of id = \"ip:port\"");
        for (const auto& [key, value] : *t) {
            const auto line = Reader::line_of(value);
            NodeId id = parse_node_key("scenario.listen", key.str(), line);
            auto text = value.value<std::string>();
            auto addr = text ? PeerAddress::parse(*text) : std::nullopt;
            if (!addr) throw ConfigError("scenario.listen", line, "expected \"ip:port\"");
            cfg.listen[id] = *addr;
        }
    }

    const auto* fa = r.section("fabric", {"backend", "latency_mean_ms", "latency_jitter_ms", "loss_rate",
                                          "bandwidth_mbps", "max_frame", "seed", "tcp_port_base"});
    cfg.fabric.seed = cfg.seed;
    r.read_enum(fa, "fabric", "backend", cfg.fabric.backend, parse_backend);
    r.read(fa, "fabric", "latency_mean_ms", cfg.fabric.latency_mean_ms);
    r.read(fa, "fabric", "latency_jitter_ms", cfg.fabric.latency_jitter_ms);
    r.read(fa, "fabric", "loss_rate", cfg.fabric.loss_rate);
    r.read(fa, "fabric", "bandwidth_mbps", cfg.fabric.bandwidth_mbps);
    r.read(fa, "fabric", "max_frame", cfg.fabric.max_frame);
    std::int64_t fseed = static_cast<std::int64_t>(cfg.fabric.seed);
    r.read(fa, "fabric", "seed", fseed);
    if (fseed < 0) throw ConfigError("fabric.seed", r.line("fabric", "seed"), "must not be negative");
    cfg.fabric.seed = static_cast<std::uint64_t>(fseed);
    r.read(fa, "fabric", "tcp_port_base", cfg.tcp_port_base);

    const auto* tr = r.section("train", {"learning_rate", "l2_lambda", "local_epochs", "hidden", "activation",
                                         "dataset", "test_fraction", "blob_classes", "blob_dim", "blob_samples"});
    r.read(tr, "train", "learning_rate", cfg.train.learning_rate);
    r.read(tr, "train", "l2_lambda", cfg.train.l2_lambda);
    r.read(tr, "train", "local_epochs", cfg.train.local_epochs);
    r.read_enum(tr, "train", "activation", cfg.activation, parse_activation_opt);
    r.read(tr, "train", "dataset", cfg.dataset);
    r.read(tr, "train", "test_fraction", cfg.test_fraction);
    r.read(tr, "train", "blob_classes", cfg.blob_classes);
    r.read(tr, "train", "blob_dim", cfg.blob_dim);
    r.read(tr, "train", "blob_samples", cfg.blob_samples);
    if (tr && tr->get("hidden")) cfg.hidden = int_array<std::size_t>(tr->get("hidden"), "train.hidden");
    cfg.train.rounds = cfg.rounds;

    const auto* at = r.section("attack", {"kind", "attackers", "target", "start_round", "end_round",
                                          "tapped_links", "monte_carlo_trials"});
    if (at) {
        AttackConfig ac;
        if (!at->get("kind")) throw ConfigError("attack.kind", 0, "missing");
        r.read_enum(at, "attack", "kind", ac.plan.kind, parse_attack);
        for (auto id : int_array<NodeId>(at->get("attackers"), "attack.attackers")) ac.plan.attacker_ids.insert(id);
        r.read(at, "attack", "target", ac.plan.target);
        r.read(at, "attack", "start_round", ac.plan.start_round);
        r.read(at, "attack", "end_round", ac.plan.end_round);
        r.read(at, "attack", "monte_carlo_trials", ac.monte_carlo_trials);
        if (const auto* node = at->get("tapped_links")) {
            const auto* arr = node->as_array();
            if (!arr) throw ConfigError("attack.tapped_links", Reader::line_of(*node), "expected [[a, b], ...]");
            for (const auto& el : *arr) {
                auto pair = int_array<NodeId>(&el, "attack.tapped_links");
                if (pair.size() != 2) throw ConfigError("attack.tapped_links", Reader::line_of(el), "expected [a, b]");
                ac.plan.tapped_links.insert({std::min(pair[0], pair[1]), std::max(pair[0], pair[1])});
            }
        }
        cfg.attack = ac;
    }

    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        std::string field = e.field();
        std::size_t line = 0;
        for (const auto& [k, l] : r.lines()) {
            if (k == field) line = l;
        }
        if (line == 0 || e.line() != 0) throw;
        const std::string what = e.what();
        throw ConfigError(field, line, what.substr(what.find(": ") + 2));
    }
    return cfg;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", 0, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str(), path.parent_path());
}

std::string serialize_scenario(const ScenarioConfig& cfg) {
    toml::table scenario{
        {"name", cfg.name},
        {"seed", static_cast<std::int64_t>(cfg.seed)},
        {"nodes", static_cast<std::int64_t>(cfg.nodes)},
        {"rounds", cfg.rounds},
        {"security", std::string(to_string(cfg.security))},
        {"topology", std::string(to_string(cfg.topology))},
        {"edge_probability", cfg.edge_probability},
        {"rsa_bits", cfg.rsa_bits},
        {"receive_timeout_ms", cfg.receive_timeout_ms},
        {"token_ttl_ms", cfg.token_ttl_ms},
        {"session_renewal_rounds", cfg.session_renewal_rounds},
        {"rotation_rounds", cfg.rotation_rounds},
        {"key_renewal_rounds", cfg.key_renewal_rounds},
        {"sample_size", static_cast<std::int64_t>(cfg.sample_size)},
        {"compute_ns_per_mac", cfg.compute_ns_per_mac},
        {"output_dir", cfg.output_dir},
    };
    if (!cfg.roles.empty()) {
        toml::table roles;
        for (const auto& [id, role] : cfg.roles) roles.insert(std::to_string(id), std::string(to_string(role)));
        scenario.insert("roles", std::move(roles));
    }
    if (!cfg.listen.empty()) {
        toml::table listen;
        for (const auto& [id, addr] : cfg.listen) listen.insert(std::to_string(id), addr.to_string());
        scenario.insert("listen", std::move(listen));
    }

    toml::table fabric{
        {"backend", cfg.fabric.backend == Backend::tcp ? "tcp" : "sim"},
        {"latency_mean_ms", cfg.fabric.latency_mean_ms},
        {"latency_jitter_ms", cfg.fabric.latency_jitter_ms},
        {"loss_rate", cfg.fabric.loss_rate},
        {"bandwidth_mbps", cfg.fabric.bandwidth_mbps},
        {"max_frame", static_cast<std::int64_t>(cfg.fabric.max_frame)},
        {"seed", static_cast<std::int64_t>(cfg.fabric.seed)},
        {"tcp_port_base", static_cast<std::int64_t>(cfg.tcp_port_base)},
    };

    toml::array hidden;
    for (auto h : cfg.hidden) hidden.push_back(static_cast<std::int64_t>(h));
    toml::table train{
        {"learning_rate", cfg.train.learning_rate},
        {"l2_lambda", cfg.train.l2_lambda},
        {"local_epochs", cfg.train.local_epochs},
        {"hidden", std::move(hidden)},
        {"activation", std::string(to_string(cfg.activation))},
        {"dataset", cfg.dataset},
        {"test_fraction", cfg.test_fraction},
        {"blob_classes", static_cast<std::int64_t>(cfg.blob_classes)},
        {"blob_dim", static_cast<std::int64_t>(cfg.blob_dim)},
        {"blob_samples", static_cast<std::int64_t>(cfg.blob_samples)},
    };

    toml::table root{{"scenario", std::move(scenario)}, {"fabric", std::move(fabric)}, {"train", std::move(train)}};
    if (cfg.attack) {
        const auto& p = cfg.attack->plan;
        toml::array attackers;
        for (auto id : p.attacker_ids) attackers.push_back(static_cast<std::int64_t>(id));
        toml::array links;
        for (const auto& [a, b] : p.tapped_links) {
            links.push_back(toml::array{static_cast<std::int64_t>(a), static_cast<std::int64_t>(b)});
        }
        toml::table attack{
            {"kind", std::string(to_string(p.kind))},
            {"attackers", std::move(attackers)},
            {"target", static_cast<std::int64_t>(p.target)},
            {"start_round", static_cast<std::int64_t>(p.start_round)},
            {"end_round", static_cast<std::int64_t>(p.end_round)},
            {"tapped_links", std::move(links)},
            {"monte_carlo_trials", static_cast<std::int64_t>(cfg.attack->monte_carlo_trials)},
        };
        root.insert("attack", std::move(attack));
    }
    std::ostringstream out;
    out << root << '\n';
    return out.str();
}

}  // namespace dflshield
