#pragma once

#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dflshield/controller/controller.hpp"
#include "dflshield/controller/ledger.hpp"
#include "dflshield/controller/topology.hpp"
#include "dflshield/node/node.hpp"

namespace dflshield {

/// Deployment failed (fewer than two nodes survived authentication, ...).
class DeployError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything needed to stand a federation up.
struct FederationPlan {
    std::string name = "run";
    SecuritySetting security = SecuritySetting::baseline;
    std::size_t node_count = 8;
    std::map<NodeId, Role> roles;  // absent ids default to aggregator
    TopologyKind topology = TopologyKind::random;
    double edge_probability = 0.5;
    ModelArchitecture architecture;
    TrainConfig train;
    /// Per-node (train, test) shards, indexed by node id.
    std::vector<DatasetSplit> node_data;
    std::uint64_t seed = 0;

    Micros receive_timeout = 0;  // 0: 5 x mean latency x |N|
    int session_renewal_rounds = 1;
    int rotation_rounds = 1;
    /// Controller-driven public key renewal period; 0 disables it.
    int key_renewal_rounds = 0;
    std::size_t sample_size = 0;
    int rsa_bits = 2048;
    std::int64_t token_ttl_ms = 0;  // 0: ten rounds' worth
    double compute_ns_per_mac = 1.0;

    PeerAddress controller_address{PeerAddress::ipv4(10, 0, 0, 1), 7000};
    AddressPool address_pool;
    /// Initial addresses that replace the pool assignment for given nodes.
    std::map<NodeId, PeerAddress> listen_overrides;
    /// Nodes deployed with a credential the controller will refuse.
    std::set<NodeId> bad_credentials;

    void validate() const;
    Role role_of(NodeId n) const;
};

class Federation;

/// Hooks for attack code and tests. All callbacks run on the federation's
/// thread between phases.
class RoundObserver {
public:
    virtual ~RoundObserver() = default;
    virtual void on_deployed(Federation&) {}
    virtual void on_round_start(Federation&, std::uint32_t) {}
    virtual void after_send(Federation&, std::uint32_t) {}
    virtual void on_round_end(Federation&, std::uint32_t) {}
};

/// Lock-step driver: every node finishes a phase before any node starts the
/// next, which keeps simulated runs deterministic.
class Federation {
public:
    /// Generates the topology, starts the controller and every node, runs
    /// authentication and the first key distribution. Throws DeployError.
    static std::unique_ptr<Federation> deploy(FederationPlan plan, Fabric& fabric, RoundObserver* observer = nullptr);
    ~Federation();

    void run();
    void run_round(std::uint32_t round);

    const FederationPlan& plan() const { return plan_; }
    const TopologyGraph& topology() const { return topology_; }
    Controller& controller() { return *controller_; }
    Fabric& fabric() { return fabric_; }
    const RunLedger& ledger() const { return ledger_; }
    std::vector<NodeId> active_nodes() const;
    const std::vector<NodeId>& excluded_nodes() const { return excluded_; }
    Node* node(NodeId id);
    const Node* node(NodeId id) const;
    /// Start time of the next round.
    Micros now() const { return now_; }
    Micros receive_timeout() const { return receive_timeout_; }
    std::uint32_t rounds_completed() const { return rounds_completed_; }
    std::size_t reauth_count() const { return reauths_; }

    RunReport report() const;

private:
    Federation(FederationPlan plan, Fabric& fabric, RoundObserver* observer);

    Clock& make_clock();
    Micros latest_clock() const;
    Micros exchange_window() const;
    void authenticate(const std::vector<NodeId>& ids);
    void distribute_directory();
    void renew_keys();
    void record_round(std::uint32_t round, const FabricStats& before, Micros started);

    FederationPlan plan_;
    Fabric& fabric_;
    RoundObserver* observer_;
    std::vector<std::unique_ptr<Clock>> clocks_;
    std::unique_ptr<Controller> controller_;
    std::map<NodeId, std::unique_ptr<Node>> nodes_;
    TopologyGraph topology_;
    RunLedger ledger_;
    std::vector<NodeId> excluded_;
    Micros receive_timeout_ = 0;
    Micros now_ = 0;
    std::uint32_t rounds_completed_ = 0;
    std::size_t reauths_ = 0;
};

/// Default pool: 10.0.1.1 .. 10.0.1.n_ips on ports 9000 .. 9000 + n_ports - 1.
AddressPool default_address_pool(std::size_t node_count);

}  // namespace dflshield
