#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <vector>

#include "dflshield/crypto/envelope.hpp"
#include "dflshield/net/fabric.hpp"
#include "dflshield/node/messages.hpp"

namespace dflshield {

/// What the controller knows about one participant.
struct RegistryRecord {
    NodeId node = 0;
    Role role = Role::aggregator;
    Bytes credential;
    PeerAddress address;
    std::uint32_t address_epoch = 0;
    std::optional<Certificate> certificate;
    bool authenticated = false;
    std::int64_t token_expires_ms = 0;
    std::size_t tokens_issued = 0;
};

class Registry {
public:
    /// Throws std::invalid_argument on a duplicate id.
    void enrol(NodeId node, Role role, Bytes credential, PeerAddress address);
    std::optional<RegistryRecord> find(NodeId node) const;
    std::vector<RegistryRecord> records() const;
    std::vector<NodeId> authenticated_nodes() const;
    std::size_t size() const;

    void mark_authenticated(NodeId node, std::int64_t token_expires_ms);
    /// Refuses a certificate whose key epoch is lower than the one held.
    bool set_certificate(NodeId node, const Certificate& cert);
    /// Applies only when `epoch` is newer than what is recorded.
    bool set_address(NodeId node, PeerAddress addr, std::uint32_t epoch);

private:
    mutable std::mutex mu_;
    std::map<NodeId, RegistryRecord> records_;
};

/// Per-node view of the key distribution: peer certificates plus the
/// controller key. Private halves never leave their node.
struct KeyBundle {
    NodeId owner = 0;
    std::uint32_t key_epoch = 0;
    std::vector<Certificate> peers;
    PublicKey controller_key;
};

struct KeyDistribution {
    std::map<NodeId, KeyBundle> bundles;
    /// Authenticated nodes with no certificate on record.
    std::vector<NodeId> quarantined;
};

KeyDistribution distribute_keys(const Registry& registry, const PublicKey& controller_key, std::uint32_t key_epoch);

struct ControllerConfig {
    SecuritySetting security = SecuritySetting::baseline;
    PeerAddress address;
    std::int64_t token_ttl_ms = 60'000;
    int rsa_bits = 2048;
};

struct AuthOutcome {
    NodeId node = 0;
    bool accepted = false;
    std::string reason;
};

/// Trusted coordinator: token issuer, key distribution centre and metrics
/// sink. Served from the caller's thread through `serve_until`.
class Controller {
public:
    Controller(ControllerConfig cfg, Fabric& fabric, Clock& clock);
    ~Controller();

    const ControllerConfig& config() const { return cfg_; }
    const PublicKey& signing_public_key() const { return signing_.public_key(); }
    std::optional<PublicKey> encryption_public_key() const;
    Clock& clock() const { return clock_; }
    PeerAddress address() const { return endpoint_->address(); }

    Registry& registry() { return registry_; }
    const Registry& registry() const { return registry_; }

    /// Handles inbound frames until `deadline`, or earlier once `done` holds.
    void serve_until(Micros deadline, const std::function<bool()>& done = {});

    /// Signed directory of every authenticated node, sent to each of them.
    void broadcast_directory();
    DirectoryMessage make_directory() const;
    /// Asks every authenticated node for fresh keys; epoch increments.
    void push_key_renewal();
    std::uint32_t key_epoch() const { return key_epoch_; }
    /// Nodes that answered the latest renewal.
    std::size_t renewals_received() const { return renewals_received_; }

    const std::vector<AuthOutcome>& auth_log() const { return auth_log_; }
    /// First report per (node, round).
    const std::map<std::pair<std::uint32_t, NodeId>, MetricsReport>& reports() const { return reports_; }
    bool has_report(NodeId node, std::uint32_t round) const { return reports_.count({round, node}) > 0; }
    std::size_t rejected_frames() const { return rejected_; }

private:
    void dispatch(const ReceivedFrame& rf);
    void on_auth_request(const ReceivedFrame& rf);
    void on_metrics(const ReceivedFrame& rf);
    void on_notice(const ReceivedFrame& rf);
    void on_key_update(const AuthRequest& req);
    std::optional<std::pair<NodeId, Bytes>> unseal(const Bytes& body);
    bool check_proof(const AuthRequest& req, const RegistryRecord& rec, std::string& reason) const;
    void send(const PeerAddress& to, Frame f);
    std::int64_t now_ms() const { return clock_.now() / 1000; }

    ControllerConfig cfg_;
    Fabric& fabric_;
    Clock& clock_;
    KeyPair signing_;
    std::optional<KeyPair> encryption_;
    KeyDirectory directory_;
    std::unique_ptr<EnvelopeOpener> opener_;
    std::unique_ptr<Endpoint> endpoint_;
    Registry registry_;
    std::uint32_t key_epoch_ = 0;
    std::size_t renewals_received_ = 0;
    std::vector<AuthOutcome> auth_log_;
    std::map<std::pair<std::uint32_t, NodeId>, MetricsReport> reports_;
    std::set<std::pair<NodeId, Bytes>> seen_nonces_;
    std::size_t rejected_ = 0;
};

}  // namespace dflshield
