#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dflshield/crypto/envelope.hpp"
#include "dflshield/model/dataset.hpp"
#include "dflshield/model/evaluation.hpp"
#include "dflshield/model/training.hpp"
#include "dflshield/mtd/mtd.hpp"
#include "dflshield/net/fabric.hpp"
#include "dflshield/node/messages.hpp"

namespace dflshield {

struct NodeConfig {
    NodeId node_id = 0;
    Role role = Role::aggregator;
    SecuritySetting security = SecuritySetting::baseline;
    TrainConfig train;
    Micros receive_timeout = ms_to_us(100);
    /// Session key renewal period k, in rounds.
    int session_renewal_rounds = 1;
    /// Address rotation period under encryption_mtd, in rounds.
    int rotation_rounds = 1;
    /// Neighbours drawn per round under encryption_mtd; 0 means ceil(m/2).
    std::size_t sample_size = 0;
    int rsa_bits = 2048;
    /// Virtual cost of one multiply-accumulate, used to advance simulated time.
    double compute_ns_per_mac = 1.0;
    Bytes credential;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Deployment facts a node is started with.
struct NodeLinks {
    PeerAddress listen;
    PeerAddress controller;
    PublicKey controller_signing_key;
    std::vector<NodeId> topology_neighbors;
    AddressPool address_pool;
};

using Interval = std::pair<Micros, Micros>;

struct RoundRecord {
    std::uint32_t round = 0;
    std::vector<NodeId> neighbors_used;
    std::size_t params_sent = 0;
    std::size_t params_received = 0;
    std::size_t late_frames = 0;
    /// Frames that failed envelope, token or membership checks.
    std::size_t rejected_frames = 0;
    std::size_t routing_errors = 0;
    bool starved = false;
    bool rotated = false;
    bool evaluated = false;
    EvalReport eval;
    Micros started_at = 0;
    Micros ended_at = 0;
    std::vector<Interval> active_intervals;
    std::uint64_t bytes_sent = 0;
    std::uint64_t bytes_received = 0;

    Micros wall_time() const { return ended_at - started_at; }
};

/// Sum of active interval lengths over total wall time. Throws
/// std::invalid_argument when no time was observed.
double compute_activity_ratio(std::span<const RoundRecord> records);

/// Why an inbound frame was refused; kept per node for diagnostics.
struct RejectionCounts {
    std::map<EnvelopeFailure, std::size_t> envelope;
    std::size_t bad_token = 0;
    std::size_t not_member = 0;
    std::size_t malformed = 0;
    std::size_t duplicate = 0;
    std::size_t bad_control = 0;
};

/// One federated participant. Every method runs on the caller's thread; a
/// federation drives the round phases in lock step, or `run_round` runs a
/// whole round when peers progress concurrently in real time.
class Node {
public:
    Node(NodeConfig cfg, NodeLinks links, Fabric& fabric, Clock& clock, Dataset train, Dataset test,
         ModelParams initial);
    ~Node();
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    NodeId id() const { return cfg_.node_id; }
    Role role() const { return cfg_.role; }
    const NodeConfig& config() const { return cfg_; }
    Clock& clock() const { return clock_; }
    PeerAddress address() const;

    // authentication
    void request_auth();
    /// Processes inbound traffic until the auth response arrives or the
    /// deadline passes. True once a token is held.
    bool await_auth(Micros deadline);
    bool authenticated() const { return !token_.empty(); }
    bool auth_rejected() const { return auth_rejected_; }
    /// True from 80% of the token lifetime onwards.
    bool token_needs_refresh() const;
    const std::string& token() const { return token_; }
    std::size_t auth_requests_sent() const { return auth_requests_; }

    /// Handles whatever arrives until `deadline` (directory pushes, renewal
    /// requests, rendezvous notices).
    void pump_until(Micros deadline);
    bool has_directory() const { return directory_epoch_.has_value(); }
    std::uint32_t key_epoch() const { return cert_epoch_; }

    // round phases, in order
    void begin_round(std::uint32_t round, Micros start);
    void train_and_send();
    void receive_and_aggregate();
    void report_metrics();
    /// Rotates under encryption_mtd when the period is due.
    void rotate_if_due();
    RoundRecord finish_round();

    RoundRecord run_round(std::uint32_t round);

    const ModelParams& params() const { return params_; }
    const std::vector<RoundRecord>& history() const { return history_; }
    const AddressBook& address_book() const { return book_; }
    const KeyDirectory& key_directory() const { return directory_; }
    const RejectionCounts& rejections() const { return rejections_; }
    Endpoint& endpoint() { return *endpoint_; }
    void set_topology_neighbors(std::vector<NodeId> ids) { links_.topology_neighbors = std::move(ids); }
    /// Consumers this node may send to, before any MTD sampling.
    std::vector<NodeId> eligible_receivers() const;

    /// Whether this node's private key opens `envelope_wire`. Uses a scratch
    /// opener so the live replay cache is untouched.
    bool can_open(ByteView envelope_wire) const;
    /// The encryption public key currently advertised, if any.
    std::optional<PublicKey> encryption_public_key() const;

private:
    enum class Phase : std::uint8_t { idle, receiving };

    void send_frame(const PeerAddress& to, Frame f);
    void dispatch(const ReceivedFrame& rf);
    void on_model(const ReceivedFrame& rf);
    void on_notice(const ReceivedFrame& rf);
    void on_auth_response(const ReceivedFrame& rf);
    void on_control(const ReceivedFrame& rf);
    void apply_directory(const DirectoryMessage& dir);
    void renew_keys(const RenewKeysMessage& m);
    /// Envelope payload when encrypted, body as is otherwise. nullopt on failure.
    std::optional<std::pair<NodeId, Bytes>> unseal(const Bytes& body);
    Bytes seal_to(const PublicKey& recipient, ByteView payload);
    AuthRequest make_auth_request();
    void mark_active(Micros from, Micros to);
    Micros compute_cost(double macs) const;
    std::int64_t now_ms() const { return clock_.now() / 1000; }

    NodeConfig cfg_;
    NodeLinks links_;
    Fabric& fabric_;
    Clock& clock_;
    Dataset train_;
    Dataset test_;
    ModelParams params_;
    std::unique_ptr<Endpoint> endpoint_;
    AddressBook book_;
    Rng train_rng_;
    Rng mtd_rng_;

    // key material; deques keep references stable for the sealer and opener
    std::deque<KeyPair> enc_keys_;
    std::deque<KeyPair> sig_keys_;
    std::optional<std::uint32_t> pending_key_epoch_;
    std::uint32_t cert_epoch_ = 0;
    KeyDirectory directory_;
    std::unique_ptr<EnvelopeSealer> sealer_;
    std::unique_ptr<EnvelopeOpener> opener_;
    PublicKey controller_enc_;

    std::string token_;
    std::int64_t token_received_ms_ = 0;
    std::int64_t token_expires_ms_ = 0;
    bool auth_rejected_ = false;
    std::size_t auth_requests_ = 0;

    std::optional<std::uint32_t> directory_epoch_;
    std::map<NodeId, Role> members_;

    Phase phase_ = Phase::idle;
    RoundRecord current_;
    Micros send_done_at_ = 0;
    std::map<NodeId, ModelParams> inbound_;
    std::uint64_t bytes_sent_ = 0;
    std::uint64_t bytes_received_ = 0;
    std::uint64_t round_bytes_sent_mark_ = 0;
    std::uint64_t round_bytes_received_mark_ = 0;
    std::vector<RoundRecord> history_;
    RejectionCounts rejections_;
};

}  // namespace dflshield
