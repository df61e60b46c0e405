#pragma once

#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "dflshield/controller/federation.hpp"
#include "dflshield/net/sim_fabric.hpp"

namespace dflshield {

enum class AttackKind : std::uint8_t { eclipse, eavesdrop, network_map };

std::string_view to_string(AttackKind k);
std::optional<AttackKind> parse_attack(std::string_view s);

struct AttackPlan {
    AttackKind kind = AttackKind::eclipse;
    /// Eclipse: external identities that never join the federation.
    std::set<NodeId> attacker_ids;
    NodeId target = 0;
    std::uint32_t start_round = 0;
    /// Inclusive. Rounds past the end of the run are ignored.
    std::uint32_t end_round = UINT32_MAX;
    /// Eavesdrop and mapping: undirected links to tap; empty taps everything.
    std::set<LinkKey> tapped_links;

    /// Throws std::invalid_argument.
    void validate(std::size_t node_count) const;
    bool active_in(std::uint32_t round) const { return round >= start_round && round <= end_round; }
    std::uint32_t window(std::uint32_t rounds) const;

    bool operator==(const AttackPlan&) const = default;
};

struct CapturedFrame {
    std::uint32_t round = 0;
    Micros sent_at = 0;
    Micros deliver_at = 0;
    NodeId src = 0;
    NodeId dst = 0;
    FrameKind kind = FrameKind::control;
    bool lost = false;
    std::size_t wire_bytes = 0;
    Bytes body;
};

struct CaptureLog {
    std::vector<CapturedFrame> frames;
    std::vector<ModelParams> recovered_params;
    std::set<LinkKey> inferred_topology;
    std::map<NodeId, Role> inferred_roles;
    std::map<NodeId, std::vector<std::pair<Micros, Micros>>> activity_map;

    std::uint64_t captured_bytes() const;
};

/// One JSON object per line: round, sent_at_us, src, dst, kind, bytes, lost, body (base64url).
void write_capture_jsonl(std::ostream& out, const CaptureLog& log);

/// Reads a model payload out of a captured ModelExchange body. Works only on
/// the plaintext wire form; ciphertext yields nullopt.
std::optional<ModelParams> try_recover_params(ByteView body);

struct AttackOutcome {
    AttackKind kind = AttackKind::eclipse;
    NodeId target = 0;
    std::uint32_t attack_rounds = 0;
    std::uint32_t isolated_rounds = 0;
    bool control_established = false;
    std::size_t plaintext_param_sets_recovered = 0;
    std::map<std::uint32_t, std::size_t> recovered_per_round;
    /// Crafted frames pushed at the target, and how many it took in.
    std::size_t mimicry_sent = 0;
    std::size_t mimicry_accepted = 0;
    /// Rounds where the target had moved off the intercepted address.
    std::uint32_t unreachable_rounds = 0;
    double topology_recall = 0.0;
    /// Monte Carlo check of neighbour sampling: share of sampled rounds whose
    /// whole sample was attacker-adjacent, next to the closed form.
    std::size_t sampled_rounds = 0;
    double all_attacker_rate = 0.0;
    double all_attacker_expected = 0.0;
    bool success = false;
};

inline constexpr const char* kAttackTableHeader = "attack,target,isolated_rounds,recovered,success";
void write_attack_row(std::ostream& out, const AttackOutcome& outcome);

/// Eclipse attacker. Attacker identities get endpoints on the fabric and an
/// interceptor on every link of the target: inbound model traffic is dropped,
/// outbound model traffic is redirected to the attackers. Interception is
/// keyed on the address the target held when the attack began. While the
/// target is cut off the attackers replay the exchange with crafted
/// parameters under identities seen on the captured links.
class EclipseAttack final : public RoundObserver {
public:
    EclipseAttack(AttackPlan plan, SimFabric& fabric);

    void on_deployed(Federation& fed) override;
    void on_round_start(Federation& fed, std::uint32_t round) override;
    void after_send(Federation& fed, std::uint32_t round) override;
    void on_round_end(Federation& fed, std::uint32_t round) override;

    /// Final accounting; call after the run.
    AttackOutcome outcome(std::uint32_t rounds_run) const;
    const CaptureLog& capture() const { return capture_; }

private:
    bool is_attacker(NodeId id) const { return plan_.attacker_ids.count(id) != 0; }
    InterceptVerdict intercept(const FrameRecord& rec, const Frame& f);
    void inject_mimicry(Federation& fed, std::uint32_t round);

    AttackPlan plan_;
    SimFabric& fabric_;
    std::vector<std::unique_ptr<ManualClock>> clocks_;
    std::vector<std::unique_ptr<Endpoint>> endpoints_;
    std::optional<PeerAddress> target_address_;
    std::optional<std::uint32_t> round_;
    bool leaked_ = false;
    SecuritySetting security_ = SecuritySetting::baseline;
    // latest plaintext messages seen from each honest sender toward the target
    std::map<NodeId, std::string> stolen_tokens_;
    std::map<NodeId, PeerAddress> sender_addresses_;
    std::set<std::uint32_t> isolated_;
    std::set<std::uint32_t> unreachable_;
    std::size_t mimicry_sent_ = 0;
    std::size_t mimicry_accepted_ = 0;
    std::map<std::uint32_t, std::size_t> recovered_;
    CaptureLog capture_;
};

/// Passive tap on a set of links. Never drops, delays or injects.
class Eavesdropper final : public RoundObserver {
public:
    Eavesdropper(AttackPlan plan, Fabric& fabric);

    void on_round_start(Federation&, std::uint32_t round) override { round_ = round; }

    const CaptureLog& capture() const { return capture_; }
    CaptureLog& capture() { return capture_; }
    bool taps(NodeId a, NodeId b) const;

private:
    void observe(const FrameRecord& rec, const Frame& f);

    AttackPlan plan_;
    std::uint32_t round_ = 0;
    CaptureLog capture_;
};

struct NetworkMap {
    std::set<LinkKey> edges;  // undirected, (low, high)
    std::map<NodeId, Role> roles;
    std::map<LinkKey, double> frequency;
    std::map<NodeId, std::vector<std::pair<Micros, Micros>>> activity;

    bool empty() const { return edges.empty(); }
};

/// Builds the attacker's picture from captured model traffic, optionally
/// only for one round. Also fills the inference fields of `capture`.
NetworkMap run_network_map(CaptureLog& capture, std::optional<std::uint32_t> only_round = std::nullopt);

/// Share of true edges the map found. 1 for an empty truth.
double topology_recall(const NetworkMap& map, const TopologyGraph& truth);

/// Rate at which a uniform n-sample from m candidates lands entirely on the
/// first `a` ids, the attacker-adjacent ones.
double mtd_all_attacker_rate(std::size_t m, std::size_t a, std::size_t n, std::size_t trials, std::uint64_t seed);

}  // namespace dflshield
