#include "dflshield/adversary/adversary.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>

#include "dflshield/crypto/token.hpp"

namespace dflshield {

namespace {

LinkKey undirected(NodeId a, NodeId b) { return {std::min(a, b), std::max(a, b)}; }

std::vector<std::pair<Micros, Micros>> merge(std::vector<std::pair<Micros, Micros>> v) {
    std::sort(v.begin(), v.end());
    std::vector<std::pair<Micros, Micros>> out;
    for (const auto& iv : v) {
        if (!out.empty() && iv.first <= out.back().second) {
            out.back().second = std::max(out.back().second, iv.second);
        } else {
            out.push_back(iv);
        }
    }
    return out;
}

CapturedFrame to_captured(std::uint32_t round, const FrameRecord& rec, const Frame& f) {
    return {round, rec.sent_at, rec.deliver_at, rec.src, rec.dst, f.kind, rec.lost, rec.bytes, f.body};
}

}  // namespace

std::string_view to_string(AttackKind k) {
    switch (k) {
        case AttackKind::eclipse: return "eclipse";
        case AttackKind::eavesdrop: return "eavesdrop";
        case AttackKind::network_map: return "network_map";
    }
    return "?";
}

std::optional<AttackKind> parse_attack(std::string_view s) {
    for (auto k : {AttackKind::eclipse, AttackKind::eavesdrop, AttackKind::network_map}) {
        if (s == to_string(k)) return k;
    }
    return std::nullopt;
}

void AttackPlan::validate(std::size_t node_count) const {
    if (start_round > end_round) throw std::invalid_argument("attack start_round is after end_round");
    if (kind == AttackKind::eclipse) {
        if (target >= node_count) throw std::invalid_argument("attack target is not a participant");
        if (attacker_ids.empty()) throw std::invalid_argument("eclipse needs at least one attacker id");
        for (auto a : attacker_ids) {
            if (a < node_count || a == kControllerId) {
                throw std::invalid_argument("eclipse attacker " + std::to_string(a) + " collides with a participant");
            }
        }
    }
    for (const auto& [a, b] : tapped_links) {
        if ((a >= node_count && a != kControllerId) || (b >= node_count && b != kControllerId)) {
            throw std::invalid_argument("tapped link names an unknown node");
        }
    }
}

std::uint32_t AttackPlan::window(std::uint32_t rounds) const {
    if (rounds == 0 || start_round >= rounds) return 0;
    return std::min(end_round, rounds - 1) - start_round + 1;
}

std::uint64_t CaptureLog::captured_bytes() const {
    std::uint64_t total = 0;
    for (const auto& f : frames) total += f.wire_bytes;
    return total;
}

void write_capture_jsonl(std::ostream& out, const CaptureLog& log) {
    for (const auto& f : log.frames) {
        nlohmann::json j{{"round", f.round},     {"sent_at_us", f.sent_at}, {"src", f.src},
                         {"dst", f.dst},         {"kind", to_string(f.kind)}, {"bytes", f.wire_bytes},
                         {"lost", f.lost},       {"body", base64url_encode(f.body)}};
        out << j.dump() << '\n';
    }
}

std::optional<ModelParams> try_recover_params(ByteView body) {
    try {
        return ModelMessage::decode(body).params;
    } catch (const std::exception&) {
    }
    try {
        return ModelParams::from_wire(body);
    } catch (const std::exception&) {
    }
    return std::nullopt;
}

void write_attack_row(std::ostream& out, const AttackOutcome& o) {
    out << to_string(o.kind) << ',' << o.target << ',' << o.isolated_rounds << ',' << o.plaintext_param_sets_recovered
        << ',' << (o.success ? "true" : "false") << '\n';
}

// eclipse

EclipseAttack::EclipseAttack(AttackPlan plan, SimFabric& fabric) : plan_(std::move(plan)), fabric_(fabric) {
    fabric_.add_tap([this](const FrameRecord& rec, const Frame& f) {
        if (!round_ || f.kind != FrameKind::model_exchange) return;
        if (is_attacker(rec.src)) return;
        const bool to_target = rec.dst == plan_.target;
        const bool from_target = rec.src == plan_.target;
        if (!to_target && !from_target) return;
        if (!rec.intercepted && !rec.lost) leaked_ = true;
        if (!rec.intercepted) return;
        capture_.frames.push_back(to_captured(*round_, rec, f));
        if (auto p = try_recover_params(f.body)) {
            capture_.recovered_params.push_back(std::move(*p));
            ++recovered_[*round_];
        }
        if (to_target) {
            sender_addresses_[rec.src] = rec.src_addr;
            try {
                stolen_tokens_[rec.src] = ModelMessage::decode(f.body).token;
            } catch (const std::exception&) {
            }
        }
    });
}

void EclipseAttack::on_deployed(Federation& fed) {
    security_ = fed.plan().security;
    std::uint8_t host = 1;
    for (auto id : plan_.attacker_ids) {
        clocks_.push_back(std::make_unique<ManualClock>());
        PeerAddress addr{PeerAddress::ipv4(10, 66, 0, host++), 9000};
        endpoints_.push_back(fabric_.bind(id, addr, *clocks_.back()));
    }
}

InterceptVerdict EclipseAttack::intercept(const FrameRecord& rec, const Frame& f) {
    if (f.kind != FrameKind::model_exchange || is_attacker(rec.src) || !target_address_) {
        return InterceptVerdict::deliver();
    }
    // node isolation: nothing honest reaches the target
    if (rec.dst_addr == *target_address_) return InterceptVerdict::drop();
    // seizing control: the target's output lands at the attackers
    if (rec.src == plan_.target && rec.src_addr == *target_address_ && !endpoints_.empty()) {
        return InterceptVerdict::redirect(endpoints_[rec.seq % endpoints_.size()]->address());
    }
    return InterceptVerdict::deliver();
}

void EclipseAttack::on_round_start(Federation& fed, std::uint32_t round) {
    if (!plan_.active_in(round)) {
        round_.reset();
        fabric_.set_interceptor(nullptr);
        return;
    }
    const Node* target = fed.node(plan_.target);
    if (!target) return;
    if (!target_address_) target_address_ = target->address();
    round_ = round;
    leaked_ = false;
    if (target->address() != *target_address_) unreachable_.insert(round);
    fabric_.set_interceptor([this](const FrameRecord& rec, const Frame& f) { return intercept(rec, f); });
}

void EclipseAttack::after_send(Federation& fed, std::uint32_t round) {
    if (round_ && *round_ == round) inject_mimicry(fed, round);
}

void EclipseAttack::inject_mimicry(Federation& fed, std::uint32_t round) {
    Node* target = fed.node(plan_.target);
    if (!target || endpoints_.empty() || !target_address_) return;
    // crafted parameters: the shape of the target's model, every weight zeroed
    ModelParams crafted(target->params().architecture());
    const bool encrypted = uses_encryption(fed.plan().security);
    std::optional<KeyPair> forged_signer;
    std::optional<EnvelopeSealer> sealer;
    std::optional<PublicKey> target_key = target->encryption_public_key();
    if (encrypted) {
        forged_signer.emplace(KeyPair::generate(KeyKind::signing));
    }
    const Micros at = target->clock().now();
    for (const auto& [sender, from] : sender_addresses_) {
        ModelMessage msg{sender, round, {}, crafted};
        if (auto it = stolen_tokens_.find(sender); it != stolen_tokens_.end()) msg.token = it->second;
        Frame f{FrameKind::model_exchange, round, {}};
        if (encrypted) {
            if (!target_key) continue;
            // no session or private keys: the best forgery signs with a key of its own
            sealer.emplace(sender, *forged_signer, SessionKey::generate(round));
            f.body = sealer->seal(msg.encode(), *target_key).serialize();
        } else {
            if (msg.token.empty()) continue;
            f.body = msg.encode();
        }
        try {
            fabric_.inject(*plan_.attacker_ids.begin(), from, *target_address_, f, at);
            ++mimicry_sent_;
        } catch (const RoutingError&) {
            unreachable_.insert(round);
        }
    }
}

void EclipseAttack::on_round_end(Federation& fed, std::uint32_t round) {
    if (!round_ || *round_ != round) return;
    fabric_.set_interceptor(nullptr);
    const Node* target = fed.node(plan_.target);
    if (!leaked_ && !unreachable_.count(round)) isolated_.insert(round);
    if (target && !target->history().empty() && !leaked_) {
        mimicry_accepted_ += target->history().back().params_received;
    }
    // the attackers never answer; drain what was redirected to them
    for (auto& ep : endpoints_) {
        auto* clock = clocks_[&ep - endpoints_.data()].get();
        clock->wait_until(fed.now());
        while (ep->recv_until(clock->now())) {
        }
    }
    round_.reset();
}

AttackOutcome EclipseAttack::outcome(std::uint32_t rounds_run) const {
    AttackOutcome o;
    o.kind = AttackKind::eclipse;
    o.target = plan_.target;
    o.attack_rounds = plan_.window(rounds_run);
    o.isolated_rounds = static_cast<std::uint32_t>(isolated_.size());
    o.unreachable_rounds = static_cast<std::uint32_t>(unreachable_.size());
    o.recovered_per_round = recovered_;
    for (const auto& [r, n] : recovered_) o.plaintext_param_sets_recovered += n;
    o.mimicry_sent = mimicry_sent_;
    o.mimicry_accepted = mimicry_accepted_;
    o.control_established = mimicry_accepted_ > 0;
    const bool held = o.attack_rounds > 0 && 5 * o.isolated_rounds >= 4 * o.attack_rounds;
    o.success = held && (uses_encryption(security_) || o.plaintext_param_sets_recovered > 0);
    return o;
}

// eavesdropping

Eavesdropper::Eavesdropper(AttackPlan plan, Fabric& fabric) : plan_(std::move(plan)) {
    fabric.add_tap([this](const FrameRecord& rec, const Frame& f) { observe(rec, f); });
}

bool Eavesdropper::taps(NodeId a, NodeId b) const {
    return plan_.tapped_links.empty() || plan_.tapped_links.count(undirected(a, b)) != 0;
}

void Eavesdropper::observe(const FrameRecord& rec, const Frame& f) {
    if (!taps(rec.src, rec.dst)) return;
    capture_.frames.push_back(to_captured(round_, rec, f));
    if (f.kind != FrameKind::model_exchange) return;
    if (auto p = try_recover_params(f.body)) capture_.recovered_params.push_back(std::move(*p));
}

// mapping

NetworkMap run_network_map(CaptureLog& capture, std::optional<std::uint32_t> only_round) {
    NetworkMap map;
    std::vector<FrameRecord> model_frames;
    std::map<NodeId, std::size_t> fan_in, fan_out;
    std::set<NodeId> seen;
    std::map<NodeId, std::vector<std::pair<Micros, Micros>>> spans;
    for (const auto& f : capture.frames) {
        if (only_round && f.round != *only_round) continue;
        if (f.src != kControllerId) seen.insert(f.src);
        if (f.dst != kControllerId) seen.insert(f.dst);
        if (f.kind != FrameKind::model_exchange) continue;
        FrameRecord rec;
        rec.src = f.src;
        rec.dst = f.dst;
        rec.kind = f.kind;
        model_frames.push_back(rec);
        map.edges.insert(undirected(f.src, f.dst));
        ++fan_out[f.src];
        ++fan_in[f.dst];
        const Micros end = std::max(f.deliver_at, f.sent_at);
        spans[f.src].emplace_back(f.sent_at, end);
        spans[f.dst].emplace_back(f.sent_at, end);
    }
    map.frequency = communication_frequency(model_frames);
    for (auto n : seen) {
        if (fan_in[n] > 0) {
            map.roles[n] = Role::aggregator;
        } else if (fan_out[n] > 0) {
            map.roles[n] = Role::trainer;
        } else {
            map.roles[n] = Role::idle;
        }
    }
    for (auto& [n, v] : spans) map.activity[n] = merge(std::move(v));
    capture.inferred_topology = map.edges;
    capture.inferred_roles = map.roles;
    capture.activity_map = map.activity;
    return map;
}

double topology_recall(const NetworkMap& map, const TopologyGraph& truth) {
    if (truth.edges.empty()) return 1.0;
    std::size_t hit = 0;
    for (const auto& e : truth.edges) hit += map.edges.count(undirected(e.first, e.second));
    return static_cast<double>(hit) / static_cast<double>(truth.edges.size());
}

double mtd_all_attacker_rate(std::size_t m, std::size_t a, std::size_t n, std::size_t trials, std::uint64_t seed) {
    if (trials == 0) return 0.0;
    NeighborPool pool;
    for (std::size_t i = 0; i < m; ++i) pool.all.push_back(static_cast<NodeId>(i));
    pool.sample_size = n;
    pool.validate();
    Rng rng(seed);
    std::size_t hits = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        auto sample = mtd_select_neighbors(pool, rng);
        hits += std::all_of(sample.begin(), sample.end(), [&](NodeId id) { return id < a; });
    }
    return static_cast<double>(hits) / static_cast<double>(trials);
}

}  // namespace dflshield
