#include "dflshield/controller/federation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace dflshield {

void FederationPlan::validate() const {
    if (node_count == 0) throw std::invalid_argument("federation needs at least one node");
    if (node_data.size() != node_count) throw std::invalid_argument("one data shard per node is required");
    for (const auto& [id, _] : roles) {
        if (id >= node_count) throw std::invalid_argument("role given for unknown node " + std::to_string(id));
    }
    architecture.validate();
    train.validate();
    for (const auto& d : node_data) {
        if (d.train.dim() != architecture.input_dim() && !d.train.empty()) {
            throw std::invalid_argument("shard feature width does not match the model input");
        }
    }
    if (!(edge_probability >= 0.0 && edge_probability <= 1.0)) {
        throw std::invalid_argument("edge probability must be in [0, 1]");
    }
    if (session_renewal_rounds < 1 || rotation_rounds < 1 || key_renewal_rounds < 0) {
        throw std::invalid_argument("renewal and rotation periods must be >= 1");
    }
    if (receive_timeout < 0 || token_ttl_ms < 0) throw std::invalid_argument("timeouts must be non-negative");
    address_pool.validate();
    if (address_pool.size() < node_count) throw std::invalid_argument("address pool smaller than the node count");
    if (!controller_address.valid()) throw std::invalid_argument("invalid controller address");
    for (const auto& [id, addr] : listen_overrides) {
        if (id >= node_count || !addr.valid() || addr == controller_address) {
            throw std::invalid_argument("bad listen override for node " + std::to_string(id));
        }
    }
}

Role FederationPlan::role_of(NodeId n) const {
    auto it = roles.find(n);
    return it == roles.end() ? Role::aggregator : it->second;
}

AddressPool default_address_pool(std::size_t node_count) {
    const std::size_t ips = std::max<std::size_t>(node_count, 4);
    return AddressPool::range(PeerAddress::ipv4(10, 0, 1, 1), ips, 9000, 8);
}

Federation::Federation(FederationPlan plan, Fabric& fabric, RoundObserver* observer)
    : plan_(std::move(plan)), fabric_(fabric), observer_(observer) {}

Federation::~Federation() {
    nodes_.clear();
    controller_.reset();
}

Clock& Federation::make_clock() {
    if (fabric_.config().backend == Backend::simulated) {
        clocks_.push_back(std::make_unique<ManualClock>(now_));
    } else if (clocks_.empty()) {
        clocks_.push_back(std::make_unique<SteadyClock>());
    } else {
        return *clocks_.front();
    }
    return *clocks_.back();
}

Micros Federation::latest_clock() const {
    Micros t = controller_ ? controller_->clock().now() : 0;
    for (const auto& [_, n] : nodes_) t = std::max(t, n->clock().now());
    return t;
}

Micros Federation::exchange_window() const {
    const auto& f = fabric_.config();
    // a frame is certainly delivered within twice the latency cap
    return ms_to_us(2.0 * (f.latency_mean_ms + 4.0 * f.latency_jitter_ms) + 5.0);
}

std::vector<NodeId> Federation::active_nodes() const {
    std::vector<NodeId> out;
    for (const auto& [id, _] : nodes_) out.push_back(id);
    return out;
}

Node* Federation::node(NodeId id) {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : it->second.get();
}

const Node* Federation::node(NodeId id) const {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : it->second.get();
}

std::unique_ptr<Federation> Federation::deploy(FederationPlan plan, Fabric& fabric, RoundObserver* observer) {
    plan.validate();
    std::unique_ptr<Federation> fed(new Federation(std::move(plan), fabric, observer));
    auto& p = fed->plan_;
    const auto& fc = fabric.config();

    std::vector<NodeId> ids(p.node_count);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<NodeId>(i);
    fed->topology_ = TopologyGraph::generate(ids, p.topology, p.edge_probability,
                                             derive_seed(p.seed, seed_stream::topology));

    std::size_t fanout = 1;
    if (uses_mtd(p.security)) {
        fanout = p.sample_size != 0 ? p.sample_size : NeighborPool::default_sample_size(p.node_count - 1);
    } else {
        for (auto v : ids) fanout = std::max(fanout, fed->topology_.neighbors(v).size());
    }
    fanout = std::max<std::size_t>(fanout, 1);
    fed->receive_timeout_ = p.receive_timeout != 0
                                ? p.receive_timeout
                                : std::max<Micros>(ms_to_us(5.0 * fc.latency_mean_ms * static_cast<double>(fanout)),
                                                   ms_to_us(1.0));
    const Micros round_estimate = fed->receive_timeout_ + 3 * fed->exchange_window();
    const std::int64_t ttl_ms =
        p.token_ttl_ms != 0 ? p.token_ttl_ms : std::max<std::int64_t>(1, 10 * round_estimate / 1000);

    ControllerConfig cc{p.security, p.controller_address, ttl_ms, p.rsa_bits};
    fed->controller_ = std::make_unique<Controller>(cc, fabric, fed->make_clock());

    Rng init_rng(derive_seed(p.seed, seed_stream::model_init));
    const auto initial = ModelParams::initialize(p.architecture, init_rng);
    const auto n_ips = p.address_pool.ips.size();
    for (auto id : ids) {
        PeerAddress addr{p.address_pool.ips[id % n_ips], p.address_pool.ports[(id / n_ips) % p.address_pool.ports.size()]};
        if (auto it = p.listen_overrides.find(id); it != p.listen_overrides.end()) addr = it->second;
        const Role role = p.role_of(id);
        fed->controller_->registry().enrol(id, role, derive_credential(p.seed, id), addr);

        NodeConfig nc;
        nc.node_id = id;
        nc.role = role;
        nc.security = p.security;
        nc.train = p.train;
        nc.receive_timeout = fed->receive_timeout_;
        nc.session_renewal_rounds = p.session_renewal_rounds;
        nc.rotation_rounds = p.rotation_rounds;
        nc.sample_size = p.sample_size;
        nc.rsa_bits = p.rsa_bits;
        nc.compute_ns_per_mac = p.compute_ns_per_mac;
        nc.credential = p.bad_credentials.count(id) ? derive_credential(~p.seed, id) : derive_credential(p.seed, id);
        nc.seed = p.seed;
        NodeLinks links{addr, p.controller_address, fed->controller_->signing_public_key(),
                        fed->topology_.neighbors(id), p.address_pool};
        auto& data = p.node_data[id];
        fed->nodes_.emplace(id, std::make_unique<Node>(std::move(nc), std::move(links), fabric, fed->make_clock(),
                                                       data.train, data.test, initial));
    }

    fed->authenticate(ids);
    for (auto id : ids) {
        auto* n = fed->node(id);
        if (n->authenticated() && !n->auth_rejected()) continue;
        std::cerr << "warning: node " << id << " failed authentication and is excluded\n";
        fed->excluded_.push_back(id);
        fed->nodes_.erase(id);
        fed->topology_.remove_vertex(id, derive_seed(p.seed, seed_stream::topology + 100 + id));
    }
    if (fed->nodes_.size() < 2) throw DeployError("fewer than two nodes authenticated");
    if (!fed->excluded_.empty()) {
        for (auto& [id, n] : fed->nodes_) n->set_topology_neighbors(fed->topology_.neighbors(id));
    }
    fed->distribute_directory();
    fed->now_ = fed->latest_clock();
    if (fed->observer_) fed->observer_->on_deployed(*fed);
    return fed;
}

void Federation::authenticate(const std::vector<NodeId>& ids) {
    for (int attempt = 0; attempt < 2; ++attempt) {
        std::vector<NodeId> pending;
        const Micros start = latest_clock();
        for (auto id : ids) {
            auto* n = node(id);
            if (!n || n->auth_rejected()) continue;
            if (attempt > 0 && n->authenticated() && !n->token_needs_refresh()) continue;
            n->clock().wait_until(start);
            n->request_auth();
            pending.push_back(id);
        }
        if (pending.empty()) return;
        const std::size_t before = controller_->auth_log().size();
        controller_->clock().wait_until(start);
        controller_->serve_until(start + exchange_window(),
                                 [&] { return controller_->auth_log().size() >= before + pending.size(); });
        const Micros answered = latest_clock();
        std::vector<NodeId> missing;
        for (auto id : pending) {
            if (!node(id)->await_auth(answered + exchange_window())) missing.push_back(id);
        }
        if (missing.empty()) return;
        // one retry for requests or responses lost in transit
        bool retry = false;
        for (auto id : missing) retry = retry || !node(id)->auth_rejected();
        if (!retry) return;
    }
}

void Federation::distribute_directory() {
    const Micros start = latest_clock();
    controller_->clock().wait_until(start);
    controller_->broadcast_directory();
    for (auto& [_, n] : nodes_) n->pump_until(start + exchange_window());
}

void Federation::renew_keys() {
    Micros start = latest_clock();
    controller_->clock().wait_until(start);
    controller_->push_key_renewal();
    for (auto& [_, n] : nodes_) n->pump_until(start + exchange_window());
    start = latest_clock();
    const std::size_t expected = nodes_.size();
    controller_->serve_until(start + exchange_window(), [&] { return controller_->renewals_received() >= expected; });
    distribute_directory();
}

void Federation::run() {
    for (std::uint32_t r = rounds_completed_; r < static_cast<std::uint32_t>(plan_.train.rounds); ++r) run_round(r);
}

void Federation::run_round(std::uint32_t round) {
    Micros start = now_;
    for (auto& [_, n] : nodes_) n->clock().wait_until(start);
    controller_->clock().wait_until(start);

    std::vector<NodeId> refresh;
    for (auto& [id, n] : nodes_) {
        if (n->token_needs_refresh()) refresh.push_back(id);
    }
    if (!refresh.empty()) {
        reauths_ += refresh.size();
        authenticate(refresh);
        start = latest_clock();
    }

    if (observer_) observer_->on_round_start(*this, round);
    const FabricStats before = fabric_.snapshot_stats();

    for (auto& [_, n] : nodes_) {
        n->begin_round(round, start);
        n->train_and_send();
    }
    if (observer_) observer_->after_send(*this, round);
    for (auto& [_, n] : nodes_) {
        n->receive_and_aggregate();
        n->report_metrics();
    }

    const Micros reported = latest_clock();
    controller_->clock().wait_until(std::min(start, reported));
    controller_->serve_until(reported + exchange_window(), [&] {
        for (const auto& [id, _] : nodes_) {
            if (!controller_->has_report(id, round)) return false;
        }
        return true;
    });

    for (auto& [_, n] : nodes_) n->rotate_if_due();
    if (uses_mtd(plan_.security)) {
        const Micros notices_sent = latest_clock();
        for (auto& [_, n] : nodes_) n->pump_until(notices_sent + exchange_window());
        controller_->serve_until(notices_sent + exchange_window());
    }
    if (plan_.key_renewal_rounds > 0 && (round + 1) % static_cast<std::uint32_t>(plan_.key_renewal_rounds) == 0) {
        renew_keys();
    }

    const Micros end = latest_clock();
    for (auto& [_, n] : nodes_) {
        n->clock().wait_until(end);
        n->finish_round();
    }
    controller_->clock().wait_until(end);
    record_round(round, before, start);
    if (observer_) observer_->on_round_end(*this, round);
    now_ = latest_clock() + 1;
    ++rounds_completed_;
}

void Federation::record_round(std::uint32_t round, const FabricStats& before, Micros started) {
    const FabricStats delta = fabric_.snapshot_stats().since(before);
    const Micros ended = latest_clock();
    const Micros wall = std::max<Micros>(1, ended - started);
    for (const auto& [id, n] : nodes_) {
        auto it = controller_->reports().find({round, id});
        if (it == controller_->reports().end()) continue;  // a gap, not an interpolation
        const auto& rep = it->second;
        const LinkStats sent = delta.sent_by(id);
        const LinkStats recv = delta.received_by(id);
        LedgerRow row;
        row.node = id;
        row.round = round;
        if (n->history().back().evaluated) {
            row.f1 = rep.f1;
            row.loss = rep.loss;
        }
        row.bytes_sent = sent.bytes_sent;
        row.bytes_received = recv.bytes_received;
        row.throughput_mbps = static_cast<double>(recv.bytes_received) * 8.0 / static_cast<double>(wall);
        if (!recv.latency_samples.empty()) {
            double sum = 0.0;
            for (auto l : recv.latency_samples) sum += static_cast<double>(l);
            row.latency_ms = sum / static_cast<double>(recv.latency_samples.size()) / 1000.0;
        }
        if (sent.frames_sent > 0) {
            row.loss_pct = 100.0 * static_cast<double>(sent.frames_lost) / static_cast<double>(sent.frames_sent);
        }
        if (sent.bytes_sent > 0) {
            row.ctrl_overhead_pct =
                100.0 * static_cast<double>(sent.control_bytes) / static_cast<double>(sent.bytes_sent);
        }
        row.active_ms = rep.active_ms;
        row.wall_ms = us_to_ms(wall);
        ledger_.append(row);
    }
}

RunReport Federation::report() const {
    const auto total = fabric_.snapshot_stats().total();
    return collect_metrics(plan_.name, ledger_, active_nodes(), rounds_completed_, total.bytes_sent,
                           total.control_bytes);
}

}  // namespace dflshield
