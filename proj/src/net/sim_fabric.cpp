#include "dflshield/net/sim_fabric.hpp"

#include <algorithm>
#include <cmath>

namespace dflshield {

struct SimFabric::Inbox {
    struct Entry {
        Micros deliver_at;
        NodeId transmitter;
        std::uint64_t seq;
        ReceivedFrame frame;

        bool operator<(const Entry& o) const {
            return std::tie(deliver_at, transmitter, seq) < std::tie(o.deliver_at, o.transmitter, o.seq);
        }
    };

    std::mutex mu;
    std::set<Entry> queue;
    bool closed = false;
    NodeId owner = 0;
    PeerAddress address;
};

class SimEndpoint final : public Endpoint {
public:
    SimEndpoint(SimFabric& fabric, std::shared_ptr<SimFabric::Inbox> inbox, Clock& clock)
        : fabric_(fabric), inbox_(std::move(inbox)), clock_(clock) {}
    ~SimEndpoint() override { close(); }

    NodeId owner() const override { return inbox_->owner; }
    PeerAddress address() const override {
        std::lock_guard lock(inbox_->mu);
        return inbox_->address;
    }

    SendReceipt send(const PeerAddress& to, const Frame& f) override {
        {
            std::lock_guard lock(inbox_->mu);
            if (inbox_->closed) throw ChannelClosed("endpoint closed");
        }
        return fabric_.transmit(owner(), address(), to, f, clock_.now());
    }

    std::optional<ReceivedFrame> recv_until(Micros deadline) override {
        std::unique_lock lock(inbox_->mu);
        if (inbox_->closed) throw ChannelClosed("endpoint closed");
        if (!inbox_->queue.empty() && inbox_->queue.begin()->deliver_at <= deadline) {
            auto node = inbox_->queue.extract(inbox_->queue.begin());
            lock.unlock();
            clock_.wait_until(node.value().deliver_at);
            return std::move(node.value().frame);
        }
        lock.unlock();
        clock_.wait_until(deadline);
        return std::nullopt;
    }

    void rebind(const PeerAddress& next) override { fabric_.rebind(*inbox_, next, clock_.now()); }

    void close() override {
        {
            std::lock_guard lock(inbox_->mu);
            if (inbox_->closed) return;
            inbox_->closed = true;
            inbox_->queue.clear();
        }
        fabric_.release(*inbox_);
    }

    Clock& clock() const override { return clock_; }

private:
    SimFabric& fabric_;
    std::shared_ptr<SimFabric::Inbox> inbox_;
    Clock& clock_;
};

void FabricConfig::validate() const {
    if (!(loss_rate >= 0.0 && loss_rate < 1.0)) throw std::invalid_argument("loss rate must be in [0, 1)");
    if (!(latency_mean_ms >= 0.0) || !(latency_jitter_ms >= 0.0)) {
        throw std::invalid_argument("latency parameters must be non-negative");
    }
    if (!(bandwidth_mbps > 0.0)) throw std::invalid_argument("bandwidth must be positive");
    if (max_frame < kFrameHeaderBytes) throw std::invalid_argument("max_frame too small");
}

SimFabric::SimFabric(FabricConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

SimFabric::~SimFabric() = default;

std::shared_ptr<SimFabric::Binding> SimFabric::lookup(const PeerAddress& addr, Micros at) const {
    auto it = bindings_.find(addr);
    if (it == bindings_.end() || at >= it->second->expires_at) return nullptr;
    return it->second;
}

std::unique_ptr<Endpoint> SimFabric::bind(NodeId owner, const PeerAddress& addr, Clock& clock) {
    if (!addr.valid()) throw std::invalid_argument("invalid address " + addr.to_string());
    auto inbox = std::make_shared<Inbox>();
    inbox->owner = owner;
    inbox->address = addr;
    {
        std::lock_guard lock(mu_);
        if (lookup(addr, clock.now())) throw AddressInUse("address in use: " + addr.to_string());
        bindings_[addr] = std::make_shared<Binding>(Binding{inbox, owner, INT64_MAX});
    }
    return std::make_unique<SimEndpoint>(*this, inbox, clock);
}

bool SimFabric::is_bound(const PeerAddress& addr, Micros at) const {
    std::lock_guard lock(mu_);
    return lookup(addr, at) != nullptr;
}

void SimFabric::rebind(Inbox& inbox, const PeerAddress& next, Micros now) {
    if (!next.valid()) throw std::invalid_argument("invalid address " + next.to_string());
    std::lock_guard lock(mu_);
    PeerAddress current;
    {
        std::lock_guard ilock(inbox.mu);
        current = inbox.address;
    }
    if (next == current) return;
    if (lookup(next, now)) throw AddressInUse("address in use: " + next.to_string());
    auto it = bindings_.find(current);
    if (it == bindings_.end()) throw ChannelClosed("endpoint not bound");
    auto shared_inbox = it->second->inbox;
    it->second->expires_at = now + cfg_.rebind_grace();
    bindings_[next] = std::make_shared<Binding>(Binding{shared_inbox, inbox.owner, INT64_MAX});
    std::lock_guard ilock(inbox.mu);
    inbox.address = next;
}

void SimFabric::release(Inbox& inbox) {
    std::lock_guard lock(mu_);
    for (auto it = bindings_.begin(); it != bindings_.end();) {
        if (it->second->inbox.get() == &inbox) {
            it = bindings_.erase(it);
        } else {
            ++it;
        }
    }
}

Micros SimFabric::sample_latency(Rng& rng, std::size_t bytes) const {
    const double mean = cfg_.latency_mean_ms;
    const double jitter = cfg_.latency_jitter_ms;
    double ms = mean;
    if (jitter > 0.0) {
        // truncated to [0.1 * mean, mean + 4 * jitter]
        const double lo = 0.1 * mean;
        const double hi = mean + 4.0 * jitter;
        ms = rng.normal(mean, jitter);
        for (int i = 0; i < 16 && (ms < lo || ms > hi); ++i) ms = rng.normal(mean, jitter);
        ms = std::clamp(ms, lo, hi);
    }
    double transfer_us = static_cast<double>(bytes) * 8.0 / cfg_.bandwidth_mbps;
    return std::max<Micros>(1, std::llround(ms * 1000.0 + transfer_us));
}

SendReceipt SimFabric::transmit(NodeId actor, const PeerAddress& src_addr, const PeerAddress& to, const Frame& f,
                                Micros sent_at) {
    const std::size_t bytes = f.wire_size();
    if (bytes > cfg_.max_frame) {
        throw FrameTooLarge("frame of " + std::to_string(bytes) + " bytes exceeds max_frame");
    }
    FrameRecord rec;
    bool lost = false;
    Micros latency = 0;
    Interceptor interceptor;
    {
        std::lock_guard lock(mu_);
        auto binding = lookup(to, sent_at);
        if (!binding) throw RoutingError(to, "no endpoint bound at " + to.to_string());
        auto& rng_slot = rngs_[actor];
        if (!rng_slot) rng_slot = std::make_unique<Rng>(derive_seed(cfg_.seed, seed_stream::link_base + actor));
        lost = rng_slot->bernoulli(cfg_.loss_rate);
        latency = sample_latency(*rng_slot, bytes);
        rec.sent_at = sent_at;
        rec.src = actor;
        rec.dst = binding->owner;
        rec.seq = seqs_[actor]++;
        rec.src_addr = src_addr;
        rec.dst_addr = to;
        rec.kind = f.kind;
        rec.correlation_id = f.correlation_id;
        rec.bytes = bytes;
        interceptor = interceptor_;
    }

    stats_.on_send(rec.src, rec.dst, f.kind, bytes);
    InterceptVerdict verdict = interceptor ? interceptor(rec, f) : InterceptVerdict::deliver();

    SendReceipt receipt;
    std::vector<Tap> taps;
    {
        std::lock_guard lock(mu_);
        std::shared_ptr<Binding> target;
        if (verdict.action == InterceptVerdict::Action::drop) {
            rec.intercepted = true;
        } else {
            PeerAddress dest = to;
            if (verdict.action == InterceptVerdict::Action::redirect) {
                rec.intercepted = true;
                dest = verdict.redirect_to;
            }
            target = lookup(dest, sent_at);
        }
        rec.lost = lost || !target;
        if (!rec.lost) {
            auto& last = last_delivery_[{rec.src, target->owner}];
            rec.deliver_at = std::max(sent_at + latency, last);
            last = rec.deliver_at;
            SimFabric::Inbox::Entry entry{rec.deliver_at, rec.src, rec.seq,
                                          ReceivedFrame{f, src_addr, rec.src, sent_at, rec.deliver_at}};
            {
                std::lock_guard ilock(target->inbox->mu);
                if (!target->inbox->closed) target->inbox->queue.insert(std::move(entry));
            }
            receipt = {true, rec.deliver_at};
        }
        log_.push_back(rec);
        taps = taps_;
    }
    if (rec.lost) {
        stats_.on_loss(rec.src, rec.dst);
    } else {
        stats_.on_deliver(rec.src, rec.dst, bytes, rec.deliver_at - sent_at);
    }
    for (const auto& tap : taps) tap(rec, f);
    return receipt;
}

SendReceipt SimFabric::inject(NodeId actor, const PeerAddress& claimed_src, const PeerAddress& to, const Frame& f,
                              Micros at) {
    return transmit(actor, claimed_src, to, f, at);
}

std::vector<FrameRecord> SimFabric::frame_log() const {
    std::vector<FrameRecord> out;
    {
        std::lock_guard lock(mu_);
        out = log_;
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.order_key() < b.order_key(); });
    return out;
}

void SimFabric::set_interceptor(Interceptor fn) {
    std::lock_guard lock(mu_);
    interceptor_ = std::move(fn);
}

void SimFabric::add_tap(Tap fn) {
    std::lock_guard lock(mu_);
    taps_.push_back(std::move(fn));
}

}  // namespace dflshield
