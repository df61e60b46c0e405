#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <vector>

#include "dflshield/net/fabric.hpp"
#include "dflshield/util/rng.hpp"

namespace dflshield {

/// Deterministic in-process router on virtual time.
///
/// Every sender draws latency and loss from its own generator, links are
/// FIFO, and inboxes are ordered by (deliver_at, sender, sender seq), so the
/// outcome does not depend on how sender threads interleave as long as all
/// sends that can land before a receive are issued before that receive.
class SimFabric final : public Fabric {
public:
    explicit SimFabric(FabricConfig cfg);
    ~SimFabric() override;

    std::unique_ptr<Endpoint> bind(NodeId owner, const PeerAddress& addr, Clock& clock) override;
    bool is_bound(const PeerAddress& addr, Micros at) const override;

    FabricStats snapshot_stats() const override { return stats_.snapshot(); }
    std::vector<FrameRecord> frame_log() const override;

    void set_interceptor(Interceptor fn) override;
    void add_tap(Tap fn) override;

    const FabricConfig& config() const override { return cfg_; }

    /// Privileged transmit for attack code: any claimed source address.
    SendReceipt inject(NodeId actor, const PeerAddress& claimed_src, const PeerAddress& to, const Frame& f,
                       Micros at);

    struct Inbox;

private:
    friend class SimEndpoint;

    struct Binding {
        std::shared_ptr<Inbox> inbox;
        NodeId owner = 0;
        Micros expires_at = INT64_MAX;  // finite once retired
    };

    SendReceipt transmit(NodeId actor, const PeerAddress& src_addr, const PeerAddress& to, const Frame& f,
                         Micros sent_at);
    void rebind(Inbox& inbox, const PeerAddress& next, Micros now);
    void release(Inbox& inbox);
    Micros sample_latency(Rng& rng, std::size_t bytes) const;
    std::shared_ptr<Binding> lookup(const PeerAddress& addr, Micros at) const;

    FabricConfig cfg_;
    StatsRecorder stats_;

    mutable std::mutex mu_;
    std::map<PeerAddress, std::shared_ptr<Binding>> bindings_;
    std::map<NodeId, std::unique_ptr<Rng>> rngs_;
    std::map<NodeId, std::uint64_t> seqs_;
    std::map<LinkKey, Micros> last_delivery_;
    std::vector<FrameRecord> log_;
    Interceptor interceptor_;
    std::vector<Tap> taps_;
};

}  // namespace dflshield
