#pragma once

#include <atomic>
#include <deque>
#include <map>
#include <mutex>

#include "dflshield/net/fabric.hpp"

namespace dflshield {

/// Real loopback TCP sockets, one listener per endpoint address and one
/// outbound connection per destination. Each connection opens with a short
/// preamble naming the sender; frames follow with the standard header.
///
/// Latency is measured in-process: the sender queues a timestamp per frame
/// on the connection, the receiving reader pops it when the frame is whole.
class TcpFabric final : public Fabric {
public:
    explicit TcpFabric(FabricConfig cfg);
    ~TcpFabric() override;

    std::unique_ptr<Endpoint> bind(NodeId owner, const PeerAddress& addr, Clock& clock) override;
    bool is_bound(const PeerAddress& addr, Micros at) const override;

    FabricStats snapshot_stats() const override { return stats_.snapshot(); }
    std::vector<FrameRecord> frame_log() const override;

    void set_interceptor(Interceptor fn) override;
    void add_tap(Tap fn) override;

    const FabricConfig& config() const override { return cfg_; }

private:
    friend class TcpEndpoint;

    std::optional<NodeId> owner_of(const PeerAddress& addr) const;
    void register_address(const PeerAddress& addr, NodeId owner);
    void unregister_address(const PeerAddress& addr);

    std::uint64_t open_connection_log();
    void push_send_time(std::uint64_t conn, Micros t);
    Micros pop_send_time(std::uint64_t conn);

    FabricConfig cfg_;
    StatsRecorder stats_;

    mutable std::mutex mu_;
    std::map<PeerAddress, NodeId> live_;
    std::map<std::uint64_t, std::deque<Micros>> in_flight_;
    std::uint64_t next_conn_ = 1;
    std::map<NodeId, std::uint64_t> seqs_;
    std::vector<FrameRecord> log_;
    Interceptor interceptor_;
    std::vector<Tap> taps_;
};

}  // namespace dflshield
