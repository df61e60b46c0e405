#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <utility>
#include <vector>

#include "dflshield/net/frame.hpp"
#include "dflshield/util/clock.hpp"
#include "dflshield/util/types.hpp"

namespace dflshield {

/// Counters for one ordered (src, dst) pair.
struct LinkStats {
    std::uint64_t bytes_sent = 0;
    std::uint64_t bytes_received = 0;
    std::uint64_t frames_sent = 0;
    std::uint64_t frames_received = 0;
    std::uint64_t frames_lost = 0;
    std::uint64_t control_bytes = 0;
    std::vector<Micros> latency_samples;

    LinkStats& operator+=(const LinkStats& o);
    /// Counter-wise difference; latency samples past `earlier`'s count.
    LinkStats since(const LinkStats& earlier) const;
};

struct LinkMetrics {
    double throughput_mbps = 0.0;
    double mean_latency_ms = 0.0;
    double loss_pct = 0.0;
    double control_overhead_pct = 0.0;
};

/// Zero denominators give zeros. Throughput is received bits over `window`.
LinkMetrics derive_metrics(const LinkStats& s, Micros window);

using LinkKey = std::pair<NodeId, NodeId>;

struct FabricStats {
    std::map<LinkKey, LinkStats> links;

    LinkStats total() const;
    /// Links whose source is `node`, merged.
    LinkStats sent_by(NodeId node) const;
    LinkStats received_by(NodeId node) const;
    FabricStats since(const FabricStats& earlier) const;
};

/// Shared, thread-safe accumulator. Counters are atomics so senders on
/// different threads can record without contending on one lock.
class StatsRecorder {
public:
    void on_send(NodeId src, NodeId dst, FrameKind kind, std::size_t bytes);
    void on_deliver(NodeId src, NodeId dst, std::size_t bytes, Micros latency);
    void on_loss(NodeId src, NodeId dst);
    FabricStats snapshot() const;
    void reset();

private:
    struct Counters {
        std::atomic<std::uint64_t> bytes_sent{0}, bytes_received{0}, frames_sent{0}, frames_received{0},
            frames_lost{0}, control_bytes{0};
        std::mutex latency_mu;
        std::vector<Micros> latency;
    };
    Counters& at(NodeId src, NodeId dst);

    mutable std::mutex mu_;
    std::map<LinkKey, std::unique_ptr<Counters>> links_;
};

/// CSV: link,src,dst,bytes_sent,bytes_recv,frames_lost,mean_latency_ms,control_bytes
void write_links_csv(std::ostream& out, const FabricStats& stats);

/// Metadata of one transmitted frame; never holds payload bytes.
struct FrameRecord {
    Micros sent_at = 0;
    Micros deliver_at = 0;
    NodeId src = 0;
    NodeId dst = 0;
    std::uint64_t seq = 0;
    PeerAddress src_addr;
    PeerAddress dst_addr;
    FrameKind kind = FrameKind::control;
    std::uint32_t correlation_id = 0;
    std::size_t bytes = 0;
    bool lost = false;
    bool intercepted = false;

    auto order_key() const { return std::tuple(sent_at, src, seq); }
};

/// F_ij: share of frames flowing from i to j. Sums to 1 over pairs with traffic.
std::map<LinkKey, double> communication_frequency(const std::vector<FrameRecord>& records);

}  // namespace dflshield
