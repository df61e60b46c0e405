#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "dflshield/net/frame.hpp"
#include "dflshield/net/stats.hpp"
#include "dflshield/util/clock.hpp"

namespace dflshield {

enum class Backend : std::uint8_t { simulated, tcp };

struct FabricConfig {
    Backend backend = Backend::simulated;
    double latency_mean_ms = 20.0;
    double latency_jitter_ms = 5.0;
    double loss_rate = 0.0;
    double bandwidth_mbps = 100.0;
    std::size_t max_frame = 16u << 20;
    std::uint64_t seed = 0;

    void validate() const;
    /// How long a released address keeps accepting after a rotation.
    Micros rebind_grace() const { return ms_to_us(2.0 * latency_mean_ms); }

    bool operator==(const FabricConfig&) const = default;
};

class AddressInUse : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Destination has no live binding (stale address book).
class RoutingError : public std::runtime_error {
public:
    RoutingError(PeerAddress to, const std::string& msg) : std::runtime_error(msg), to_(to) {}
    PeerAddress destination() const { return to_; }

private:
    PeerAddress to_;
};

class ChannelClosed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ReceivedFrame {
    Frame frame;
    PeerAddress from;
    /// Transmitting node as seen by the fabric. Under spoofing this differs
    /// from whoever owns `from`; nodes must not rely on it for identity.
    NodeId transmitter = 0;
    Micros sent_at = 0;
    Micros delivered_at = 0;
};

struct SendReceipt {
    bool delivered = false;  // false: lost or dropped in transit
    Micros deliver_at = 0;
};

class Endpoint {
public:
    virtual ~Endpoint() = default;

    virtual NodeId owner() const = 0;
    virtual PeerAddress address() const = 0;

    /// Throws FrameTooLarge before transmission, RoutingError for an unbound
    /// destination.
    virtual SendReceipt send(const PeerAddress& to, const Frame& f) = 0;

    /// Next frame that arrives by `deadline` (absolute, on this endpoint's
    /// clock); nullopt on timeout. Throws ChannelClosed once closed.
    virtual std::optional<ReceivedFrame> recv_until(Micros deadline) = 0;
    std::optional<ReceivedFrame> recv(Micros timeout) { return recv_until(clock().now() + timeout); }

    /// Move to a new address. The old one keeps delivering here for the
    /// fabric's grace period. Throws AddressInUse.
    virtual void rebind(const PeerAddress& next) = 0;

    virtual void close() = 0;
    virtual Clock& clock() const = 0;
};

/// What an interceptor wants done with a frame in transit.
struct InterceptVerdict {
    enum class Action : std::uint8_t { deliver, drop, redirect } action = Action::deliver;
    PeerAddress redirect_to{};

    static InterceptVerdict deliver() { return {}; }
    static InterceptVerdict drop() { return {Action::drop, {}}; }
    static InterceptVerdict redirect(PeerAddress to) { return {Action::redirect, to}; }
};

using Interceptor = std::function<InterceptVerdict(const FrameRecord&, const Frame&)>;
using Tap = std::function<void(const FrameRecord&, const Frame&)>;

class Fabric {
public:
    virtual ~Fabric() = default;

    virtual std::unique_ptr<Endpoint> bind(NodeId owner, const PeerAddress& addr, Clock& clock) = 0;
    virtual bool is_bound(const PeerAddress& addr, Micros at) const = 0;

    virtual FabricStats snapshot_stats() const = 0;
    /// Metadata log ordered by (sent_at, src, seq).
    virtual std::vector<FrameRecord> frame_log() const = 0;

    /// Active man-in-the-middle hook; one at a time.
    virtual void set_interceptor(Interceptor fn) = 0;
    /// Passive observers; see every transmitted frame.
    virtual void add_tap(Tap fn) = 0;

    virtual const FabricConfig& config() const = 0;
};

std::unique_ptr<Fabric> make_fabric(const FabricConfig& cfg);

}  // namespace dflshield
