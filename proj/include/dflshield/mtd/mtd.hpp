#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <vector>

#include "dflshield/net/frame.hpp"
#include "dflshield/util/rng.hpp"
#include "dflshield/util/types.hpp"

namespace dflshield {

struct NeighborPool {
    std::vector<NodeId> all;
    std::size_t sample_size = 1;

    /// ceil(m / 2), at least 1 for a non-empty pool.
    static std::size_t default_sample_size(std::size_t m) { return m == 0 ? 0 : (m + 1) / 2; }
    /// Throws std::invalid_argument on n = 0, n > |pool| or duplicate ids.
    void validate() const;
};

/// n distinct ids drawn uniformly without replacement. Result is sorted; the
/// draw order depends only on the pool contents, not on their order.
std::vector<NodeId> mtd_select_neighbors(const NeighborPool& pool, Rng& rng);

/// C(k, n) / C(m, n): chance a uniform n-subset of m lands entirely inside a
/// fixed k-subset. Zero when n > k.
double all_inside_probability(std::size_t k, std::size_t m, std::size_t n);

struct RendezvousNotice {
    NodeId node = 0;
    PeerAddress new_address;
    std::uint32_t effective_epoch = 0;
    std::int64_t switch_at_ms = 0;

    static constexpr std::size_t kWireBytes = 4 + 4 + 2 + 4 + 8;
    Bytes serialize() const;
    static RendezvousNotice parse(ByteView data);

    bool operator==(const RendezvousNotice&) const = default;
};

enum class RendezvousOutcome : std::uint8_t { applied, stale, unknown_node };

/// Where every known peer currently lives. Read from the send path and
/// written from the receive path, so every access is locked.
class AddressBook {
public:
    struct Entry {
        PeerAddress address;
        std::uint32_t epoch = 0;
    };

    AddressBook() = default;
    AddressBook(NodeId self, PeerAddress self_binding);

    NodeId self() const { return self_; }
    PeerAddress self_binding() const;
    std::uint32_t self_epoch() const;
    void set_self_binding(PeerAddress addr, std::uint32_t epoch);

    /// Adds or overwrites a peer unconditionally (initial distribution).
    void set(NodeId node, PeerAddress addr, std::uint32_t epoch = 0);
    std::optional<PeerAddress> lookup(NodeId node) const;
    std::optional<Entry> entry(NodeId node) const;
    /// Reverse lookup over current entries.
    std::optional<NodeId> owner_of(const PeerAddress& addr) const;
    std::vector<NodeId> peers() const;

    RendezvousOutcome apply(const RendezvousNotice& notice);

private:
    NodeId self_ = 0;
    mutable std::mutex mu_;
    Entry self_entry_;
    std::map<NodeId, Entry> entries_;
};

inline RendezvousOutcome apply_rendezvous(AddressBook& book, const RendezvousNotice& notice) {
    return book.apply(notice);
}

struct AddressPool {
    std::vector<std::uint32_t> ips;
    std::vector<std::uint16_t> ports;

    std::size_t size() const { return ips.size() * ports.size(); }
    /// Unique entries, no 0.0.0.0, ports >= 1024.
    void validate() const;
    /// Consecutive ips from `first` and ports from `first_port`.
    static AddressPool range(std::uint32_t first_ip, std::size_t ip_count, std::uint16_t first_port,
                             std::size_t port_count);
};

struct Rotation {
    PeerAddress next;
    RendezvousNotice notice;
};

/// Picks a new address uniformly from the pool product minus the current
/// binding and anything in `exclude`. nullopt when nothing is left, in which
/// case the caller keeps its address for the round.
std::optional<Rotation> mtd_rotate_address(const AddressBook& book, const AddressPool& pool, Rng& rng,
                                           std::int64_t switch_at_ms, const std::set<PeerAddress>& exclude = {});

}  // namespace dflshield
