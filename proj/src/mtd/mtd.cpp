#include "dflshield/mtd/mtd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dflshield {

void NeighborPool::validate() const {
    if (sample_size == 0) throw std::invalid_argument("neighbor sample size must be >= 1");
    if (sample_size > all.size()) {
        throw std::invalid_argument("neighbor sample size " + std::to_string(sample_size) + " exceeds pool of " +
                                    std::to_string(all.size()));
    }
    std::set<NodeId> uniq(all.begin(), all.end());
    if (uniq.size() != all.size()) throw std::invalid_argument("neighbor pool has duplicate ids");
}

std::vector<NodeId> mtd_select_neighbors(const NeighborPool& pool, Rng& rng) {
    pool.validate();
    std::vector<NodeId> ids = pool.all;
    std::sort(ids.begin(), ids.end());
    // partial Fisher-Yates: the first n slots end up a uniform n-subset
    const std::size_t n = pool.sample_size;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = i + rng.uniform_index(ids.size() - i);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(n);
    std::sort(ids.begin(), ids.end());
    return ids;
}

double all_inside_probability(std::size_t k, std::size_t m, std::size_t n) {
    if (n > k || n > m) return 0.0;
    // prod_{i<n} (k - i) / (m - i)
    double p = 1.0;
    for (std::size_t i = 0; i < n; ++i) p *= static_cast<double>(k - i) / static_cast<double>(m - i);
    return p;
}

Bytes RendezvousNotice::serialize() const {
    ByteWriter w(kWireBytes);
    w.u32(node);
    w.u32(new_address.ip);
    w.u16(new_address.port);
    w.u32(effective_epoch);
    w.u64(static_cast<std::uint64_t>(switch_at_ms));
    return std::move(w).take();
}

RendezvousNotice RendezvousNotice::parse(ByteView data) {
    if (data.size() != kWireBytes) throw DecodeError("rendezvous notice has wrong length");
    ByteReader r(data);
    RendezvousNotice n;
    n.node = r.u32();
    n.new_address.ip = r.u32();
    n.new_address.port = r.u16();
    n.effective_epoch = r.u32();
    n.switch_at_ms = static_cast<std::int64_t>(r.u64());
    return n;
}

AddressBook::AddressBook(NodeId self, PeerAddress self_binding) : self_(self), self_entry_{self_binding, 0} {}

PeerAddress AddressBook::self_binding() const {
    std::lock_guard lock(mu_);
    return self_entry_.address;
}

std::uint32_t AddressBook::self_epoch() const {
    std::lock_guard lock(mu_);
    return self_entry_.epoch;
}

void AddressBook::set_self_binding(PeerAddress addr, std::uint32_t epoch) {
    std::lock_guard lock(mu_);
    self_entry_ = {addr, epoch};
}

void AddressBook::set(NodeId node, PeerAddress addr, std::uint32_t epoch) {
    std::lock_guard lock(mu_);
    entries_[node] = {addr, epoch};
}

std::optional<PeerAddress> AddressBook::lookup(NodeId node) const {
    std::lock_guard lock(mu_);
    if (node == self_) return self_entry_.address;
    auto it = entries_.find(node);
    if (it == entries_.end()) return std::nullopt;
    return it->second.address;
}

std::optional<AddressBook::Entry> AddressBook::entry(NodeId node) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(node);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

std::optional<NodeId> AddressBook::owner_of(const PeerAddress& addr) const {
    std::lock_guard lock(mu_);
    for (const auto& [id, e] : entries_) {
        if (e.address == addr) return id;
    }
    return std::nullopt;
}

std::vector<NodeId> AddressBook::peers() const {
    std::lock_guard lock(mu_);
    std::vector<NodeId> out;
    out.reserve(entries_.size());
    for (const auto& [id, _] : entries_) out.push_back(id);
    return out;
}

RendezvousOutcome AddressBook::apply(const RendezvousNotice& notice) {
    std::lock_guard lock(mu_);
    auto it = entries_.find(notice.node);
    if (it == entries_.end()) return RendezvousOutcome::unknown_node;
    if (notice.effective_epoch <= it->second.epoch) return RendezvousOutcome::stale;
    it->second = {notice.new_address, notice.effective_epoch};
    return RendezvousOutcome::applied;
}

AddressPool AddressPool::range(std::uint32_t first_ip, std::size_t ip_count, std::uint16_t first_port,
                               std::size_t port_count) {
    AddressPool p;
    for (std::size_t i = 0; i < ip_count; ++i) p.ips.push_back(first_ip + static_cast<std::uint32_t>(i));
    for (std::size_t i = 0; i < port_count; ++i) p.ports.push_back(static_cast<std::uint16_t>(first_port + i));
    return p;
}

void AddressPool::validate() const {
    if (std::set<std::uint32_t>(ips.begin(), ips.end()).size() != ips.size() ||
        std::set<std::uint16_t>(ports.begin(), ports.end()).size() != ports.size()) {
        throw std::invalid_argument("address pool has duplicates");
    }
    for (auto ip : ips) {
        if (ip == 0) throw std::invalid_argument("address pool contains 0.0.0.0");
    }
    for (auto port : ports) {
        if (port < PeerAddress::kMinPort) throw std::invalid_argument("address pool port below 1024");
    }
}

std::optional<Rotation> mtd_rotate_address(const AddressBook& book, const AddressPool& pool, Rng& rng,
                                           std::int64_t switch_at_ms, const std::set<PeerAddress>& exclude) {
    pool.validate();
    const PeerAddress current = book.self_binding();
    auto blocked = [&](const PeerAddress& a) { return a == current || exclude.count(a) > 0 || !a.valid(); };

    std::size_t allowed = 0;
    std::size_t excluded_in_pool = 0;
    for (const auto& a : exclude) {
        if (a != current && std::count(pool.ips.begin(), pool.ips.end(), a.ip) &&
            std::count(pool.ports.begin(), pool.ports.end(), a.port)) {
            ++excluded_in_pool;
        }
    }
    bool current_in_pool = std::count(pool.ips.begin(), pool.ips.end(), current.ip) &&
                           std::count(pool.ports.begin(), pool.ports.end(), current.port);
    allowed = pool.size() - excluded_in_pool - (current_in_pool ? 1 : 0);
    if (allowed == 0) return std::nullopt;

    // rejection sampling is uniform over the allowed set
    PeerAddress next;
    for (;;) {
        next.ip = pool.ips[rng.uniform_index(pool.ips.size())];
        next.port = pool.ports[rng.uniform_index(pool.ports.size())];
        if (!blocked(next)) break;
    }
    Rotation r;
    r.next = next;
    r.notice = RendezvousNotice{book.self(), next, book.self_epoch() + 1, switch_at_ms};
    return r;
}

}  // namespace dflshield
