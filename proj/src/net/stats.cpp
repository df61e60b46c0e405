#include "dflshield/net/stats.hpp"

#include <cstdio>
#include <numeric>

namespace dflshield {

LinkStats& LinkStats::operator+=(const LinkStats& o) {
    bytes_sent += o.bytes_sent;
    bytes_received += o.bytes_received;
    frames_sent += o.frames_sent;
    frames_received += o.frames_received;
    frames_lost += o.frames_lost;
    control_bytes += o.control_bytes;
    latency_samples.insert(latency_samples.end(), o.latency_samples.begin(), o.latency_samples.end());
    return *this;
}

LinkStats LinkStats::since(const LinkStats& e) const {
    LinkStats d;
    d.bytes_sent = bytes_sent - e.bytes_sent;
    d.bytes_received = bytes_received - e.bytes_received;
    d.frames_sent = frames_sent - e.frames_sent;
    d.frames_received = frames_received - e.frames_received;
    d.frames_lost = frames_lost - e.frames_lost;
    d.control_bytes = control_bytes - e.control_bytes;
    if (latency_samples.size() > e.latency_samples.size()) {
        d.latency_samples.assign(latency_samples.begin() + static_cast<std::ptrdiff_t>(e.latency_samples.size()),
                                 latency_samples.end());
    }
    return d;
}

LinkMetrics derive_metrics(const LinkStats& s, Micros window) {
    LinkMetrics m;
    if (window > 0) {
        m.throughput_mbps = static_cast<double>(s.bytes_received) * 8.0 / static_cast<double>(window);
    }
    if (!s.latency_samples.empty()) {
        auto sum = std::accumulate(s.latency_samples.begin(), s.latency_samples.end(), Micros{0});
        m.mean_latency_ms = us_to_ms(sum) / static_cast<double>(s.latency_samples.size());
    }
    if (s.frames_sent > 0) {
        m.loss_pct = 100.0 * static_cast<double>(s.frames_lost) / static_cast<double>(s.frames_sent);
    }
    if (s.bytes_sent > 0) {
        m.control_overhead_pct = 100.0 * static_cast<double>(s.control_bytes) / static_cast<double>(s.bytes_sent);
    }
    return m;
}

LinkStats FabricStats::total() const {
    LinkStats t;
    for (const auto& [_, s] : links) t += s;
    return t;
}

LinkStats FabricStats::sent_by(NodeId node) const {
    LinkStats t;
    for (const auto& [k, s] : links) {
        if (k.first == node) t += s;
    }
    return t;
}

LinkStats FabricStats::received_by(NodeId node) const {
    LinkStats t;
    for (const auto& [k, s] : links) {
        if (k.second == node) t += s;
    }
    return t;
}

FabricStats FabricStats::since(const FabricStats& earlier) const {
    FabricStats d;
    for (const auto& [k, s] : links) {
        auto it = earlier.links.find(k);
        d.links[k] = it == earlier.links.end() ? s : s.since(it->second);
    }
    return d;
}

StatsRecorder::Counters& StatsRecorder::at(NodeId src, NodeId dst) {
    std::lock_guard lock(mu_);
    auto& slot = links_[{src, dst}];
    if (!slot) slot = std::make_unique<Counters>();
    return *slot;
}

void StatsRecorder::on_send(NodeId src, NodeId dst, FrameKind kind, std::size_t bytes) {
    auto& c = at(src, dst);
    c.bytes_sent += bytes;
    c.frames_sent += 1;
    if (is_control(kind)) c.control_bytes += bytes;
}

void StatsRecorder::on_deliver(NodeId src, NodeId dst, std::size_t bytes, Micros latency) {
    auto& c = at(src, dst);
    c.bytes_received += bytes;
    c.frames_received += 1;
    std::lock_guard lock(c.latency_mu);
    c.latency.push_back(latency);
}

void StatsRecorder::on_loss(NodeId src, NodeId dst) { at(src, dst).frames_lost += 1; }

FabricStats StatsRecorder::snapshot() const {
    std::lock_guard lock(mu_);
    FabricStats out;
    for (const auto& [k, c] : links_) {
        LinkStats s;
        s.bytes_sent = c->bytes_sent;
        s.bytes_received = c->bytes_received;
        s.frames_sent = c->frames_sent;
        s.frames_received = c->frames_received;
        s.frames_lost = c->frames_lost;
        s.control_bytes = c->control_bytes;
        std::lock_guard lat(c->latency_mu);
        s.latency_samples = c->latency;
        out.links.emplace(k, std::move(s));
    }
    return out;
}

void StatsRecorder::reset() {
    std::lock_guard lock(mu_);
    links_.clear();
}

void write_links_csv(std::ostream& out, const FabricStats& stats) {
    out << "link,src,dst,bytes_sent,bytes_recv,frames_lost,mean_latency_ms,control_bytes\n";
    char buf[32];
    for (const auto& [k, s] : stats.links) {
        auto m = derive_metrics(s, 0);
        std::snprintf(buf, sizeof buf, "%.3f", m.mean_latency_ms);
        out << k.first << "->" << k.second << ',' << k.first << ',' << k.second << ',' << s.bytes_sent << ','
            << s.bytes_received << ',' << s.frames_lost << ',' << buf << ',' << s.control_bytes << '\n';
    }
}

std::map<LinkKey, double> communication_frequency(const std::vector<FrameRecord>& records) {
    std::map<LinkKey, std::size_t> counts;
    for (const auto& r : records) ++counts[{r.src, r.dst}];
    std::map<LinkKey, double> out;
    if (records.empty()) return out;
    for (const auto& [k, n] : counts) out[k] = static_cast<double>(n) / static_cast<double>(records.size());
    return out;
}

}  // namespace dflshield
