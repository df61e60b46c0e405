#include "dflshield/controller/topology.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "dflshield/util/rng.hpp"

namespace dflshield {

namespace {

std::pair<NodeId, NodeId> edge_key(NodeId a, NodeId b) { return {std::min(a, b), std::max(a, b)}; }

/// Component label per vertex (the smallest id in the component).
std::map<NodeId, NodeId> components(const TopologyGraph& g) {
    std::map<NodeId, NodeId> parent;
    for (auto v : g.vertices) parent[v] = v;
    auto find = [&](NodeId v) {
        while (parent[v] != v) {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        return v;
    };
    for (const auto& [a, b] : g.edges) {
        auto ra = find(a), rb = find(b);
        if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    std::map<NodeId, NodeId> label;
    for (auto v : g.vertices) label[v] = find(v);
    return label;
}

void bridge_components(TopologyGraph& g, Rng& rng) {
    for (;;) {
        auto label = components(g);
        std::map<NodeId, std::vector<NodeId>> groups;
        for (const auto& [v, c] : label) groups[c].push_back(v);
        if (groups.size() <= 1) return;
        // join the first component to a random vertex of the second
        auto it = groups.begin();
        const auto& a = it->second;
        const auto& b = std::next(it)->second;
        NodeId u = a[rng.uniform_index(a.size())];
        NodeId w = b[rng.uniform_index(b.size())];
        g.edges.insert(edge_key(u, w));
    }
}

}  // namespace

std::string_view to_string(TopologyKind k) {
    switch (k) {
        case TopologyKind::random: return "random";
        case TopologyKind::ring: return "ring";
        case TopologyKind::fully_connected: return "fully_connected";
    }
    return "unknown";
}

std::optional<TopologyKind> parse_topology(std::string_view s) {
    if (s == "random") return TopologyKind::random;
    if (s == "ring") return TopologyKind::ring;
    if (s == "fully_connected" || s == "full" || s == "fully-connected") return TopologyKind::fully_connected;
    return std::nullopt;
}

TopologyGraph TopologyGraph::generate(std::vector<NodeId> vertices, TopologyKind kind, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("edge probability must be in [0, 1]");
    std::sort(vertices.begin(), vertices.end());
    if (std::adjacent_find(vertices.begin(), vertices.end()) != vertices.end()) {
        throw std::invalid_argument("duplicate vertex ids");
    }
    TopologyGraph g;
    g.vertices = std::move(vertices);
    g.kind = kind;
    g.edge_probability = p;
    const auto n = g.vertices.size();
    Rng rng(seed);
    switch (kind) {
        case TopologyKind::fully_connected:
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) g.edges.insert({g.vertices[i], g.vertices[j]});
            }
            break;
        case TopologyKind::ring:
            for (std::size_t i = 0; n > 1 && i < n; ++i) {
                auto a = g.vertices[i], b = g.vertices[(i + 1) % n];
                if (a != b) g.edges.insert(edge_key(a, b));
            }
            break;
        case TopologyKind::random:
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    if (rng.bernoulli(p)) g.edges.insert({g.vertices[i], g.vertices[j]});
                }
            }
            bridge_components(g, rng);
            break;
    }
    return g;
}

bool TopologyGraph::has_edge(NodeId a, NodeId b) const { return a != b && edges.count(edge_key(a, b)) > 0; }

std::vector<NodeId> TopologyGraph::neighbors(NodeId v) const {
    std::vector<NodeId> out;
    for (const auto& [a, b] : edges) {
        if (a == v) out.push_back(b);
        if (b == v) out.push_back(a);
    }
    std::sort(out.begin(), out.end());
    return out;
}

bool TopologyGraph::connected() const {
    if (vertices.size() <= 1) return true;
    auto label = components(*this);
    return std::all_of(label.begin(), label.end(), [&](const auto& kv) { return kv.second == label.begin()->second; });
}

bool TopologyGraph::fully_connected() const {
    const auto n = vertices.size();
    return edges.size() == n * (n - 1) / 2;
}

void TopologyGraph::remove_vertex(NodeId v, std::uint64_t seed) {
    auto it = std::find(vertices.begin(), vertices.end(), v);
    if (it == vertices.end()) return;
    vertices.erase(it);
    for (auto e = edges.begin(); e != edges.end();) {
        if (e->first == v || e->second == v) {
            e = edges.erase(e);
        } else {
            ++e;
        }
    }
    Rng rng(seed);
    bridge_components(*this, rng);
}

}  // namespace dflshield
