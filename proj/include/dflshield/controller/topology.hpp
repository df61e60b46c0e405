#pragma once

#include <optional>
#include <set>
#include <string_view>
#include <utility>
#include <vector>

#include "dflshield/util/types.hpp"

namespace dflshield {

enum class TopologyKind : std::uint8_t { random, ring, fully_connected };

std::string_view to_string(TopologyKind k);
std::optional<TopologyKind> parse_topology(std::string_view s);

/// Undirected participant graph G(V, E). Edges are stored as (low, high).
struct TopologyGraph {
    std::vector<NodeId> vertices;
    std::set<std::pair<NodeId, NodeId>> edges;
    TopologyKind kind = TopologyKind::random;
    double edge_probability = 0.5;

    /// Random(p) draws every pair independently, then joins components with
    /// bridging edges until the graph is connected.
    static TopologyGraph generate(std::vector<NodeId> vertices, TopologyKind kind, double p, std::uint64_t seed);

    bool has_edge(NodeId a, NodeId b) const;
    std::vector<NodeId> neighbors(NodeId v) const;
    bool connected() const;
    bool fully_connected() const;
    /// Drops a vertex and its edges; the rest is reconnected with the same
    /// bridging rule so the graph stays connected.
    void remove_vertex(NodeId v, std::uint64_t seed);
};

}  // namespace dflshield
