#pragma once

#include "dflshield/controller/federation.hpp"
#include "dflshield/net/sim_fabric.hpp"

namespace dflshield::testing {

inline std::vector<DatasetSplit> blob_shards(std::size_t nodes, std::size_t per_node, std::uint64_t seed) {
    BlobSpec spec;
    spec.classes = 4;
    spec.dim = 8;
    spec.samples = nodes * per_node;
    auto data = make_blobs(spec, seed);
    auto s = split(data, 0.8, seed + 1);
    auto train = partition(s.train, nodes, seed + 2);
    auto test = partition(s.test, nodes, seed + 3);
    std::vector<DatasetSplit> out;
    for (std::size_t i = 0; i < nodes; ++i) out.push_back({train[i], test[i]});
    return out;
}

inline FederationPlan small_plan(std::size_t nodes, SecuritySetting security, TopologyKind topology, int rounds,
                                 std::uint64_t seed = 11) {
    FederationPlan p;
    p.name = std::string(to_string(security));
    p.security = security;
    p.node_count = nodes;
    p.topology = topology;
    p.architecture = ModelArchitecture{{8, 12, 4}, Activation::relu, OutputKind::softmax};
    p.train.learning_rate = 0.05;
    p.train.rounds = rounds;
    p.node_data = blob_shards(nodes, 100, seed);
    p.seed = seed;
    p.rsa_bits = 1024;
    p.address_pool = default_address_pool(nodes);
    return p;
}

inline FabricConfig sim_config(std::uint64_t seed = 5, double loss = 0.0) {
    FabricConfig f;
    f.seed = seed;
    f.loss_rate = loss;
    return f;
}

}  // namespace dflshield::testing
