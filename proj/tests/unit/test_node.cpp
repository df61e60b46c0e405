#include <algorithm>
#include <cstring>

#include "doctest.h"
#include "dflshield/crypto/token.hpp"
#include "dflshield/model/fedavg.hpp"
#include "fixtures.hpp"

using namespace dflshield;
using namespace dflshield::testing;

namespace {

struct CapturedFrame {
    FrameRecord rec;
    Frame frame;
};

bool contains_model_magic(const Bytes& body) {
    static const char magic[] = "DFMP";
    return std::search(body.begin(), body.end(), magic, magic + 4) != body.end();
}

class RoundCheck : public RoundObserver {
public:
    std::function<void(Federation&, std::uint32_t)> fn;
    void on_round_end(Federation& f, std::uint32_t r) override { fn(f, r); }
};

}  // namespace

TEST_CASE("single node without neighbours keeps its trained parameters") {
    SimFabric fabric(sim_config());
    ManualClock clock;
    auto shards = blob_shards(1, 200, 3);
    ModelArchitecture arch{{8, 12, 4}, Activation::relu, OutputKind::softmax};
    Rng init(9);
    auto initial = ModelParams::initialize(arch, init);

    NodeConfig cfg;
    cfg.node_id = 0;
    cfg.seed = 77;
    NodeLinks links{{PeerAddress::ipv4(10, 0, 1, 1), 9000}, {PeerAddress::ipv4(10, 0, 0, 1), 7000}, {}, {}, {}};
    Node node(cfg, links, fabric, clock, shards[0].train, shards[0].test, initial);

    auto rec = node.run_round(0);

    Rng order(derive_seed(77, seed_stream::train_order_base + 0));
    auto expected = train_local(initial, shards[0].train, cfg.train, order);
    CHECK(node.params() == expected);
    CHECK(rec.params_received == 0);
    CHECK(rec.starved);
    CHECK(rec.evaluated);
    // liveness: training cost plus the receive timeout, nothing more
    const double macs = 3.0 * static_cast<double>(arch.parameter_count() * shards[0].train.size());
    const double eval_macs = static_cast<double>(arch.parameter_count() * (shards[0].test.size() + 1));
    CHECK(rec.wall_time() <= static_cast<Micros>((macs + eval_macs) / 1000.0) + cfg.receive_timeout + 2);
}

TEST_CASE("two nodes end the round on the closed-form mean") {
    SimFabric fabric(sim_config());
    auto plan = small_plan(2, SecuritySetting::baseline, TopologyKind::fully_connected, 1);
    auto fed = Federation::deploy(plan, fabric);
    fed->run();

    Rng init(derive_seed(plan.seed, seed_stream::model_init));
    auto initial = ModelParams::initialize(plan.architecture, init);
    std::vector<ModelParams> trained;
    for (NodeId i = 0; i < 2; ++i) {
        Rng order(derive_seed(plan.seed, seed_stream::train_order_base + i));
        trained.push_back(train_local(initial, plan.node_data[i].train, plan.train, order));
    }
    auto* a = fed->node(0);
    auto* b = fed->node(1);
    REQUIRE(a->history().size() == 1);
    CHECK(a->history()[0].params_received == 1);
    CHECK(b->history()[0].params_received == 1);
    CHECK(a->params() == b->params());
    auto va = a->params().values();
    for (std::size_t k = 0; k < va.size(); ++k) {
        double mean = (trained[0].values()[k] + trained[1].values()[k]) / 2.0;
        CHECK(std::abs(va[k] - mean) < 1e-12);
    }
}

TEST_CASE("complete graph baseline keeps every node bit-identical each round") {
    SimFabric fabric(sim_config());
    auto plan = small_plan(6, SecuritySetting::baseline, TopologyKind::fully_connected, 4);
    RoundCheck check;
    int rounds_checked = 0;
    check.fn = [&](Federation& f, std::uint32_t) {
        const auto& ref = f.node(0)->params();
        for (auto id : f.active_nodes()) CHECK(f.node(id)->params() == ref);
        ++rounds_checked;
    };
    auto fed = Federation::deploy(plan, fabric, &check);
    fed->run();
    CHECK(rounds_checked == 4);
}

TEST_CASE("sealed model frames open at their addressee and nowhere else") {
    SimFabric fabric(sim_config());
    auto plan = small_plan(4, SecuritySetting::encryption, TopologyKind::fully_connected, 1);
    std::vector<CapturedFrame> frames;
    std::mutex mu;
    fabric.add_tap([&](const FrameRecord& r, const Frame& f) {
        std::lock_guard lock(mu);
        if (f.kind == FrameKind::model_exchange) frames.push_back({r, f});
    });
    auto fed = Federation::deploy(plan, fabric);
    fed->run();
    REQUIRE(frames.size() == 12);
    for (const auto& cf : frames) {
        for (auto id : fed->active_nodes()) {
            CHECK(fed->node(id)->can_open(cf.frame.body) == (id == cf.rec.dst));
        }
    }
    for (auto id : fed->active_nodes()) {
        CHECK(fed->node(id)->history()[0].params_received == 3);
        CHECK(fed->node(id)->history()[0].rejected_frames == 0);
    }
}

TEST_CASE("model bytes appear in the clear only under baseline") {
    for (auto sec : {SecuritySetting::baseline, SecuritySetting::encryption_mtd}) {
        SimFabric fabric(sim_config());
        auto plan = small_plan(4, sec, TopologyKind::fully_connected, 3);
        std::size_t model_frames = 0, plaintext = 0;
        fabric.add_tap([&](const FrameRecord&, const Frame& f) {
            if (f.kind != FrameKind::model_exchange) return;
            ++model_frames;
            if (contains_model_magic(f.body)) ++plaintext;
        });
        auto fed = Federation::deploy(plan, fabric);
        fed->run();
        CHECK(model_frames > 0);
        if (sec == SecuritySetting::baseline) {
            CHECK(plaintext == model_frames);
        } else {
            CHECK(plaintext == 0);
        }
    }
}

TEST_CASE("activity ratio") {
    RoundRecord always;
    always.started_at = 0;
    always.ended_at = 1000;
    always.active_intervals = {{0, 1000}};
    CHECK(compute_activity_ratio(std::vector{always}) == doctest::Approx(1.0).epsilon(1e-12));

    RoundRecord half;
    half.started_at = 0;
    half.ended_at = 60'000'000;
    half.active_intervals = {{0, 30'000'000}};
    CHECK(compute_activity_ratio(std::vector{half}) == doctest::Approx(0.5).epsilon(1e-12));

    // three rounds with gaps: (2 + 1 + 0) + 4 + 0 active over 10 + 10 + 5
    std::vector<RoundRecord> sched(3);
    sched[0] = RoundRecord{};
    sched[0].started_at = 0;
    sched[0].ended_at = 10;
    sched[0].active_intervals = {{0, 2}, {4, 5}, {9, 9}};
    sched[1].started_at = 10;
    sched[1].ended_at = 20;
    sched[1].active_intervals = {{12, 16}};
    sched[2].started_at = 20;
    sched[2].ended_at = 25;
    double expected = (2.0 + 1.0 + 0.0 + 4.0) / 25.0;
    CHECK(std::abs(compute_activity_ratio(sched) - expected) < 1e-9);

    CHECK_THROWS_AS(compute_activity_ratio(std::vector<RoundRecord>{}), std::invalid_argument);
}

TEST_CASE("federation records non-overlapping activity within each round") {
    SimFabric fabric(sim_config());
    auto plan = small_plan(4, SecuritySetting::baseline, TopologyKind::ring, 3);
    auto fed = Federation::deploy(plan, fabric);
    fed->run();
    for (auto id : fed->active_nodes()) {
        const auto& hist = fed->node(id)->history();
        for (const auto& r : hist) {
            Micros prev = r.started_at;
            for (const auto& [a, b] : r.active_intervals) {
                CHECK(a >= prev);
                CHECK(b > a);
                CHECK(b <= r.ended_at);
                prev = b;
            }
            CHECK(r.params_received <= 2);
        }
        double ratio = compute_activity_ratio(hist);
        CHECK(ratio > 0.0);
        CHECK(ratio < 1.0);
    }
}

TEST_CASE("valid credential yields a token for the node") {
    SimFabric fabric(sim_config());
    auto plan = small_plan(3, SecuritySetting::baseline, TopologyKind::ring, 1);
    auto fed = Federation::deploy(plan, fabric);
    for (auto id : fed->active_nodes()) {
        auto check = verify_token(fed->node(id)->token(), fed->controller().signing_public_key(), 0);
        CHECK(check.accepted);
        CHECK(check.subject == id);
        CHECK(check.role == Role::aggregator);
    }
}

TEST_CASE("wrong credential is rejected and the node never joins") {
    SimFabric fabric(sim_config());
    auto plan = small_plan(4, SecuritySetting::encryption, TopologyKind::fully_connected, 2);
    plan.bad_credentials = {2};
    auto fed = Federation::deploy(plan, fabric);
    CHECK(fed->excluded_nodes() == std::vector<NodeId>{2});
    CHECK(fed->node(2) == nullptr);
    auto rec = fed->controller().registry().find(2);
    REQUIRE(rec);
    CHECK_FALSE(rec->authenticated);
    bool logged = false;
    for (const auto& o : fed->controller().auth_log()) {
        if (o.node == 2) {
            CHECK_FALSE(o.accepted);
            CHECK(o.reason == "bad credential");
            logged = true;
        }
    }
    CHECK(logged);
    fed->run();
    for (const auto& r : fabric.frame_log()) {
        if (r.kind == FrameKind::model_exchange) CHECK(r.dst != 2);
    }
    for (auto id : fed->active_nodes()) CHECK(fed->node(id)->history().back().params_received == 2);
}

TEST_CASE("token expiry mid-run costs exactly one auth frame pair per expiry") {
    // measure a round first, then pick a lifetime that lapses once
    Micros round_us = 0;
    {
        SimFabric fabric(sim_config());
        auto plan = small_plan(3, SecuritySetting::encryption, TopologyKind::fully_connected, 2);
        plan.token_ttl_ms = 1'000'000;
        auto fed = Federation::deploy(plan, fabric);
        fed->run();
        round_us = fed->node(0)->history()[1].wall_time();
    }
    SimFabric fabric(sim_config());
    auto plan = small_plan(3, SecuritySetting::encryption, TopologyKind::fully_connected, 6);
    plan.token_ttl_ms = static_cast<std::int64_t>(4.5 * static_cast<double>(round_us) / 1000.0);
    auto fed = Federation::deploy(plan, fabric);
    fed->run();

    for (auto id : fed->active_nodes()) {
        std::size_t requests = 0, responses = 0;
        for (const auto& r : fabric.frame_log()) {
            if (r.kind == FrameKind::auth_request && r.src == id) ++requests;
            if (r.kind == FrameKind::auth_response && r.dst == id) ++responses;
        }
        CHECK(requests == 2);
        CHECK(responses == 2);
        CHECK(fed->node(id)->rejections().bad_token == 0);
        for (const auto& r : fed->node(id)->history()) CHECK(r.params_received == 2);
    }
    CHECK(fed->reauth_count() == 3);
}

TEST_CASE("roles: trainers do not aggregate, proxies do not train, idle nodes stay silent") {
    SimFabric fabric(sim_config());
    auto plan = small_plan(4, SecuritySetting::baseline, TopologyKind::fully_connected, 1);
    plan.roles = {{1, Role::trainer}, {2, Role::proxy}, {3, Role::idle}};
    Rng init(derive_seed(plan.seed, seed_stream::model_init));
    auto initial = ModelParams::initialize(plan.architecture, init);
    auto fed = Federation::deploy(plan, fabric);
    fed->run();

    // 0 (aggregator) and 2 (proxy) are the consumers
    CHECK(fed->node(0)->history()[0].neighbors_used == std::vector<NodeId>{2});
    CHECK(fed->node(1)->history()[0].neighbors_used == std::vector<NodeId>{0, 2});
    CHECK(fed->node(2)->history()[0].neighbors_used == std::vector<NodeId>{0});
    CHECK(fed->node(3)->history()[0].neighbors_used.empty());
    for (const auto& r : fabric.frame_log()) {
        if (r.kind == FrameKind::model_exchange) CHECK(r.src != 3);
    }
    CHECK(fed->node(3)->params() == initial);
    // the proxy forwards the untrained initial model and averages what arrives
    Rng order0(derive_seed(plan.seed, seed_stream::train_order_base + 0));
    Rng order1(derive_seed(plan.seed, seed_stream::train_order_base + 1));
    auto t0 = train_local(initial, plan.node_data[0].train, plan.train, order0);
    auto t1 = train_local(initial, plan.node_data[1].train, plan.train, order1);
    std::vector<ModelParams> got{t0, t1};
    CHECK(fed->node(2)->params() == aggregate_fedavg(initial, got));
    CHECK(fed->node(1)->params() == t1);
}

TEST_CASE("an aggregator whose only neighbour is idle starves but finishes") {
    SimFabric fabric(sim_config());
    auto plan = small_plan(2, SecuritySetting::baseline, TopologyKind::fully_connected, 2);
    plan.roles = {{1, Role::idle}};
    auto fed = Federation::deploy(plan, fabric);
    fed->run();
    for (const auto& r : fed->node(0)->history()) {
        CHECK(r.starved);
        CHECK(r.params_received == 0);
    }
}
