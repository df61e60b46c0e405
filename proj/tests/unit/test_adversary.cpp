#include <numeric>
#include <sstream>

#include "doctest.h"
#include "dflshield/adversary/adversary.hpp"
#include "fixtures.hpp"

using namespace dflshield;
using namespace dflshield::testing;

namespace {

AttackPlan eclipse_plan(NodeId target = 0) {
    AttackPlan p;
    p.kind = AttackKind::eclipse;
    p.attacker_ids = {1000, 1001};
    p.target = target;
    return p;
}

struct EclipseRun {
    AttackOutcome outcome;
    std::size_t target_envelope_rejections = 0;
    std::size_t target_rounds = 0;
};

EclipseRun run_eclipse(SecuritySetting sec, int rounds) {
    SimFabric fabric(sim_config());
    auto plan = small_plan(8, sec, TopologyKind::random, rounds);
    EclipseAttack attack(eclipse_plan(), fabric);
    auto fed = Federation::deploy(plan, fabric, &attack);
    fed->run();
    EclipseRun out;
    out.outcome = attack.outcome(static_cast<std::uint32_t>(rounds));
    for (const auto& [why, n] : fed->node(0)->rejections().envelope) out.target_envelope_rejections += n;
    out.target_rounds = fed->node(0)->history().size();
    return out;
}

auto record_key(const FrameRecord& r) {
    return std::tuple(r.sent_at, r.deliver_at, r.src, r.dst, r.seq, r.src_addr, r.dst_addr, r.kind,
                      r.correlation_id, r.bytes, r.lost, r.intercepted);
}

}  // namespace

TEST_CASE("attack plan validation") {
    auto p = eclipse_plan();
    CHECK_NOTHROW(p.validate(8));
    p.target = 8;
    CHECK_THROWS_AS(p.validate(8), std::invalid_argument);
    p = eclipse_plan();
    p.attacker_ids = {3};
    CHECK_THROWS_AS(p.validate(8), std::invalid_argument);
    p = eclipse_plan();
    p.start_round = 4;
    p.end_round = 2;
    CHECK_THROWS_AS(p.validate(8), std::invalid_argument);
    p = eclipse_plan();
    p.start_round = 2;
    p.end_round = 100;
    CHECK(p.window(10) == 8);
    CHECK(p.window(2) == 0);
    CHECK(parse_attack("network_map") == AttackKind::network_map);
}

TEST_CASE("eclipse on baseline isolates the target, reads its models and takes it over") {
    auto run = run_eclipse(SecuritySetting::baseline, 4);
    const auto& o = run.outcome;
    CHECK(o.attack_rounds == 4);
    CHECK(o.isolated_rounds == 4);
    CHECK(o.plaintext_param_sets_recovered >= o.isolated_rounds);
    for (std::uint32_t r = 0; r < 4; ++r) CHECK(o.recovered_per_round.count(r));
    CHECK(o.mimicry_sent > 0);
    CHECK(o.mimicry_accepted == o.mimicry_sent);
    CHECK(o.control_established);
    CHECK(o.success);
}

TEST_CASE("eclipse on encryption isolates but recovers nothing and every forgery is refused") {
    auto run = run_eclipse(SecuritySetting::encryption, 4);
    const auto& o = run.outcome;
    CHECK(o.isolated_rounds == 4);
    CHECK(o.plaintext_param_sets_recovered == 0);
    CHECK(o.mimicry_sent > 0);
    CHECK(o.mimicry_accepted == 0);
    CHECK_FALSE(o.control_established);
    CHECK(run.target_envelope_rejections >= o.mimicry_sent);
    CHECK(o.success);
}

TEST_CASE("eclipse under MTD loses the target once it rotates") {
    auto run = run_eclipse(SecuritySetting::encryption_mtd, 4);
    const auto& o = run.outcome;
    CHECK(o.plaintext_param_sets_recovered == 0);
    CHECK(o.mimicry_accepted == 0);
    CHECK(o.unreachable_rounds >= 1);
    CHECK(o.isolated_rounds < 4);
    CHECK_FALSE(o.success);
}

TEST_CASE("all-attacker sample rate matches the combinatorial oracle") {
    CHECK(mtd_all_attacker_rate(7, 2, 3, 10'000, 1) == 0.0);
    const double rate = mtd_all_attacker_rate(7, 3, 3, 20'000, 2);
    CHECK(std::abs(rate - all_inside_probability(3, 7, 3)) <= 0.01);
    CHECK(all_inside_probability(3, 7, 3) == doctest::Approx(1.0 / 35.0));
    const double rate2 = mtd_all_attacker_rate(10, 5, 2, 20'000, 3);
    CHECK(std::abs(rate2 - all_inside_probability(5, 10, 2)) <= 0.01);
}

TEST_CASE("eavesdropper on one baseline link recovers models and conserves bytes") {
    SimFabric fabric(sim_config());
    auto plan = small_plan(4, SecuritySetting::baseline, TopologyKind::fully_connected, 2);
    AttackPlan ap;
    ap.kind = AttackKind::eavesdrop;
    ap.tapped_links = {{0, 1}};
    Eavesdropper spy(ap, fabric);
    auto fed = Federation::deploy(plan, fabric, &spy);
    fed->run();
    const auto& cap = spy.capture();
    CHECK_FALSE(cap.recovered_params.empty());
    for (const auto& p : cap.recovered_params) CHECK(p.same_shape(fed->node(0)->params()));
    for (const auto& f : cap.frames) CHECK(LinkKey{std::min(f.src, f.dst), std::max(f.src, f.dst)} == LinkKey{0, 1});
    auto stats = fabric.snapshot_stats();
    std::uint64_t link_bytes = 0;
    for (const auto& [k, s] : stats.links) {
        if (LinkKey{std::min(k.first, k.second), std::max(k.first, k.second)} == LinkKey{0, 1}) {
            link_bytes += s.bytes_sent;
        }
    }
    CHECK(cap.captured_bytes() == link_bytes);
}

TEST_CASE("eavesdropper on encrypted traffic sees frames but no parameters") {
    for (auto sec : {SecuritySetting::encryption, SecuritySetting::encryption_mtd}) {
        SimFabric fabric(sim_config());
        auto plan = small_plan(4, sec, TopologyKind::fully_connected, 2);
        AttackPlan ap;
        ap.kind = AttackKind::eavesdrop;
        Eavesdropper spy(ap, fabric);
        auto fed = Federation::deploy(plan, fabric, &spy);
        fed->run();
        CHECK_FALSE(spy.capture().frames.empty());
        CHECK(spy.capture().recovered_params.empty());
        CHECK(spy.capture().captured_bytes() == fabric.snapshot_stats().total().bytes_sent);
    }
}

TEST_CASE("tapping does not perturb the run") {
    auto run = [](bool tapped) {
        SimFabric fabric(sim_config(9, 0.05));
        auto plan = small_plan(5, SecuritySetting::encryption_mtd, TopologyKind::random, 3);
        AttackPlan ap;
        ap.kind = AttackKind::eavesdrop;
        std::optional<Eavesdropper> spy;
        if (tapped) spy.emplace(ap, fabric);
        auto fed = Federation::deploy(plan, fabric, spy ? &*spy : nullptr);
        fed->run();
        std::vector<decltype(record_key(FrameRecord{}))> keys;
        for (const auto& r : fabric.frame_log()) keys.push_back(record_key(r));
        return std::pair(keys, fed->ledger().rows());
    };
    auto a = run(false);
    auto b = run(true);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("network map recovers a static complete graph") {
    SimFabric fabric(sim_config());
    auto plan = small_plan(5, SecuritySetting::baseline, TopologyKind::fully_connected, 5);
    plan.roles = {{4, Role::trainer}};
    AttackPlan ap;
    ap.kind = AttackKind::network_map;
    Eavesdropper spy(ap, fabric);
    auto fed = Federation::deploy(plan, fabric, &spy);
    fed->run();
    auto map = run_network_map(spy.capture());
    CHECK(topology_recall(map, fed->topology()) == doctest::Approx(1.0));
    double total = 0.0;
    for (const auto& [k, v] : map.frequency) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(map.roles.at(4) == Role::trainer);
    CHECK(map.roles.at(0) == Role::aggregator);
    CHECK(spy.capture().inferred_topology == map.edges);
    for (const auto& [n, iv] : map.activity) {
        for (std::size_t i = 1; i < iv.size(); ++i) CHECK(iv[i - 1].second < iv[i].first);
    }
}

TEST_CASE("network map sees less of the graph per round under MTD") {
    auto single_round_recall = [](SecuritySetting sec) {
        SimFabric fabric(sim_config());
        auto plan = small_plan(8, sec, TopologyKind::fully_connected, 3);
        AttackPlan ap;
        ap.kind = AttackKind::network_map;
        Eavesdropper spy(ap, fabric);
        auto fed = Federation::deploy(plan, fabric, &spy);
        fed->run();
        double worst = 1.0;
        for (std::uint32_t r = 0; r < 3; ++r) {
            worst = std::min(worst, topology_recall(run_network_map(spy.capture(), r), fed->topology()));
        }
        return worst;
    };
    const double static_recall = single_round_recall(SecuritySetting::encryption);
    const double mtd_recall = single_round_recall(SecuritySetting::encryption_mtd);
    CHECK(static_recall == doctest::Approx(1.0));
    CHECK(mtd_recall < static_recall);
}

TEST_CASE("empty capture maps to nothing") {
    CaptureLog empty;
    auto map = run_network_map(empty);
    CHECK(map.empty());
    CHECK(map.frequency.empty());
    CHECK(map.roles.empty());
}

TEST_CASE("capture export and attack table") {
    CaptureLog log;
    log.frames.push_back({1, 10, 20, 0, 1, FrameKind::model_exchange, false, 15, Bytes{1, 2, 3, 4}});
    std::ostringstream out;
    write_capture_jsonl(out, log);
    auto line = out.str();
    CHECK(line.find("\"kind\":\"ModelExchange\"") != std::string::npos);
    CHECK(line.find("\"body\":\"AQIDBA\"") != std::string::npos);
    CHECK(std::count(line.begin(), line.end(), '\n') == 1);

    AttackOutcome o;
    o.target = 3;
    o.isolated_rounds = 5;
    o.plaintext_param_sets_recovered = 7;
    o.success = true;
    std::ostringstream row;
    write_attack_row(row, o);
    CHECK(row.str() == "eclipse,3,5,7,true\n");
}
