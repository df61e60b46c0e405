#include <chrono>
#include <cmath>
#include <sstream>
#include <unistd.h>
#include <thread>

#include "doctest.h"
#include "dflshield/net/sim_fabric.hpp"
#include "dflshield/net/tcp_fabric.hpp"

using namespace dflshield;

namespace {

PeerAddress addr(std::uint8_t host, std::uint16_t port) { return {PeerAddress::ipv4(10, 0, 0, host), port}; }

Frame frame(FrameKind k, std::uint32_t corr, std::size_t body_len) {
    return Frame{k, corr, Bytes(body_len, static_cast<std::uint8_t>(corr))};
}

FabricConfig sim_config(std::uint64_t seed, double loss = 0.0) {
    FabricConfig c;
    c.seed = seed;
    c.loss_rate = loss;
    return c;
}

// 127.0.0.0/8 all routes to loopback on Linux; pick a port range unlikely to collide.
PeerAddress loop(std::uint16_t port) { return {PeerAddress::ipv4(127, 0, 0, 1), port}; }

std::uint16_t test_port(int i) {
    return static_cast<std::uint16_t>(20000 + (::getpid() % 2000) * 10 + i);
}

}  // namespace

TEST_CASE("frame wire round trip for every kind") {
    for (int k = 1; k <= 6; ++k) {
        Frame f{static_cast<FrameKind>(k), 0xA1B2C3D4u, Bytes{1, 2, 3, 4, 5}};
        auto wire = f.serialize();
        CHECK(wire.size() == f.wire_size());
        CHECK(wire[0] == 0xFD);
        CHECK(wire[1] == 0x51);
        CHECK(Frame::parse(wire) == f);
    }
    Bytes bad = Frame{FrameKind::control, 1, {}}.serialize();
    bad[0] = 0xFE;
    CHECK_THROWS_AS(Frame::parse(bad), DecodeError);
    bad = Frame{FrameKind::control, 1, {}}.serialize();
    bad[2] = 9;
    CHECK_THROWS_AS(Frame::parse(bad), DecodeError);
    bad = Frame{FrameKind::control, 1, {7}}.serialize();
    bad.pop_back();
    CHECK_THROWS_AS(Frame::parse(bad), DecodeError);
}

TEST_CASE("peer address text form") {
    auto a = PeerAddress::parse("10.1.2.3:5050");
    REQUIRE(a);
    CHECK(a->ip == PeerAddress::ipv4(10, 1, 2, 3));
    CHECK(a->port == 5050);
    CHECK(a->to_string() == "10.1.2.3:5050");
    CHECK_FALSE(PeerAddress::parse("10.1.2:5050"));
    CHECK_FALSE(PeerAddress::parse("10.1.2.300:5050"));
    CHECK_FALSE(PeerAddress::parse("10.1.2.3:70000"));
    CHECK_FALSE(PeerAddress{PeerAddress::ipv4(10, 0, 0, 1), 80}.valid());
}

TEST_CASE("sim: bind, send, receive; double bind fails") {
    SimFabric fab(sim_config(1));
    ManualClock ca, cb;
    auto a = fab.bind(1, addr(1, 5000), ca);
    auto b = fab.bind(2, addr(2, 5000), cb);
    CHECK_THROWS_AS(fab.bind(3, addr(2, 5000), cb), AddressInUse);

    auto receipt = a->send(b->address(), frame(FrameKind::model_exchange, 7, 32));
    CHECK(receipt.delivered);
    auto got = b->recv(ms_to_us(1000));
    REQUIRE(got);
    CHECK(got->frame.correlation_id == 7);
    CHECK(got->from == a->address());
    CHECK(got->transmitter == 1);
    CHECK(cb.now() == receipt.deliver_at);
    CHECK(cb.now() > 0);
}

TEST_CASE("sim: timeout advances the virtual clock exactly") {
    SimFabric fab(sim_config(1));
    ManualClock c(1000);
    auto a = fab.bind(1, addr(1, 5000), c);
    CHECK_FALSE(a->recv(ms_to_us(50)));
    CHECK(c.now() == 1000 + 50000);
}

TEST_CASE("sim: oversize frames are rejected before transmission") {
    auto cfg = sim_config(1);
    cfg.max_frame = 100;
    SimFabric fab(cfg);
    ManualClock c;
    auto a = fab.bind(1, addr(1, 5000), c);
    auto b = fab.bind(2, addr(2, 5000), c);
    CHECK_THROWS_AS(a->send(b->address(), frame(FrameKind::control, 1, 90)), FrameTooLarge);
    CHECK(fab.snapshot_stats().links.empty());
    CHECK(fab.frame_log().empty());
    CHECK_NOTHROW(a->send(b->address(), frame(FrameKind::control, 1, 89)));
}

TEST_CASE("sim: unknown destination is a routing error") {
    SimFabric fab(sim_config(1));
    ManualClock c;
    auto a = fab.bind(1, addr(1, 5000), c);
    CHECK_THROWS_AS(a->send(addr(9, 9000), frame(FrameKind::control, 1, 4)), RoutingError);
}

TEST_CASE("sim: zero loss delivers every frame exactly once, per-sender order kept") {
    SimFabric fab(sim_config(5));
    ManualClock c0, c1, c2, cr;
    auto s0 = fab.bind(10, addr(10, 6000), c0);
    auto s1 = fab.bind(11, addr(11, 6000), c1);
    auto s2 = fab.bind(12, addr(12, 6000), c2);
    auto r = fab.bind(1, addr(1, 6000), cr);
    Endpoint* senders[] = {s0.get(), s1.get(), s2.get()};
    ManualClock* clocks[] = {&c0, &c1, &c2};
    for (std::uint32_t i = 0; i < 200; ++i) {
        for (int s = 0; s < 3; ++s) {
            clocks[s]->spend(137 * (s + 1));
            senders[s]->send(r->address(), frame(FrameKind::model_exchange, i, 64 + 100 * s));
        }
    }
    std::map<NodeId, std::uint32_t> next;
    std::size_t total = 0;
    while (auto f = r->recv(ms_to_us(10'000))) {
        auto& expect = next[f->transmitter];
        CHECK(f->frame.correlation_id == expect);
        ++expect;
        ++total;
    }
    CHECK(total == 600);
    for (NodeId id : {10u, 11u, 12u}) CHECK(next[id] == 200);

    auto stats = fab.snapshot_stats();
    auto t = stats.total();
    CHECK(t.frames_lost == 0);
    CHECK(t.bytes_received == t.bytes_sent);
}

TEST_CASE("sim: observed loss matches the configured rate within 3 sigma") {
    for (double p : {0.05, 0.5, 0.999}) {
        SimFabric fab(sim_config(77, p));
        ManualClock c;
        auto a = fab.bind(1, addr(1, 5000), c);
        auto b = fab.bind(2, addr(2, 5000), c);
        const int n = 10'000;
        for (int i = 0; i < n; ++i) a->send(b->address(), frame(FrameKind::model_exchange, 0, 8));
        auto s = fab.snapshot_stats().total();
        CHECK(s.frames_sent == n);
        CHECK(s.frames_lost <= s.frames_sent);
        double sigma = std::sqrt(n * p * (1 - p));
        CHECK(std::abs(static_cast<double>(s.frames_lost) - n * p) <= 3 * sigma + 1e-9);
        CHECK(s.bytes_received <= s.bytes_sent);
    }
    CHECK_THROWS_AS(SimFabric(sim_config(1, 1.0)), std::invalid_argument);
}

TEST_CASE("sim: a fixed seed gives identical frame logs and arrival order") {
    auto run = [](std::uint64_t seed) {
        SimFabric fab(sim_config(seed, 0.1));
        std::vector<std::unique_ptr<ManualClock>> clocks;
        std::vector<std::unique_ptr<Endpoint>> eps;
        for (NodeId i = 0; i < 4; ++i) {
            clocks.push_back(std::make_unique<ManualClock>());
            eps.push_back(fab.bind(i, addr(static_cast<std::uint8_t>(i + 1), 7000), *clocks.back()));
        }
        // senders on separate threads: interleaving must not matter
        std::vector<std::thread> threads;
        for (NodeId i = 1; i < 4; ++i) {
            threads.emplace_back([&, i] {
                for (std::uint32_t k = 0; k < 50; ++k) {
                    clocks[i]->spend(500);
                    eps[i]->send(eps[0]->address(), frame(FrameKind::model_exchange, k, 10 + k));
                }
            });
        }
        for (auto& t : threads) t.join();
        std::vector<std::tuple<NodeId, std::uint32_t, Micros>> order;
        while (auto f = eps[0]->recv(ms_to_us(60'000))) {
            order.emplace_back(f->transmitter, f->frame.correlation_id, f->delivered_at);
        }
        std::vector<std::tuple<Micros, NodeId, std::uint64_t, Micros, bool>> log;
        for (const auto& r : fab.frame_log()) log.emplace_back(r.sent_at, r.src, r.seq, r.deliver_at, r.lost);
        return std::pair(order, log);
    };
    auto first = run(2024);
    auto second = run(2024);
    CHECK(first == second);
    CHECK(first.first.size() > 100);
    CHECK(run(2025) != first);
}

TEST_CASE("stats: zero traffic and control overhead arithmetic") {
    LinkStats empty;
    auto m0 = derive_metrics(empty, 0);
    CHECK(m0.throughput_mbps == 0.0);
    CHECK(m0.mean_latency_ms == 0.0);
    CHECK(m0.loss_pct == 0.0);
    CHECK(m0.control_overhead_pct == 0.0);

    SimFabric fab(sim_config(3));
    ManualClock c;
    auto a = fab.bind(1, addr(1, 5000), c);
    auto b = fab.bind(2, addr(2, 5000), c);
    for (int i = 0; i < 10; ++i) a->send(b->address(), frame(FrameKind::model_exchange, 1, 100 - kFrameHeaderBytes));
    a->send(b->address(), frame(FrameKind::control, 1, 50 - kFrameHeaderBytes));
    auto s = fab.snapshot_stats().links.at({1, 2});
    CHECK(s.bytes_sent == 1050);
    CHECK(s.control_bytes == 50);
    CHECK(derive_metrics(s, 1'000'000).control_overhead_pct == doctest::Approx(100.0 * 50 / 1050));
    CHECK(derive_metrics(s, 1'000'000).throughput_mbps == doctest::Approx(1050 * 8 / 1e6));
    CHECK(s.control_bytes <= s.bytes_sent);
}

TEST_CASE("communication frequency sums to one") {
    SimFabric fab(sim_config(4));
    ManualClock c;
    std::vector<std::unique_ptr<Endpoint>> eps;
    for (NodeId i = 0; i < 5; ++i) eps.push_back(fab.bind(i, addr(static_cast<std::uint8_t>(i + 1), 5000), c));
    Rng rng(1);
    for (int k = 0; k < 300; ++k) {
        auto i = rng.uniform_index(5), j = rng.uniform_index(5);
        if (i != j) eps[i]->send(eps[j]->address(), frame(FrameKind::model_exchange, 0, 4));
    }
    auto f = communication_frequency(fab.frame_log());
    double sum = 0;
    for (const auto& [_, v] : f) sum += v;
    CHECK(sum == doctest::Approx(1.0));
    CHECK(communication_frequency({}).empty());
}

TEST_CASE("sim: rebind keeps the old address alive for the grace period only") {
    auto cfg = sim_config(6);
    SimFabric fab(cfg);
    ManualClock ca, cb;
    auto a = fab.bind(1, addr(1, 5000), ca);
    auto b = fab.bind(2, addr(2, 5000), cb);
    auto old_addr = b->address();
    b->rebind(addr(2, 5001));
    CHECK(b->address() == addr(2, 5001));
    CHECK(fab.is_bound(old_addr, 0));
    CHECK_NOTHROW(a->send(old_addr, frame(FrameKind::control, 1, 4)));
    CHECK_THROWS_AS(fab.bind(3, old_addr, ca), AddressInUse);
    ca.set(cfg.rebind_grace());
    CHECK_FALSE(fab.is_bound(old_addr, ca.now()));
    CHECK_THROWS_AS(a->send(old_addr, frame(FrameKind::control, 2, 4)), RoutingError);
    CHECK_NOTHROW(a->send(b->address(), frame(FrameKind::control, 3, 4)));
    int got = 0;
    while (b->recv(ms_to_us(10'000))) ++got;
    CHECK(got == 2);
    CHECK_THROWS_AS(b->rebind(a->address()), AddressInUse);
}

TEST_CASE("sim: interceptor drop and redirect, taps see everything") {
    SimFabric fab(sim_config(8));
    ManualClock c;
    auto a = fab.bind(1, addr(1, 5000), c);
    auto b = fab.bind(2, addr(2, 5000), c);
    auto evil = fab.bind(1000, addr(66, 5000), c);
    std::size_t tapped = 0;
    fab.add_tap([&](const FrameRecord&, const Frame&) { ++tapped; });
    fab.set_interceptor([&](const FrameRecord& r, const Frame&) {
        if (r.correlation_id == 1) return InterceptVerdict::drop();
        if (r.correlation_id == 2) return InterceptVerdict::redirect(evil->address());
        return InterceptVerdict::deliver();
    });
    a->send(b->address(), frame(FrameKind::model_exchange, 1, 4));
    a->send(b->address(), frame(FrameKind::model_exchange, 2, 4));
    a->send(b->address(), frame(FrameKind::model_exchange, 3, 4));
    CHECK(tapped == 3);
    auto at_b = b->recv(ms_to_us(10'000));
    REQUIRE(at_b);
    CHECK(at_b->frame.correlation_id == 3);
    CHECK_FALSE(b->recv(ms_to_us(10'000)));
    auto at_evil = evil->recv(ms_to_us(10'000));
    REQUIRE(at_evil);
    CHECK(at_evil->frame.correlation_id == 2);

    // spoofed injection appears to come from a
    fab.inject(1000, a->address(), b->address(), frame(FrameKind::model_exchange, 4, 4), c.now());
    auto spoofed = b->recv(ms_to_us(10'000));
    REQUIRE(spoofed);
    CHECK(spoofed->from == a->address());
    CHECK(spoofed->transmitter == 1000);
    auto log = fab.frame_log();
    CHECK(log.size() == 4);
    CHECK(log[0].intercepted);
    CHECK(log[0].lost);
}

TEST_CASE("sim: closed endpoint") {
    SimFabric fab(sim_config(1));
    ManualClock c;
    auto a = fab.bind(1, addr(1, 5000), c);
    auto b = fab.bind(2, addr(2, 5000), c);
    auto b_addr = b->address();
    b->close();
    CHECK_THROWS_AS(b->recv(10), ChannelClosed);
    CHECK_THROWS_AS(a->send(b_addr, frame(FrameKind::control, 1, 1)), RoutingError);
    CHECK_NOTHROW(fab.bind(3, b_addr, c));
}

TEST_CASE("links csv") {
    FabricStats s;
    s.links[{1, 2}] = LinkStats{100, 90, 2, 1, 1, 30, {1000, 3000}};
    std::ostringstream os;
    write_links_csv(os, s);
    CHECK(os.str() ==
          "link,src,dst,bytes_sent,bytes_recv,frames_lost,mean_latency_ms,control_bytes\n"
          "1->2,1,2,100,90,1,2.000,30\n");
}

TEST_CASE("tcp: bind, connect, ordered delivery from three senders") {
    FabricConfig cfg;
    cfg.backend = Backend::tcp;
    auto fab = make_fabric(cfg);
    SteadyClock clock;
    auto r = fab->bind(1, loop(test_port(0)), clock);
    CHECK_THROWS_AS(fab->bind(2, loop(test_port(0)), clock), AddressInUse);

    std::vector<std::unique_ptr<Endpoint>> senders;
    for (int i = 0; i < 3; ++i) senders.push_back(fab->bind(10 + i, loop(test_port(1 + i)), clock));
    std::vector<std::thread> threads;
    for (int i = 0; i < 3; ++i) {
        threads.emplace_back([&, i] {
            for (std::uint32_t k = 0; k < 100; ++k) {
                senders[i]->send(r->address(), frame(FrameKind::model_exchange, k, 50 + k));
            }
        });
    }
    for (auto& t : threads) t.join();
    std::map<NodeId, std::uint32_t> next;
    int total = 0;
    while (total < 300) {
        auto f = r->recv(ms_to_us(2000));
        REQUIRE(f);
        auto& e = next[f->transmitter];
        CHECK(f->frame.correlation_id == e);
        CHECK(f->frame.body.size() == 50 + e);
        ++e;
        ++total;
    }
    auto s = fab->snapshot_stats().total();
    CHECK(s.frames_sent == 300);
    CHECK(s.bytes_received == s.bytes_sent);
    CHECK(s.latency_samples.size() == 300);
    CHECK_THROWS_AS(senders[0]->send(loop(test_port(9)), frame(FrameKind::control, 0, 1)), RoutingError);
}

TEST_CASE("tcp: recv timeout honours the deadline") {
    FabricConfig cfg;
    cfg.backend = Backend::tcp;
    auto fab = make_fabric(cfg);
    SteadyClock clock;
    auto a = fab->bind(1, loop(test_port(5)), clock);
    auto t0 = std::chrono::steady_clock::now();
    CHECK_FALSE(a->recv(ms_to_us(50)));
    auto waited = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    CHECK(waited >= 50.0);
    CHECK(waited < 50.0 + 200.0);
}

TEST_CASE("tcp: rebind to a new port keeps receiving") {
    FabricConfig cfg;
    cfg.backend = Backend::tcp;
    cfg.latency_mean_ms = 25;  // grace = 50 ms
    auto fab = make_fabric(cfg);
    SteadyClock clock;
    auto a = fab->bind(1, loop(test_port(6)), clock);
    auto b = fab->bind(2, loop(test_port(7)), clock);
    a->send(b->address(), frame(FrameKind::control, 1, 3));
    REQUIRE(b->recv(ms_to_us(2000)));
    b->rebind(loop(test_port(8)));
    a->send(b->address(), frame(FrameKind::control, 2, 3));
    auto f = b->recv(ms_to_us(2000));
    REQUIRE(f);
    CHECK(f->frame.correlation_id == 2);
    std::this_thread::sleep_for(std::chrono::milliseconds(150));
    CHECK_FALSE(fab->is_bound(loop(test_port(7)), 0));
}
