// One PASS/FAIL line per acceptance criterion. Optional arguments pick
// criteria by number, e.g. `acceptance 4 5`.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>

#include "dflshield/crypto/envelope.hpp"
#include "dflshield/crypto/token.hpp"
#include "dflshield/harness/run.hpp"
#include "dflshield/model/fedavg.hpp"
#include "dflshield/model/training.hpp"
#include "dflshield/mtd/mtd.hpp"

using namespace dflshield;
namespace fs = std::filesystem;

namespace {

const fs::path kSourceDir = DFLSHIELD_SOURCE_DIR;

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int number;
    const char* title;
    double budget_s;  // 0: no wall-clock budget
    std::function<Verdict()> check;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path out_root() { return fs::current_path() / "acceptance-out"; }

ScenarioResult run_bundled(const std::string& file, const std::string& subdir = "") {
    auto cfg = load_scenario(kSourceDir / "scenarios" / file);
    RunOptions opt;
    opt.output_dir = out_root() / subdir;
    auto r = run_scenario(cfg, opt);
    if (r.exit_code != exit_code::ok) {
        throw std::runtime_error(file + " exited " + std::to_string(r.exit_code) + ": " + r.error);
    }
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

double chi_square_stat(const std::vector<double>& observed, double expected) {
    double s = 0.0;
    for (double o : observed) s += (o - expected) * (o - expected) / expected;
    return s;
}

double chi_square_critical(double dof, double alpha) {
    return boost::math::quantile(boost::math::complement(boost::math::chi_squared(dof), alpha));
}

// Shared between criteria 1, 2 and 8.
struct Trio {
    ScenarioResult baseline, encryption, mtd;
};

const Trio& eight_node_trio() {
    static const Trio t{run_bundled("baseline-8.toml"), run_bundled("encryption-8.toml"),
                        run_bundled("encryption_mtd-8.toml")};
    return t;
}

bool strictly_increasing(double a, double b, double c) { return a < b && b < c; }

Verdict convergence() {
    const auto& t = eight_node_trio();
    const double b = t.baseline.report.summary.final_f1.mean;
    const double e = t.encryption.report.summary.final_f1.mean;
    const double m = t.mtd.report.summary.final_f1.mean;
    const bool pass = b >= 0.90 && std::abs(b - e) <= 0.05 && std::abs(b - m) <= 0.05 && b >= e && e >= m - 0.02 &&
                      t.baseline.rounds_completed == 20;
    return {pass, fmt("final F1 baseline=%.4f encryption=%.4f encryption_mtd=%.4f", b, e, m)};
}

Verdict overhead() {
    const auto& t = eight_node_trio();
    const auto& b = t.baseline.report.summary;
    const auto& e = t.encryption.report.summary;
    const auto& m = t.mtd.report.summary;
    const bool pass =
        strictly_increasing(static_cast<double>(b.total_bytes), static_cast<double>(e.total_bytes),
                            static_cast<double>(m.total_bytes)) &&
        strictly_increasing(b.ctrl_overhead_pct, e.ctrl_overhead_pct, m.ctrl_overhead_pct);
    return {pass, fmt("bytes %llu < %llu < %llu; ctrl %.2f%% < %.2f%% < %.2f%%",
                      static_cast<unsigned long long>(b.total_bytes), static_cast<unsigned long long>(e.total_bytes),
                      static_cast<unsigned long long>(m.total_bytes), b.ctrl_overhead_pct, e.ctrl_overhead_pct,
                      m.ctrl_overhead_pct)};
}

Verdict eclipse() {
    auto base = run_bundled("eclipse-baseline-8.toml");
    auto enc = run_bundled("eclipse-encryption-8.toml");
    auto mtd = run_bundled("eclipse-encryption_mtd-8.toml");
    const auto& b = *base.attack;
    const auto& e = *enc.attack;
    const auto& m = *mtd.attack;

    // every isolated round yields at least one plaintext parameter set
    bool per_round = b.isolated_rounds > 0;
    std::size_t covered = 0;
    for (const auto& [round, n] : b.recovered_per_round) covered += n >= 1 ? 1 : 0;
    per_round = per_round && covered >= b.isolated_rounds;
    const bool base_ok = per_round && b.success;
    const bool enc_ok = e.attack_rounds > 0 && e.isolated_rounds == e.attack_rounds &&
                        e.plaintext_param_sets_recovered == 0;
    const double gap = std::abs(m.all_attacker_rate - m.all_attacker_expected);
    const bool mtd_ok = m.plaintext_param_sets_recovered == 0 && m.sampled_rounds >= 10'000 && gap <= 0.01;
    return {base_ok && enc_ok && mtd_ok,
            fmt("baseline isolated=%u recovered=%zu success=%d; encryption isolated=%u/%u recovered=%zu; "
                "mtd recovered=%zu rate=%.4f expected=%.4f over %zu rounds",
                b.isolated_rounds, b.plaintext_param_sets_recovered, b.success, e.isolated_rounds, e.attack_rounds,
                e.plaintext_param_sets_recovered, m.plaintext_param_sets_recovered, m.all_attacker_rate,
                m.all_attacker_expected, m.sampled_rounds)};
}

Verdict uniformity() {
    Rng rng(derive_seed(2024, 4));
    const std::size_t pool_size = 10, n = 3;
    const int draws = 100'000;
    NeighborPool pool;
    for (NodeId i = 0; i < pool_size; ++i) pool.all.push_back(i);
    pool.sample_size = n;

    // per-node frequency and frequency of each of the C(10, 3) subsets
    std::vector<double> per_node(pool_size, 0.0);
    std::map<std::vector<NodeId>, double> per_subset;
    for (int t = 0; t < draws; ++t) {
        auto pick = mtd_select_neighbors(pool, rng);
        for (auto x : pick) per_node[x] += 1;
        per_subset[pick] += 1;
    }
    const double node_stat = chi_square_stat(per_node, draws * double(n) / pool_size);
    const double node_crit = chi_square_critical(pool_size - 1, 0.01);
    std::vector<double> subsets;
    for (const auto& [k, v] : per_subset) subsets.push_back(v);
    subsets.resize(120, 0.0);
    const double subset_stat = chi_square_stat(subsets, draws / 120.0);
    const double subset_crit = chi_square_critical(119, 0.01);

    auto ports = AddressPool::range(PeerAddress::ipv4(10, 0, 0, 1), 1, 40000, 10);
    AddressBook book(1, {ports.ips[0], ports.ports[0]});
    std::vector<double> per_port(10, 0.0);
    bool rotated = true;
    for (int i = 0; i < 1000; ++i) {
        auto rot = mtd_rotate_address(book, ports, rng, i);
        if (!rot || rot->next == book.self_binding()) {
            rotated = false;
            break;
        }
        per_port[rot->next.port - 40000] += 1;
        book.set_self_binding(rot->next, rot->notice.effective_epoch);
    }
    const double port_stat = chi_square_stat(per_port, 100.0);
    const double port_crit = chi_square_critical(9, 0.01);
    return {node_stat < node_crit && subset_stat < subset_crit && rotated && port_stat < port_crit,
            fmt("neighbours chi2=%.2f (crit %.2f), subsets chi2=%.2f (crit %.2f), ports chi2=%.2f (crit %.2f)",
                node_stat, node_crit, subset_stat, subset_crit, port_stat, port_crit)};
}

Verdict crypto() {
    auto controller = KeyPair::generate(KeyKind::signing);
    auto alice_enc = KeyPair::generate(KeyKind::encryption);
    auto alice_sig = KeyPair::generate(KeyKind::signing);
    auto bob_enc = KeyPair::generate(KeyKind::encryption);
    auto bob_sig = KeyPair::generate(KeyKind::signing);
    KeyDirectory directory;
    directory.update(issue_certificate(controller, 1, Role::aggregator, 0, alice_enc.public_key(), alice_sig.public_key()));
    directory.update(issue_certificate(controller, 2, Role::aggregator, 0, bob_enc.public_key(), bob_sig.public_key()));
    EnvelopeSealer sealer(1, alice_sig, SessionKey::generate());
    EnvelopeOpener opener(bob_enc, directory);
    Rng rng(derive_seed(2024, 5));
    auto payload = [&rng] {
        Bytes b(rng.uniform_index(4096) + 1);
        for (auto& x : b) x = static_cast<std::uint8_t>(rng.next_u64());
        return b;
    };
    auto opens = [&opener](ByteView wire) {
        try {
            opener.open(wire);
            return true;
        } catch (const EnvelopeError&) {
            return false;
        }
    };

    std::size_t round_trips = 0;
    for (int i = 0; i < 10'000; ++i) {
        auto p = payload();
        try {
            round_trips += opener.open(sealer.seal(p, bob_enc.public_key()).serialize()) == p ? 1 : 0;
        } catch (const EnvelopeError&) {
        }
    }

    // each tampering hits a fresh envelope that was never opened untouched
    std::size_t envelope_accepts = 0, token_accepts = 0;
    for (int i = 0; i < 1000; ++i) {
        auto wire = sealer.seal(payload(), bob_enc.public_key()).serialize();
        auto bit = rng.uniform_index(wire.size() * 8);
        wire[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        envelope_accepts += opens(wire) ? 1 : 0;
    }
    for (int i = 0; i < 1000; ++i) {
        auto token = issue_token(static_cast<NodeId>(i), Role::trainer, 60'000, controller, i);
        std::string s = token.compact;
        auto bit = rng.uniform_index(s.size() * 8);
        s[bit / 8] = static_cast<char>(s[bit / 8] ^ (1 << (bit % 8)));
        token_accepts += verify_token(s, controller.public_key(), i + 1) ? 1 : 0;
    }

    std::vector<Bytes> captured;
    std::size_t first_opens = 0, replay_accepts = 0;
    for (int i = 0; i < 1000; ++i) {
        captured.push_back(sealer.seal(payload(), bob_enc.public_key()).serialize());
        first_opens += opens(captured.back()) ? 1 : 0;
    }
    for (const auto& c : captured) replay_accepts += opens(c) ? 1 : 0;

    return {round_trips == 10'000 && envelope_accepts == 0 && token_accepts == 0 && first_opens == 1000 &&
                replay_accepts == 0,
            fmt("round trips %zu/10000, tampered envelopes accepted %zu/1000, tampered tokens accepted %zu/1000, "
                "replays accepted %zu/1000",
                round_trips, envelope_accepts, token_accepts, replay_accepts)};
}

ModelParams random_params(const ModelArchitecture& arch, Rng& rng) {
    ModelParams p(arch);
    for (auto& v : p.values()) v = rng.uniform(-1.0, 1.0);
    return p;
}

Verdict numerics() {
    Rng rng(derive_seed(2024, 6));
    double worst_avg = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        ModelArchitecture arch{{1 + rng.uniform_index(6), 1 + rng.uniform_index(6), 2 + rng.uniform_index(3)},
                               Activation::relu, OutputKind::softmax};
        auto own = random_params(arch, rng);
        std::vector<ModelParams> received;
        const auto k = 1 + rng.uniform_index(10);
        for (std::size_t j = 0; j < k; ++j) received.push_back(random_params(arch, rng));
        auto out = aggregate_fedavg(own, received);
        for (std::size_t i = 0; i < own.values().size(); ++i) {
            long double s = own.values()[i];
            for (const auto& r : received) s += r.values()[i];
            const double naive = static_cast<double>(s / static_cast<long double>(k + 1));
            const double diff = std::abs(out.values()[i] - naive);
            // absolute below 1e-15 covers naive means that cancel to ~0
            if (diff >= 1e-15) worst_avg = std::max(worst_avg, diff / std::abs(naive));
        }
    }

    const Activation acts[] = {Activation::tanh, Activation::sigmoid, Activation::relu};
    double worst_grad = 0.0;
    std::size_t coords = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::size_t> sizes{1 + rng.uniform_index(4)};
        const auto hidden = 1 + rng.uniform_index(2);
        for (std::size_t h = 0; h < hidden; ++h) sizes.push_back(1 + rng.uniform_index(5));
        sizes.push_back(2 + rng.uniform_index(3));
        ModelArchitecture arch{sizes, acts[trial % 3], OutputKind::softmax};
        auto p = random_params(arch, rng);
        std::vector<double> x(sizes.front());
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        const int label = static_cast<int>(rng.uniform_index(arch.class_count()));
        auto g = example_gradient(p, x, label);
        const double h = 1e-6;
        for (std::size_t i = 0; i < p.values().size(); ++i) {
            auto plus = p, minus = p;
            plus.values()[i] += h;
            minus.values()[i] -= h;
            const double fd = (example_loss(plus, x, label) - example_loss(minus, x, label)) / (2 * h);
            const double an = g.values()[i];
            worst_grad = std::max(worst_grad, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4}));
            ++coords;
        }
    }
    return {worst_avg <= 1e-12 && worst_grad <= 1e-4,
            fmt("fedavg worst relative error %.3g over 100 instances; gradient worst relative error %.3g over %zu "
                "coordinates in 20 models",
                worst_avg, worst_grad, coords)};
}

Verdict rendezvous() {
    auto cfg = load_scenario(kSourceDir / "scenarios" / "rendezvous-10.toml");
    const bool setup = cfg.nodes == 10 && cfg.rounds == 20 && cfg.security == SecuritySetting::encryption_mtd &&
                       cfg.rotation_rounds == 1 && cfg.fabric.loss_rate == 0.0;
    auto r = run_bundled("rendezvous-10.toml");
    return {setup && r.rounds_completed == 20 && r.routing_errors == 0 && r.starvation_events == 0,
            fmt("rounds %u, routing errors %zu, starvation events %zu", r.rounds_completed, r.routing_errors,
                r.starvation_events)};
}

Verdict determinism() {
    std::size_t identical = 0, total = 0;
    std::string differing;
    for (const char* file : {"baseline-8.toml", "encryption_mtd-8.toml", "eclipse-encryption_mtd-8.toml"}) {
        auto first = run_bundled(file, "rerun-a");
        auto second = run_bundled(file, "rerun-b");
        const auto a = slurp(first.artifact_dir / kRunReportFile);
        const auto b = slurp(second.artifact_dir / kRunReportFile);
        ++total;
        if (!a.empty() && a == b) {
            ++identical;
        } else {
            differing += std::string(" ") + file;
        }
    }
    return {identical == total,
            fmt("%zu/%zu scenarios byte-identical on rerun%s", identical, total, differing.c_str())};
}

Verdict scale() {
    auto base = run_bundled("baseline-50.toml");
    auto enc = run_bundled("encryption-50.toml");
    auto mtd = run_bundled("encryption_mtd-50.toml");
    const auto& b = base.report.summary;
    const auto& e = enc.report.summary;
    const auto& m = mtd.report.summary;
    const bool ordered =
        strictly_increasing(static_cast<double>(b.total_bytes), static_cast<double>(e.total_bytes),
                            static_cast<double>(m.total_bytes)) &&
        strictly_increasing(b.ctrl_overhead_pct, e.ctrl_overhead_pct, m.ctrl_overhead_pct);
    return {base.rounds_completed == 10 && base.runtime_s < 600.0 && ordered,
            fmt("baseline 50 nodes: %u rounds in %.1f s; bytes %.1f < %.1f < %.1f MB; ctrl %.2f%% < %.2f%% < %.2f%%",
                base.rounds_completed, base.runtime_s, b.total_bytes / 1e6, e.total_bytes / 1e6,
                m.total_bytes / 1e6, b.ctrl_overhead_pct, e.ctrl_overhead_pct, m.ctrl_overhead_pct)};
}

}  // namespace

int main(int argc, char** argv) {
    // criterion 2 reuses the runs of criterion 1, so its budget is shared
    const std::vector<Criterion> criteria{
        {1, "convergence ordering", 120.0, convergence},
        {2, "overhead direction", 0.0, overhead},
        {3, "eclipse dichotomy", 180.0, eclipse},
        {4, "mtd uniformity", 30.0, uniformity},
        {5, "crypto soundness", 60.0, crypto},
        {6, "numerical correctness", 0.0, numerics},
        {7, "rendezvous continuity", 0.0, rendezvous},
        {8, "determinism", 0.0, determinism},
        {9, "scale smoke", 0.0, scale},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : criteria) {
        if (!wanted.empty() && !wanted.count(c.number)) continue;
        const auto started = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.check();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (c.budget_s > 0.0 && secs >= c.budget_s) {
            v.pass = false;
            v.detail += fmt(" (over the %.0f s budget)", c.budget_s);
        }
        std::printf("%s %d %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", c.number, c.title, v.detail.c_str(), secs);
        std::fflush(stdout);
        failures += v.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
