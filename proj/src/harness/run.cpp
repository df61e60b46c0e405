#include "dflshield/harness/run.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <nlohmann/json.hpp>

#include "dflshield/harness/compare.hpp"

namespace dflshield {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kShardStream = 0x5348'4152;  // "SHAR"
constexpr std::uint64_t kMonteCarloStream = 0x4d43;  // "MC"

fs::path output_root(const ScenarioConfig& cfg, const RunOptions& options) {
    if (options.output_dir) return *options.output_dir;
    if (const char* env = std::getenv("DFLSHIELD_OUT"); env && *env) return env;
    return cfg.output_dir;
}

json frame_json(const FrameRecord& r) {
    return {{"sent_at_us", r.sent_at},
            {"deliver_at_us", r.deliver_at},
            {"src", r.src},
            {"dst", r.dst},
            {"seq", r.seq},
            {"src_addr", r.src_addr.to_string()},
            {"dst_addr", r.dst_addr.to_string()},
            {"kind", to_string(r.kind)},
            {"correlation_id", r.correlation_id},
            {"bytes", r.bytes},
            {"lost", r.lost},
            {"intercepted", r.intercepted}};
}

json node_json(const Node& n) {
    json rounds = json::array();
    for (const auto& r : n.history()) {
        Micros active = 0;
        for (const auto& [a, b] : r.active_intervals) active += b - a;
        json row{{"round", r.round},
                 {"params_sent", r.params_sent},
                 {"params_received", r.params_received},
                 {"late_frames", r.late_frames},
                 {"rejected_frames", r.rejected_frames},
                 {"routing_errors", r.routing_errors},
                 {"starved", r.starved},
                 {"rotated", r.rotated},
                 {"wall_ms", us_to_ms(r.wall_time())},
                 {"active_ms", us_to_ms(active)},
                 {"bytes_sent", r.bytes_sent},
                 {"bytes_received", r.bytes_received}};
        if (r.evaluated) {
            row["f1"] = r.eval.f1_macro;
            row["loss"] = r.eval.loss;
            row["accuracy"] = r.eval.accuracy;
        }
        rounds.push_back(std::move(row));
    }
    const auto& rej = n.rejections();
    std::size_t envelope = 0;
    for (const auto& [_, c] : rej.envelope) envelope += c;
    json out{{"node", n.id()},
             {"role", to_string(n.role())},
             {"final_address", n.address().to_string()},
             {"rounds", std::move(rounds)},
             {"rejections",
              {{"envelope", envelope},
               {"bad_token", rej.bad_token},
               {"not_member", rej.not_member},
               {"malformed", rej.malformed},
               {"duplicate", rej.duplicate},
               {"bad_control", rej.bad_control}}}};
    if (!n.history().empty()) {
        try {
            out["activity_ratio"] = compute_activity_ratio(n.history());
        } catch (const std::invalid_argument&) {
        }
    }
    return out;
}

json attack_json(const AttackOutcome& o) {
    return {{"kind", to_string(o.kind)},
            {"target", o.target},
            {"attack_rounds", o.attack_rounds},
            {"isolated_rounds", o.isolated_rounds},
            {"unreachable_rounds", o.unreachable_rounds},
            {"control_established", o.control_established},
            {"plaintext_param_sets_recovered", o.plaintext_param_sets_recovered},
            {"mimicry_sent", o.mimicry_sent},
            {"mimicry_accepted", o.mimicry_accepted},
            {"topology_recall", o.topology_recall},
            {"sampled_rounds", o.sampled_rounds},
            {"all_attacker_rate", o.all_attacker_rate},
            {"all_attacker_expected", o.all_attacker_expected},
            {"success", o.success}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("short write to " + path.string());
}

struct Artifacts {
    std::string report_csv;
    std::string node_metrics;
    std::string frames;
    std::string links;
    std::string summary;
    std::optional<std::string> capture;
};

/// Writes into a staging directory and renames it over `final_dir`.
std::vector<std::string> publish(const Artifacts& a, const fs::path& root, const std::string& name) {
    fs::create_directories(root);
    const fs::path staging = root / ("." + name + ".staging");
    const fs::path final_dir = root / name;
    fs::remove_all(staging);
    fs::create_directories(staging);
    std::vector<std::string> files{kRunReportFile, kNodeMetricsFile, kFrameLogFile, kLinksFile, kSummaryFile};
    write_text(staging / kRunReportFile, a.report_csv);
    write_text(staging / kNodeMetricsFile, a.node_metrics);
    write_text(staging / kFrameLogFile, a.frames);
    write_text(staging / kLinksFile, a.links);
    write_text(staging / kSummaryFile, a.summary);
    if (a.capture) {
        write_text(staging / kCaptureFile, *a.capture);
        files.push_back(kCaptureFile);
    }
    fs::remove_all(final_dir);
    fs::remove_all(root / (name + ".partial"));
    fs::rename(staging, final_dir);
    return files;
}

void publish_partial(const Artifacts& a, const fs::path& root, const std::string& name, const std::string& error) {
    try {
        const fs::path dir = root / (name + ".partial");
        fs::remove_all(dir);
        fs::create_directories(dir);
        if (!a.report_csv.empty()) write_text(dir / kRunReportFile, a.report_csv);
        if (!a.frames.empty()) write_text(dir / kFrameLogFile, a.frames);
        if (!a.links.empty()) write_text(dir / kLinksFile, a.links);
        write_text(dir / kPartialMarker, error + "\n");
    } catch (const std::exception& e) {
        std::cerr << "error: could not write partial artifacts: " << e.what() << "\n";
    }
}

}  // namespace

std::vector<DatasetSplit> load_shards(const ScenarioConfig& cfg) {
    Dataset data;
    if (cfg.dataset.empty()) {
        BlobSpec spec;
        spec.classes = cfg.blob_classes;
        spec.dim = cfg.blob_dim;
        spec.samples = cfg.blob_samples;
        data = make_blobs(spec, derive_seed(cfg.seed, kShardStream));
    } else {
        data = Dataset::load_csv(cfg.dataset_path());
    }
    if (data.size() < 2 * cfg.nodes) throw std::runtime_error("dataset too small for the node count");
    auto s = split(data, 1.0 - cfg.test_fraction, derive_seed(cfg.seed, kShardStream + 1));
    auto train = partition(s.train, cfg.nodes, derive_seed(cfg.seed, kShardStream + 2));
    auto test = partition(s.test, cfg.nodes, derive_seed(cfg.seed, kShardStream + 3));
    std::vector<DatasetSplit> out;
    for (std::size_t i = 0; i < cfg.nodes; ++i) out.push_back({std::move(train[i]), std::move(test[i])});
    return out;
}

AddressPool scenario_address_pool(const ScenarioConfig& cfg) {
    if (cfg.fabric.backend == Backend::tcp) {
        return AddressPool::range(PeerAddress::ipv4(127, 0, 1, 1), std::max<std::size_t>(cfg.nodes, 4),
                                  static_cast<std::uint16_t>(cfg.tcp_port_base + 1), 8);
    }
    return default_address_pool(cfg.nodes);
}

PeerAddress scenario_controller_address(const ScenarioConfig& cfg) {
    if (cfg.fabric.backend == Backend::tcp) return {PeerAddress::ipv4(127, 0, 0, 1), cfg.tcp_port_base};
    return {PeerAddress::ipv4(10, 0, 0, 1), 7000};
}

FederationPlan make_plan(const ScenarioConfig& cfg) {
    FederationPlan p;
    p.name = std::string(to_string(cfg.security));
    p.security = cfg.security;
    p.node_count = cfg.nodes;
    p.roles = cfg.roles;
    p.topology = cfg.topology;
    p.edge_probability = cfg.edge_probability;
    p.node_data = load_shards(cfg);
    const auto& first = p.node_data.front().train;
    p.architecture.layer_sizes.push_back(first.dim());
    for (auto h : cfg.hidden) p.architecture.layer_sizes.push_back(h);
    p.architecture.layer_sizes.push_back(first.num_classes());
    p.architecture.activation = cfg.activation;
    p.architecture.output = OutputKind::softmax;
    p.train = cfg.train;
    p.train.rounds = std::max(cfg.rounds, 1);
    p.seed = cfg.seed;
    p.receive_timeout = ms_to_us(cfg.receive_timeout_ms);
    p.session_renewal_rounds = cfg.session_renewal_rounds;
    p.rotation_rounds = cfg.rotation_rounds;
    p.key_renewal_rounds = cfg.key_renewal_rounds;
    p.sample_size = cfg.sample_size;
    p.rsa_bits = cfg.rsa_bits;
    p.token_ttl_ms = cfg.token_ttl_ms;
    p.compute_ns_per_mac = cfg.compute_ns_per_mac;
    p.controller_address = scenario_controller_address(cfg);
    p.address_pool = scenario_address_pool(cfg);
    p.listen_overrides = cfg.listen;
    return p;
}

ScenarioResult run_scenario(const ScenarioConfig& cfg, const RunOptions& options) {
    const auto started = std::chrono::steady_clock::now();
    ScenarioResult result;
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        result.exit_code = exit_code::invalid_input;
        result.error = e.what();
        return result;
    }
    const fs::path root = output_root(cfg, options);
    result.artifact_dir = root / cfg.name;
    Artifacts art;

    try {
        auto fabric = make_fabric(cfg.fabric);
        auto plan = make_plan(cfg);
        std::unique_ptr<EclipseAttack> eclipse;
        std::unique_ptr<Eavesdropper> spy;
        RoundObserver* observer = nullptr;
        if (cfg.attack) {
            auto* sim = dynamic_cast<SimFabric*>(fabric.get());
            if (!sim) throw std::runtime_error("attacks need the simulated backend");
            if (cfg.attack->plan.kind == AttackKind::eclipse) {
                eclipse = std::make_unique<EclipseAttack>(cfg.attack->plan, *sim);
                observer = eclipse.get();
            } else {
                spy = std::make_unique<Eavesdropper>(cfg.attack->plan, *sim);
                observer = spy.get();
            }
        }

        auto fed = Federation::deploy(std::move(plan), *fabric, observer);
        result.excluded = fed->excluded_nodes();
        try {
            // zero rounds is a deploy-only run
            if (cfg.rounds > 0) fed->run();
        } catch (...) {
            result.rounds_completed = fed->rounds_completed();
            std::ostringstream frames;
            for (const auto& r : fabric->frame_log()) frames << frame_json(r).dump() << '\n';
            art.frames = frames.str();
            throw;
        }
        result.rounds_completed = fed->rounds_completed();
        result.report = fed->report();
        result.stats = fabric->snapshot_stats();
        for (auto id : fed->active_nodes()) {
            for (const auto& r : fed->node(id)->history()) {
                result.routing_errors += r.routing_errors;
                result.starvation_events += r.starved ? 1 : 0;
                result.late_frames += r.late_frames;
            }
        }

        const CaptureLog* capture = nullptr;
        if (eclipse) {
            auto o = eclipse->outcome(result.rounds_completed);
            if (uses_mtd(cfg.security)) {
                const std::size_t m = fed->active_nodes().size() - 1;
                const std::size_t n = cfg.sample_size != 0 ? cfg.sample_size : NeighborPool::default_sample_size(m);
                const std::size_t a = std::min(cfg.attack->plan.attacker_ids.size(), m);
                o.sampled_rounds = cfg.attack->monte_carlo_trials;
                o.all_attacker_rate =
                    mtd_all_attacker_rate(m, a, n, o.sampled_rounds, derive_seed(cfg.seed, kMonteCarloStream));
                o.all_attacker_expected = all_inside_probability(a, m, n);
            }
            result.attack = o;
            capture = &eclipse->capture();
        } else if (spy) {
            AttackOutcome o;
            o.kind = cfg.attack->plan.kind;
            o.target = cfg.attack->plan.target;
            o.plaintext_param_sets_recovered = spy->capture().recovered_params.size();
            auto map = run_network_map(spy->capture());
            o.topology_recall = topology_recall(map, fed->topology());
            o.success = o.kind == AttackKind::eavesdrop ? o.plaintext_param_sets_recovered > 0
                                                        : o.topology_recall >= 0.8;
            result.attack = o;
            capture = &spy->capture();
        }

        std::ostringstream csv;
        csv << kRunReportHeader << '\n';
        write_run_report_rows(csv, result.report);
        if (result.attack) {
            csv << '\n' << kAttackTableHeader << '\n';
            write_attack_row(csv, *result.attack);
        }
        art.report_csv = csv.str();

        json nodes = json::array();
        for (auto id : fed->active_nodes()) nodes.push_back(node_json(*fed->node(id)));
        art.node_metrics = json{{"nodes", std::move(nodes)}, {"excluded", result.excluded}}.dump(2) + "\n";

        std::ostringstream frames;
        for (const auto& r : fabric->frame_log()) frames << frame_json(r).dump() << '\n';
        art.frames = frames.str();

        std::ostringstream links;
        write_links_csv(links, result.stats);
        art.links = links.str();

        if (capture) {
            std::ostringstream cap;
            write_capture_jsonl(cap, *capture);
            art.capture = cap.str();
        }

        result.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        const auto& s = result.report.summary;
        json summary{{"name", cfg.name},
                     {"config", result.report.config},
                     {"security", to_string(cfg.security)},
                     {"backend", cfg.fabric.backend == Backend::tcp ? "tcp" : "sim"},
                     {"nodes", cfg.nodes},
                     {"rounds", cfg.rounds},
                     {"rounds_completed", result.rounds_completed},
                     {"excluded", result.excluded},
                     {"f1_mean", s.f1.mean},
                     {"f1_sd", s.f1.sd},
                     {"final_f1_mean", s.final_f1.mean},
                     {"final_f1_sd", s.final_f1.sd},
                     {"network_mb", s.network_mb},
                     {"throughput_mbps", s.throughput_mbps},
                     {"latency_ms", s.latency_ms},
                     {"loss_pct", s.loss_pct},
                     {"ctrl_overhead_pct", s.ctrl_overhead_pct},
                     {"total_bytes", s.total_bytes},
                     {"control_bytes", s.control_bytes},
                     {"gaps", s.gaps.size()},
                     {"routing_errors", result.routing_errors},
                     {"starvation_events", result.starvation_events},
                     {"late_frames", result.late_frames},
                     {"runtime_s", result.runtime_s}};
        if (result.attack) summary["attack"] = attack_json(*result.attack);
        art.summary = summary.dump(2) + "\n";

        if (result.report.empty()) {
            result.exit_code = exit_code::empty_report;
            result.error = "run produced no report rows";
        }
    } catch (const std::exception& e) {
        result.exit_code = exit_code::runtime_error;
        result.error = e.what();
        if (options.write_artifacts) {
            publish_partial(art, root, cfg.name, e.what());
            result.artifact_dir = root / (cfg.name + ".partial");
        }
        return result;
    }

    if (options.write_artifacts) {
        try {
            result.artifacts = publish(art, root, cfg.name);
        } catch (const std::exception& e) {
            result.exit_code = exit_code::runtime_error;
            result.error = e.what();
        }
    }
    return result;
}

std::vector<ScenarioResult> run_matrix(const ScenarioConfig& cfg, const RunOptions& options) {
    std::vector<ScenarioResult> out;
    std::vector<fs::path> reports;
    for (auto sec : {SecuritySetting::baseline, SecuritySetting::encryption, SecuritySetting::encryption_mtd}) {
        ScenarioConfig c = cfg;
        c.security = sec;
        c.name = cfg.name + "-" + std::string(to_string(sec));
        out.push_back(run_scenario(c, options));
        if (out.back().exit_code == exit_code::ok) reports.push_back(out.back().artifact_dir / kRunReportFile);
    }
    if (options.write_artifacts && reports.size() >= 2) {
        auto cmp = compare_runs(reports);
        const fs::path root = output_root(cfg, options);
        std::ostringstream table, plot;
        write_comparison(table, cmp);
        write_plot_data(plot, cmp);
        write_text(root / (cfg.name + "-comparison.csv"), table.str());
        write_text(root / (cfg.name + "-plot.csv"), plot.str());
    }
    return out;
}

}  // namespace dflshield
