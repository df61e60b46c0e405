#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "dflshield/harness/compare.hpp"
#include "dflshield/harness/run.hpp"

using namespace dflshield;

namespace {

struct RunArgs {
    std::string config;
    std::optional<std::int64_t> seed;
    std::optional<std::string> backend;
    bool matrix = false;
    std::optional<std::string> out;
    std::optional<NodeId> node_id;
    std::optional<std::string> role;
    std::optional<std::string> security;
    std::optional<std::string> listen;
};

void print_result(const std::string& name, const ScenarioResult& r) {
    if (r.exit_code == exit_code::invalid_input || r.exit_code == exit_code::runtime_error) {
        std::cerr << "error: " << name << ": " << r.error << "\n";
        if (!r.artifact_dir.empty() && r.exit_code == exit_code::runtime_error) {
            std::cerr << "partial artifacts in " << r.artifact_dir.string() << "\n";
        }
        return;
    }
    const auto& s = r.report.summary;
    std::printf("%s: rounds=%u final_f1=%.4f network_mb=%.3f ctrl_overhead_pct=%.3f runtime_s=%.2f\n",
                name.c_str(), r.rounds_completed, s.final_f1.mean, s.network_mb, s.ctrl_overhead_pct, r.runtime_s);
    if (r.attack) {
        std::printf("  %s target=%u isolated_rounds=%u recovered=%zu success=%s\n", std::string(to_string(r.attack->kind)).c_str(),
                    r.attack->target, r.attack->isolated_rounds, r.attack->plaintext_param_sets_recovered,
                    r.attack->success ? "true" : "false");
    }
    if (r.exit_code == exit_code::empty_report) std::cerr << "error: " << name << ": " << r.error << "\n";
    if (!r.artifacts.empty()) std::printf("  artifacts: %s\n", r.artifact_dir.string().c_str());
}

int apply_overrides(ScenarioConfig& cfg, const RunArgs& a) {
    if (a.seed) {
        if (*a.seed < 0) {
            std::cerr << "error: --seed must not be negative\n";
            return exit_code::invalid_input;
        }
        cfg.seed = static_cast<std::uint64_t>(*a.seed);
        cfg.fabric.seed = cfg.seed;
    }
    if (a.backend) cfg.fabric.backend = *a.backend == "tcp" ? Backend::tcp : Backend::simulated;
    if (a.security) {
        auto s = parse_security(*a.security);
        if (!s) {
            std::cerr << "error: unknown security setting '" << *a.security << "'\n";
            return exit_code::invalid_input;
        }
        cfg.security = *s;
    }
    if ((a.role || a.listen) && !a.node_id) {
        std::cerr << "error: --role and --listen need --node-id\n";
        return exit_code::invalid_input;
    }
    if (a.role) {
        auto role = parse_role(*a.role);
        if (!role) {
            std::cerr << "error: unknown role '" << *a.role << "'\n";
            return exit_code::invalid_input;
        }
        cfg.roles[*a.node_id] = *role;
    }
    if (a.listen) {
        auto addr = PeerAddress::parse(*a.listen);
        if (!addr) {
            std::cerr << "error: --listen expects ip:port\n";
            return exit_code::invalid_input;
        }
        cfg.listen[*a.node_id] = *addr;
    }
    return exit_code::ok;
}

int cmd_run(const RunArgs& a) {
    ScenarioConfig cfg;
    try {
        cfg = load_scenario(a.config);
        if (int rc = apply_overrides(cfg, a); rc != exit_code::ok) return rc;
        cfg.validate();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << a.config << ": " << e.what() << "\n";
        return exit_code::invalid_input;
    }
    RunOptions options;
    if (a.out) options.output_dir = *a.out;
    if (!a.matrix) {
        auto r = run_scenario(cfg, options);
        print_result(cfg.name, r);
        return r.exit_code;
    }
    int worst = exit_code::ok;
    for (const auto& r : run_matrix(cfg, options)) {
        print_result(cfg.name, r);
        worst = std::max(worst, r.exit_code);
    }
    return worst;
}

int cmd_validate(const std::string& path) {
    try {
        auto cfg = load_scenario(path);
        std::printf("%s: ok (%s, %zu nodes, %d rounds)\n", path.c_str(), std::string(to_string(cfg.security)).c_str(),
                    cfg.nodes, cfg.rounds);
        return exit_code::ok;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << path << ": " << e.what() << "\n";
        return exit_code::invalid_input;
    }
}

int cmd_compare(const std::vector<std::string>& reports, const std::string& out_dir) {
    std::vector<std::filesystem::path> paths(reports.begin(), reports.end());
    try {
        auto cmp = compare_runs(paths);
        std::filesystem::create_directories(out_dir);
        std::ofstream table(std::filesystem::path(out_dir) / "comparison.csv");
        std::ofstream plot(std::filesystem::path(out_dir) / "plot.csv");
        write_comparison(table, cmp);
        write_plot_data(plot, cmp);
        write_comparison(std::cout, cmp);
        if (!table || !plot) {
            std::cerr << "error: cannot write comparison files in " << out_dir << "\n";
            return exit_code::runtime_error;
        }
        return exit_code::ok;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code::invalid_input;
    }
}

int cmd_gen_data(const std::string& out, const BlobSpec& spec, std::uint64_t seed) {
    try {
        make_blobs(spec, seed).save_csv(out);
        std::printf("wrote %zu samples to %s\n", spec.samples, out.c_str());
        return exit_code::ok;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code::runtime_error;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decentralised federated learning with encryption and moving target defence"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "run a scenario");
    run->add_option("--config", run_args.config, "scenario TOML")->required();
    run->add_option("--seed", run_args.seed, "override the scenario seed");
    run->add_option("--backend", run_args.backend, "sim or tcp")->check(CLI::IsMember({"sim", "tcp"}));
    run->add_flag("--matrix", run_args.matrix, "run under baseline, encryption and encryption_mtd");
    run->add_option("--out", run_args.out, "output directory");
    run->add_option("--node-id", run_args.node_id, "node the --role and --listen overrides apply to");
    run->add_option("--role", run_args.role, "idle, trainer, aggregator or proxy");
    run->add_option("--security", run_args.security, "baseline, encryption or encryption_mtd");
    run->add_option("--listen", run_args.listen, "initial ip:port of --node-id");

    std::string validate_path;
    auto* validate = app.add_subcommand("validate", "check a scenario without running it");
    validate->add_option("--config", validate_path, "scenario TOML")->required();

    std::vector<std::string> reports;
    std::string compare_out = ".";
    auto* compare = app.add_subcommand("compare", "compare run reports");
    compare->add_option("reports", reports, "run_report.csv files")->required();
    compare->add_option("--out", compare_out, "directory for comparison.csv and plot.csv");

    std::string data_out = "blobs.csv";
    BlobSpec spec;
    std::uint64_t data_seed = 1;
    auto* gen = app.add_subcommand("gen-data", "write a Gaussian blob dataset");
    gen->add_option("--out", data_out, "CSV path");
    gen->add_option("--samples", spec.samples);
    gen->add_option("--classes", spec.classes);
    gen->add_option("--dim", spec.dim);
    gen->add_option("--spread", spec.spread);
    gen->add_option("--center-scale", spec.center_scale);
    gen->add_option("--seed", data_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? exit_code::ok : exit_code::invalid_input;
    }

    if (*run) return cmd_run(run_args);
    if (*validate) return cmd_validate(validate_path);
    if (*compare) return cmd_compare(reports, compare_out);
    if (*gen) return cmd_gen_data(data_out, spec, data_seed);
    return exit_code::invalid_input;
}
