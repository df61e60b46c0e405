#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "dflshield/harness/compare.hpp"
#include "dflshield/harness/run.hpp"

using namespace dflshield;
namespace fs = std::filesystem;

namespace {

const fs::path kSourceDir = DFLSHIELD_SOURCE_DIR;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("dflshield-test-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ScenarioConfig small_config(const std::string& name, SecuritySetting sec = SecuritySetting::baseline, int rounds = 3) {
    ScenarioConfig c;
    c.name = name;
    c.seed = 7;
    c.nodes = 5;
    c.rounds = rounds;
    c.security = sec;
    c.rsa_bits = 1024;
    c.blob_samples = 600;
    c.fabric.seed = 7;
    return c;
}

std::set<std::string> listing(const fs::path& dir) {
    std::set<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) out.insert(e.path().filename().string());
    return out;
}

ConfigError parse_error(const std::string& text) {
    try {
        parse_scenario(text);
    } catch (const ConfigError& e) {
        return e;
    }
    FAIL("document was accepted");
    return ConfigError("", 0, "");
}

}  // namespace

TEST_CASE("bundled scenarios parse, validate and survive a serialize round trip") {
    std::size_t count = 0;
    for (const auto& e : fs::directory_iterator(kSourceDir / "scenarios")) {
        if (e.path().extension() != ".toml") continue;
        CAPTURE(e.path().string());
        auto cfg = load_scenario(e.path());
        CHECK_NOTHROW(cfg.validate());
        CHECK(fs::exists(cfg.dataset_path()));
        auto again = parse_scenario(serialize_scenario(cfg), cfg.base_dir);
        CHECK(again == cfg);
        ++count;
    }
    CHECK(count >= 9);
}

TEST_CASE("roles, listen overrides and attacks round trip") {
    const std::string text = R"(
[scenario]
name = "rt"
nodes = 6
rounds = 4
security = "encryption_mtd"
sample_size = 2
roles = { 0 = "aggregator", 3 = "idle" }
listen = { 1 = "10.0.9.9:9100" }

[fabric]
loss_rate = 0.05
seed = 99

[train]
hidden = [8, 4]
activation = "tanh"

[attack]
kind = "eavesdrop"
attackers = [900]
target = 2
start_round = 1
end_round = 3
tapped_links = [[0, 1], [2, 3]]
)";
    auto cfg = parse_scenario(text);
    CHECK(cfg.roles.at(0) == Role::aggregator);
    CHECK(cfg.roles.at(3) == Role::idle);
    CHECK(cfg.listen.at(1).to_string() == "10.0.9.9:9100");
    CHECK(cfg.fabric.seed == 99);
    REQUIRE(cfg.attack);
    CHECK(cfg.attack->plan.kind == AttackKind::eavesdrop);
    CHECK(cfg.attack->plan.tapped_links.size() == 2);
    CHECK(parse_scenario(serialize_scenario(cfg)) == cfg);
}

TEST_CASE("fabric seed defaults to the scenario seed") {
    auto cfg = parse_scenario("[scenario]\nseed = 31\n");
    CHECK(cfg.fabric.seed == 31);
}

TEST_CASE("diagnostics name the field and line") {
    SUBCASE("bad value") {
        auto e = parse_error("[scenario]\nname = \"x\"\nnodes = 1\n");
        CHECK(e.field() == "scenario.nodes");
        CHECK(e.line() == 3);
    }
    SUBCASE("wrong type") {
        auto e = parse_error("[scenario]\nrounds = \"ten\"\n");
        CHECK(e.field() == "scenario.rounds");
        CHECK(e.line() == 2);
    }
    SUBCASE("unknown key") {
        auto e = parse_error("[scenario]\nname = \"x\"\n\n[fabric]\nlatency = 3\n");
        CHECK(e.field() == "fabric.latency");
        CHECK(e.line() == 5);
    }
    SUBCASE("unknown section") {
        auto e = parse_error("[scenery]\nname = \"x\"\n");
        CHECK(e.field() == "scenery");
    }
    SUBCASE("unknown enum") {
        auto e = parse_error("[scenario]\nsecurity = \"tls\"\n");
        CHECK(e.field() == "scenario.security");
        CHECK(std::string(e.what()).find("tls") != std::string::npos);
    }
    SUBCASE("syntax error") {
        auto e = parse_error("[scenario]\nname = \n");
        CHECK(e.line() == 2);
    }
    SUBCASE("attack target outside the federation") {
        auto e = parse_error("[scenario]\nnodes = 4\n[attack]\nkind = \"eclipse\"\nattackers = [100]\ntarget = 9\n");
        CHECK(e.field() == "attack.target");
        CHECK(e.line() == 6);
    }
    SUBCASE("attacks need the simulated fabric") {
        auto e = parse_error("[scenario]\n[fabric]\nbackend = \"tcp\"\n[attack]\nkind = \"eavesdrop\"\ntarget = 0\n");
        CHECK(e.field().rfind("attack", 0) == 0);
    }
    SUBCASE("negative count") {
        auto e = parse_error("[scenario]\nsample_size = -1\n");
        CHECK(e.field() == "scenario.sample_size");
    }
}

TEST_CASE("a run writes exactly the declared artifact set") {
    auto root = scratch("artifacts");
    RunOptions opt;
    opt.output_dir = root;
    auto r = run_scenario(small_config("plain"), opt);
    REQUIRE(r.exit_code == exit_code::ok);
    CHECK(r.artifact_dir == root / "plain");
    CHECK(listing(root) == std::set<std::string>{"plain"});
    CHECK(listing(r.artifact_dir) ==
          std::set<std::string>{kRunReportFile, kNodeMetricsFile, kFrameLogFile, kLinksFile, kSummaryFile});
    CHECK(std::set<std::string>(r.artifacts.begin(), r.artifacts.end()) == listing(r.artifact_dir));

    auto totals = read_run_report(r.artifact_dir / kRunReportFile);
    CHECK(totals.rows == 5 * 3);
    CHECK(totals.nodes == 5);
    CHECK(totals.rounds == 3);
    CHECK(totals.config == "baseline");

    auto csv = slurp(r.artifact_dir / kRunReportFile);
    CHECK(csv.rfind(std::string(kRunReportHeader) + "\n", 0) == 0);

    std::istringstream frames(slurp(r.artifact_dir / kFrameLogFile));
    std::string line;
    std::size_t n = 0;
    while (std::getline(frames, line)) {
        CHECK(nlohmann::json::parse(line).contains("kind"));
        ++n;
    }
    CHECK(n > 0);
    auto summary = nlohmann::json::parse(slurp(r.artifact_dir / kSummaryFile));
    CHECK(summary.at("rounds_completed") == 3);
}

TEST_CASE("a rerun with the same seed writes byte-identical reports") {
    auto a = scratch("rerun-a");
    auto b = scratch("rerun-b");
    RunOptions oa, ob;
    oa.output_dir = a;
    ob.output_dir = b;
    auto cfg = small_config("det", SecuritySetting::encryption_mtd);
    cfg.fabric.loss_rate = 0.05;
    REQUIRE(run_scenario(cfg, oa).exit_code == exit_code::ok);
    REQUIRE(run_scenario(cfg, ob).exit_code == exit_code::ok);
    CHECK(slurp(a / "det" / kRunReportFile) == slurp(b / "det" / kRunReportFile));
    CHECK(slurp(a / "det" / kFrameLogFile) == slurp(b / "det" / kFrameLogFile));
    CHECK(slurp(a / "det" / kLinksFile) == slurp(b / "det" / kLinksFile));
}

TEST_CASE("a run without rounds reports an empty table") {
    auto root = scratch("empty");
    RunOptions opt;
    opt.output_dir = root;
    auto r = run_scenario(small_config("empty", SecuritySetting::baseline, 0), opt);
    CHECK(r.exit_code == exit_code::empty_report);
    CHECK(r.report.empty());
    CHECK(slurp(root / "empty" / kRunReportFile) == std::string(kRunReportHeader) + "\n");
}

TEST_CASE("invalid configs stop before anything is written") {
    auto root = scratch("invalid");
    RunOptions opt;
    opt.output_dir = root;
    auto cfg = small_config("bad");
    cfg.nodes = 1;
    auto r = run_scenario(cfg, opt);
    CHECK(r.exit_code == exit_code::invalid_input);
    CHECK(listing(root).empty());
}

TEST_CASE("a failing run leaves partial artifacts with a marker") {
    auto root = scratch("partial");
    RunOptions opt;
    opt.output_dir = root;
    auto cfg = small_config("broken");
    // passes validation, then fails while sharding
    std::ofstream(root / "tiny.csv") << "label,f0\n0,0.5\n1,1.5\n0,0.1\n";
    cfg.dataset = (root / "tiny.csv").string();
    auto r = run_scenario(cfg, opt);
    CHECK(r.exit_code == exit_code::runtime_error);
    CHECK(r.artifact_dir == root / "broken.partial");
    CHECK(fs::exists(root / "broken.partial" / kPartialMarker));
    CHECK_FALSE(fs::exists(root / "broken"));
    CHECK_FALSE(fs::exists(root / ".broken.staging"));
}

TEST_CASE("DFLSHIELD_OUT overrides the configured output directory") {
    auto env_root = scratch("env");
    auto cfg = small_config("envrun", SecuritySetting::baseline, 1);
    cfg.output_dir = (scratch("env-config")).string();
    ::setenv("DFLSHIELD_OUT", env_root.c_str(), 1);
    auto r = run_scenario(cfg);
    ::unsetenv("DFLSHIELD_OUT");
    REQUIRE(r.exit_code == exit_code::ok);
    CHECK(fs::exists(env_root / "envrun" / kRunReportFile));
    CHECK(listing(cfg.output_dir).empty());

    auto explicit_root = scratch("env-explicit");
    ::setenv("DFLSHIELD_OUT", env_root.c_str(), 1);
    RunOptions opt;
    opt.output_dir = explicit_root;
    auto r2 = run_scenario(cfg, opt);
    ::unsetenv("DFLSHIELD_OUT");
    REQUIRE(r2.exit_code == exit_code::ok);
    CHECK(fs::exists(explicit_root / "envrun" / kRunReportFile));
}

TEST_CASE("attack runs append the attack table and a capture") {
    auto root = scratch("attack");
    RunOptions opt;
    opt.output_dir = root;
    auto cfg = small_config("spy", SecuritySetting::baseline, 2);
    AttackConfig a;
    a.plan.kind = AttackKind::eavesdrop;
    a.plan.target = 0;
    cfg.attack = a;
    auto r = run_scenario(cfg, opt);
    REQUIRE(r.exit_code == exit_code::ok);
    REQUIRE(r.attack);
    CHECK(r.attack->success);
    CHECK(r.attack->plaintext_param_sets_recovered > 0);
    CHECK(fs::exists(r.artifact_dir / kCaptureFile));
    auto csv = slurp(r.artifact_dir / kRunReportFile);
    CHECK(csv.find("\n\n" + std::string(kAttackTableHeader) + "\n") != std::string::npos);
    CHECK(read_run_report(r.artifact_dir / kRunReportFile).rows == 10);
}

TEST_CASE("matrix runs compare in baseline, encryption, encryption_mtd order") {
    auto root = scratch("matrix");
    RunOptions opt;
    opt.output_dir = root;
    auto results = run_matrix(small_config("m"), opt);
    REQUIRE(results.size() == 3);
    for (const auto& r : results) CHECK(r.exit_code == exit_code::ok);
    CHECK(fs::exists(root / "m-comparison.csv"));
    CHECK(fs::exists(root / "m-plot.csv"));

    std::vector<fs::path> reports;
    for (auto name : {"m-encryption_mtd", "m-baseline", "m-encryption"}) reports.push_back(root / name / kRunReportFile);
    auto cmp = compare_runs(reports);
    REQUIRE(cmp.runs.size() == 3);
    CHECK(cmp.runs[0].config == "baseline");
    CHECK(cmp.runs[1].config == "encryption");
    CHECK(cmp.runs[2].config == "encryption_mtd");
    CHECK(cmp.runs[1].ctrl_overhead_pct > cmp.runs[0].ctrl_overhead_pct);
    CHECK(cmp.runs[1].network_mb > cmp.runs[0].network_mb);
    CHECK(cmp.runs[2].network_mb > cmp.runs[1].network_mb);

    std::ostringstream table;
    write_comparison(table, cmp);
    std::istringstream lines(table.str());
    std::string header, base, enc;
    std::getline(lines, header);
    std::getline(lines, base);
    std::getline(lines, enc);
    CHECK(header.rfind("config,source,final_f1,", 0) == 0);
    CHECK(base.rfind("baseline,", 0) == 0);
    CHECK(enc.find(",up,") != std::string::npos);

    std::ostringstream plot;
    write_plot_data(plot, cmp);
    CHECK(plot.str().rfind("config,round,metric,value\n", 0) == 0);
}

TEST_CASE("identical reports compare with zero deltas") {
    auto root = scratch("same");
    RunOptions opt;
    opt.output_dir = root;
    REQUIRE(run_scenario(small_config("one"), opt).exit_code == exit_code::ok);
    fs::copy(root / "one", root / "two", fs::copy_options::recursive);
    auto cmp = compare_runs({root / "one" / kRunReportFile, root / "two" / kRunReportFile});
    std::ostringstream table;
    write_comparison(table, cmp);
    std::istringstream lines(table.str());
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
        CHECK(line.find(",up") == std::string::npos);
        CHECK(line.find(",down") == std::string::npos);
    }
}

TEST_CASE("compare rejects malformed reports") {
    auto root = scratch("schema");
    {
        std::ofstream(root / "wrong.csv") << "node,round,f1\n0,0,1\n";
        std::ofstream(root / "short.csv") << kRunReportHeader << "\nbaseline,0,0\n";
    }
    RunOptions opt;
    opt.output_dir = root;
    REQUIRE(run_scenario(small_config("ok"), opt).exit_code == exit_code::ok);
    const auto good = root / "ok" / kRunReportFile;
    CHECK_THROWS_AS(compare_runs({good, root / "wrong.csv"}), SchemaError);
    CHECK_THROWS_AS(compare_runs({good, root / "short.csv"}), SchemaError);
    CHECK_THROWS_AS(compare_runs({good, root / "absent.csv"}), SchemaError);
    CHECK_THROWS_AS(compare_runs({good}), SchemaError);
}
