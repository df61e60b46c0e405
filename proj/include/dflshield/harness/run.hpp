#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dflshield/harness/scenario.hpp"

namespace dflshield {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int runtime_error = 1;
inline constexpr int invalid_input = 2;
inline constexpr int empty_report = 3;
}  // namespace exit_code

/// Files every run writes; an attack adds kCaptureFile.
inline constexpr const char* kRunReportFile = "run_report.csv";
inline constexpr const char* kNodeMetricsFile = "node_metrics.json";
inline constexpr const char* kFrameLogFile = "frames.jsonl";
inline constexpr const char* kLinksFile = "links.csv";
inline constexpr const char* kSummaryFile = "summary.json";
inline constexpr const char* kCaptureFile = "capture.jsonl";
inline constexpr const char* kPartialMarker = "PARTIAL";

struct RunOptions {
    /// Overrides the scenario's output_dir.
    std::optional<std::filesystem::path> output_dir;
    bool write_artifacts = true;
};

struct ScenarioResult {
    int exit_code = exit_code::ok;
    std::string error;
    RunReport report;
    std::optional<AttackOutcome> attack;
    FabricStats stats;
    std::vector<NodeId> excluded;
    std::size_t routing_errors = 0;
    std::size_t starvation_events = 0;
    std::size_t late_frames = 0;
    std::uint32_t rounds_completed = 0;
    double runtime_s = 0.0;
    std::filesystem::path artifact_dir;
    std::vector<std::string> artifacts;
};

/// Per-node shards from the configured dataset (or generated blobs).
std::vector<DatasetSplit> load_shards(const ScenarioConfig& cfg);
FederationPlan make_plan(const ScenarioConfig& cfg);
/// Simulated runs use the 10.0.x pool; TCP runs use loopback addresses.
AddressPool scenario_address_pool(const ScenarioConfig& cfg);
PeerAddress scenario_controller_address(const ScenarioConfig& cfg);

/// Deploys, runs every round and writes the artifact set into
/// `<output_dir>/<name>/`. Artifacts are staged and moved into place only on
/// success; a failed run leaves `<name>.partial/` with a PARTIAL marker.
ScenarioResult run_scenario(const ScenarioConfig& cfg, const RunOptions& options = {});

/// The scenario under each security setting, in baseline, encryption,
/// encryption_mtd order. Names get the setting appended.
std::vector<ScenarioResult> run_matrix(const ScenarioConfig& cfg, const RunOptions& options = {});

}  // namespace dflshield
