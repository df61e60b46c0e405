#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dflshield/util/types.hpp"

namespace dflshield {

/// One (node, round) observation.
struct LedgerRow {
    NodeId node = 0;
    std::uint32_t round = 0;
    std::optional<double> f1;
    std::optional<double> loss;
    /// Host sampling; absent unless enabled.
    std::optional<double> cpu_pct;
    std::optional<double> ram_pct;
    std::uint64_t bytes_sent = 0;
    std::uint64_t bytes_received = 0;
    double throughput_mbps = 0.0;
    double latency_ms = 0.0;
    double loss_pct = 0.0;
    double ctrl_overhead_pct = 0.0;
    double active_ms = 0.0;
    double wall_ms = 0.0;

    std::uint64_t net_bytes() const { return bytes_sent + bytes_received; }
    bool operator==(const LedgerRow&) const = default;
};

/// Append-only store keyed by (round, node).
class RunLedger {
public:
    /// Throws std::logic_error when the key is already present.
    void append(const LedgerRow& row);
    std::vector<LedgerRow> rows() const;
    std::size_t size() const;
    bool contains(NodeId node, std::uint32_t round) const;

private:
    mutable std::mutex mu_;
    std::map<std::pair<std::uint32_t, NodeId>, LedgerRow> rows_;
};

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
    std::size_t count = 0;
};

MeanSd mean_sd(const std::vector<double>& xs);

/// Per-configuration aggregate over every ledger row.
struct RunSummary {
    std::string config;
    MeanSd f1;
    /// f1 over the last round only.
    MeanSd final_f1;
    std::optional<double> cpu_pct;
    std::optional<double> ram_pct;
    double network_mb = 0.0;
    double throughput_mbps = 0.0;
    double latency_ms = 0.0;
    double loss_pct = 0.0;
    double ctrl_overhead_pct = 0.0;
    std::uint64_t total_bytes = 0;
    std::uint64_t control_bytes = 0;
    /// (node, round) pairs expected but absent.
    std::vector<std::pair<NodeId, std::uint32_t>> gaps;
};

struct RunReport {
    std::string config;
    std::vector<LedgerRow> rows;
    RunSummary summary;

    bool empty() const { return rows.empty(); }
};

/// `expected_nodes`/`rounds` define which rows should exist; missing ones
/// become gaps. Control bytes come from the fabric totals the caller passes.
RunReport collect_metrics(const std::string& config, const RunLedger& ledger, const std::vector<NodeId>& expected_nodes,
                          std::uint32_t rounds, std::uint64_t total_bytes = 0, std::uint64_t control_bytes = 0);

inline constexpr const char* kRunReportHeader =
    "config,node,round,f1,loss,cpu_pct,ram_pct,net_bytes,throughput_mbps,latency_ms,loss_pct,ctrl_overhead_pct";

void write_run_report_rows(std::ostream& out, const RunReport& report);

}  // namespace dflshield
