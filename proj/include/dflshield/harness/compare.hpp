#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dflshield/controller/ledger.hpp"

namespace dflshield {

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One run report read back from disk.
struct ReportTotals {
    std::filesystem::path source;
    std::string config;
    std::size_t rows = 0;
    std::size_t nodes = 0;
    std::uint32_t rounds = 0;
    double final_f1 = 0.0;
    double network_mb = 0.0;
    double throughput_mbps = 0.0;
    double latency_ms = 0.0;
    double loss_pct = 0.0;
    double ctrl_overhead_pct = 0.0;
    /// round -> (mean f1, mean loss) over nodes that evaluated
    std::map<std::uint32_t, std::pair<double, double>> per_round;
};

/// Throws SchemaError on a header other than kRunReportHeader or a bad row.
ReportTotals read_run_report(const std::filesystem::path& path);

struct Comparison {
    std::vector<ReportTotals> runs;  // baseline, encryption, encryption_mtd, then the rest
};

/// Needs at least two reports. Throws SchemaError.
Comparison compare_runs(const std::vector<std::filesystem::path>& reports);

/// Wide table; every metric gets its value, the delta against the first run
/// and a direction flag (up, down, same).
void write_comparison(std::ostream& out, const Comparison& c);
/// Long format: config,round,metric,value.
void write_plot_data(std::ostream& out, const Comparison& c);

}  // namespace dflshield
