#include "dflshield/controller/ledger.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace dflshield {

namespace {

std::string fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string optional_fixed(const std::optional<double>& v) { return v ? fixed(*v) : std::string(); }

double mean_of(const std::vector<double>& xs) { return mean_sd(xs).mean; }

}  // namespace

void RunLedger::append(const LedgerRow& row) {
    std::lock_guard lock(mu_);
    auto [it, inserted] = rows_.emplace(std::pair(row.round, row.node), row);
    if (!inserted) {
        throw std::logic_error("ledger already holds node " + std::to_string(row.node) + " round " +
                               std::to_string(row.round));
    }
}

std::vector<LedgerRow> RunLedger::rows() const {
    std::lock_guard lock(mu_);
    std::vector<LedgerRow> out;
    out.reserve(rows_.size());
    for (const auto& [_, r] : rows_) out.push_back(r);
    return out;
}

std::size_t RunLedger::size() const {
    std::lock_guard lock(mu_);
    return rows_.size();
}

bool RunLedger::contains(NodeId node, std::uint32_t round) const {
    std::lock_guard lock(mu_);
    return rows_.count({round, node}) > 0;
}

MeanSd mean_sd(const std::vector<double>& xs) {
    MeanSd out;
    out.count = xs.size();
    if (xs.empty()) return out;
    double sum = 0.0;
    for (double x : xs) sum += x;
    out.mean = sum / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - out.mean) * (x - out.mean);
        out.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return out;
}

RunReport collect_metrics(const std::string& config, const RunLedger& ledger, const std::vector<NodeId>& expected_nodes,
                          std::uint32_t rounds, std::uint64_t total_bytes, std::uint64_t control_bytes) {
    RunReport report;
    report.config = config;
    report.rows = ledger.rows();
    auto& s = report.summary;
    s.config = config;

    std::vector<double> f1, final_f1, cpu, ram, thr, lat, loss, ctrl;
    std::uint32_t last_round = 0;
    for (const auto& r : report.rows) last_round = std::max(last_round, r.round);
    std::uint64_t row_bytes = 0;
    for (const auto& r : report.rows) {
        if (r.f1) f1.push_back(*r.f1);
        if (r.f1 && r.round == last_round) final_f1.push_back(*r.f1);
        if (r.cpu_pct) cpu.push_back(*r.cpu_pct);
        if (r.ram_pct) ram.push_back(*r.ram_pct);
        thr.push_back(r.throughput_mbps);
        lat.push_back(r.latency_ms);
        loss.push_back(r.loss_pct);
        ctrl.push_back(r.ctrl_overhead_pct);
        row_bytes += r.bytes_sent;
    }
    s.f1 = mean_sd(f1);
    s.final_f1 = mean_sd(final_f1);
    if (!cpu.empty()) s.cpu_pct = mean_of(cpu);
    if (!ram.empty()) s.ram_pct = mean_of(ram);
    s.throughput_mbps = mean_of(thr);
    s.latency_ms = mean_of(lat);
    s.loss_pct = mean_of(loss);
    s.total_bytes = total_bytes != 0 ? total_bytes : row_bytes;
    s.control_bytes = control_bytes;
    s.network_mb = static_cast<double>(s.total_bytes) / 1e6;
    s.ctrl_overhead_pct = total_bytes != 0
                              ? 100.0 * static_cast<double>(control_bytes) / static_cast<double>(total_bytes)
                              : mean_of(ctrl);

    std::set<std::pair<std::uint32_t, NodeId>> present;
    for (const auto& r : report.rows) present.insert({r.round, r.node});
    for (std::uint32_t round = 0; round < rounds; ++round) {
        for (auto n : expected_nodes) {
            if (!present.count({round, n})) s.gaps.emplace_back(n, round);
        }
    }
    return report;
}

void write_run_report_rows(std::ostream& out, const RunReport& report) {
    for (const auto& r : report.rows) {
        out << report.config << ',' << r.node << ',' << r.round << ',' << optional_fixed(r.f1) << ','
            << optional_fixed(r.loss) << ',' << optional_fixed(r.cpu_pct) << ',' << optional_fixed(r.ram_pct) << ','
            << r.net_bytes() << ',' << fixed(r.throughput_mbps) << ',' << fixed(r.latency_ms) << ','
            << fixed(r.loss_pct) << ',' << fixed(r.ctrl_overhead_pct) << '\n';
    }
}

}  // namespace dflshield
