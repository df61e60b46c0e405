#include "dflshield/harness/compare.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace dflshield {

namespace {

constexpr std::size_t kColumns = 12;

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double number(const std::string& cell, const std::filesystem::path& src, std::size_t line) {
    try {
        std::size_t pos = 0;
        double v = std::stod(cell, &pos);
        if (pos == cell.size()) return v;
    } catch (const std::exception&) {
    }
    throw SchemaError(src.string() + ":" + std::to_string(line) + ": bad number '" + cell + "'");
}

int security_rank(const std::string& config) {
    auto s = parse_security(config);
    return s ? static_cast<int>(*s) : 3;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

const char* direction(double delta) {
    if (std::abs(delta) <= 1e-12) return "same";
    return delta > 0 ? "up" : "down";
}

struct Metric {
    const char* name;
    double ReportTotals::*field;
};

constexpr Metric kMetrics[] = {
    {"final_f1", &ReportTotals::final_f1},
    {"network_mb", &ReportTotals::network_mb},
    {"throughput_mbps", &ReportTotals::throughput_mbps},
    {"latency_ms", &ReportTotals::latency_ms},
    {"loss_pct", &ReportTotals::loss_pct},
    {"ctrl_overhead_pct", &ReportTotals::ctrl_overhead_pct},
};

}  // namespace

ReportTotals read_run_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot read " + path.string());
    ReportTotals t;
    t.source = path;
    std::string line;
    if (!std::getline(in, line) || line != kRunReportHeader) {
        throw SchemaError(path.string() + ": header does not match the run report schema");
    }
    std::set<NodeId> nodes;
    double tput = 0.0, lat = 0.0, loss = 0.0, ctrl = 0.0;
    std::uint64_t net = 0;
    std::map<std::uint32_t, std::vector<std::pair<double, double>>> evals;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) break;  // the attack table follows
        auto cells = split_csv(line);
        if (cells.size() != kColumns) {
            throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(kColumns) + " columns");
        }
        if (t.rows == 0) {
            t.config = cells[0];
        } else if (cells[0] != t.config) {
            throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": mixed configs in one report");
        }
        const auto node = static_cast<NodeId>(number(cells[1], path, line_no));
        const auto round = static_cast<std::uint32_t>(number(cells[2], path, line_no));
        nodes.insert(node);
        t.rounds = std::max(t.rounds, round + 1);
        if (!cells[3].empty()) {
            evals[round].emplace_back(number(cells[3], path, line_no),
                                      cells[4].empty() ? 0.0 : number(cells[4], path, line_no));
        }
        net += static_cast<std::uint64_t>(number(cells[7], path, line_no));
        tput += number(cells[8], path, line_no);
        lat += number(cells[9], path, line_no);
        loss += number(cells[10], path, line_no);
        ctrl += number(cells[11], path, line_no);
        ++t.rows;
    }
    t.nodes = nodes.size();
    if (t.rows > 0) {
        const double n = static_cast<double>(t.rows);
        t.throughput_mbps = tput / n;
        t.latency_ms = lat / n;
        t.loss_pct = loss / n;
        t.ctrl_overhead_pct = ctrl / n;
    }
    t.network_mb = static_cast<double>(net) / 1e6;
    for (const auto& [round, v] : evals) {
        double f = 0.0, l = 0.0;
        for (const auto& [f1, lo] : v) {
            f += f1;
            l += lo;
        }
        t.per_round[round] = {f / static_cast<double>(v.size()), l / static_cast<double>(v.size())};
    }
    if (!t.per_round.empty()) t.final_f1 = t.per_round.rbegin()->second.first;
    return t;
}

Comparison compare_runs(const std::vector<std::filesystem::path>& reports) {
    if (reports.size() < 2) throw SchemaError("compare needs at least two reports");
    Comparison c;
    for (const auto& p : reports) c.runs.push_back(read_run_report(p));
    std::stable_sort(c.runs.begin(), c.runs.end(), [](const ReportTotals& a, const ReportTotals& b) {
        return security_rank(a.config) < security_rank(b.config);
    });
    return c;
}

void write_comparison(std::ostream& out, const Comparison& c) {
    out << "config,source";
    for (const auto& m : kMetrics) out << ',' << m.name << ",delta_" << m.name << ",dir_" << m.name;
    out << '\n';
    if (c.runs.empty()) return;
    const auto& ref = c.runs.front();
    for (const auto& r : c.runs) {
        out << r.config << ',' << r.source.string();
        for (const auto& m : kMetrics) {
            const double delta = r.*(m.field) - ref.*(m.field);
            out << ',' << fmt(r.*(m.field)) << ',' << fmt(delta) << ',' << direction(delta);
        }
        out << '\n';
    }
}

void write_plot_data(std::ostream& out, const Comparison& c) {
    out << "config,round,metric,value\n";
    for (const auto& r : c.runs) {
        for (const auto& [round, v] : r.per_round) {
            out << r.config << ',' << round << ",f1," << fmt(v.first) << '\n';
            out << r.config << ',' << round << ",loss," << fmt(v.second) << '\n';
        }
    }
}

}  // namespace dflshield
