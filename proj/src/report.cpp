#include "dac/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dac/config.hpp"
#include "dac/errors.hpp"

namespace dac {
namespace {

struct RunAccuracy {
    std::string protocol;
    std::vector<std::string> cluster_labels;
    std::vector<double> cluster_means;
};

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IngestionError("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunAccuracy read_run(const std::filesystem::path& accuracy_path) {
    const auto echo_path = accuracy_path.parent_path() / "config.echo";
    if (!std::filesystem::exists(echo_path))
        throw IngestionError(accuracy_path.string() + ": no config.echo next to it");
    ExperimentConfig config;
    try {
        config = parse_config_text(read_file(echo_path));
    } catch (const ConfigError& e) {
        throw IngestionError(echo_path.string() + ": " + e.what());
    }

    RunAccuracy run;
    run.protocol = to_string(config.protocol);
    for (const auto& e : config.layout.entries) run.cluster_labels.push_back(to_string(e.shift));
    const std::size_t n_clusters = config.layout.entries.size();
    std::vector<double> sums(n_clusters, 0.0);
    std::vector<std::size_t> counts(n_clusters, 0);

    std::istringstream in(read_file(accuracy_path));
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& what) {
        throw IngestionError(accuracy_path.string() + ": line " + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            if (line != "client_id,cluster_id,test_accuracy,best_val_loss") fail("unexpected header");
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() != 4) fail("expected 4 fields");
        int cluster = -1;
        double acc = 0.0;
        auto parse = [&](const std::string& s, auto& out) {
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
            if (ec != std::errc{} || p != s.data() + s.size()) fail("malformed field '" + s + "'");
        };
        parse(fields[1], cluster);
        parse(fields[2], acc);
        if (cluster < 0 || static_cast<std::size_t>(cluster) >= n_clusters) fail("cluster id out of range");
        if (!(acc >= 0.0 && acc <= 1.0)) fail("accuracy outside [0, 1]");
        sums[static_cast<std::size_t>(cluster)] += acc;
        ++counts[static_cast<std::size_t>(cluster)];
    }
    if (line_no == 0) fail("empty file");
    for (std::size_t c = 0; c < n_clusters; ++c) {
        if (counts[c] == 0) throw IngestionError(accuracy_path.string() + ": no clients for cluster " + std::to_string(c));
        run.cluster_means.push_back(sums[c] / static_cast<double>(counts[c]));
    }
    return run;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

Report build_report(const std::filesystem::path& results_dir) {
    if (!std::filesystem::is_directory(results_dir))
        throw IngestionError(results_dir.string() + ": not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(results_dir))
        if (entry.is_regular_file() && entry.path().filename() == "accuracy.csv") files.push_back(entry.path());
    if (files.empty()) throw IngestionError(results_dir.string() + ": no accuracy.csv found");
    std::sort(files.begin(), files.end());

    Report report;
    std::map<std::string, std::vector<RunAccuracy>> by_protocol;
    for (const auto& f : files) {
        auto run = read_run(f);
        if (report.cluster_labels.empty()) report.cluster_labels = run.cluster_labels;
        if (run.cluster_labels != report.cluster_labels)
            throw IngestionError(f.string() + ": cluster layout differs from the other runs in " + results_dir.string());
        by_protocol[run.protocol].push_back(std::move(run));
    }

    for (const auto& [protocol, runs] : by_protocol) {
        ReportRow row;
        row.protocol = protocol;
        row.runs = runs.size();
        row.cluster_means.assign(report.cluster_labels.size(), 0.0);
        for (const auto& r : runs)
            for (std::size_t c = 0; c < r.cluster_means.size(); ++c) row.cluster_means[c] += r.cluster_means[c];
        for (double& v : row.cluster_means) v /= static_cast<double>(runs.size());
        for (double v : row.cluster_means) row.mean += v;
        row.mean /= static_cast<double>(row.cluster_means.size());
        double var = 0.0;
        for (double v : row.cluster_means) var += (v - row.mean) * (v - row.mean);
        row.std = std::sqrt(var / static_cast<double>(row.cluster_means.size()));
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string format_report_table(const Report& report) {
    std::vector<std::string> header = {"protocol", "n"};
    for (const auto& l : report.cluster_labels) header.push_back(l);
    header.push_back("mean");
    header.push_back("std");

    std::vector<std::vector<std::string>> cells = {header};
    for (const auto& r : report.rows) {
        std::vector<std::string> row = {r.protocol, std::to_string(r.runs)};
        for (double v : r.cluster_means) row.push_back(fixed(100.0 * v, 2));
        row.push_back(fixed(100.0 * r.mean, 2));
        row.push_back(fixed(100.0 * r.std, 2));
        cells.push_back(std::move(row));
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& row : cells)
        for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], row[j].size());

    std::string out;
    for (const auto& row : cells) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            const std::string pad(width[j] - row[j].size(), ' ');
            out += j == 0 ? row[j] + pad : "  " + pad + row[j];
        }
        out += '\n';
    }
    return out;
}

std::string report_csv(const Report& report) {
    std::string out = "protocol,n_runs";
    for (auto l : report.cluster_labels) {
        std::replace(l.begin(), l.end(), ',', ' ');
        out += ",cluster_" + l;
    }
    out += ",mean,std\n";
    for (const auto& r : report.rows) {
        out += r.protocol + ',' + std::to_string(r.runs);
        for (double v : r.cluster_means) out += ',' + fixed(v, 6);
        out += ',' + fixed(r.mean, 6) + ',' + fixed(r.std, 6) + '\n';
    }
    return out;
}

std::string write_report(const std::filesystem::path& results_dir) {
    const Report report = build_report(results_dir);
    std::ofstream out(results_dir / "summary.csv", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (results_dir / "summary.csv").string());
    out << report_csv(report);
    return format_report_table(report);
}

}  // namespace dac
