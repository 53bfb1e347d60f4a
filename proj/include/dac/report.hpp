#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace dac {

// One table row: a protocol's per-cluster accuracy averaged over every run
// found for it.
struct ReportRow {
    std::string protocol;
    std::size_t runs = 0;
    std::vector<double> cluster_means;
    double mean = 0.0;
    // Population std over cluster_means.
    double std = 0.0;
};

struct Report {
    std::vector<std::string> cluster_labels;
    // Sorted by protocol name.
    std::vector<ReportRow> rows;
};

// Collects every accuracy.csv below `results_dir` (each next to the
// config.echo of its run). Throws IngestionError naming the offending file.
Report build_report(const std::filesystem::path& results_dir);

// Aligned text table, accuracies in percent.
std::string format_report_table(const Report& report);
std::string report_csv(const Report& report);

// Builds the report, writes results_dir/summary.csv and returns the table.
std::string write_report(const std::filesystem::path& results_dir);

}  // namespace dac
