// dacsim: run, sweep, validate and summarise decentralized learning
// experiments.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "dac/config.hpp"
#include "dac/errors.hpp"
#include "dac/report.hpp"
#include "dac/simulator.hpp"

namespace {

enum Exit { ok = 0, validation = 1, runtime = 2, ingestion = 3 };

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw dac::ConfigError("--values: '" + item + "' is not a number");
        }
    }
    if (out.empty()) throw dac::ConfigError("--values: empty list");
    return out;
}

void print_summary(const dac::ExperimentResult& r, const dac::ExperimentConfig& c) {
    std::cout << to_string(c.protocol) << ": mean over clusters " << 100.0 * r.mean_over_clusters << "%, std "
              << 100.0 * r.std_over_clusters << " points\n";
    for (std::size_t k = 0; k < r.cluster_means.size(); ++k)
        std::cout << "  cluster " << k << " (" << dac::to_string(c.layout.entries[k].shift)
                  << "): " << 100.0 * r.cluster_means[k] << "%\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decentralized adaptive clustering simulator"};
    app.require_subcommand(1);

    std::size_t workers = 1;
    app.add_option("--workers", workers, "Worker threads per round")->check(CLI::PositiveNumber);

    std::string config_path;
    std::string output_dir;
    bool dry_run = false;
    int checkpoint_at = -1;
    std::string resume_path;

    auto* run = app.add_subcommand("run", "Run one experiment");
    run->add_option("config", config_path, "Config file")->required();
    run->add_option("--output-dir", output_dir, "Overrides output_dir from the config");
    run->add_flag("--dry-run", dry_run, "Validate only");
    run->add_option("--checkpoint-at", checkpoint_at, "Write checkpoint.bin after this many rounds");
    run->add_option("--resume", resume_path, "Continue from a checkpoint file");

    std::string param;
    std::string values;
    auto* sweep = app.add_subcommand("sweep", "Run one experiment per parameter value, same seed");
    sweep->add_option("config", config_path, "Config file")->required();
    sweep->add_option("--param", param, "Parameter to vary")->required();
    sweep->add_option("--values", values, "Comma-separated values")->required();
    sweep->add_option("--output-dir", output_dir, "Overrides output_dir from the config");
    sweep->add_flag("--dry-run", dry_run, "Validate only");

    std::string results_dir;
    auto* report = app.add_subcommand("report", "Summarise stored results");
    report->add_option("results-dir", results_dir, "Directory searched for accuracy.csv")->required();

    auto* validate = app.add_subcommand("validate", "Check a config file");
    validate->add_option("config", config_path, "Config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Exit::ok : Exit::validation;
    }

    try {
        if (*report) {
            std::cout << dac::write_report(results_dir);
            return Exit::ok;
        }

        dac::ExperimentConfig config = dac::parse_config(config_path);
        if (!output_dir.empty()) config.output_dir = output_dir;

        if (*validate || dry_run) {
            if (*sweep) {
                for (double v : parse_values(values)) dac::apply_parameter(config, param, v).validate();
            }
            std::cout << "config ok\n" << dac::echo_config(config);
            return Exit::ok;
        }

        if (*run) {
            auto sim = resume_path.empty() ? dac::Simulation(config, workers)
                                           : dac::Simulation::resume(config, resume_path, workers);
            if (checkpoint_at >= 0) {
                sim.run_until(checkpoint_at);
                std::filesystem::create_directories(config.output_dir);
                sim.save_checkpoint(config.output_dir / "checkpoint.bin");
            }
            sim.run();
            const auto result = sim.result();
            dac::write_artifacts(result, config, config.output_dir);
            print_summary(result, config);
            return Exit::ok;
        }

        if (*sweep) {
            const auto vals = parse_values(values);
            const auto results = dac::run_sweep(config, param, vals, workers);
            for (std::size_t k = 0; k < vals.size(); ++k) {
                auto c = dac::apply_parameter(config, param, vals[k]);
                c.output_dir = config.output_dir / (param + "=" + dac::format_double(vals[k]));
                dac::write_artifacts(results[k], c, c.output_dir);
                std::cout << param << " = " << dac::format_double(vals[k]) << "\n";
                print_summary(results[k], c);
            }
            return Exit::ok;
        }
    } catch (const dac::ConfigError& e) {
        std::cerr << e.what() << '\n';
        return Exit::validation;
    } catch (const dac::IngestionError& e) {
        std::cerr << e.what() << '\n';
        return Exit::ingestion;
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return Exit::runtime;
    }
    return Exit::ok;
}
