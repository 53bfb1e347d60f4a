#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dac/datagen.hpp"
#include "dac/model.hpp"
#include "dac/protocols.hpp"

namespace dac {

enum class ShiftKind { rotation, label };

// Everything needed to replay one run. Hyperparameter names follow the
// usual notation: E local epochs, T rounds, m peers per round.
struct ExperimentConfig {
    ProtocolKind protocol = ProtocolKind::dac;
    std::size_t K = 0;
    ClusterLayout layout;
    ShiftKind shift = ShiftKind::rotation;
    int T = 200;
    int E = 3;
    std::size_t m = 5;
    std::size_t batch_size = 8;
    double learning_rate = 0.01;
    double tau = 30.0;
    double tau_max = 30.0;
    std::size_t train_n = 400;
    std::size_t val_n = 100;
    std::size_t test_n = 100;
    int n_classes = 4;
    int dim = 2;
    std::size_t hidden_dim = 0;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "results";
    int pens_selection_rounds = 20;
    double pens_top_fraction = 0.5;
    bool two_hop = true;
    TwoHopRule two_hop_rule = TwoHopRule::most_similar;
    // Optional IDX ingestion; replaces the synthetic pool when both are set.
    std::filesystem::path idx_images;
    std::filesystem::path idx_labels;

    Architecture architecture() const;
    ProtocolSettings protocol_settings() const;
    // Every constraint violation, one message each; empty when valid.
    std::vector<std::string> problems() const;
    // Throws ConfigError listing every problem found.
    void validate() const;

    bool operator==(const ExperimentConfig&) const = default;
};

// counts[x][y]: rounds in which client x merged client y's model.
class CommLog {
public:
    CommLog() = default;
    explicit CommLog(std::size_t n) : n_(n), counts_(n * n, 0) {}

    std::size_t size() const { return n_; }
    void record(const CommEvent& e);
    std::uint64_t at(std::size_t x, std::size_t y) const { return counts_[x * n_ + y]; }
    std::uint64_t row_sum(std::size_t x) const;
    const std::vector<std::uint64_t>& raw() const { return counts_; }
    std::vector<std::uint64_t>& raw() { return counts_; }

    bool operator==(const CommLog&) const = default;

private:
    std::size_t n_ = 0;
    std::vector<std::uint64_t> counts_;
};

struct MetricsRecord {
    int round = 0;
    int client_id = 0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double in_cluster_probability_mass = 0.0;
    double tau_used = 0.0;

    bool operator==(const MetricsRecord&) const = default;
};

struct ClientResult {
    int client_id = 0;
    int cluster_id = 0;
    double test_accuracy = 0.0;
    double best_val_loss = 0.0;
};

struct ExperimentResult {
    std::vector<ClientResult> clients;
    // Mean test accuracy per cluster, in layout order.
    std::vector<double> cluster_means;
    // Mean and population std over cluster_means.
    double mean_over_clusters = 0.0;
    double std_over_clusters = 0.0;
    CommLog comm_log;
    std::vector<CommEvent> events;
    std::vector<MetricsRecord> metrics;
    // Final per-client state, for inspection.
    std::vector<ClientRuntime> final_state;
};

// A run in progress. Rounds are synchronous: every client reads the state
// committed at the previous barrier and all new states land together.
class Simulation {
public:
    explicit Simulation(ExperimentConfig config, std::size_t workers = 1);

    const ExperimentConfig& config() const { return config_; }
    const std::vector<ClientShard>& shards() const { return shards_; }
    const std::vector<ClientRuntime>& clients() const { return clients_; }
    int next_round() const { return next_round_; }
    bool finished() const { return next_round_ >= config_.T; }

    void step();
    void run_until(int round);
    void run() { run_until(config_.T); }

    ExperimentResult result() const;

    // Binary snapshot of everything that changes between barriers. Shards are
    // rebuilt from the config on resume.
    void save_checkpoint(const std::filesystem::path& path) const;
    static Simulation resume(const ExperimentConfig& config, const std::filesystem::path& path,
                             std::size_t workers = 1);

private:
    ExperimentConfig config_;
    std::size_t workers_ = 1;
    ProtocolSettings settings_;
    std::vector<ClientShard> shards_;
    std::vector<ClientRuntime> clients_;
    int next_round_ = 0;
    CommLog comm_log_;
    std::vector<CommEvent> events_;
    std::vector<MetricsRecord> metrics_;
};

// Builds the pool and per-client shards exactly as a run would.
std::vector<ClientShard> build_shards(const ExperimentConfig& config);

ExperimentResult run_experiment(const ExperimentConfig& config, std::size_t workers = 1);

// Names accepted by run_sweep / apply_parameter.
const std::vector<std::string>& sweepable_parameters();
// Returns a copy of config with one scalar replaced. Throws ConfigError for
// unknown names or values of the wrong type.
ExperimentConfig apply_parameter(ExperimentConfig config, const std::string& name, double value);
// One run per value, all with the base config's seed (unless the swept
// parameter is the seed itself).
std::vector<ExperimentResult> run_sweep(const ExperimentConfig& base, const std::string& parameter,
                                        const std::vector<double>& values, std::size_t workers = 1);

// accuracy.csv, heatmap.csv, metrics.jsonl, config.echo.
void write_artifacts(const ExperimentResult& result, const ExperimentConfig& config,
                     const std::filesystem::path& dir);

std::string accuracy_csv(const ExperimentResult& result);
std::string heatmap_csv(const CommLog& log);
std::string metrics_jsonl(const std::vector<MetricsRecord>& metrics);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace dac
