#include "dac/simulator.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dac/config.hpp"
#include "dac/errors.hpp"
#include "dac/log.hpp"

namespace dac {

Architecture ExperimentConfig::architecture() const {
    return {static_cast<std::size_t>(dim), hidden_dim, static_cast<std::size_t>(n_classes)};
}

ProtocolSettings ExperimentConfig::protocol_settings() const {
    ProtocolSettings s;
    s.kind = protocol;
    s.m = m;
    s.tau = protocol == ProtocolKind::dac_var ? TauSchedule::sigmoid(tau_max, T) : TauSchedule::constant(tau);
    s.epochs = E;
    s.batch_size = batch_size;
    s.two_hop = two_hop;
    s.two_hop_rule = two_hop_rule;
    s.pens_selection_rounds = pens_selection_rounds;
    s.pens_top_fraction = pens_top_fraction;
    return s;
}

std::vector<std::string> ExperimentConfig::problems() const {
    std::vector<std::string> out;
    if (K < 1) out.push_back("K must be >= 1");
    if (T < 1) out.push_back("T must be >= 1");
    if (E < 1) out.push_back("E must be >= 1");
    if (m < 1 && protocol != ProtocolKind::local) out.push_back("m must be >= 1");
    if (batch_size < 1) out.push_back("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) out.push_back("learning_rate must be positive");
    if (!(tau > 0.0) || !std::isfinite(tau)) out.push_back("tau must be positive");
    if (!(tau_max >= 1.0) || !std::isfinite(tau_max)) out.push_back("tau_max must be >= 1");
    if (train_n < 1 || val_n < 1 || test_n < 1) out.push_back("train_n, val_n and test_n must be >= 1");
    if (n_classes < 2) out.push_back("n_classes must be >= 2");
    if (dim < 2) out.push_back("dim must be >= 2");
    if (protocol == ProtocolKind::pens) {
        if (pens_selection_rounds < 1 || pens_selection_rounds > T)
            out.push_back("pens_selection_rounds must lie in [1, T]");
        if (!(pens_top_fraction > 0.0 && pens_top_fraction <= 1.0))
            out.push_back("pens_top_fraction must lie in (0, 1]");
    }
    if (idx_images.empty() != idx_labels.empty()) out.push_back("idx_images and idx_labels must be given together");

    if (layout.entries.empty()) {
        out.push_back("layout: no clusters declared");
    } else {
        if (layout.total_clients() != K)
            out.push_back("layout: client counts sum to " + std::to_string(layout.total_clients()) + ", expected K = " +
                          std::to_string(K));
        for (const auto& e : layout.entries) {
            const bool is_rotation = std::holds_alternative<Rotation>(e.shift);
            if (is_rotation != (shift == ShiftKind::rotation)) {
                out.push_back("layout: entry " + to_string(e.shift) + " does not match shift = " +
                              (shift == ShiftKind::rotation ? "rotation" : "label"));
                break;
            }
        }
        try {
            // Label ranges are checked against the synthetic class count;
            // IDX data is checked again once loaded.
            layout.validate(static_cast<std::size_t>(std::max(n_classes, 2)));
        } catch (const ConfigError& e) {
            out.push_back(e.what());
        }
    }
    return out;
}

void ExperimentConfig::validate() const {
    const auto list = problems();
    if (list.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& p : list) msg += "\n  - " + p;
    throw ConfigError(msg);
}

void CommLog::record(const CommEvent& e) {
    if (e.src == e.dst) throw ContractViolation("CommLog: self-communication");
    ++counts_[static_cast<std::size_t>(e.src) * n_ + static_cast<std::size_t>(e.dst)];
}

std::uint64_t CommLog::row_sum(std::size_t x) const {
    std::uint64_t s = 0;
    for (std::size_t y = 0; y < n_; ++y) s += at(x, y);
    return s;
}

namespace {

std::size_t pool_size_for(const ExperimentConfig& c) {
    const std::size_t per_client = c.train_n + c.val_n + c.test_n;
    if (c.shift == ShiftKind::rotation) return c.K * per_client;
    // Balanced labels: a subset of s classes holds about s/C of the pool.
    std::size_t n = 0;
    for (const auto& e : c.layout.entries) {
        const auto s = std::get<LabelSubset>(e.shift).classes.size();
        n += (e.client_count * per_client * static_cast<std::size_t>(c.n_classes) + s - 1) / s;
    }
    return n + static_cast<std::size_t>(c.n_classes);
}

}  // namespace

std::vector<ClientShard> build_shards(const ExperimentConfig& config) {
    config.validate();
    Dataset pool;
    if (!config.idx_images.empty()) {
        pool = load_idx(config.idx_images, config.idx_labels);
    } else {
        pool = generate_base_task(config.n_classes, config.dim, static_cast<int>(pool_size_for(config)), config.seed);
    }
    return partition_clients(pool, config.layout, {config.train_n, config.val_n, config.test_n}, config.seed);
}

Simulation::Simulation(ExperimentConfig config, std::size_t workers)
    : config_(std::move(config)), workers_(std::max<std::size_t>(workers, 1)) {
    shards_ = build_shards(config_);
    settings_ = config_.protocol_settings();
    const std::size_t K = config_.K;
    if (settings_.m > K - 1 && config_.protocol != ProtocolKind::local) {
        log::warn("m = " + std::to_string(settings_.m) + " exceeds K - 1 = " + std::to_string(K - 1) +
                  "; clamped");
        settings_.m = K - 1;
    }

    const Architecture arch{shards_.front().train.dim(), config_.hidden_dim, shards_.front().train.n_classes()};
    clients_.reserve(K);
    for (std::size_t i = 0; i < K; ++i) {
        ClientRuntime c;
        c.params = init_params(arch, derive_seed(config_.seed, {static_cast<std::uint64_t>(i)}));
        c.optimizer = OptimizerState::for_params(c.params, config_.learning_rate);
        c.similarity = SimilarityState::fresh(static_cast<int>(i), K);
        c.best_params = c.params;
        c.pens_selection_counts.assign(K, 0);
        clients_.push_back(std::move(c));
    }
    comm_log_ = CommLog(K);
}

void Simulation::step() {
    if (finished()) return;
    const int round = next_round_;
    const std::size_t K = clients_.size();

    std::vector<SimilarityState> sims;
    sims.reserve(K);
    for (const auto& c : clients_) sims.push_back(c.similarity);
    const RoundContext ctx{shards_, clients_, sims, settings_, config_.seed};

    std::vector<RoundOutcome> outcomes(K);
    std::vector<std::exception_ptr> errors(K);
    std::atomic<std::size_t> cursor{0};
    auto work = [&] {
        for (std::size_t i = cursor++; i < K; i = cursor++) {
            try {
                outcomes[i] = run_client_round(ctx, static_cast<int>(i), round);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers_ <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(workers_, K); ++w) pool.emplace_back(work);
    }

    for (std::size_t i = 0; i < K; ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const TrainingError& e) {
            throw TrainingError("client " + std::to_string(i) + ", round " + std::to_string(round) + ": " + e.what());
        }
    }

    for (std::size_t i = 0; i < K; ++i) {
        auto& o = outcomes[i];
        clients_[i] = std::move(o.next);
        for (const auto& e : o.events) {
            comm_log_.record(e);
            events_.push_back(e);
        }
        metrics_.push_back({round, static_cast<int>(i), o.val_loss, o.val_accuracy, o.in_cluster_mass, o.tau_used});
    }
    ++next_round_;
}

void Simulation::run_until(int round) {
    while (next_round_ < std::min(round, config_.T)) step();
}

ExperimentResult Simulation::result() const {
    ExperimentResult r;
    const std::size_t n_clusters = config_.layout.entries.size();
    std::vector<double> sums(n_clusters, 0.0);
    std::vector<std::size_t> counts(n_clusters, 0);
    for (std::size_t i = 0; i < clients_.size(); ++i) {
        const auto& c = clients_[i];
        const auto eval = evaluate(c.best_params, shards_[i].test);
        const int cluster = shards_[i].cluster_id;
        r.clients.push_back({static_cast<int>(i), cluster, eval.accuracy, c.best_val_loss});
        sums[static_cast<std::size_t>(cluster)] += eval.accuracy;
        ++counts[static_cast<std::size_t>(cluster)];
    }
    for (std::size_t c = 0; c < n_clusters; ++c) r.cluster_means.push_back(sums[c] / static_cast<double>(counts[c]));
    double mean = 0.0;
    for (double v : r.cluster_means) mean += v;
    mean /= static_cast<double>(n_clusters);
    double var = 0.0;
    for (double v : r.cluster_means) var += (v - mean) * (v - mean);
    r.mean_over_clusters = mean;
    r.std_over_clusters = std::sqrt(var / static_cast<double>(n_clusters));
    r.comm_log = comm_log_;
    r.events = events_;
    r.metrics = metrics_;
    r.final_state = clients_;
    return r;
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::size_t workers) {
    Simulation sim(config, workers);
    sim.run();
    return sim.result();
}

const std::vector<std::string>& sweepable_parameters() {
    static const std::vector<std::string> names = {
        "tau", "tau_max", "T", "E", "m", "batch_size", "learning_rate", "train_n", "val_n", "test_n",
        "hidden_dim", "dim", "seed", "pens_selection_rounds", "pens_top_fraction", "two_hop"};
    return names;
}

ExperimentConfig apply_parameter(ExperimentConfig c, const std::string& name, double value) {
    auto as_count = [&](auto& field) {
        if (!(value >= 0.0) || value != std::floor(value))
            throw ConfigError("sweep: parameter " + name + " needs a non-negative integer, got " + format_double(value));
        field = static_cast<std::remove_reference_t<decltype(field)>>(value);
    };
    if (name == "tau") c.tau = value;
    else if (name == "tau_max") c.tau_max = value;
    else if (name == "learning_rate") c.learning_rate = value;
    else if (name == "pens_top_fraction") c.pens_top_fraction = value;
    else if (name == "T") as_count(c.T);
    else if (name == "E") as_count(c.E);
    else if (name == "m") as_count(c.m);
    else if (name == "batch_size") as_count(c.batch_size);
    else if (name == "train_n") as_count(c.train_n);
    else if (name == "val_n") as_count(c.val_n);
    else if (name == "test_n") as_count(c.test_n);
    else if (name == "hidden_dim") as_count(c.hidden_dim);
    else if (name == "dim") as_count(c.dim);
    else if (name == "seed") as_count(c.seed);
    else if (name == "pens_selection_rounds") as_count(c.pens_selection_rounds);
    else if (name == "two_hop") {
        if (value != 0.0 && value != 1.0) throw ConfigError("sweep: two_hop takes 0 or 1");
        c.two_hop = value == 1.0;
    } else {
        std::string known;
        for (const auto& n : sweepable_parameters()) known += (known.empty() ? "" : ", ") + n;
        throw ConfigError("sweep: unknown parameter '" + name + "' (sweepable: " + known + ")");
    }
    return c;
}

std::vector<ExperimentResult> run_sweep(const ExperimentConfig& base, const std::string& parameter,
                                        const std::vector<double>& values, std::size_t workers) {
    // Resolve every value before running anything so a bad entry fails fast.
    std::vector<ExperimentConfig> configs;
    for (double v : values) {
        configs.push_back(apply_parameter(base, parameter, v));
        configs.back().validate();
    }
    std::vector<ExperimentResult> out;
    for (const auto& c : configs) out.push_back(run_experiment(c, workers));
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw ContractViolation("format_double: conversion failed");
    return std::string(buf, end);
}

std::string accuracy_csv(const ExperimentResult& result) {
    std::string out = "client_id,cluster_id,test_accuracy,best_val_loss\n";
    for (const auto& c : result.clients)
        out += std::to_string(c.client_id) + ',' + std::to_string(c.cluster_id) + ',' + format_double(c.test_accuracy) +
               ',' + format_double(c.best_val_loss) + '\n';
    return out;
}

std::string heatmap_csv(const CommLog& log) {
    std::string out;
    for (std::size_t x = 0; x < log.size(); ++x) {
        for (std::size_t y = 0; y < log.size(); ++y) {
            if (y) out += ',';
            out += std::to_string(log.at(x, y));
        }
        out += '\n';
    }
    return out;
}

std::string metrics_jsonl(const std::vector<MetricsRecord>& metrics) {
    std::string out;
    for (const auto& m : metrics) {
        nlohmann::ordered_json j;
        j["round"] = m.round;
        j["client_id"] = m.client_id;
        j["val_loss"] = m.val_loss;
        j["val_accuracy"] = m.val_accuracy;
        j["in_cluster_probability_mass"] = m.in_cluster_probability_mass;
        j["tau_used"] = m.tau_used;
        out += j.dump();
        out += '\n';
    }
    return out;
}

void write_artifacts(const ExperimentResult& result, const ExperimentConfig& config, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto write = [&](const char* name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        out << text;
    };
    write("accuracy.csv", accuracy_csv(result));
    write("heatmap.csv", heatmap_csv(result.comm_log));
    write("metrics.jsonl", metrics_jsonl(result.metrics));
    write("config.echo", echo_config(config));
}

}  // namespace dac
