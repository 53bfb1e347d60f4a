#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dac/config.hpp"
#include "dac/errors.hpp"
#include "dac/log.hpp"
#include "dac/simulator.hpp"

using namespace dac;
namespace fs = std::filesystem;

namespace {

ClusterLayout rotations(std::initializer_list<std::pair<double, std::size_t>> entries) {
    ClusterLayout l;
    for (auto [deg, n] : entries) l.entries.push_back({Rotation{deg}, n});
    return l;
}

ExperimentConfig small_config(ProtocolKind kind, std::uint64_t seed = 3) {
    ExperimentConfig c;
    c.protocol = kind;
    c.layout = rotations({{0.0, 4}, {180.0, 3}});
    c.K = 7;
    c.T = 12;
    c.m = 2;
    c.train_n = 16;
    c.val_n = 8;
    c.test_n = 20;
    c.dim = 4;
    c.learning_rate = 0.05;
    c.seed = seed;
    return c;
}

// The heterogeneous rotated setup used by the trend tests.
ExperimentConfig heterogeneous(ProtocolKind kind, std::uint64_t seed) {
    ExperimentConfig c;
    c.protocol = kind;
    c.layout = rotations({{0.0, 14}, {180.0, 4}, {350.0, 1}, {10.0, 1}});
    c.K = 20;
    c.T = 50;
    c.m = 3;
    c.dim = 6;
    c.learning_rate = 0.1;
    c.train_n = 32;
    c.val_n = 16;
    c.test_n = 200;
    c.seed = seed;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("dac_sim_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct SilenceWarnings {
    log::Sink previous = log::set_sink([](log::Level, std::string_view) {});
    ~SilenceWarnings() { log::set_sink(previous); }
};

double client_mean(const ExperimentResult& r) {
    double s = 0;
    for (const auto& c : r.clients) s += c.test_accuracy;
    return s / static_cast<double>(r.clients.size());
}

}  // namespace

TEST_CASE("one local round equals independent local training") {
    auto config = small_config(ProtocolKind::local);
    config.T = 1;
    Simulation sim(config);
    const auto shards = sim.shards();
    const auto initial = sim.clients();
    sim.run();
    for (std::size_t i = 0; i < shards.size(); ++i) {
        auto p = initial[i].params;
        auto opt = initial[i].optimizer;
        Rng rng = training_rng(config.seed, static_cast<int>(i), 0);
        train_local(p, shards[i].train, config.E, config.batch_size, opt, rng);
        CHECK(p == sim.clients()[i].params);
    }
}

TEST_CASE("runs are deterministic") {
    SilenceWarnings quiet;
    for (auto kind : {ProtocolKind::dac, ProtocolKind::dac_var, ProtocolKind::random, ProtocolKind::pens,
                      ProtocolKind::oracle, ProtocolKind::local}) {
        auto config = small_config(kind);
        config.pens_selection_rounds = 5;
        const auto a = run_experiment(config);
        const auto b = run_experiment(config);
        const auto c = run_experiment(config, 4);
        CHECK(accuracy_csv(a) == accuracy_csv(b));
        CHECK(heatmap_csv(a.comm_log) == heatmap_csv(b.comm_log));
        CHECK(metrics_jsonl(a.metrics) == metrics_jsonl(b.metrics));
        CHECK(a.final_state == b.final_state);
        CHECK(a.final_state == c.final_state);
        CHECK(metrics_jsonl(a.metrics) == metrics_jsonl(c.metrics));
    }
}

TEST_CASE("different seeds give different runs") {
    CHECK(run_experiment(small_config(ProtocolKind::dac, 1)).final_state !=
          run_experiment(small_config(ProtocolKind::dac, 2)).final_state);
}

TEST_CASE("the full-size configuration is accepted and runs") {
    ExperimentConfig c;
    c.protocol = ProtocolKind::dac;
    c.layout = rotations({{0.0, 25}, {90.0, 25}, {180.0, 25}, {270.0, 25}});
    c.K = 100;
    c.seed = 1;
    CHECK(c.T == 200);
    CHECK(c.E == 3);
    CHECK(c.m == 5);
    CHECK(c.batch_size == 8);
    CHECK(c.tau == 30.0);
    CHECK_NOTHROW(c.validate());
    Simulation sim(c, 4);
    sim.run_until(2);
    CHECK(sim.next_round() == 2);
    for (std::size_t i = 0; i < 100; ++i) CHECK(sim.clients()[i].similarity.history.size() >= 5);
}

TEST_CASE("invalid configs fail before any compute") {
    auto c = small_config(ProtocolKind::dac);
    c.K = 8;
    CHECK_THROWS_AS(Simulation{c}, ConfigError);
    c = small_config(ProtocolKind::dac);
    c.learning_rate = -1;
    CHECK_THROWS_AS(Simulation{c}, ConfigError);
}

TEST_CASE("m larger than K - 1 is clamped") {
    SilenceWarnings quiet;
    auto c = small_config(ProtocolKind::random);
    c.m = 50;
    const auto r = run_experiment(c);
    for (std::size_t i = 0; i < 7; ++i) CHECK(r.comm_log.row_sum(i) == 6u * static_cast<std::uint64_t>(c.T));
}

TEST_CASE("divergence names the client and round") {
    auto c = small_config(ProtocolKind::local);
    c.hidden_dim = 4;
    c.learning_rate = 1e200;
    try {
        run_experiment(c);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("client 0") != std::string::npos);
        CHECK(msg.find("round 0") != std::string::npos);
    }
}

TEST_CASE("CommLog invariants") {
    SilenceWarnings quiet;
    for (auto kind : {ProtocolKind::dac, ProtocolKind::random}) {
        const auto c = small_config(kind);
        const auto r = run_experiment(c);
        for (std::size_t i = 0; i < 7; ++i) {
            CHECK(r.comm_log.at(i, i) == 0);
            CHECK(r.comm_log.row_sum(i) == c.m * static_cast<std::uint64_t>(c.T));
        }
        CHECK(r.events.size() == 7 * c.m * static_cast<std::size_t>(c.T));
    }
    for (auto kind : {ProtocolKind::pens, ProtocolKind::oracle, ProtocolKind::local}) {
        auto c = small_config(kind);
        c.pens_selection_rounds = 4;
        const auto r = run_experiment(c);
        for (std::size_t i = 0; i < 7; ++i) {
            CHECK(r.comm_log.at(i, i) == 0);
            CHECK(r.comm_log.row_sum(i) <= c.m * static_cast<std::uint64_t>(c.T));
        }
    }
    CommLog log(3);
    CHECK_THROWS_AS(log.record({0, 1, 1}), ContractViolation);
}

TEST_CASE("oracle mass is one and its heatmap is block-diagonal") {
    const auto c = small_config(ProtocolKind::oracle);
    const auto r = run_experiment(c);
    for (const auto& m : r.metrics) CHECK(m.in_cluster_probability_mass == 1.0);
    const auto clusters = c.layout.cluster_of_clients();
    for (std::size_t x = 0; x < 7; ++x)
        for (std::size_t y = 0; y < 7; ++y)
            if (clusters[x] != clusters[y]) CHECK(r.comm_log.at(x, y) == 0);
}

TEST_CASE("DAC's in-cluster mass rises on conflicting clusters") {
    ExperimentConfig c = heterogeneous(ProtocolKind::dac, 1);
    c.layout = rotations({{0.0, 10}, {180.0, 10}});
    c.T = 60;
    const auto r = run_experiment(c);
    std::vector<double> per_round(60, 0.0);
    for (const auto& m : r.metrics) per_round[static_cast<std::size_t>(m.round)] += m.in_cluster_probability_mass / 20.0;
    CHECK(per_round.back() > 0.9);
    // 10-round moving average, non-decreasing after round 20 up to float noise.
    std::vector<double> avg;
    for (std::size_t t = 20; t + 10 <= 60; ++t) {
        double s = 0;
        for (std::size_t u = t; u < t + 10; ++u) s += per_round[u];
        avg.push_back(s / 10);
    }
    for (std::size_t k = 1; k < avg.size(); ++k) CHECK(avg[k] >= avg[k - 1] - 1e-3);
}

TEST_CASE("reported test accuracy comes from the best validation snapshot") {
    auto c = small_config(ProtocolKind::dac);
    Simulation sim(c);
    sim.run();
    const auto r = sim.result();
    for (std::size_t i = 0; i < 7; ++i) {
        const auto& state = sim.clients()[i];
        CHECK(r.clients[i].test_accuracy == evaluate(state.best_params, sim.shards()[i].test).accuracy);
        CHECK(r.clients[i].best_val_loss == state.best_val_loss);
        double min_val = std::numeric_limits<double>::infinity();
        for (const auto& m : r.metrics)
            if (m.client_id == static_cast<int>(i)) min_val = std::min(min_val, m.val_loss);
        CHECK(state.best_val_loss == min_val);
    }
}

TEST_CASE("cluster statistics use the population std over cluster means") {
    const auto r = run_experiment(small_config(ProtocolKind::random));
    REQUIRE(r.cluster_means.size() == 2);
    double a = 0, b = 0;
    for (int i = 0; i < 4; ++i) a += r.clients[static_cast<std::size_t>(i)].test_accuracy / 4;
    for (int i = 4; i < 7; ++i) b += r.clients[static_cast<std::size_t>(i)].test_accuracy / 3;
    CHECK(r.cluster_means[0] == doctest::Approx(a).epsilon(1e-12));
    CHECK(r.cluster_means[1] == doctest::Approx(b).epsilon(1e-12));
    CHECK(r.mean_over_clusters == doctest::Approx((a + b) / 2).epsilon(1e-12));
    CHECK(r.std_over_clusters == doctest::Approx(std::abs(a - b) / 2).epsilon(1e-12));
}

TEST_CASE("checkpoint and resume") {
    SilenceWarnings quiet;
    const auto dir = scratch("ckpt");
    for (auto kind : {ProtocolKind::dac, ProtocolKind::pens}) {
        auto c = small_config(kind);
        c.T = 20;
        c.pens_selection_rounds = 6;
        const auto full = run_experiment(c);

        Simulation first(c);
        first.run_until(10);
        first.save_checkpoint(dir / "half.bin");
        auto resumed = Simulation::resume(c, dir / "half.bin");
        CHECK(resumed.next_round() == 10);
        CHECK(resumed.clients() == first.clients());
        resumed.run();
        const auto r = resumed.result();
        CHECK(accuracy_csv(r) == accuracy_csv(full));
        CHECK(heatmap_csv(r.comm_log) == heatmap_csv(full.comm_log));
        CHECK(metrics_jsonl(r.metrics) == metrics_jsonl(full.metrics));
        CHECK(r.final_state == full.final_state);
    }
}

TEST_CASE("checkpoint at 50 resumes to the same state at 100") {
    const auto dir = scratch("ckpt100");
    auto c = small_config(ProtocolKind::dac);
    c.T = 100;
    c.train_n = 8;
    c.E = 1;
    const auto full = run_experiment(c);
    Simulation first(c);
    first.run_until(50);
    first.save_checkpoint(dir / "t50.bin");
    auto resumed = Simulation::resume(c, dir / "t50.bin");
    resumed.run();
    CHECK(metrics_jsonl(resumed.result().metrics) == metrics_jsonl(full.metrics));
    CHECK(resumed.result().final_state == full.final_state);
}

TEST_CASE("damaged or mismatched checkpoints are rejected") {
    const auto dir = scratch("ckpt_bad");
    auto c = small_config(ProtocolKind::dac);
    Simulation sim(c);
    sim.run_until(3);
    sim.save_checkpoint(dir / "good.bin");
    const std::string bytes = slurp(dir / "good.bin");

    SUBCASE("flipped byte") {
        std::string bad = bytes;
        bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x40);
        std::ofstream(dir / "flip.bin", std::ios::binary) << bad;
        CHECK_THROWS_AS(Simulation::resume(c, dir / "flip.bin"), IngestionError);
    }
    SUBCASE("truncated") {
        std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 20);
        CHECK_THROWS_AS(Simulation::resume(c, dir / "short.bin"), IngestionError);
    }
    SUBCASE("not a checkpoint") {
        std::ofstream(dir / "text.bin", std::ios::binary) << "hello";
        CHECK_THROWS_AS(Simulation::resume(c, dir / "text.bin"), IngestionError);
    }
    SUBCASE("missing") { CHECK_THROWS_AS(Simulation::resume(c, dir / "none.bin"), IngestionError); }
    SUBCASE("different config") {
        auto other = c;
        other.hidden_dim = 4;
        CHECK_THROWS_AS(Simulation::resume(other, dir / "good.bin"), IngestionError);
        other = c;
        other.tau = 5;
        CHECK_THROWS_AS(Simulation::resume(other, dir / "good.bin"), IngestionError);
    }
    SUBCASE("output directory does not matter") {
        auto moved = c;
        moved.output_dir = "elsewhere";
        CHECK(Simulation::resume(moved, dir / "good.bin").clients() == sim.clients());
    }
}

TEST_CASE("checkpoint size grows with K") {
    const auto dir = scratch("ckpt_size");
    std::vector<std::uintmax_t> sizes;
    for (std::size_t K : {5u, 10u, 20u}) {
        auto c = small_config(ProtocolKind::dac);
        c.layout = rotations({{0.0, K}});
        c.K = K;
        c.T = 2;
        Simulation sim(c);
        sim.run();
        sim.save_checkpoint(dir / "k.bin");
        sizes.push_back(fs::file_size(dir / "k.bin"));
    }
    // Models grow linearly in K; similarity vectors and the heatmap add a
    // K^2 term. Doubling K must stay below the quadratic bound.
    CHECK(sizes[1] > sizes[0]);
    CHECK(sizes[2] > sizes[1]);
    CHECK(sizes[2] < 4 * sizes[1]);
}

TEST_CASE("artifacts") {
    const auto dir = scratch("artifacts");
    auto c = small_config(ProtocolKind::dac);
    c.T = 3;
    const auto r = run_experiment(c);
    write_artifacts(r, c, dir);

    const auto acc = slurp(dir / "accuracy.csv");
    CHECK(acc.rfind("client_id,cluster_id,test_accuracy,best_val_loss\n", 0) == 0);
    CHECK(std::count(acc.begin(), acc.end(), '\n') == 8);

    const auto heat = slurp(dir / "heatmap.csv");
    CHECK(std::count(heat.begin(), heat.end(), '\n') == 7);

    std::istringstream lines(slurp(dir / "metrics.jsonl"));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::ordered_json::parse(line);
        std::vector<std::string> keys;
        for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
        CHECK(keys == std::vector<std::string>{"round", "client_id", "val_loss", "val_accuracy",
                                               "in_cluster_probability_mass", "tau_used"});
        ++n;
    }
    CHECK(n == 7 * 3);

    CHECK(parse_config(dir / "config.echo") == c);
}

TEST_CASE("doubles are written losslessly") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, 0.0}) CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("sweeps") {
    SUBCASE("one value equals a plain run") {
        const auto c = small_config(ProtocolKind::dac);
        const auto sweep = run_sweep(c, "tau", {c.tau});
        REQUIRE(sweep.size() == 1);
        CHECK(sweep[0].final_state == run_experiment(c).final_state);
    }

    SUBCASE("unknown or ill-typed parameters") {
        const auto c = small_config(ProtocolKind::dac);
        CHECK_THROWS_AS(run_sweep(c, "temperature", {1.0}), ConfigError);
        CHECK_THROWS_AS(apply_parameter(c, "T", 2.5), ConfigError);
        CHECK_THROWS_AS(apply_parameter(c, "two_hop", 0.5), ConfigError);
        CHECK_THROWS_AS(run_sweep(c, "tau", {1.0, -1.0}), ConfigError);
    }

    SUBCASE("every listed parameter applies") {
        const auto c = small_config(ProtocolKind::dac);
        for (const auto& name : sweepable_parameters()) CHECK_NOTHROW(apply_parameter(c, name, 1.0));
        CHECK(apply_parameter(c, "tau", 7.5).tau == 7.5);
        CHECK(apply_parameter(c, "m", 4).m == 4);
        CHECK_FALSE(apply_parameter(c, "two_hop", 0).two_hop);
    }
}

TEST_CASE("minority accuracy does not fall as tau grows past the small-tau regime") {
    const std::vector<double> taus{1, 5, 10, 30, 100};
    std::vector<double> minority(taus.size(), 0.0);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto runs = run_sweep(heterogeneous(ProtocolKind::dac, seed), "tau", taus);
        for (std::size_t k = 0; k < taus.size(); ++k) minority[k] += runs[k].cluster_means[1] / 5.0;
    }
    for (std::size_t k = 1; k < taus.size(); ++k) {
        CHECK(minority[k] > minority[0]);
        // Beyond tau = 1 the curve is a noisy plateau; allow three points of slack.
        if (k >= 2) CHECK(minority[k] >= minority[k - 1] - 0.03);
    }
}

TEST_CASE("accuracy grows with training set size for every protocol") {
    SilenceWarnings quiet;
    for (auto kind : {ProtocolKind::dac, ProtocolKind::dac_var, ProtocolKind::random, ProtocolKind::pens,
                      ProtocolKind::oracle, ProtocolKind::local}) {
        std::vector<double> acc(3, 0.0);
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            const auto runs = run_sweep(heterogeneous(kind, seed), "train_n", {50, 100, 200});
            for (std::size_t k = 0; k < 3; ++k) acc[k] += client_mean(runs[k]) / 3.0;
        }
        CAPTURE(to_string(kind));
        CHECK(acc[1] >= acc[0] - 0.005);
        CHECK(acc[2] >= acc[1] - 0.005);
    }
}
