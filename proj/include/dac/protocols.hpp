#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dac/datagen.hpp"
#include "dac/model.hpp"
#include "dac/similarity.hpp"

namespace dac {

enum class ProtocolKind { dac, dac_var, random, pens, oracle, local };

std::string to_string(ProtocolKind kind);
std::optional<ProtocolKind> protocol_from_string(const std::string& name);

struct ProtocolSettings {
    ProtocolKind kind = ProtocolKind::dac;
    std::size_t m = 5;
    TauSchedule tau = TauSchedule::constant(30.0);
    int epochs = 3;
    std::size_t batch_size = 8;
    // DAC ablation switch and intermediary rule.
    bool two_hop = true;
    TwoHopRule two_hop_rule = TwoHopRule::most_similar;
    int pens_selection_rounds = 20;
    double pens_top_fraction = 0.5;
};

// Mutable per-client state carried from round to round. The client's data
// lives in its ClientShard, which never changes.
struct ClientRuntime {
    ModelParams params;
    OptimizerState optimizer;
    SimilarityState similarity;
    ModelParams best_params;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::set<int> pens_neighbors;
    std::vector<std::uint32_t> pens_selection_counts;

    bool operator==(const ClientRuntime&) const = default;
};

// One merge: `src` folded `dst`'s model into its own during `round`.
struct CommEvent {
    int round = 0;
    int src = 0;
    int dst = 0;
    bool operator==(const CommEvent&) const = default;
};

struct Contribution {
    const ModelParams* params = nullptr;
    std::size_t sample_count = 0;
};

// Sample-count-weighted coordinate mean of own and received models.
ModelParams fedavg_merge(const ModelParams& own, std::size_t own_count, std::span<const Contribution> received);

// Read-only view of the federation at a round barrier. Every cross-client
// read during a round goes through `snapshot`.
struct RoundContext {
    std::span<const ClientShard> shards;
    std::span<const ClientRuntime> snapshot;
    // snapshot[k].similarity for every k, laid out contiguously for the
    // two-hop lookup.
    std::span<const SimilarityState> similarities;
    ProtocolSettings settings;
    std::uint64_t seed = 0;
};

struct RoundOutcome {
    ClientRuntime next;
    std::vector<CommEvent> events;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    // Mass the client's sampling distribution puts on its own cluster after
    // the round. Clients that cannot sample anyone report 1.
    double in_cluster_mass = 1.0;
    double tau_used = 0.0;
};

// Per-round streams. Every protocol trains with the same stream, so a client
// that skips communication trains exactly like local_round.
Rng sampling_rng(std::uint64_t seed, int client, int round);
Rng training_rng(std::uint64_t seed, int client, int round);

RoundOutcome dac_round(const RoundContext& ctx, int i, int round);
RoundOutcome random_round(const RoundContext& ctx, int i, int round);
RoundOutcome oracle_round(const RoundContext& ctx, int i, int round);
RoundOutcome local_round(const RoundContext& ctx, int i, int round);

// One neighbour-identification round: sample m peers uniformly, score each
// peer's model on i's training data, credit the lowest-loss
// floor(top_fraction * m) of them and merge with those. On the last
// selection round the neighbour set is fixed.
RoundOutcome pens_selection_round(const RoundContext& ctx, int i, int round);
// Peers picked more often than uniform chance would predict
// (rounds * floor(top_fraction * m) / (K - 1)).
std::set<int> pens_neighbors_from_counts(std::span<const std::uint32_t> counts, int owner, int rounds,
                                         std::size_t m, double top_fraction);
// Uniform sampling inside the fixed neighbour set.
RoundOutcome pens_round(const RoundContext& ctx, int i, int round);

// Dispatches on settings.kind; PENS switches from selection to
// communication after pens_selection_rounds.
RoundOutcome run_client_round(const RoundContext& ctx, int i, int round);

}  // namespace dac
