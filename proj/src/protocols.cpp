#include "dac/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dac/errors.hpp"
#include "dac/log.hpp"

namespace dac {

std::string to_string(ProtocolKind kind) {
    switch (kind) {
        case ProtocolKind::dac: return "dac";
        case ProtocolKind::dac_var: return "dac_var";
        case ProtocolKind::random: return "random";
        case ProtocolKind::pens: return "pens";
        case ProtocolKind::oracle: return "oracle";
        case ProtocolKind::local: return "local";
    }
    return "unknown";
}

std::optional<ProtocolKind> protocol_from_string(const std::string& name) {
    for (auto k : {ProtocolKind::dac, ProtocolKind::dac_var, ProtocolKind::random, ProtocolKind::pens,
                   ProtocolKind::oracle, ProtocolKind::local})
        if (to_string(k) == name) return k;
    return std::nullopt;
}

ModelParams fedavg_merge(const ModelParams& own, std::size_t own_count, std::span<const Contribution> received) {
    if (own_count == 0) throw ContractViolation("fedavg_merge: sample counts must be positive");
    double total = static_cast<double>(own_count);
    for (const auto& c : received) {
        if (!c.params || c.params->arch != own.arch || c.params->values.size() != own.values.size())
            throw ContractViolation("fedavg_merge: architecture mismatch");
        if (c.sample_count == 0) throw ContractViolation("fedavg_merge: sample counts must be positive");
        total += static_cast<double>(c.sample_count);
    }
    if (received.empty()) return own;

    ModelParams out{own.arch, std::vector<double>(own.values.size())};
    const double w_own = static_cast<double>(own_count) / total;
    for (std::size_t j = 0; j < own.values.size(); ++j) out.values[j] = w_own * own.values[j];
    for (const auto& c : received) {
        const double w = static_cast<double>(c.sample_count) / total;
        const auto& v = c.params->values;
        for (std::size_t j = 0; j < v.size(); ++j) out.values[j] += w * v[j];
    }
    return out;
}

Rng sampling_rng(std::uint64_t seed, int client, int round) {
    return Rng::stream(seed, {static_cast<std::uint64_t>(StreamTag::sampling), static_cast<std::uint64_t>(client),
                              static_cast<std::uint64_t>(round)});
}

Rng training_rng(std::uint64_t seed, int client, int round) {
    return Rng::stream(seed, {static_cast<std::uint64_t>(StreamTag::training), static_cast<std::uint64_t>(client),
                              static_cast<std::uint64_t>(round)});
}

namespace {

std::size_t client_count(const RoundContext& ctx) { return ctx.snapshot.size(); }

const ClientShard& shard_of(const RoundContext& ctx, int i) { return ctx.shards[static_cast<std::size_t>(i)]; }

// Effective peers per round: m clamped to the number of other clients.
std::size_t peers_per_round(const RoundContext& ctx) {
    const std::size_t others = client_count(ctx) > 0 ? client_count(ctx) - 1 : 0;
    return std::min(ctx.settings.m, others);
}

std::vector<int> uniform_sample(std::vector<int> pool, std::size_t m, Rng& rng) {
    // Partial Fisher-Yates: the first m slots end up a uniform m-subset in
    // draw order.
    m = std::min(m, pool.size());
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t j = k + static_cast<std::size_t>(rng.below(pool.size() - k));
        std::swap(pool[k], pool[j]);
    }
    pool.resize(m);
    return pool;
}

std::vector<int> others_of(const RoundContext& ctx, int i) {
    std::vector<int> out;
    out.reserve(client_count(ctx));
    for (int k = 0; k < static_cast<int>(client_count(ctx)); ++k)
        if (k != i) out.push_back(k);
    return out;
}

double same_cluster_fraction(const RoundContext& ctx, int i, const std::vector<int>& peers) {
    if (peers.empty()) return 1.0;
    const int cluster = shard_of(ctx, i).cluster_id;
    std::size_t same = 0;
    for (int k : peers)
        if (shard_of(ctx, k).cluster_id == cluster) ++same;
    return static_cast<double>(same) / static_cast<double>(peers.size());
}

// Steps shared by every protocol: merge the chosen peers' snapshot models,
// train E epochs, score on validation data and update the best snapshot.
void merge_train_evaluate(const RoundContext& ctx, int i, int round, std::span<const int> merge_with,
                          RoundOutcome& out) {
    const ClientShard& own = shard_of(ctx, i);
    ClientRuntime& next = out.next;

    if (!merge_with.empty()) {
        std::vector<Contribution> received;
        received.reserve(merge_with.size());
        for (int k : merge_with) {
            received.push_back({&ctx.snapshot[static_cast<std::size_t>(k)].params, shard_of(ctx, k).train.size()});
            out.events.push_back({round, i, k});
        }
        next.params = fedavg_merge(next.params, own.train.size(), received);
    }

    Rng rng = training_rng(ctx.seed, i, round);
    train_local(next.params, own.train, ctx.settings.epochs, ctx.settings.batch_size, next.optimizer, rng);

    const Evaluation val = evaluate(next.params, own.val);
    if (!std::isfinite(val.loss))
        throw TrainingError("client " + std::to_string(i) + " diverged in round " + std::to_string(round) +
                            ": validation loss is not finite");
    out.val_loss = val.loss;
    out.val_accuracy = val.accuracy;
    if (val.loss < next.best_val_loss) {
        next.best_val_loss = val.loss;
        next.best_params = next.params;
    }
}

RoundOutcome start(const RoundContext& ctx, int i) {
    RoundOutcome out;
    out.next = ctx.snapshot[static_cast<std::size_t>(i)];
    return out;
}

double dac_in_cluster_mass(const RoundContext& ctx, int i, const SimilarityState& state, double tau) {
    if (client_count(ctx) < 2) return 1.0;
    const auto p = sampling_probabilities(state, tau);
    const int cluster = shard_of(ctx, i).cluster_id;
    double mass = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j)
        if (shard_of(ctx, static_cast<int>(j)).cluster_id == cluster) mass += p[j];
    return std::clamp(mass, 0.0, 1.0);
}

}  // namespace

RoundOutcome dac_round(const RoundContext& ctx, int i, int round) {
    RoundOutcome out = start(ctx, i);
    SimilarityState& sim = out.next.similarity;
    const double tau = tau_at(ctx.settings.tau, round);
    out.tau_used = tau;
    const std::size_t m = peers_per_round(ctx);

    std::vector<int> sampled;
    if (m > 0) {
        // 1. similarity-weighted sampling
        Rng rng = sampling_rng(ctx.seed, i, round);
        sampled = weighted_sample_without_replacement(sampling_probabilities(sim, tau), m, rng);

        // 2. own (pre-merge) model scored on each sampled peer's training data
        for (int k : sampled)
            update_measured(sim, k, dataset_loss(out.next.params, shard_of(ctx, k).train), round);

        // 3. two-hop estimates for everyone not measured directly
        if (ctx.settings.two_hop) propagate_two_hop(sim, ctx.similarities, ctx.settings.two_hop_rule);
    }

    // 4-5. merge, train, early-stopping bookkeeping
    merge_train_evaluate(ctx, i, round, sampled, out);
    out.in_cluster_mass = dac_in_cluster_mass(ctx, i, sim, tau);
    return out;
}

RoundOutcome random_round(const RoundContext& ctx, int i, int round) {
    RoundOutcome out = start(ctx, i);
    Rng rng = sampling_rng(ctx.seed, i, round);
    const auto sampled = uniform_sample(others_of(ctx, i), peers_per_round(ctx), rng);
    merge_train_evaluate(ctx, i, round, sampled, out);
    out.in_cluster_mass = same_cluster_fraction(ctx, i, others_of(ctx, i));
    return out;
}

RoundOutcome oracle_round(const RoundContext& ctx, int i, int round) {
    RoundOutcome out = start(ctx, i);
    const int cluster = shard_of(ctx, i).cluster_id;
    std::vector<int> mates;
    for (int k : others_of(ctx, i))
        if (shard_of(ctx, k).cluster_id == cluster) mates.push_back(k);
    Rng rng = sampling_rng(ctx.seed, i, round);
    const auto sampled = uniform_sample(std::move(mates), ctx.settings.m, rng);
    merge_train_evaluate(ctx, i, round, sampled, out);
    out.in_cluster_mass = 1.0;
    return out;
}

RoundOutcome local_round(const RoundContext& ctx, int i, int round) {
    RoundOutcome out = start(ctx, i);
    merge_train_evaluate(ctx, i, round, {}, out);
    out.in_cluster_mass = 1.0;
    return out;
}

std::set<int> pens_neighbors_from_counts(std::span<const std::uint32_t> counts, int owner, int rounds,
                                         std::size_t m, double top_fraction) {
    std::set<int> out;
    if (counts.size() < 2) return out;
    const auto top = static_cast<std::size_t>(std::floor(top_fraction * static_cast<double>(m)));
    const double expected =
        static_cast<double>(rounds) * static_cast<double>(top) / static_cast<double>(counts.size() - 1);
    for (std::size_t k = 0; k < counts.size(); ++k)
        if (static_cast<int>(k) != owner && static_cast<double>(counts[k]) > expected)
            out.insert(static_cast<int>(k));
    return out;
}

RoundOutcome pens_selection_round(const RoundContext& ctx, int i, int round) {
    RoundOutcome out = start(ctx, i);
    ClientRuntime& next = out.next;
    const std::size_t m = peers_per_round(ctx);
    if (next.pens_selection_counts.size() != client_count(ctx)) next.pens_selection_counts.assign(client_count(ctx), 0);

    Rng rng = sampling_rng(ctx.seed, i, round);
    const auto sampled = uniform_sample(others_of(ctx, i), m, rng);

    // Peer models scored on this client's own training data.
    const Dataset& own_train = shard_of(ctx, i).train;
    std::vector<std::pair<double, int>> scored;
    scored.reserve(sampled.size());
    for (int k : sampled) scored.emplace_back(dataset_loss(ctx.snapshot[static_cast<std::size_t>(k)].params, own_train), k);
    std::sort(scored.begin(), scored.end());

    const auto top = std::min(sampled.size(), static_cast<std::size_t>(std::floor(ctx.settings.pens_top_fraction *
                                                                                  static_cast<double>(m))));
    std::vector<int> chosen;
    for (std::size_t r = 0; r < top; ++r) {
        chosen.push_back(scored[r].second);
        ++next.pens_selection_counts[static_cast<std::size_t>(scored[r].second)];
    }

    merge_train_evaluate(ctx, i, round, chosen, out);
    out.in_cluster_mass = same_cluster_fraction(ctx, i, others_of(ctx, i));

    if (round + 1 == ctx.settings.pens_selection_rounds) {
        next.pens_neighbors = pens_neighbors_from_counts(next.pens_selection_counts, i, ctx.settings.pens_selection_rounds,
                                                         m, ctx.settings.pens_top_fraction);
        if (next.pens_neighbors.empty())
            log::warn("pens: client " + std::to_string(i) + " found no neighbours; it will train locally");
    }
    return out;
}

RoundOutcome pens_round(const RoundContext& ctx, int i, int round) {
    RoundOutcome out = start(ctx, i);
    const std::vector<int> neighbors(out.next.pens_neighbors.begin(), out.next.pens_neighbors.end());
    Rng rng = sampling_rng(ctx.seed, i, round);
    const auto sampled = uniform_sample(neighbors, ctx.settings.m, rng);
    merge_train_evaluate(ctx, i, round, sampled, out);
    out.in_cluster_mass = same_cluster_fraction(ctx, i, neighbors);
    return out;
}

RoundOutcome run_client_round(const RoundContext& ctx, int i, int round) {
    switch (ctx.settings.kind) {
        case ProtocolKind::dac:
        case ProtocolKind::dac_var: return dac_round(ctx, i, round);
        case ProtocolKind::random: return random_round(ctx, i, round);
        case ProtocolKind::oracle: return oracle_round(ctx, i, round);
        case ProtocolKind::local: return local_round(ctx, i, round);
        case ProtocolKind::pens:
            return round < ctx.settings.pens_selection_rounds ? pens_selection_round(ctx, i, round)
                                                              : pens_round(ctx, i, round);
    }
    throw ContractViolation("run_client_round: unknown protocol");
}

}  // namespace dac
