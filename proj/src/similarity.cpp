#include "dac/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dac/errors.hpp"
#include "dac/log.hpp"

namespace dac {

SimilarityState SimilarityState::fresh(int owner, std::size_t n_clients) {
    SimilarityState s;
    s.owner = owner;
    s.scores.assign(n_clients, 0.0);
    s.provenance.assign(n_clients, Provenance::unknown);
    s.last_measured_round.assign(n_clients, -1);
    return s;
}

double similarity_score(double loss) {
    if (!(loss >= kLossFloor)) {
        log::warn("similarity_score: loss " + std::to_string(loss) + " below floor, clamped to " +
                  std::to_string(kLossFloor) + " (saturated model)");
        loss = kLossFloor;
    }
    return 1.0 / loss;
}

std::vector<double> sampling_probabilities(const SimilarityState& state, double tau) {
    const std::size_t n = state.size();
    if (n < 2) throw ConfigError("sampling_probabilities: need at least two clients");
    if (state.owner < 0 || static_cast<std::size_t>(state.owner) >= n)
        throw ContractViolation("sampling_probabilities: owner outside score vector");

    double known_sum = 0.0;
    std::size_t known = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (static_cast<int>(j) == state.owner || state.provenance[j] == Provenance::unknown) continue;
        known_sum += state.scores[j];
        ++known;
    }
    const double imputed = known ? known_sum / static_cast<double>(known) : 0.0;

    std::vector<double> z(n, 0.0);
    double z_max = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
        if (static_cast<int>(j) == state.owner) continue;
        const double s = state.provenance[j] == Provenance::unknown ? imputed : state.scores[j];
        z[j] = tau * s;
        z_max = std::max(z_max, z[j]);
    }

    // Exponents are floored so every peer keeps a strictly positive (if
    // negligible) probability at any temperature.
    constexpr double kMinExponent = -700.0;
    std::vector<double> p(n, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (static_cast<int>(j) == state.owner) continue;
        p[j] = std::exp(std::max(z[j] - z_max, kMinExponent));
        total += p[j];
    }
    for (double& v : p) v /= total;
    return p;
}

void update_measured(SimilarityState& state, int peer, double loss, int round) {
    if (peer == state.owner) throw ContractViolation("update_measured: a client cannot score itself");
    if (peer < 0 || static_cast<std::size_t>(peer) >= state.size())
        throw ContractViolation("update_measured: peer id out of range");
    const auto j = static_cast<std::size_t>(peer);
    state.scores[j] = similarity_score(loss);
    state.provenance[j] = Provenance::measured;
    state.history.insert(peer);
    state.last_measured_round[j] = round;
}

void propagate_two_hop(SimilarityState& own, std::span<const SimilarityState> snapshot, TwoHopRule rule) {
    const std::size_t n = own.size();
    if (snapshot.size() != n) throw ContractViolation("propagate_two_hop: snapshot size differs from K");

    for (std::size_t j = 0; j < n; ++j) {
        if (static_cast<int>(j) == own.owner || own.provenance[j] == Provenance::measured) continue;
        int chosen = -1;
        for (int k : own.history) {
            if (static_cast<std::size_t>(k) == j) continue;
            const SimilarityState& via = snapshot[static_cast<std::size_t>(k)];
            if (via.size() != n) throw ContractViolation("propagate_two_hop: inconsistent K across states");
            if (via.provenance[j] != Provenance::measured) continue;
            const double s = own.scores[static_cast<std::size_t>(k)];
            // history iterates in ascending id order, so strict comparison
            // keeps the lowest id on ties.
            if (chosen < 0) {
                chosen = k;
            } else {
                const double best = own.scores[static_cast<std::size_t>(chosen)];
                if (rule == TwoHopRule::most_similar ? s > best : s < best) chosen = k;
            }
        }
        if (chosen < 0) continue;
        own.scores[j] = snapshot[static_cast<std::size_t>(chosen)].scores[j];
        own.provenance[j] = Provenance::estimated;
    }
}

std::vector<int> weighted_sample_without_replacement(std::span<const double> probabilities, std::size_t m,
                                                     Rng& rng) {
    std::vector<double> w(probabilities.begin(), probabilities.end());
    std::size_t positive = 0;
    for (double& v : w) {
        if (!(v > 0.0)) v = 0.0;
        else ++positive;
    }
    if (m > positive)
        throw ConfigError("weighted_sample_without_replacement: cannot draw " + std::to_string(m) +
                          " distinct ids from " + std::to_string(positive) + " with positive probability");

    std::vector<int> picked;
    picked.reserve(m);
    for (std::size_t draw = 0; draw < m; ++draw) {
        double total = 0.0;
        for (double v : w) total += v;
        const double u = rng.uniform() * total;
        double acc = 0.0;
        std::size_t choice = w.size();
        std::size_t last_positive = w.size();
        for (std::size_t j = 0; j < w.size(); ++j) {
            if (w[j] <= 0.0) continue;
            last_positive = j;
            acc += w[j];
            if (u < acc) {
                choice = j;
                break;
            }
        }
        // Rounding can leave u just above the final partial sum.
        if (choice == w.size()) choice = last_positive;
        picked.push_back(static_cast<int>(choice));
        w[choice] = 0.0;
    }
    return picked;
}

TauSchedule TauSchedule::constant(double tau) {
    TauSchedule s;
    s.kind = Kind::constant;
    s.tau = tau;
    s.tau_max = tau;
    return s;
}

TauSchedule TauSchedule::sigmoid(double tau_max, int total_rounds) {
    TauSchedule s;
    s.kind = Kind::sigmoid;
    s.tau_max = tau_max;
    s.tau = tau_max;
    s.total_rounds = total_rounds;
    s.midpoint_round = total_rounds / 2.0;
    s.steepness = total_rounds > 0 ? 10.0 / total_rounds : 1.0;
    return s;
}

double tau_at(const TauSchedule& schedule, int round) {
    if (schedule.kind == TauSchedule::Kind::constant) return schedule.tau;
    if (schedule.total_rounds <= 0) return schedule.tau_max;
    auto logistic = [&](double t) { return 1.0 / (1.0 + std::exp(-schedule.steepness * (t - schedule.midpoint_round))); };
    const double lo = logistic(0.0);
    const double hi = logistic(schedule.total_rounds);
    const double t = std::clamp(static_cast<double>(round), 0.0, static_cast<double>(schedule.total_rounds));
    const double frac = (logistic(t) - lo) / (hi - lo);
    return 1.0 + (schedule.tau_max - 1.0) * frac;
}

}  // namespace dac
