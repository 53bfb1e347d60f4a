#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "dac/rng.hpp"

namespace dac {

enum class Provenance : std::uint8_t { unknown = 0, measured = 1, estimated = 2 };

// One client's view of how similar every other client is to it.
struct SimilarityState {
    int owner = 0;
    std::vector<double> scores;
    std::vector<Provenance> provenance;
    // Every peer this client has ever sampled and scored directly.
    std::set<int> history;
    // Round of the latest direct measurement per peer; -1 if never.
    std::vector<int> last_measured_round;

    static SimilarityState fresh(int owner, std::size_t n_clients);
    std::size_t size() const { return scores.size(); }
    bool operator==(const SimilarityState&) const = default;
};

// Losses below this are clamped before inversion.
inline constexpr double kLossFloor = 1e-8;

// Inverse loss. Non-positive or tiny losses are clamped to kLossFloor and a
// warning is logged.
double similarity_score(double loss);

// Temperature softmax over the owner's scores. Unknown entries take the mean
// of the known ones; the owner gets probability exactly 0. tau = 0 gives the
// uniform distribution over the other clients.
std::vector<double> sampling_probabilities(const SimilarityState& state, double tau);

void update_measured(SimilarityState& state, int peer, double loss, int round);

// Which intermediary a two-hop estimate is routed through.
enum class TwoHopRule {
    most_similar,   // k* maximises s_ik
    least_similar,  // k* minimises s_ik
};

// Fills every entry of `own` that was not measured directly with the score
// s_{k*j} held by the intermediary k* chosen by `rule` among the peers in
// own.history that measured j themselves. Previous estimates are replaced.
// `snapshot` holds all clients' states indexed by client id; own.owner's
// slot is ignored.
void propagate_two_hop(SimilarityState& own, std::span<const SimilarityState> snapshot,
                       TwoHopRule rule = TwoHopRule::most_similar);

// Sequential draw without replacement: pick one id proportionally to the
// remaining weights, zero it, repeat. Returns ids in draw order. Throws
// ConfigError if fewer than m entries carry positive weight.
std::vector<int> weighted_sample_without_replacement(std::span<const double> probabilities, std::size_t m,
                                                     Rng& rng);

struct TauSchedule {
    enum class Kind { constant, sigmoid };

    Kind kind = Kind::constant;
    double tau = 30.0;
    double tau_max = 30.0;
    double midpoint_round = 0.0;
    double steepness = 0.0;
    int total_rounds = 0;

    static TauSchedule constant(double tau);
    // Midpoint at total_rounds / 2, steepness 10 / total_rounds.
    static TauSchedule sigmoid(double tau_max, int total_rounds);
};

// Constant: tau. Sigmoid: logistic curve rescaled to run from exactly 1 at
// round 0 to exactly tau_max at total_rounds.
double tau_at(const TauSchedule& schedule, int round);

}  // namespace dac
