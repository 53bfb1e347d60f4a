#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace dac {

// Mixes a seed with a list of stream keys (client id, round, purpose tag)
// into a new 64-bit seed. Streams derived from distinct key lists are
// statistically independent, so clients can draw in any order or thread.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

// Thin wrapper over mt19937_64. The distributions are implemented here
// rather than taken from <random> so sequences do not depend on the
// standard library vendor.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
        return Rng(derive_seed(seed, keys));
    }

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform();

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    double normal();

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Purpose tags for derived streams.
enum class StreamTag : std::uint64_t {
    data = 1,
    partition = 2,
    init = 3,
    sampling = 4,
    training = 5,
};

}  // namespace dac
