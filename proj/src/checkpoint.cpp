#include <cstring>
#include <fstream>
#include <iterator>

#include "dac/config.hpp"
#include "dac/errors.hpp"
#include "dac/simulator.hpp"

// Checkpoint layout (all integers little-endian):
//   "DACCKPT1"  u32 version  u64 config fingerprint  u64 K  i32 next_round
//   u64 input_dim  u64 hidden_dim  u64 n_classes
//   K x client block
//   CommLog counts (K*K u64), events, metrics
//   u64 FNV-1a checksum of every preceding byte
//
// Per-round RNG streams are derived from (seed, client, round), so there is
// no generator state to persist.

namespace dac {
namespace {

constexpr char kMagic[8] = {'D', 'A', 'C', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t config_fingerprint(ExperimentConfig c) {
    c.output_dir.clear();
    const std::string text = echo_config(c);
    return fnv1a(text.data(), text.size());
}

class Writer {
public:
    template <typename T>
    void pod(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        buf_.append(b, sizeof(T));
    }
    void doubles(const std::vector<double>& v) {
        pod<std::uint64_t>(v.size());
        for (double d : v) pod(d);
    }
    void params(const ModelParams& p) { doubles(p.values); }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& buf, std::size_t end, std::string name) : buf_(buf), end_(end), name_(std::move(name)) {}

    template <typename T>
    T pod() {
        if (end_ - pos_ < sizeof(T)) fail("truncated checkpoint");
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::size_t count(std::size_t limit, const char* what) {
        const auto n = pod<std::uint64_t>();
        if (n > limit) fail(std::string("implausible ") + what + " count");
        return static_cast<std::size_t>(n);
    }
    std::vector<double> doubles(std::size_t expected) {
        const auto n = count(expected, "vector");
        if (n != expected) fail("vector length mismatch");
        std::vector<double> v(n);
        for (auto& d : v) d = pod<double>();
        return v;
    }
    std::size_t position() const { return pos_; }
    [[noreturn]] void fail(const std::string& what) const {
        throw IngestionError(name_ + ": " + what + " at byte offset " + std::to_string(pos_));
    }

private:
    const std::string& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
    std::string name_;
};

}  // namespace

void Simulation::save_checkpoint(const std::filesystem::path& path) const {
    Writer w;
    w.buffer().append(kMagic, sizeof kMagic);
    w.pod(kVersion);
    w.pod(config_fingerprint(config_));
    const std::size_t K = clients_.size();
    w.pod<std::uint64_t>(K);
    w.pod<std::int32_t>(next_round_);
    const auto& arch = clients_.front().params.arch;
    w.pod<std::uint64_t>(arch.input_dim);
    w.pod<std::uint64_t>(arch.hidden_dim);
    w.pod<std::uint64_t>(arch.n_classes);

    for (const auto& c : clients_) {
        w.params(c.params);
        w.doubles(c.optimizer.first_moment);
        w.doubles(c.optimizer.second_moment);
        w.pod(c.optimizer.step_count);
        w.pod(c.optimizer.learning_rate);
        w.pod(c.optimizer.beta1);
        w.pod(c.optimizer.beta2);
        w.pod(c.optimizer.epsilon);
        const auto& s = c.similarity;
        w.pod<std::int32_t>(s.owner);
        w.doubles(s.scores);
        for (auto p : s.provenance) w.pod(static_cast<std::uint8_t>(p));
        w.pod<std::uint64_t>(s.history.size());
        for (int h : s.history) w.pod<std::int32_t>(h);
        for (int r : s.last_measured_round) w.pod<std::int32_t>(r);
        w.params(c.best_params);
        w.pod(c.best_val_loss);
        w.pod<std::uint64_t>(c.pens_neighbors.size());
        for (int n : c.pens_neighbors) w.pod<std::int32_t>(n);
        for (auto n : c.pens_selection_counts) w.pod<std::uint32_t>(n);
    }
    for (auto v : comm_log_.raw()) w.pod<std::uint64_t>(v);
    w.pod<std::uint64_t>(events_.size());
    for (const auto& e : events_) {
        w.pod<std::int32_t>(e.round);
        w.pod<std::int32_t>(e.src);
        w.pod<std::int32_t>(e.dst);
    }
    w.pod<std::uint64_t>(metrics_.size());
    for (const auto& m : metrics_) {
        w.pod<std::int32_t>(m.round);
        w.pod<std::int32_t>(m.client_id);
        w.pod(m.val_loss);
        w.pod(m.val_accuracy);
        w.pod(m.in_cluster_probability_mass);
        w.pod(m.tau_used);
    }
    w.pod(fnv1a(w.buffer().data(), w.buffer().size()));

    // Write-then-rename so a crash never leaves a half-written checkpoint.
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
        out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
        if (!out) throw std::runtime_error("short write on checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Simulation Simulation::resume(const ExperimentConfig& config, const std::filesystem::path& path, std::size_t workers) {
    std::string buf;
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IngestionError("cannot open checkpoint " + path.string());
        buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    const std::string name = path.string();
    if (buf.size() < sizeof kMagic + sizeof(std::uint64_t) || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
        throw IngestionError(name + ": not a checkpoint (bad magic) at byte offset 0");
    const std::size_t body = buf.size() - sizeof(std::uint64_t);
    std::uint64_t stored_sum;
    std::memcpy(&stored_sum, buf.data() + body, sizeof stored_sum);
    if (stored_sum != fnv1a(buf.data(), body))
        throw IngestionError(name + ": checksum mismatch, file is corrupt at byte offset " + std::to_string(body));

    // Everything is decoded into a fresh simulation; the caller only sees it
    // once decoding succeeded.
    Simulation sim(config, workers);
    Reader r(buf, body, name);
    for (std::size_t i = 0; i < sizeof kMagic; ++i) r.pod<char>();
    if (r.pod<std::uint32_t>() != kVersion) r.fail("unsupported checkpoint version");
    if (r.pod<std::uint64_t>() != config_fingerprint(config)) r.fail("checkpoint was written for a different config");
    const std::size_t K = sim.clients_.size();
    if (r.pod<std::uint64_t>() != K) r.fail("client count mismatch");
    const int next_round = r.pod<std::int32_t>();
    if (next_round < 0 || next_round > config.T) r.fail("round out of range");
    const auto& arch = sim.clients_.front().params.arch;
    if (r.pod<std::uint64_t>() != arch.input_dim || r.pod<std::uint64_t>() != arch.hidden_dim ||
        r.pod<std::uint64_t>() != arch.n_classes)
        r.fail("architecture mismatch");

    const std::size_t P = arch.parameter_count();
    for (std::size_t i = 0; i < K; ++i) {
        ClientRuntime& c = sim.clients_[i];
        c.params.values = r.doubles(P);
        c.optimizer.first_moment = r.doubles(P);
        c.optimizer.second_moment = r.doubles(P);
        c.optimizer.step_count = r.pod<std::uint64_t>();
        c.optimizer.learning_rate = r.pod<double>();
        c.optimizer.beta1 = r.pod<double>();
        c.optimizer.beta2 = r.pod<double>();
        c.optimizer.epsilon = r.pod<double>();
        auto& s = c.similarity;
        if (r.pod<std::int32_t>() != static_cast<int>(i)) r.fail("similarity owner mismatch");
        s.scores = r.doubles(K);
        for (auto& p : s.provenance) {
            const auto v = r.pod<std::uint8_t>();
            if (v > 2) r.fail("bad provenance tag");
            p = static_cast<Provenance>(v);
        }
        s.history.clear();
        for (std::size_t n = r.count(K, "history"); n > 0; --n) s.history.insert(r.pod<std::int32_t>());
        for (auto& v : s.last_measured_round) v = r.pod<std::int32_t>();
        c.best_params.values = r.doubles(P);
        c.best_val_loss = r.pod<double>();
        c.pens_neighbors.clear();
        for (std::size_t n = r.count(K, "neighbour"); n > 0; --n) c.pens_neighbors.insert(r.pod<std::int32_t>());
        for (auto& v : c.pens_selection_counts) v = r.pod<std::uint32_t>();
    }
    for (auto& v : sim.comm_log_.raw()) v = r.pod<std::uint64_t>();
    const auto n_events = r.count(buf.size(), "event");
    sim.events_.resize(n_events);
    for (auto& e : sim.events_) {
        e.round = r.pod<std::int32_t>();
        e.src = r.pod<std::int32_t>();
        e.dst = r.pod<std::int32_t>();
    }
    const auto n_metrics = r.count(buf.size(), "metrics");
    sim.metrics_.resize(n_metrics);
    for (auto& m : sim.metrics_) {
        m.round = r.pod<std::int32_t>();
        m.client_id = r.pod<std::int32_t>();
        m.val_loss = r.pod<double>();
        m.val_accuracy = r.pod<double>();
        m.in_cluster_probability_mass = r.pod<double>();
        m.tau_used = r.pod<double>();
    }
    if (r.position() != body) r.fail("trailing bytes");
    sim.next_round_ = next_round;
    return sim;
}

}  // namespace dac
