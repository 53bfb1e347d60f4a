#include "dac/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dac/errors.hpp"
#include "dac/rng.hpp"

namespace dac {

void Dataset::add(std::span<const double> x, int label) {
    if (x.size() != dim_) throw ContractViolation("Dataset::add: feature dimension mismatch");
    features_.insert(features_.end(), x.begin(), x.end());
    labels_.push_back(label);
}

void Dataset::reserve(std::size_t n) {
    features_.reserve(n * dim_);
    labels_.reserve(n);
}

std::size_t ClusterLayout::total_clients() const {
    std::size_t total = 0;
    for (const auto& e : entries) total += e.client_count;
    return total;
}

std::vector<int> ClusterLayout::cluster_of_clients() const {
    std::vector<int> out;
    out.reserve(total_clients());
    for (std::size_t c = 0; c < entries.size(); ++c)
        out.insert(out.end(), entries[c].client_count, static_cast<int>(c));
    return out;
}

void ClusterLayout::validate(std::size_t n_classes) const {
    if (entries.empty()) throw ConfigError("layout: no clusters declared");
    for (std::size_t c = 0; c < entries.size(); ++c) {
        const auto& e = entries[c];
        const std::string name = "layout cluster " + std::to_string(c) + " (" + to_string(e.shift) + ")";
        if (e.client_count == 0) throw ConfigError(name + ": client count must be positive");
        if (const auto* rot = std::get_if<Rotation>(&e.shift)) {
            if (!(rot->degrees >= 0.0 && rot->degrees < 360.0))
                throw ConfigError(name + ": rotation must lie in [0, 360)");
        } else {
            const auto& classes = std::get<LabelSubset>(e.shift).classes;
            if (classes.empty()) throw ConfigError(name + ": label subset is empty");
            for (int k : classes)
                if (k < 0 || static_cast<std::size_t>(k) >= n_classes)
                    throw ConfigError(name + ": class " + std::to_string(k) + " outside the task's " +
                                      std::to_string(n_classes) + " classes");
        }
    }
}

std::string to_string(const ClusterShift& shift) {
    std::ostringstream out;
    if (const auto* rot = std::get_if<Rotation>(&shift)) {
        char buf[32];
        auto res = std::to_chars(buf, buf + sizeof buf, rot->degrees);
        out << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    } else {
        out << '{';
        const auto& classes = std::get<LabelSubset>(shift).classes;
        for (std::size_t i = 0; i < classes.size(); ++i) out << (i ? "," : "") << classes[i];
        out << '}';
    }
    return out.str();
}

Dataset generate_base_task(int n_classes, int dim, int n_samples, std::uint64_t seed) {
    if (n_classes < 2) throw ConfigError("generate_base_task: n_classes must be >= 2");
    if (dim < 2) throw ConfigError("generate_base_task: dim must be >= 2");
    if (n_samples < n_classes) throw ConfigError("generate_base_task: n_samples must be >= n_classes");

    // Chord between neighbouring means equals kNeighbourSeparation * sigma.
    const double radius =
        kNeighbourSeparation * kClassStddev / (2.0 * std::sin(std::numbers::pi / n_classes));

    Rng rng = Rng::stream(seed, {static_cast<std::uint64_t>(StreamTag::data)});
    Dataset out(static_cast<std::size_t>(dim), static_cast<std::size_t>(n_classes));
    out.reserve(static_cast<std::size_t>(n_samples));
    std::vector<double> x(static_cast<std::size_t>(dim));
    for (int i = 0; i < n_samples; ++i) {
        const int label = i % n_classes;
        const double angle = 2.0 * std::numbers::pi * label / n_classes;
        for (auto& v : x) v = kClassStddev * rng.normal();
        x[0] += radius * std::cos(angle);
        x[1] += radius * std::sin(angle);
        out.add(x, label);
    }
    return out;
}

Dataset apply_rotation(const Dataset& data, double degrees) {
    if (data.dim() < 2) throw ConfigError("apply_rotation: feature dimension must be >= 2");
    const double rad = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    Dataset out(data.dim(), data.n_classes());
    out.reserve(data.size());
    std::vector<double> x(data.dim());
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto row = data.features(i);
        std::copy(row.begin(), row.end(), x.begin());
        x[0] = c * row[0] - s * row[1];
        x[1] = s * row[0] + c * row[1];
        out.add(x, data.label(i));
    }
    return out;
}

Dataset apply_label_shift(const Dataset& data, std::span<const int> classes) {
    if (classes.empty()) throw ConfigError("apply_label_shift: label subset is empty");
    Dataset out(data.dim(), data.n_classes());
    for (std::size_t i = 0; i < data.size(); ++i)
        if (std::find(classes.begin(), classes.end(), data.label(i)) != classes.end())
            out.add(data.features(i), data.label(i));
    if (out.empty()) throw ConfigError("apply_label_shift: no samples carry a label in the subset");
    return out;
}

std::vector<ClientShard> partition_clients(const Dataset& pool, const ClusterLayout& layout,
                                           ShardSizes sizes, std::uint64_t seed) {
    layout.validate(pool.n_classes());
    if (sizes.train == 0 || sizes.val == 0 || sizes.test == 0)
        throw ConfigError("partition_clients: train, val and test sizes must be positive");

    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng::stream(seed, {static_cast<std::uint64_t>(StreamTag::partition)});
    rng.shuffle(std::span(order));

    std::vector<bool> used(pool.size(), false);
    std::vector<ClientShard> shards;
    shards.reserve(layout.total_clients());

    int client_id = 0;
    for (std::size_t c = 0; c < layout.entries.size(); ++c) {
        const auto& entry = layout.entries[c];
        const auto* subset = std::get_if<LabelSubset>(&entry.shift);
        auto eligible = [&](std::size_t idx) {
            if (used[idx]) return false;
            if (!subset) return true;
            return std::find(subset->classes.begin(), subset->classes.end(), pool.label(idx)) !=
                   subset->classes.end();
        };

        // Scanning `order` from the start for each cluster keeps clusters with
        // different label subsets from starving each other.
        std::size_t cursor = 0;
        auto draw = [&](std::size_t n) {
            std::vector<std::size_t> picked;
            picked.reserve(n);
            while (picked.size() < n) {
                while (cursor < order.size() && !eligible(order[cursor])) ++cursor;
                if (cursor == order.size())
                    throw ConfigError("partition_clients: not enough data for cluster " + std::to_string(c) +
                                      " (" + to_string(entry.shift) + ")");
                used[order[cursor]] = true;
                picked.push_back(order[cursor]);
            }
            return picked;
        };
        auto materialize = [&](const std::vector<std::size_t>& idx) {
            Dataset d(pool.dim(), pool.n_classes());
            d.reserve(idx.size());
            for (std::size_t i : idx) d.add(pool.features(i), pool.label(i));
            if (const auto* rot = std::get_if<Rotation>(&entry.shift); rot && rot->degrees != 0.0)
                d = apply_rotation(d, rot->degrees);
            return d;
        };

        for (std::size_t k = 0; k < entry.client_count; ++k) {
            ClientShard shard;
            shard.client_id = client_id++;
            shard.cluster_id = static_cast<int>(c);
            shard.train_origin = draw(sizes.train);
            shard.val_origin = draw(sizes.val);
            shard.test_origin = draw(sizes.test);
            shard.train = materialize(shard.train_origin);
            shard.val = materialize(shard.val_origin);
            shard.test = materialize(shard.test_origin);
            shards.push_back(std::move(shard));
        }
    }
    return shards;
}

namespace {

class IdxReader {
public:
    explicit IdxReader(const std::filesystem::path& path) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IngestionError("cannot open IDX file " + path.string());
        bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    std::uint32_t u32() {
        need(4, "32-bit header field");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes_[offset_++]);
        return v;
    }

    std::span<const unsigned char> take(std::size_t n, const char* what) {
        need(n, what);
        auto p = reinterpret_cast<const unsigned char*>(bytes_.data()) + offset_;
        offset_ += n;
        return {p, n};
    }

    std::size_t offset() const { return offset_; }

    [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
        throw IngestionError(path_.string() + ": " + msg + " at byte offset " + std::to_string(at));
    }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - offset_ < n)
            fail(std::string("truncated file while reading ") + what, bytes_.size());
    }

    std::filesystem::path path_;
    std::vector<char> bytes_;
    std::size_t offset_ = 0;
};

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    IdxReader images(images_path);
    if (std::uint32_t magic = images.u32(); magic != 0x00000803u) images.fail("bad image magic", 0);
    const std::uint32_t n_images = images.u32();
    const std::uint32_t rows = images.u32();
    const std::uint32_t cols = images.u32();
    const std::size_t dim = std::size_t{rows} * cols;
    if (dim == 0) images.fail("zero-sized images", 8);

    IdxReader labels(labels_path);
    if (std::uint32_t magic = labels.u32(); magic != 0x00000801u) labels.fail("bad label magic", 0);
    const std::uint32_t n_labels = labels.u32();
    if (n_labels != n_images)
        labels.fail("label count " + std::to_string(n_labels) + " does not match image count " +
                        std::to_string(n_images),
                    4);

    auto raw_labels = labels.take(n_labels, "labels");
    int max_label = 0;
    for (unsigned char l : raw_labels) max_label = std::max(max_label, static_cast<int>(l));

    Dataset out(dim, static_cast<std::size_t>(std::max(max_label + 1, 2)));
    out.reserve(n_images);
    std::vector<double> x(dim);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        auto pixels = images.take(dim, "pixels");
        for (std::size_t j = 0; j < dim; ++j) x[j] = pixels[j] / 255.0;
        out.add(x, raw_labels[i]);
    }
    return out;
}

}  // namespace dac
