#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace dac {

// Labeled samples with row-major features. Immutable once built; shards and
// shifted copies are new values.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::size_t dim, std::size_t n_classes) : dim_(dim), n_classes_(n_classes) {}

    std::size_t dim() const { return dim_; }
    std::size_t n_classes() const { return n_classes_; }
    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }

    std::span<const double> features(std::size_t i) const {
        return {features_.data() + i * dim_, dim_};
    }
    int label(std::size_t i) const { return labels_[i]; }

    const std::vector<double>& raw_features() const { return features_; }
    const std::vector<int>& labels() const { return labels_; }

    void add(std::span<const double> x, int label);
    void reserve(std::size_t n);

    bool operator==(const Dataset&) const = default;

private:
    std::size_t dim_ = 0;
    std::size_t n_classes_ = 0;
    std::vector<double> features_;
    std::vector<int> labels_;
};

struct Rotation {
    double degrees = 0.0;
    bool operator==(const Rotation&) const = default;
};

struct LabelSubset {
    std::vector<int> classes;
    bool operator==(const LabelSubset&) const = default;
};

using ClusterShift = std::variant<Rotation, LabelSubset>;

struct ClusterSpec {
    ClusterShift shift;
    std::size_t client_count = 0;
    bool operator==(const ClusterSpec&) const = default;
};

// Clusters in declaration order. Client ids are assigned contiguously, so
// cluster 0 owns ids [0, count0), cluster 1 the next block, and so on.
struct ClusterLayout {
    std::vector<ClusterSpec> entries;

    std::size_t total_clients() const;
    // Cluster index for each client id.
    std::vector<int> cluster_of_clients() const;
    // Throws ConfigError on empty layouts, zero counts, rotations outside
    // [0, 360) or label subsets that are empty or out of range.
    void validate(std::size_t n_classes) const;

    bool operator==(const ClusterLayout&) const = default;
};

std::string to_string(const ClusterShift& shift);

struct ClientShard {
    int client_id = 0;
    int cluster_id = 0;
    Dataset train;
    Dataset val;
    Dataset test;
    // Pool indices each split was drawn from.
    std::vector<std::size_t> train_origin;
    std::vector<std::size_t> val_origin;
    std::vector<std::size_t> test_origin;
};

struct ShardSizes {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
    std::size_t total() const { return train + val + test; }
};

// Spread of each class around its mean, in every coordinate.
inline constexpr double kClassStddev = 1.0;
// Distance between neighbouring class means on the circle, in units of
// kClassStddev.
inline constexpr double kNeighbourSeparation = 4.0;

// Gaussian mixture: class c has mean at angle 2*pi*c/n_classes on a circle in
// the first two coordinates; the remaining coordinates are pure noise. Label
// of sample i is i % n_classes, so counts are balanced within one sample.
Dataset generate_base_task(int n_classes, int dim, int n_samples, std::uint64_t seed);

// Counter-clockwise rotation of the first two coordinates.
Dataset apply_rotation(const Dataset& data, double degrees);

// Keeps samples whose label is in `classes`. Labels keep their global index.
Dataset apply_label_shift(const Dataset& data, std::span<const int> classes);

// Draws pairwise-disjoint train/val/test splits for every client from `pool`,
// applying each cluster's shift. Clients of a cluster only draw samples whose
// label fits the cluster's label subset, if it has one.
std::vector<ClientShard> partition_clients(const Dataset& pool, const ClusterLayout& layout,
                                           ShardSizes sizes, std::uint64_t seed);

// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
// Pixels are scaled by 1/255 and images flattened row-major.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

}  // namespace dac
