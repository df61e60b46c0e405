#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dflshield {

/// Labelled feature rows, stored row-major.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::size_t dim, std::size_t num_classes) : dim_(dim), num_classes_(num_classes) {}

    void add(std::span<const double> x, int label);

    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }
    std::size_t dim() const { return dim_; }
    std::size_t num_classes() const { return num_classes_; }

    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(features_).subspan(i * dim_, dim_);
    }
    int label(std::size_t i) const { return labels_[i]; }
    const std::vector<int>& labels() const { return labels_; }

    Dataset subset(std::span<const std::size_t> indices) const;

    /// CSV with header `label,f0,f1,...`.
    static Dataset load_csv(const std::filesystem::path& path);
    void save_csv(const std::filesystem::path& path) const;

private:
    std::size_t dim_ = 0;
    std::size_t num_classes_ = 0;
    std::vector<double> features_;
    std::vector<int> labels_;
};

struct DatasetSplit {
    Dataset train;
    Dataset test;
};

/// Deterministic shuffled split; train gets floor(ratio * n) rows, and both
/// sides keep at least one row when n >= 2.
DatasetSplit split(const Dataset& data, double train_ratio, std::uint64_t seed);

/// IID partition into `parts` disjoint shards (shuffle, then round-robin).
std::vector<Dataset> partition(const Dataset& data, std::size_t parts, std::uint64_t seed);

struct BlobSpec {
    std::size_t classes = 4;
    std::size_t dim = 8;
    std::size_t samples = 4000;
    double spread = 1.0;        // per-coordinate stddev around each centre
    double center_scale = 2.5;  // centres uniform in [-scale, scale]^dim
};

/// Gaussian blobs, balanced across classes.
Dataset make_blobs(const BlobSpec& spec, std::uint64_t seed);

}  // namespace dflshield
