#include "dflshield/model/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "dflshield/model/params.hpp"
#include "dflshield/util/rng.hpp"

namespace dflshield {

void Dataset::add(std::span<const double> x, int label) {
    if (x.size() != dim_) throw ShapeError("feature row has wrong dimension");
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes_) {
        throw ShapeError("label out of range");
    }
    features_.insert(features_.end(), x.begin(), x.end());
    labels_.push_back(label);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out(dim_, num_classes_);
    out.features_.reserve(indices.size() * dim_);
    out.labels_.reserve(indices.size());
    for (auto i : indices) out.add(row(i), labels_.at(i));
    return out;
}

Dataset Dataset::load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty dataset " + path.string());
    std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (line.rfind("label", 0) != 0 || columns < 2) {
        throw std::runtime_error("dataset header must be label,f0,f1,...");
    }
    std::size_t dim = columns - 1;

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> row;
        row.reserve(dim);
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        int label = std::stoi(cell);
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != dim) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(dim) + " features");
        }
        rows.push_back(std::move(row));
        labels.push_back(label);
    }
    int max_label = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
    Dataset d(dim, static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < rows.size(); ++i) d.add(rows[i], labels[i]);
    return d;
}

void Dataset::save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    out << "label";
    for (std::size_t j = 0; j < dim_; ++j) out << ",f" << j;
    out << "\n";
    char buf[32];
    for (std::size_t i = 0; i < size(); ++i) {
        out << labels_[i];
        for (double v : row(i)) {
            auto res = std::to_chars(buf, buf + sizeof buf, v);
            out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("cannot write dataset " + path.string());
}

DatasetSplit split(const Dataset& data, double train_ratio, std::uint64_t seed) {
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
        throw std::invalid_argument("split ratio must lie in (0,1)");
    }
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx.begin(), idx.end());
    auto n_train = static_cast<std::size_t>(train_ratio * static_cast<double>(idx.size()));
    if (idx.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    std::span<const std::size_t> all(idx);
    return {data.subset(all.first(n_train)), data.subset(all.subspan(n_train))};
}

std::vector<Dataset> partition(const Dataset& data, std::size_t parts, std::uint64_t seed) {
    if (parts == 0) throw std::invalid_argument("partition into zero parts");
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx.begin(), idx.end());
    std::vector<std::vector<std::size_t>> buckets(parts);
    for (std::size_t i = 0; i < idx.size(); ++i) buckets[i % parts].push_back(idx[i]);
    std::vector<Dataset> out;
    out.reserve(parts);
    for (auto& b : buckets) {
        std::sort(b.begin(), b.end());
        out.push_back(data.subset(b));
    }
    return out;
}

Dataset make_blobs(const BlobSpec& spec, std::uint64_t seed) {
    if (spec.classes == 0 || spec.dim == 0) throw std::invalid_argument("empty blob spec");
    Rng rng(seed);
    std::vector<std::vector<double>> centres(spec.classes, std::vector<double>(spec.dim));
    for (auto& c : centres) {
        for (auto& v : c) v = rng.uniform(-spec.center_scale, spec.center_scale);
    }
    Dataset d(spec.dim, spec.classes);
    std::vector<double> x(spec.dim);
    for (std::size_t i = 0; i < spec.samples; ++i) {
        auto label = i % spec.classes;
        for (std::size_t j = 0; j < spec.dim; ++j) x[j] = rng.normal(centres[label][j], spec.spread);
        d.add(x, static_cast<int>(label));
    }
    return d;
}

}  // namespace dflshield
