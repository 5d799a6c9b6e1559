#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chainreduce/param.hpp"

namespace chainreduce {

struct Sample {
    std::vector<double> x;
    int label = 0;
};

/// Gaussian-blob classification set with a fixed 80/20 train/test split.
struct SyntheticDataset {
    std::vector<Sample> samples;
    int num_classes = 0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;

    int dim() const { return samples.empty() ? 0 : static_cast<int>(samples.front().x.size()); }
};

struct ModelLayout {
    int input_dim = 0;
    int hidden_dim = 0;
    int num_classes = 0;

    // dense-ReLU-dense with bias on both layers
    int weight_count() const {
        return input_dim * hidden_dim + hidden_dim + hidden_dim * num_classes + num_classes;
    }
};

struct ToyModel {
    ParamVector weights;
    ModelLayout layout;
};

/// Contiguous near-equal shards over a seeded shuffle of the train split.
struct Partition {
    std::vector<std::size_t> order;                            // shuffled indices
    std::vector<std::pair<std::size_t, std::size_t>> ranges;   // [begin, end) per device

    std::vector<std::size_t> shard(int device) const {
        const auto [b, e] = ranges.at(static_cast<std::size_t>(device));
        return {order.begin() + static_cast<std::ptrdiff_t>(b),
                order.begin() + static_cast<std::ptrdiff_t>(e)};
    }
};

SyntheticDataset generate_blobs(int num_classes, int per_class, int dim, double spread,
                                std::uint64_t seed);

ToyModel init_model(const ModelLayout& layout, std::uint64_t seed);

/// Mean cross-entropy over the batch and its exact gradient (theta = 1).
std::pair<double, ParamVector> forward_loss_grad(const ToyModel& model,
                                                 std::span<const Sample> batch);

/// Argmax accuracy; ties break toward the lowest class index.
double evaluate(const ToyModel& model, std::span<const Sample> test);

Partition partition_dataset(const SyntheticDataset& ds, int num_devices);
Partition partition_indices(const std::vector<std::size_t>& indices, int num_devices,
                            std::uint64_t seed);

std::vector<Sample> gather(const SyntheticDataset& ds, const std::vector<std::size_t>& idx);

void export_csv(const SyntheticDataset& ds, const std::string& path);
SyntheticDataset import_csv(const std::string& path, std::uint64_t seed);

} // namespace chainreduce
