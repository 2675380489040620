#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "fedlora/matrix.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {

struct Dataset {
    Matrix features;                  // n x dim
    std::vector<std::size_t> labels;  // n, values in [0, classes)
    std::optional<std::vector<std::size_t>> group_ids;  // n when present
    std::size_t classes = 0;

    std::size_t size() const { return features.rows; }
};

// Gaussian class blobs. Clusters share the base blob geometry; when
// permute_labels is set, cluster g relabels blob c as (c + g) mod classes,
// so clients drawn from different clusters face conflicting decision rules.
// Two per-site heterogeneity controls ride on top of the shared geometry:
// cluster_spread > 0 offsets each cluster's blob means, and
// cluster_noise_scale > 0 adds correlated noise along cluster_noise_dims
// random directions drawn per cluster (site-specific interference, e.g.
// device or recording-condition structure). group_ids subdivide each
// cluster into groups_per_cluster equal shards (group id = cluster *
// groups_per_cluster + shard), which is what the natural partitioner hands
// out to clients.
struct SyntheticSpec {
    std::size_t clusters = 1;
    std::size_t classes = 5;
    std::size_t dim = 16;
    std::size_t samples_per_class = 1000;  // per cluster
    double separation = 3.0;
    bool permute_labels = false;
    double cluster_spread = 0.0;
    std::size_t cluster_noise_dims = 0;
    double cluster_noise_scale = 0.0;
    std::size_t groups_per_cluster = 1;
};

Dataset generate_synthetic(const SyntheticSpec& spec, RngStream rng);

// CSV with a header row: feature columns, a `label` column, optional `group`
// column. Labels are densified to 0..C-1 in first-appearance order.
Dataset load_csv(const std::filesystem::path& path);

// Inverse of load_csv for datasets whose labels already appear in canonical
// order; doubles are written in shortest round-trip form.
void save_csv(const Dataset& dataset, const std::filesystem::path& path);

// Keep a deterministic fraction of samples (without replacement, original
// order preserved). fraction in (0, 1].
Dataset subsample(const Dataset& dataset, double fraction, RngStream rng);

}  // namespace fedlora
