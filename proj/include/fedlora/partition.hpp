#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fedlora/dataset.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {

enum class PartitionKind { synthetic_dirichlet, natural_group };

std::string partition_kind_name(PartitionKind kind);

// Assignment of dataset rows to clients: pairwise disjoint, jointly complete,
// every client non-empty.
struct PartitionSpec {
    PartitionKind kind = PartitionKind::synthetic_dirichlet;
    std::optional<double> alpha;
    std::vector<std::vector<std::size_t>> client_indices;

    std::size_t client_count() const { return client_indices.size(); }
};

// Per-class Dirichlet dealing: for each class, draw proportions over clients
// from Dirichlet(alpha * 1_N) and deal that class's shuffled samples by
// cumulative proportion. Redraws the whole partition (bounded retries) until
// every client holds at least min_per_client samples.
PartitionSpec dirichlet_partition(const std::vector<std::size_t>& labels,
                                  std::size_t clients, double alpha, RngStream rng,
                                  std::size_t min_per_client = 5,
                                  std::size_t max_retries = 10);

// Whole groups dealt round-robin in descending group size (ties by ascending
// group id). No group is ever split across clients.
PartitionSpec natural_partition(const Dataset& dataset, std::size_t clients);

struct Splits {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    std::vector<std::size_t> val;
};

// Shuffle, then assign round(0.4 n) to train, round(0.3 n) to test, and the
// remainder to val. Requires at least 3 indices.
Splits split_4_3_3(const std::vector<std::size_t>& indices, RngStream rng);

}  // namespace fedlora
