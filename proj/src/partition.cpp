#include "fedlora/partition.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fedlora/errors.hpp"

namespace fedlora {

std::string partition_kind_name(PartitionKind kind) {
    return kind == PartitionKind::synthetic_dirichlet ? "synthetic-dirichlet"
                                                      : "natural-group";
}

PartitionSpec dirichlet_partition(const std::vector<std::size_t>& labels,
                                  std::size_t clients, double alpha, RngStream rng,
                                  std::size_t min_per_client,
                                  std::size_t max_retries) {
    if (clients < 1) throw ConfigError("dirichlet_partition: need at least 1 client");
    if (alpha <= 0.0) throw ConfigError("dirichlet_partition: alpha must be positive");
    if (labels.size() < clients) {
        throw PartitionError("dirichlet_partition: " + std::to_string(clients) +
                             " clients exceed " + std::to_string(labels.size()) +
                             " samples");
    }

    // samples per class, in stable index order
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    const std::size_t floor = clients == 1 ? labels.size() : min_per_client;
    for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
        std::vector<std::vector<std::size_t>> assignment(clients);
        for (auto& [cls, members] : by_class) {
            std::vector<std::size_t> shuffled = members;
            rng.shuffle(shuffled);
            const std::vector<double> p =
                clients == 1 ? std::vector<double>{1.0} : rng.dirichlet(alpha, clients);

            const auto m = static_cast<double>(shuffled.size());
            double cumulative = 0.0;
            std::size_t start = 0;
            for (std::size_t c = 0; c < clients; ++c) {
                cumulative += p[c];
                auto cut = static_cast<std::size_t>(std::llround(cumulative * m));
                if (c + 1 == clients) cut = shuffled.size();
                cut = std::clamp(cut, start, shuffled.size());
                assignment[c].insert(assignment[c].end(), shuffled.begin() + start,
                                     shuffled.begin() + cut);
                start = cut;
            }
        }

        const bool ok = std::all_of(assignment.begin(), assignment.end(),
                                    [floor](const auto& v) { return v.size() >= floor; });
        if (ok) {
            PartitionSpec spec;
            spec.kind = PartitionKind::synthetic_dirichlet;
            spec.alpha = alpha;
            for (auto& v : assignment) std::sort(v.begin(), v.end());
            spec.client_indices = std::move(assignment);
            return spec;
        }
    }
    throw PartitionError("dirichlet_partition: could not give every client >= " +
                         std::to_string(floor) + " samples within " +
                         std::to_string(max_retries) + " retries (alpha=" +
                         std::to_string(alpha) + ", clients=" +
                         std::to_string(clients) + ")");
}

PartitionSpec natural_partition(const Dataset& dataset, std::size_t clients) {
    if (!dataset.group_ids) {
        throw DataError("natural_partition: dataset has no group ids");
    }
    if (clients < 1) throw ConfigError("natural_partition: need at least 1 client");

    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        groups[(*dataset.group_ids)[i]].push_back(i);
    }
    if (groups.size() < clients) {
        throw DataError("natural_partition: " + std::to_string(groups.size()) +
                        " groups cannot cover " + std::to_string(clients) + " clients");
    }

    std::vector<const std::vector<std::size_t>*> ordered;
    std::vector<std::size_t> ids;
    for (const auto& [id, members] : groups) {
        ordered.push_back(&members);
        ids.push_back(id);
    }
    std::vector<std::size_t> rank(ordered.size());
    for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t x, std::size_t y) {
        if (ordered[x]->size() != ordered[y]->size()) {
            return ordered[x]->size() > ordered[y]->size();
        }
        return ids[x] < ids[y];
    });

    PartitionSpec spec;
    spec.kind = PartitionKind::natural_group;
    spec.client_indices.assign(clients, {});
    for (std::size_t pos = 0; pos < rank.size(); ++pos) {
        auto& target = spec.client_indices[pos % clients];
        const auto& members = *ordered[rank[pos]];
        target.insert(target.end(), members.begin(), members.end());
    }
    for (auto& v : spec.client_indices) std::sort(v.begin(), v.end());
    return spec;
}

Splits split_4_3_3(const std::vector<std::size_t>& indices, RngStream rng) {
    const std::size_t n = indices.size();
    if (n < 3) {
        throw DataError("split_4_3_3: need at least 3 indices, got " + std::to_string(n));
    }
    std::vector<std::size_t> shuffled = indices;
    rng.shuffle(shuffled);

    const auto n_train =
        static_cast<std::size_t>(std::llround(0.4 * static_cast<double>(n)));
    const auto n_test =
        static_cast<std::size_t>(std::llround(0.3 * static_cast<double>(n)));

    Splits s;
    s.train.assign(shuffled.begin(), shuffled.begin() + n_train);
    s.test.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_test);
    s.val.assign(shuffled.begin() + n_train + n_test, shuffled.end());
    return s;
}

}  // namespace fedlora
