#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedlora/dataset.hpp"
#include "fedlora/partition.hpp"
#include "fedlora/strategy.hpp"

namespace fedlora {

struct DatasetConfig {
    enum class Source { synthetic, csv };
    Source source = Source::synthetic;
    SyntheticSpec synthetic;
    std::string csv_path;
    double subsample_fraction = 1.0;
};

struct PartitionConfig {
    PartitionKind kind = PartitionKind::synthetic_dirichlet;
    std::size_t clients = 20;
    double alpha = 0.1;
    std::size_t min_per_client = 5;
};

struct ModelConfig {
    std::vector<std::size_t> widths = {64, 64};  // hidden layer widths
    std::size_t rank = 8;
    std::vector<int> psi;  // defaults to all-ones of length |widths|
    std::size_t pretrain_epochs = 1;
};

struct TrainingConfig {
    std::size_t rounds = 200;
    std::size_t local_epochs = 1;
    double learning_rate = 0.05;
    std::size_t batch_size = 32;
    std::size_t threads = 1;  // client-parallel workers; results identical to 1
};

struct ExperimentConfig {
    DatasetConfig dataset;
    PartitionConfig partition;
    ModelConfig model;
    TrainingConfig training;
    StrategyConfig strategy;
    std::uint64_t seed = 42;
    std::string out_dir = "out";
};

// Fully defaulted, validated config from a JSON document. Unknown keys and
// parameters irrelevant to the chosen strategy are rejected with the
// offending field named.
ExperimentConfig parse_config(const nlohmann::ordered_json& doc);

// Reads the file (or starts from {} when path is empty), deep-merges the
// overrides on top, then parses.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const nlohmann::ordered_json& overrides);

// Canonical serialization with every default filled in; the report echoes it.
nlohmann::ordered_json config_to_json(const ExperimentConfig& config);

void merge_json(nlohmann::ordered_json& base, const nlohmann::ordered_json& overlay);

}  // namespace fedlora
