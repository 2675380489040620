#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedlora/dataset.hpp"
#include "fedlora/lora.hpp"
#include "fedlora/matrix.hpp"
#include "fedlora/strategy.hpp"

namespace fedlora {

struct ClientRoundMetrics {
    double val_accuracy = 0.0;
    double train_loss = 0.0;
};

struct RoundMetrics {
    std::size_t round = 0;  // 1-based
    std::vector<ClientRoundMetrics> per_client;
    double mean_accuracy = 0.0;
};

// Exact element counts: what each client trains, and what moves over the
// wire per round. total_per_round covers the whole federation:
// clients * (trainable + up + down).
struct ParamReport {
    std::uint64_t trainable_per_client = 0;
    std::uint64_t communicated_up = 0;    // per client per round
    std::uint64_t communicated_down = 0;  // per client per round
    std::uint64_t total_per_round = 0;
};

struct Report {
    std::string config_echo;  // canonical JSON of the fully-defaulted config
    std::string strategy;
    std::uint64_t seed = 0;
    std::size_t clients = 0;
    std::vector<RoundMetrics> trace;
    std::vector<double> final_test_accuracy;  // per client
    double mean_final_accuracy = 0.0;
    ParamReport params;
    std::optional<Matrix> final_weights;  // epfl similarity matrix
    double wall_clock_seconds = 0.0;      // reported on the console, not serialized
};

// Fraction of rows where argmax(logits) equals the label; argmax ties
// resolve to the lowest class index.
double evaluate_accuracy(const LoraMlp& model, const Dataset& data,
                         const std::vector<std::size_t>& rows);

ParamReport param_counts(const LoraMlp& model, const StrategyConfig& strategy,
                         std::size_t clients);

// Per-round wire elements if the base weights were trained and shared in
// full instead of adapters. Reference point for the efficiency comparison.
std::uint64_t full_model_elements(const LoraMlp& model);

// Writes trace.csv, report.json, and (epfl) weights_final.csv into out_dir.
// Atomic per file: temp + rename; byte-identical output for identical input.
void write_report(const Report& report, const std::filesystem::path& out_dir);

// Round-trip check helper: parse a trace.csv produced by write_report.
std::vector<RoundMetrics> read_trace_csv(const std::filesystem::path& path);

}  // namespace fedlora
