#include "fedlora/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedlora/config.hpp"
#include "fedlora/errors.hpp"
#include "fedlora/federation.hpp"
#include "fedlora/metrics.hpp"
#include "fedlora/strategy.hpp"

namespace fedlora::cli {

namespace {

using nlohmann::ordered_json;

constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> strategy;
    std::optional<std::size_t> rounds;
    std::optional<std::size_t> clients;
    std::optional<double> alpha;
    std::optional<double> lambda;
    std::optional<double> mu;
    std::optional<double> apfl_alpha;
    std::optional<std::size_t> rank;
    std::optional<double> learning_rate;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> local_epochs;
    std::optional<std::size_t> threads;
    std::optional<double> subsample;
    std::optional<std::size_t> pretrain_epochs;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("-c,--config", flags.config_path, "JSON config file");
    cmd->add_option("--seed", flags.seed, "override config seed");
    cmd->add_option("--out", flags.out_dir, "override output directory");
    cmd->add_option("--strategy", flags.strategy, "override strategy name");
    cmd->add_option("--rounds", flags.rounds, "override training rounds");
    cmd->add_option("--clients", flags.clients, "override client count");
    cmd->add_option("--alpha", flags.alpha, "override Dirichlet concentration");
    cmd->add_option("--lambda", flags.lambda, "override epfl self-weight");
    cmd->add_option("--mu", flags.mu, "override fedprox proximal coefficient");
    cmd->add_option("--apfl-alpha", flags.apfl_alpha, "override apfl mixture weight");
    cmd->add_option("--rank", flags.rank, "override LoRA rank");
    cmd->add_option("--learning-rate", flags.learning_rate, "override learning rate");
    cmd->add_option("--batch-size", flags.batch_size, "override batch size");
    cmd->add_option("--local-epochs", flags.local_epochs, "override local epochs");
    cmd->add_option("--threads", flags.threads, "override client-parallel workers");
    cmd->add_option("--subsample", flags.subsample, "override subsample fraction");
    cmd->add_option("--pretrain-epochs", flags.pretrain_epochs,
                    "override base pretraining epochs");
}

ordered_json overrides_from_flags(const CommonFlags& flags) {
    ordered_json j = ordered_json::object();
    if (flags.seed) j["seed"] = *flags.seed;
    if (flags.out_dir) j["out_dir"] = *flags.out_dir;
    if (flags.strategy) j["strategy"]["name"] = *flags.strategy;
    if (flags.lambda) j["strategy"]["lambda"] = *flags.lambda;
    if (flags.mu) j["strategy"]["mu"] = *flags.mu;
    if (flags.apfl_alpha) j["strategy"]["apfl_alpha"] = *flags.apfl_alpha;
    if (flags.rounds) j["training"]["rounds"] = *flags.rounds;
    if (flags.learning_rate) j["training"]["learning_rate"] = *flags.learning_rate;
    if (flags.batch_size) j["training"]["batch_size"] = *flags.batch_size;
    if (flags.local_epochs) j["training"]["local_epochs"] = *flags.local_epochs;
    if (flags.threads) j["training"]["threads"] = *flags.threads;
    if (flags.clients) j["partition"]["clients"] = *flags.clients;
    if (flags.alpha) j["partition"]["alpha"] = *flags.alpha;
    if (flags.rank) j["model"]["rank"] = *flags.rank;
    if (flags.pretrain_epochs) j["model"]["pretrain_epochs"] = *flags.pretrain_epochs;
    if (flags.subsample) j["dataset"]["subsample_fraction"] = *flags.subsample;
    return j;
}

int do_run(const CommonFlags& flags) {
    const ExperimentConfig config =
        load_config(flags.config_path, overrides_from_flags(flags));
    const Report report = run_experiment(config);
    write_report(report, config.out_dir);
    std::cout << "strategy " << report.strategy << ", " << report.clients
              << " clients, " << report.trace.size() << " rounds\n";
    std::cout << "mean final test accuracy: " << report.mean_final_accuracy << "\n";
    std::cout << "report written to " << config.out_dir << " ("
              << report.wall_clock_seconds << " s)\n";
    return 0;
}

int do_partition_inspect(const CommonFlags& flags) {
    const ExperimentConfig config =
        load_config(flags.config_path, overrides_from_flags(flags));

    Dataset data;
    if (config.dataset.source == DatasetConfig::Source::synthetic) {
        data = generate_synthetic(config.dataset.synthetic,
                                  RngStream(config.seed, "synthetic"));
    } else {
        data = load_csv(config.dataset.csv_path);
    }
    if (config.dataset.subsample_fraction < 1.0) {
        data = subsample(data, config.dataset.subsample_fraction,
                         RngStream(config.seed, "subsample"));
    }

    PartitionSpec spec;
    if (config.partition.kind == PartitionKind::synthetic_dirichlet) {
        spec = dirichlet_partition(data.labels, config.partition.clients,
                                   config.partition.alpha,
                                   RngStream(config.seed, "dirichlet"),
                                   config.partition.min_per_client);
    } else {
        spec = natural_partition(data, config.partition.clients);
    }

    ordered_json j;
    j["kind"] = partition_kind_name(spec.kind);
    if (spec.alpha) {
        j["alpha"] = *spec.alpha;
    } else {
        j["alpha"] = nullptr;
    }
    j["samples"] = data.size();
    j["clients"] = spec.client_indices;
    j["histograms"] = ordered_json::array();
    for (const auto& indices : spec.client_indices) {
        std::vector<std::size_t> hist(data.classes, 0);
        for (std::size_t row : indices) ++hist[data.labels[row]];
        j["histograms"].push_back(hist);
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int do_list_strategies() {
    for (const auto& info : strategy_registry()) {
        std::cout << info.name << "  —  " << info.summary << "\n";
    }
    return 0;
}

int do_sweep(const CommonFlags& flags) {
    if (flags.config_path.empty()) {
        throw ConfigError("sweep requires --config pointing at a sweep file");
    }
    std::ifstream in(flags.config_path);
    if (!in) throw ConfigError("cannot open sweep file " + flags.config_path);
    ordered_json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + flags.config_path + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("cells") || !doc.at("cells").is_array()) {
        throw ConfigError("sweep file must be {\"base\": {...}, \"cells\": [...]}");
    }
    ordered_json base =
        doc.contains("base") ? doc.at("base") : ordered_json::object();
    merge_json(base, overrides_from_flags(flags));

    std::set<std::string> names;
    for (const auto& cell : doc.at("cells")) {
        if (!cell.is_object() || !cell.contains("name")) {
            throw ConfigError("every sweep cell needs a \"name\"");
        }
        const std::string name = cell.at("name").get<std::string>();
        if (name.empty() || name.find('/') != std::string::npos ||
            name.find("..") != std::string::npos) {
            throw ConfigError("sweep cell name '" + name + "' is not a safe directory name");
        }
        if (!names.insert(name).second) {
            throw ConfigError("duplicate sweep cell name '" + name + "'");
        }
    }

    const ExperimentConfig base_config = parse_config(base);
    for (const auto& cell : doc.at("cells")) {
        const std::string name = cell.at("name").get<std::string>();
        ordered_json cell_doc = base;
        if (cell.contains("overrides")) {
            merge_json(cell_doc, cell.at("overrides"));
        }
        cell_doc["out_dir"] = base_config.out_dir + "/" + name;
        const ExperimentConfig config = parse_config(cell_doc);
        std::cout << "[sweep] " << name << " ... " << std::flush;
        const Report report = run_experiment(config);
        write_report(report, config.out_dir);
        std::cout << "mean final accuracy " << report.mean_final_accuracy << " ("
                  << report.wall_clock_seconds << " s)\n";
    }
    std::cout << "sweep complete: " << doc.at("cells").size() << " cells under "
              << base_config.out_dir << "\n";
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"deterministic federated LoRA personalization testbed"};
    app.require_subcommand(1);

    CommonFlags run_flags;
    CLI::App* cmd_run = app.add_subcommand("run", "run one experiment and write its report");
    add_common_flags(cmd_run, run_flags);

    CommonFlags inspect_flags;
    CLI::App* cmd_inspect = app.add_subcommand(
        "partition-inspect", "print the partition spec and per-client class histograms");
    add_common_flags(cmd_inspect, inspect_flags);

    CLI::App* cmd_list =
        app.add_subcommand("list-strategies", "print the strategy registry");

    CommonFlags sweep_flags;
    CLI::App* cmd_sweep = app.add_subcommand(
        "sweep", "run every cell of a sweep file and write one report per cell");
    add_common_flags(cmd_sweep, sweep_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (cmd_run->parsed()) return do_run(run_flags);
        if (cmd_inspect->parsed()) return do_partition_inspect(inspect_flags);
        if (cmd_list->parsed()) return do_list_strategies();
        if (cmd_sweep->parsed()) return do_sweep(sweep_flags);
        std::cerr << "error: no subcommand given\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace fedlora::cli
