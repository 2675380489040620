#include "fedlora/config.hpp"

#include <fstream>
#include <set>

#include "fedlora/errors.hpp"

namespace fedlora {

namespace {

using nlohmann::ordered_json;

void reject_unknown_keys(const ordered_json& obj, const std::set<std::string>& allowed,
                         const std::string& scope) {
    for (const auto& item : obj.items()) {
        if (!allowed.contains(item.key())) {
            throw ConfigError("unknown config key '" + scope + item.key() + "'");
        }
    }
}

template <typename T>
T get_or(const ordered_json& obj, const std::string& key, T fallback,
         const std::string& scope) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field '" + scope + key + "' has the wrong type");
    }
}

void require_positive(double v, const std::string& field) {
    if (!(v > 0.0)) throw ConfigError("config field '" + field + "' must be > 0");
}

}  // namespace

void merge_json(ordered_json& base, const ordered_json& overlay) {
    if (!overlay.is_object() || !base.is_object()) {
        base = overlay;
        return;
    }
    for (const auto& [key, value] : overlay.items()) {
        if (base.contains(key) && base.at(key).is_object() && value.is_object()) {
            merge_json(base.at(key), value);
        } else {
            base[key] = value;
        }
    }
}

ExperimentConfig parse_config(const ordered_json& doc) {
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown_keys(doc, {"dataset", "partition", "model", "training", "strategy",
                              "seed", "out_dir"},
                        "");

    ExperimentConfig cfg;
    cfg.seed = get_or<std::uint64_t>(doc, "seed", 42, "");
    cfg.out_dir = get_or<std::string>(doc, "out_dir", "out", "");
    if (cfg.out_dir.empty()) throw ConfigError("config field 'out_dir' must be non-empty");

    // dataset
    if (doc.contains("dataset")) {
        const ordered_json& d = doc.at("dataset");
        reject_unknown_keys(d, {"source", "synthetic", "csv_path", "subsample_fraction"},
                            "dataset.");
        const std::string source = get_or<std::string>(d, "source", "synthetic", "dataset.");
        if (source == "synthetic") {
            cfg.dataset.source = DatasetConfig::Source::synthetic;
        } else if (source == "csv") {
            cfg.dataset.source = DatasetConfig::Source::csv;
        } else {
            throw ConfigError("config field 'dataset.source' must be 'synthetic' or 'csv'");
        }
        cfg.dataset.csv_path = get_or<std::string>(d, "csv_path", "", "dataset.");
        if (cfg.dataset.source == DatasetConfig::Source::csv && cfg.dataset.csv_path.empty()) {
            throw ConfigError("config field 'dataset.csv_path' is required for csv source");
        }
        cfg.dataset.subsample_fraction =
            get_or<double>(d, "subsample_fraction", 1.0, "dataset.");
        if (cfg.dataset.subsample_fraction <= 0.0 || cfg.dataset.subsample_fraction > 1.0) {
            throw ConfigError("config field 'dataset.subsample_fraction' must be in (0, 1]");
        }
        if (d.contains("synthetic")) {
            const ordered_json& s = d.at("synthetic");
            reject_unknown_keys(s,
                                {"clusters", "classes", "dim", "samples_per_class",
                                 "separation", "permute_labels", "cluster_spread",
                                 "cluster_noise_dims", "cluster_noise_scale",
                                 "groups_per_cluster"},
                                "dataset.synthetic.");
            auto& spec = cfg.dataset.synthetic;
            spec.clusters = get_or<std::size_t>(s, "clusters", spec.clusters,
                                                "dataset.synthetic.");
            spec.classes = get_or<std::size_t>(s, "classes", spec.classes,
                                               "dataset.synthetic.");
            spec.dim = get_or<std::size_t>(s, "dim", spec.dim, "dataset.synthetic.");
            spec.samples_per_class = get_or<std::size_t>(
                s, "samples_per_class", spec.samples_per_class, "dataset.synthetic.");
            spec.separation = get_or<double>(s, "separation", spec.separation,
                                             "dataset.synthetic.");
            spec.permute_labels = get_or<bool>(s, "permute_labels", spec.permute_labels,
                                               "dataset.synthetic.");
            spec.cluster_spread = get_or<double>(s, "cluster_spread", spec.cluster_spread,
                                                 "dataset.synthetic.");
            spec.cluster_noise_dims = get_or<std::size_t>(
                s, "cluster_noise_dims", spec.cluster_noise_dims, "dataset.synthetic.");
            spec.cluster_noise_scale = get_or<double>(
                s, "cluster_noise_scale", spec.cluster_noise_scale, "dataset.synthetic.");
            spec.groups_per_cluster = get_or<std::size_t>(
                s, "groups_per_cluster", spec.groups_per_cluster, "dataset.synthetic.");
            if (spec.cluster_spread < 0.0) {
                throw ConfigError("config field 'dataset.synthetic.cluster_spread' must be >= 0");
            }
            if (spec.cluster_noise_scale < 0.0) {
                throw ConfigError(
                    "config field 'dataset.synthetic.cluster_noise_scale' must be >= 0");
            }
            if (spec.classes < 2) {
                throw ConfigError("config field 'dataset.synthetic.classes' must be >= 2");
            }
            if (spec.dim < 1) {
                throw ConfigError("config field 'dataset.synthetic.dim' must be >= 1");
            }
        }
    }

    // partition
    if (doc.contains("partition")) {
        const ordered_json& p = doc.at("partition");
        reject_unknown_keys(p, {"kind", "clients", "alpha", "min_per_client"}, "partition.");
        const std::string kind = get_or<std::string>(p, "kind", "dirichlet", "partition.");
        if (kind == "dirichlet") {
            cfg.partition.kind = PartitionKind::synthetic_dirichlet;
        } else if (kind == "natural") {
            cfg.partition.kind = PartitionKind::natural_group;
        } else {
            throw ConfigError("config field 'partition.kind' must be 'dirichlet' or 'natural'");
        }
        cfg.partition.clients = get_or<std::size_t>(p, "clients", 20, "partition.");
        cfg.partition.alpha = get_or<double>(p, "alpha", 0.1, "partition.");
        cfg.partition.min_per_client =
            get_or<std::size_t>(p, "min_per_client", 5, "partition.");
        if (cfg.partition.clients < 1) {
            throw ConfigError("config field 'partition.clients' must be >= 1");
        }
        require_positive(cfg.partition.alpha, "partition.alpha");
        if (cfg.partition.kind == PartitionKind::natural_group && p.contains("alpha")) {
            throw ConfigError("config field 'partition.alpha' only applies to kind 'dirichlet'");
        }
    }

    // model
    if (doc.contains("model")) {
        const ordered_json& m = doc.at("model");
        reject_unknown_keys(m, {"widths", "rank", "psi", "pretrain_epochs"}, "model.");
        cfg.model.widths = get_or<std::vector<std::size_t>>(m, "widths", cfg.model.widths,
                                                            "model.");
        cfg.model.rank = get_or<std::size_t>(m, "rank", 8, "model.");
        cfg.model.psi = get_or<std::vector<int>>(m, "psi", {}, "model.");
        cfg.model.pretrain_epochs =
            get_or<std::size_t>(m, "pretrain_epochs", cfg.model.pretrain_epochs, "model.");
        if (cfg.model.widths.empty()) {
            throw ConfigError("config field 'model.widths' must list at least one layer");
        }
        for (std::size_t w : cfg.model.widths) {
            if (w < 1) throw ConfigError("config field 'model.widths' entries must be >= 1");
        }
        if (cfg.model.rank < 1) {
            throw ConfigError("config field 'model.rank' must be >= 1");
        }
    }
    if (cfg.model.psi.empty()) {
        cfg.model.psi.assign(cfg.model.widths.size(), 1);
    }
    if (cfg.model.psi.size() != cfg.model.widths.size()) {
        throw ConfigError("config field 'model.psi' must have one entry per layer (" +
                          std::to_string(cfg.model.widths.size()) + ")");
    }
    for (int v : cfg.model.psi) {
        if (v != 0 && v != 1) {
            throw ConfigError("config field 'model.psi' entries must be 0 or 1");
        }
    }

    // training
    if (doc.contains("training")) {
        const ordered_json& t = doc.at("training");
        reject_unknown_keys(t, {"rounds", "local_epochs", "learning_rate", "batch_size",
                                "threads"},
                            "training.");
        cfg.training.rounds = get_or<std::size_t>(t, "rounds", 200, "training.");
        cfg.training.local_epochs = get_or<std::size_t>(t, "local_epochs", 1, "training.");
        cfg.training.learning_rate =
            get_or<double>(t, "learning_rate", cfg.training.learning_rate, "training.");
        cfg.training.batch_size = get_or<std::size_t>(t, "batch_size", 32, "training.");
        cfg.training.threads = get_or<std::size_t>(t, "threads", 1, "training.");
        if (cfg.training.learning_rate < 0.0) {
            throw ConfigError("config field 'training.learning_rate' must be >= 0");
        }
        if (cfg.training.local_epochs < 1) {
            throw ConfigError("config field 'training.local_epochs' must be >= 1");
        }
        if (cfg.training.batch_size < 1) {
            throw ConfigError("config field 'training.batch_size' must be >= 1");
        }
        if (cfg.training.threads < 1) {
            throw ConfigError("config field 'training.threads' must be >= 1");
        }
    }

    // strategy
    const ordered_json strategy_obj =
        doc.contains("strategy") ? doc.at("strategy") : ordered_json::object();
    reject_unknown_keys(strategy_obj,
                        {"name", "lambda", "epsilon", "aggregate_head", "mu", "apfl_alpha"},
                        "strategy.");
    const std::string name = get_or<std::string>(strategy_obj, "name", "epfl", "strategy.");
    cfg.strategy.name = strategy_from_name(name);

    const bool is_epfl = cfg.strategy.name == Strategy::epfl;
    for (const char* key : {"lambda", "epsilon", "aggregate_head"}) {
        if (strategy_obj.contains(key) && !is_epfl) {
            throw ConfigError("config field 'strategy." + std::string(key) +
                              "' only applies to strategy 'epfl'");
        }
    }
    if (strategy_obj.contains("mu") && cfg.strategy.name != Strategy::fedprox) {
        throw ConfigError("config field 'strategy.mu' only applies to strategy 'fedprox'");
    }
    if (strategy_obj.contains("apfl_alpha") && cfg.strategy.name != Strategy::apfl) {
        throw ConfigError("config field 'strategy.apfl_alpha' only applies to strategy 'apfl'");
    }

    cfg.strategy.lambda = get_or<double>(strategy_obj, "lambda", 0.5, "strategy.");
    cfg.strategy.epsilon = get_or<double>(strategy_obj, "epsilon", 1e-8, "strategy.");
    cfg.strategy.aggregate_head =
        get_or<bool>(strategy_obj, "aggregate_head", false, "strategy.");
    cfg.strategy.mu = get_or<double>(strategy_obj, "mu", 0.01, "strategy.");
    cfg.strategy.apfl_alpha = get_or<double>(strategy_obj, "apfl_alpha", 0.5, "strategy.");
    cfg.strategy.psi = cfg.model.psi;

    if (cfg.strategy.lambda < 0.0 || cfg.strategy.lambda > 1.0) {
        throw ConfigError("config field 'strategy.lambda' must be in [0, 1]");
    }
    require_positive(cfg.strategy.epsilon, "strategy.epsilon");
    if (cfg.strategy.mu < 0.0) {
        throw ConfigError("config field 'strategy.mu' must be >= 0");
    }
    if (cfg.strategy.apfl_alpha < 0.0 || cfg.strategy.apfl_alpha > 1.0) {
        throw ConfigError("config field 'strategy.apfl_alpha' must be in [0, 1]");
    }
    if (is_epfl) {
        bool any = false;
        for (int v : cfg.strategy.psi) any = any || v == 1;
        if (!any) {
            throw ConfigError("config field 'model.psi' needs at least one active layer "
                              "for strategy 'epfl'");
        }
    }

    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const ordered_json& overrides) {
    ordered_json doc = ordered_json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path.string());
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
        }
    }
    merge_json(doc, overrides);
    return parse_config(doc);
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["dataset"] = ordered_json{
        {"source", cfg.dataset.source == DatasetConfig::Source::synthetic ? "synthetic" : "csv"},
        {"synthetic",
         ordered_json{{"clusters", cfg.dataset.synthetic.clusters},
                      {"classes", cfg.dataset.synthetic.classes},
                      {"dim", cfg.dataset.synthetic.dim},
                      {"samples_per_class", cfg.dataset.synthetic.samples_per_class},
                      {"separation", cfg.dataset.synthetic.separation},
                      {"permute_labels", cfg.dataset.synthetic.permute_labels},
                      {"cluster_spread", cfg.dataset.synthetic.cluster_spread},
                      {"cluster_noise_dims", cfg.dataset.synthetic.cluster_noise_dims},
                      {"cluster_noise_scale", cfg.dataset.synthetic.cluster_noise_scale},
                      {"groups_per_cluster", cfg.dataset.synthetic.groups_per_cluster}}},
        {"csv_path", cfg.dataset.csv_path},
        {"subsample_fraction", cfg.dataset.subsample_fraction}};
    j["partition"] = ordered_json{
        {"kind", cfg.partition.kind == PartitionKind::synthetic_dirichlet ? "dirichlet"
                                                                          : "natural"},
        {"clients", cfg.partition.clients},
        {"alpha", cfg.partition.alpha},
        {"min_per_client", cfg.partition.min_per_client}};
    j["model"] = ordered_json{{"widths", cfg.model.widths},
                              {"rank", cfg.model.rank},
                              {"psi", cfg.model.psi},
                              {"pretrain_epochs", cfg.model.pretrain_epochs}};
    j["training"] = ordered_json{{"rounds", cfg.training.rounds},
                                 {"local_epochs", cfg.training.local_epochs},
                                 {"learning_rate", cfg.training.learning_rate},
                                 {"batch_size", cfg.training.batch_size},
                                 {"threads", cfg.training.threads}};
    ordered_json s{{"name", strategy_name(cfg.strategy.name)}};
    switch (cfg.strategy.name) {
        case Strategy::epfl:
            s["lambda"] = cfg.strategy.lambda;
            s["epsilon"] = cfg.strategy.epsilon;
            s["aggregate_head"] = cfg.strategy.aggregate_head;
            break;
        case Strategy::fedprox:
            s["mu"] = cfg.strategy.mu;
            break;
        case Strategy::apfl:
            s["apfl_alpha"] = cfg.strategy.apfl_alpha;
            break;
        default:
            break;
    }
    j["strategy"] = std::move(s);
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    return j;
}

}  // namespace fedlora
