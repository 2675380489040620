#include "fedlora/strategy.hpp"

#include "fedlora/errors.hpp"

namespace fedlora {

const std::vector<StrategyInfo>& strategy_registry() {
    static const std::vector<StrategyInfo> registry = {
        {"epfl", "similarity-weighted aggregation of LoRA A matrices; B and head stay personal", true},
        {"simple-avg-a", "uniform averaging of LoRA A matrices; B and head stay personal", true},
        {"fedavg", "weighted averaging of all trainable tensors into one global model", true},
        {"fedprox", "fedavg plus an L2 proximal term pulling local updates toward the global model", true},
        {"scaffold", "fedavg with server/client control variates correcting client drift", true},
        {"apfl", "personal model mixed with a fedavg-shared global model", true},
        {"local-only", "no communication; every client trains alone", true},
        {"apple", "not implemented — extension point", false},
        {"fedala", "not implemented — extension point", false},
    };
    return registry;
}

Strategy strategy_from_name(std::string_view name) {
    if (name == "epfl") return Strategy::epfl;
    if (name == "simple-avg-a") return Strategy::simple_avg_a;
    if (name == "fedavg") return Strategy::fedavg;
    if (name == "fedprox") return Strategy::fedprox;
    if (name == "scaffold") return Strategy::scaffold;
    if (name == "apfl") return Strategy::apfl;
    if (name == "local-only") return Strategy::local_only;
    for (const auto& info : strategy_registry()) {
        if (!info.implemented && info.name == name) {
            throw ConfigError("strategy '" + std::string(name) +
                              "' not implemented — extension point");
        }
    }
    throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::epfl: return "epfl";
        case Strategy::simple_avg_a: return "simple-avg-a";
        case Strategy::fedavg: return "fedavg";
        case Strategy::fedprox: return "fedprox";
        case Strategy::scaffold: return "scaffold";
        case Strategy::apfl: return "apfl";
        case Strategy::local_only: return "local-only";
    }
    return "unknown";
}

}  // namespace fedlora
