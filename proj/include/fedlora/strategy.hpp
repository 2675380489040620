#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace fedlora {

enum class Strategy {
    epfl,          // similarity-weighted A aggregation, personal B and head
    simple_avg_a,  // uniform A averaging ablation, personal B and head
    fedavg,
    fedprox,
    scaffold,
    apfl,
    local_only,
};

struct StrategyConfig {
    Strategy name = Strategy::epfl;
    double lambda = 0.5;          // epfl self-weight, in [0, 1]
    double epsilon = 1e-8;        // epfl distance floor, > 0
    bool aggregate_head = false;  // epfl: also mix heads with the weight matrix
    double mu = 0.01;             // fedprox proximal coefficient
    double apfl_alpha = 0.5;      // apfl mixture weight, in [0, 1]
    std::vector<int> psi;         // per-layer 0/1 distance-participation mask
};

struct StrategyInfo {
    std::string name;
    std::string summary;
    bool implemented = true;
};

// Registry in the order strategies are reported. Includes the registered
// extension points (apple, fedala) which parse but cannot run.
const std::vector<StrategyInfo>& strategy_registry();

// Throws ConfigError for unknown names and for registered extension points.
Strategy strategy_from_name(std::string_view name);

std::string strategy_name(Strategy s);

}  // namespace fedlora
