#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "fedlora/config.hpp"
#include "fedlora/dataset.hpp"
#include "fedlora/lora.hpp"
#include "fedlora/matrix.hpp"
#include "fedlora/metrics.hpp"
#include "fedlora/partition.hpp"
#include "fedlora/strategy.hpp"

namespace fedlora {

// Row-stochastic aggregation weight matrix: nonnegative, rows sum to 1,
// diagonal pinned to the self-weight lambda.
struct SimilarityMatrix {
    Matrix s;
    double lambda = 0.5;
};

struct ClientState {
    std::size_t id = 0;
    LoraMlp model;
    Splits splits;
    std::optional<Gradients> scaffold_c_i;  // present iff strategy == scaffold
    std::optional<LoraMlp> apfl_local;      // present iff strategy == apfl
};

struct ServerState {
    std::vector<ClientState> clients;
    std::size_t round = 0;  // completed rounds
    std::size_t total_rounds = 0;
    std::optional<LoraMlp> global_model;    // fedavg family and apfl
    std::optional<Gradients> scaffold_c;    // server control variate
    std::optional<Matrix> last_weights;     // most recent similarity matrix
};

struct TrainingParams {
    double learning_rate = 0.05;
    std::size_t local_epochs = 1;
    std::size_t batch_size = 32;
    std::size_t threads = 1;
};

// Full-parameter SGD on a plain MLP over the pooled rows. The trained hidden
// weights and biases become every client's frozen base; the trained head is
// the shared starting point for the (trainable) per-client heads.
struct PretrainedBase {
    std::vector<Matrix> w0;
    std::vector<std::vector<double>> bias;
    Matrix head_w;
    std::vector<double> head_bias;
};

PretrainedBase pretrain_base(const ModelArch& arch, const Dataset& data,
                             const std::vector<std::size_t>& rows, std::size_t epochs,
                             double learning_rate, std::size_t batch_size,
                             RngStream rng);

void install_base(LoraMlp& model, const PretrainedBase& base);

struct LocalTrainHooks {
    const LoraMlp* prox_reference = nullptr;  // fedprox
    double prox_mu = 0.0;
    const Gradients* scaffold_c = nullptr;    // server variate
    const Gradients* scaffold_c_i = nullptr;  // client variate
};

struct LocalTrainResult {
    double mean_loss = 0.0;            // mean over all batch losses this call
    std::size_t steps = 0;             // SGD steps taken
    std::vector<double> batch_losses;  // per-batch trace, in execution order
};

// local_epochs passes of shuffled mini-batch SGD over the given rows.
// learning_rate 0 evaluates losses without stepping.
LocalTrainResult local_train(LoraMlp& model, const Dataset& data,
                             const std::vector<std::size_t>& train_rows,
                             const TrainingParams& params,
                             const LocalTrainHooks& hooks, RngStream rng);

// Mean Frobenius distance between clients' B matrices over psi-selected
// layers; symmetric with a zero diagonal.
Matrix pairwise_b_distance(const std::vector<const LoraMlp*>& models,
                           const std::vector<int>& psi);

// Inverse-distance weights with epsilon floor, normalized off-diagonal per
// row, diagonal pinned to lambda. A row whose off-diagonal distances are all
// exactly zero falls back to the uniform 1/(N-1) limit. Row normalization
// sums addends in value order, so relabeling clients permutes the output
// bit-exactly.
SimilarityMatrix similarity_weights(const Matrix& dbar, double lambda, double epsilon);

// A_i <- sum_j s_ij A_j from a frozen snapshot; B and head are untouched
// (unless aggregate_head mixes heads with the same weights). Zero-weight
// terms are skipped and addends are accumulated in a canonical order, so a
// lambda = 1 row is a bit-exact copy and client relabeling permutes results
// bit-exactly.
void aggregate_epfl(const SimilarityMatrix& weights, std::vector<ClientState>& clients,
                    bool aggregate_head = false);

// Weighted average of every trainable tensor; weights must be nonnegative
// and sum to 1.
LoraMlp aggregate_fedavg(const std::vector<const LoraMlp*>& models,
                         const std::vector<double>& weights);

// One full scaffold round (option-II variate update, full participation).
void scaffold_round(ServerState& server, const Dataset& data,
                    const TrainingParams& params, std::uint64_t seed,
                    std::size_t round);

// One full apfl round: shared model trained from the broadcast global and
// re-aggregated; the personal model keeps training locally.
void apfl_round(ServerState& server, const Dataset& data, const TrainingParams& params,
                double mixture_alpha, std::uint64_t seed, std::size_t round);

// Parameter-space mixture alpha*local + (1-alpha)*global used for apfl
// predictions.
LoraMlp apfl_eval_model(const ClientState& client, const LoraMlp& global_model,
                        double mixture_alpha);

// Observation points for invariant checks around the aggregation step.
struct RoundObserver {
    std::function<void(const ServerState&)> before_aggregate;
    std::function<void(const ServerState&)> after_aggregate;
};

RoundMetrics run_round(ServerState& server, const Dataset& data,
                       const StrategyConfig& strategy, const TrainingParams& params,
                       std::uint64_t seed, const RoundObserver* observer = nullptr);

// Builds dataset, partition, splits, pretrained base, and clients.
struct ExperimentSetup {
    Dataset data;
    PartitionSpec partition;
    ServerState server;
    ModelArch arch;
};

ExperimentSetup setup_experiment(const ExperimentConfig& config);

Report run_experiment(const ExperimentConfig& config,
                      const RoundObserver* observer = nullptr);

}  // namespace fedlora
