#include "fedlora/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include "fedlora/errors.hpp"
#include "fedlora/kernels.hpp"
#include "fedlora/loss.hpp"

namespace fedlora {

namespace {

// Runs fn(0..n-1) on up to `threads` workers with a static stride schedule.
// Each index touches only its own state, so the result is identical to the
// sequential order.
void for_each_index(std::size_t n, std::size_t threads,
                    const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min(threads, n);
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Minimal fully-trainable MLP used only to produce the frozen base.
struct PlainMlp {
    std::vector<Matrix> w;
    std::vector<std::vector<double>> bias;
    Matrix head_w;
    std::vector<double> head_bias;
};

PlainMlp init_plain(const ModelArch& arch, RngStream& rng) {
    PlainMlp net;
    std::size_t in = arch.input_dim;
    for (std::size_t width : arch.hidden) {
        Matrix w(width, in);
        for (double& v : w.data) {
            v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
        }
        net.w.push_back(std::move(w));
        net.bias.emplace_back(width, 0.0);
        in = width;
    }
    net.head_w = Matrix(arch.classes, in);
    for (double& v : net.head_w.data) v = rng.normal(0.0, 0.02);
    net.head_bias.assign(arch.classes, 0.0);
    return net;
}

double plain_train_batch(PlainMlp& net, const Matrix& features,
                         const std::vector<std::size_t>& labels, double lr) {
    const std::size_t n = features.rows;
    const std::size_t num_layers = net.w.size();
    const double inv_n = 1.0 / static_cast<double>(n);

    std::vector<Matrix> dw;
    std::vector<std::vector<double>> dbias;
    for (std::size_t l = 0; l < num_layers; ++l) {
        dw.emplace_back(net.w[l].rows, net.w[l].cols);
        dbias.emplace_back(net.bias[l].size(), 0.0);
    }
    Matrix dhead(net.head_w.rows, net.head_w.cols);
    std::vector<double> dhead_bias(net.head_bias.size(), 0.0);

    std::vector<std::vector<double>> inputs(num_layers);
    std::vector<std::vector<double>> pre(num_layers);
    double total_loss = 0.0;

    for (std::size_t s = 0; s < n; ++s) {
        std::vector<double> act(features.row_ptr(s), features.row_ptr(s) + features.cols);
        for (std::size_t l = 0; l < num_layers; ++l) {
            inputs[l] = act;
            std::vector<double> h;
            matvec(net.w[l], act, h);
            for (std::size_t i = 0; i < h.size(); ++i) h[i] += net.bias[l][i];
            pre[l] = h;
            if (l + 1 < num_layers) {
                for (double& v : h) v = std::max(0.0, v);
            }
            act = std::move(h);
        }
        std::vector<double> logits;
        matvec(net.head_w, act, logits);
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += net.head_bias[i];

        LossGrad lg = softmax_cross_entropy(logits, labels[s]);
        total_loss += lg.loss * inv_n;
        for (double& g : lg.grad) g *= inv_n;

        add_outer(dhead, lg.grad, act);
        for (std::size_t i = 0; i < lg.grad.size(); ++i) dhead_bias[i] += lg.grad[i];

        std::vector<double> delta(act.size(), 0.0);
        matvec_transposed_add(net.head_w, lg.grad, delta);
        for (std::size_t li = num_layers; li-- > 0;) {
            if (li + 1 < num_layers) {
                for (std::size_t i = 0; i < delta.size(); ++i) {
                    if (pre[li][i] <= 0.0) delta[i] = 0.0;
                }
            }
            add_outer(dw[li], delta, inputs[li]);
            for (std::size_t i = 0; i < delta.size(); ++i) dbias[li][i] += delta[i];
            if (li > 0) {
                std::vector<double> prev(net.w[li].cols, 0.0);
                matvec_transposed_add(net.w[li], delta, prev);
                delta = std::move(prev);
            }
        }
    }

    for (std::size_t l = 0; l < num_layers; ++l) {
        kernels::axpy(-lr, dw[l].data.data(), net.w[l].data.data(), dw[l].size());
        kernels::axpy(-lr, dbias[l].data(), net.bias[l].data(), dbias[l].size());
    }
    kernels::axpy(-lr, dhead.data.data(), net.head_w.data.data(), dhead.size());
    kernels::axpy(-lr, dhead_bias.data(), net.head_bias.data(), dhead_bias.size());
    return total_loss;
}

void gather_batch(const Dataset& data, const std::vector<std::size_t>& order,
                  std::size_t start, std::size_t count, Matrix& features,
                  std::vector<std::size_t>& labels) {
    features = Matrix(count, data.features.cols);
    labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t row = order[start + i];
        std::copy_n(data.features.row_ptr(row), data.features.cols,
                    features.row_ptr(i));
        labels[i] = data.labels[row];
    }
}

std::vector<double> train_size_weights(const std::vector<ClientState>& clients) {
    std::vector<double> p(clients.size());
    double total = 0.0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
        p[i] = static_cast<double>(clients[i].splits.train.size());
        total += p[i];
    }
    if (total <= 0.0) throw DataError("aggregation weights: no training samples");
    for (double& v : p) v /= total;
    return p;
}

std::vector<const LoraMlp*> model_pointers(const std::vector<ClientState>& clients) {
    std::vector<const LoraMlp*> ptrs;
    ptrs.reserve(clients.size());
    for (const auto& c : clients) ptrs.push_back(&c.model);
    return ptrs;
}

// Weighted accumulation into `out`: the first nonzero term is written with
// scale_assign (so a lone weight of 1.0 copies bits exactly), the rest are
// axpy'd in the order given.
void weighted_accumulate(std::vector<double>& out,
                         const std::vector<const std::vector<double>*>& tensors,
                         const std::vector<double>& weights) {
    bool first = true;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        if (weights[t] == 0.0) continue;
        if (first) {
            kernels::scale_assign(weights[t], tensors[t]->data(), out.data(), out.size());
            first = false;
        } else {
            kernels::axpy(weights[t], tensors[t]->data(), out.data(), out.size());
        }
    }
    if (first) std::fill(out.begin(), out.end(), 0.0);
}

}  // namespace

PretrainedBase pretrain_base(const ModelArch& arch, const Dataset& data,
                             const std::vector<std::size_t>& rows, std::size_t epochs,
                             double learning_rate, std::size_t batch_size,
                             RngStream rng) {
    if (rows.empty()) throw DataError("pretrain_base: pooled dataset is empty");
    if (batch_size < 1) throw ConfigError("pretrain_base: batch_size must be >= 1");

    PlainMlp net = init_plain(arch, rng);
    std::vector<std::size_t> order = rows;
    Matrix features;
    std::vector<std::size_t> labels;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t count = std::min(batch_size, order.size() - start);
            gather_batch(data, order, start, count, features, labels);
            plain_train_batch(net, features, labels, learning_rate);
        }
    }
    return PretrainedBase{std::move(net.w), std::move(net.bias), std::move(net.head_w),
                          std::move(net.head_bias)};
}

void install_base(LoraMlp& model, const PretrainedBase& base) {
    if (base.w0.size() != model.layers.size()) {
        throw ShapeError("install_base: layer count mismatch");
    }
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        if (!base.w0[l].same_shape(model.layers[l].w0) ||
            base.bias[l].size() != model.layers[l].bias.size()) {
            throw ShapeError("install_base: tensor shape mismatch at layer " +
                             std::to_string(l));
        }
        model.layers[l].w0 = base.w0[l];
        model.layers[l].bias = base.bias[l];
    }
    if (!base.head_w.same_shape(model.head.w) ||
        base.head_bias.size() != model.head.bias.size()) {
        throw ShapeError("install_base: head shape mismatch");
    }
    model.head.w = base.head_w;
    model.head.bias = base.head_bias;
}

LocalTrainResult local_train(LoraMlp& model, const Dataset& data,
                             const std::vector<std::size_t>& train_rows,
                             const TrainingParams& params,
                             const LocalTrainHooks& hooks, RngStream rng) {
    if (train_rows.empty()) throw DataError("local_train: empty train split");
    if (params.batch_size < 1) throw ConfigError("local_train: batch_size must be >= 1");
    if (params.learning_rate < 0.0) {
        throw ConfigError("local_train: learning rate must be >= 0");
    }

    ProxTerm prox;
    const ProxTerm* prox_ptr = nullptr;
    if (hooks.prox_reference != nullptr && hooks.prox_mu != 0.0) {
        prox = ProxTerm{hooks.prox_mu, hooks.prox_reference};
        prox_ptr = &prox;
    }

    std::vector<std::size_t> order = train_rows;
    Matrix features;
    std::vector<std::size_t> labels;
    LocalTrainResult result;
    std::size_t batches = 0;
    for (std::size_t epoch = 0; epoch < params.local_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += params.batch_size) {
            const std::size_t count = std::min(params.batch_size, order.size() - start);
            gather_batch(data, order, start, count, features, labels);
            BackwardResult back = backward(model, features, labels, prox_ptr);
            if (!std::isfinite(back.mean_loss)) {
                throw DataError("local_train: non-finite loss (diverging run?)");
            }
            result.mean_loss += back.mean_loss;
            result.batch_losses.push_back(back.mean_loss);
            ++batches;
            if (params.learning_rate > 0.0) {
                sgd_step(model, back.grads, params.learning_rate, hooks.scaffold_c,
                         hooks.scaffold_c_i);
                ++result.steps;
            }
        }
    }
    result.mean_loss /= static_cast<double>(batches);
    return result;
}

Matrix pairwise_b_distance(const std::vector<const LoraMlp*>& models,
                           const std::vector<int>& psi) {
    if (models.empty()) throw ShapeError("pairwise_b_distance: no models");
    const std::size_t num_layers = models[0]->layers.size();
    if (psi.size() != num_layers) {
        throw ConfigError("pairwise_b_distance: psi mask length " +
                          std::to_string(psi.size()) + " does not match " +
                          std::to_string(num_layers) + " layers");
    }
    std::vector<std::size_t> active;
    for (std::size_t l = 0; l < num_layers; ++l) {
        if (psi[l] != 0) active.push_back(l);
    }
    if (active.empty()) {
        throw ConfigError("pairwise_b_distance: psi selects no layers");
    }

    const std::size_t n = models.size();
    Matrix dbar(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double sum = 0.0;
            for (std::size_t l : active) {
                sum += frob_distance(models[i]->layers[l].b, models[j]->layers[l].b);
            }
            const double mean = sum / static_cast<double>(active.size());
            dbar.at(i, j) = mean;
            dbar.at(j, i) = mean;
        }
    }
    return dbar;
}

SimilarityMatrix similarity_weights(const Matrix& dbar, double lambda, double epsilon) {
    if (dbar.rows != dbar.cols) {
        throw ShapeError("similarity_weights: distance matrix must be square");
    }
    const std::size_t n = dbar.rows;
    if (n < 2) throw ConfigError("similarity_weights: need at least 2 clients");
    if (lambda < 0.0 || lambda > 1.0) {
        throw ConfigError("similarity_weights: lambda must be in [0, 1]");
    }
    if (!(epsilon > 0.0)) {
        throw ConfigError("similarity_weights: epsilon must be > 0");
    }
    if (!all_finite(dbar)) {
        throw DataError("similarity_weights: non-finite distance entries");
    }

    SimilarityMatrix out;
    out.lambda = lambda;
    out.s = Matrix(n, n);
    std::vector<double> inv(n);
    std::vector<double> addends;
    for (std::size_t i = 0; i < n; ++i) {
        bool all_zero = true;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && dbar.at(i, j) != 0.0) all_zero = false;
        }
        if (all_zero) {
            const double uniform = 1.0 / static_cast<double>(n - 1);
            for (std::size_t j = 0; j < n; ++j) {
                out.s.at(i, j) = j == i ? lambda : (1.0 - lambda) * uniform;
            }
            continue;
        }
        addends.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            inv[j] = 1.0 / (dbar.at(i, j) + epsilon);
            addends.push_back(inv[j]);
        }
        // value-ordered summation: the normalizer is independent of client
        // labeling, which keeps permuted runs bit-exact
        std::sort(addends.begin(), addends.end(), std::greater<double>());
        double norm = 0.0;
        for (double v : addends) norm += v;
        for (std::size_t j = 0; j < n; ++j) {
            out.s.at(i, j) = j == i ? lambda : (1.0 - lambda) * (inv[j] / norm);
        }
    }
    return out;
}

void aggregate_epfl(const SimilarityMatrix& weights, std::vector<ClientState>& clients,
                    bool aggregate_head) {
    const Matrix& s = weights.s;
    const std::size_t n = clients.size();
    if (s.rows != n || s.cols != n) {
        throw ShapeError("aggregate_epfl: weight matrix does not match client count");
    }
    if (n == 0) return;
    const std::size_t num_layers = clients[0].model.layers.size();

    // frozen snapshot of round-t tensors
    std::vector<Matrix> head_w_snap;
    std::vector<std::vector<double>> head_b_snap;
    std::vector<std::vector<Matrix>> a_copy(n);
    for (std::size_t j = 0; j < n; ++j) {
        a_copy[j].reserve(num_layers);
        for (std::size_t l = 0; l < num_layers; ++l) {
            a_copy[j].push_back(clients[j].model.layers[l].a);
        }
    }
    if (aggregate_head) {
        head_w_snap.reserve(n);
        head_b_snap.reserve(n);
        for (std::size_t j = 0; j < n; ++j) {
            head_w_snap.push_back(clients[j].model.head.w);
            head_b_snap.push_back(clients[j].model.head.bias);
        }
    }

    // canonical term order per row: weight descending, ties broken by tensor
    // content, so relabeling clients cannot change any partial sum
    const auto content_less = [&](std::size_t ja, std::size_t jb) {
        for (std::size_t l = 0; l < num_layers; ++l) {
            const auto& da = a_copy[ja][l].data;
            const auto& db = a_copy[jb][l].data;
            if (da != db) {
                return std::lexicographical_compare(da.begin(), da.end(), db.begin(),
                                                    db.end());
            }
        }
        if (aggregate_head) {
            if (head_w_snap[ja].data != head_w_snap[jb].data) {
                return std::lexicographical_compare(
                    head_w_snap[ja].data.begin(), head_w_snap[ja].data.end(),
                    head_w_snap[jb].data.begin(), head_w_snap[jb].data.end());
            }
            if (head_b_snap[ja] != head_b_snap[jb]) {
                return std::lexicographical_compare(head_b_snap[ja].begin(),
                                                    head_b_snap[ja].end(),
                                                    head_b_snap[jb].begin(),
                                                    head_b_snap[jb].end());
            }
        }
        return ja < jb;
    };

    std::vector<std::size_t> terms;
    std::vector<double> term_weights;
    std::vector<const std::vector<double>*> tensors;
    for (std::size_t i = 0; i < n; ++i) {
        terms.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (s.at(i, j) != 0.0) terms.push_back(j);
        }
        std::sort(terms.begin(), terms.end(), [&](std::size_t ja, std::size_t jb) {
            if (s.at(i, ja) != s.at(i, jb)) return s.at(i, ja) > s.at(i, jb);
            return content_less(ja, jb);
        });
        term_weights.clear();
        for (std::size_t j : terms) term_weights.push_back(s.at(i, j));

        for (std::size_t l = 0; l < num_layers; ++l) {
            tensors.clear();
            for (std::size_t j : terms) tensors.push_back(&a_copy[j][l].data);
            weighted_accumulate(clients[i].model.layers[l].a.data, tensors, term_weights);
        }
        if (aggregate_head) {
            tensors.clear();
            for (std::size_t j : terms) tensors.push_back(&head_w_snap[j].data);
            weighted_accumulate(clients[i].model.head.w.data, tensors, term_weights);
            tensors.clear();
            for (std::size_t j : terms) tensors.push_back(&head_b_snap[j]);
            weighted_accumulate(clients[i].model.head.bias, tensors, term_weights);
        }
    }
}

LoraMlp aggregate_fedavg(const std::vector<const LoraMlp*>& models,
                         const std::vector<double>& weights) {
    if (models.empty()) throw ShapeError("aggregate_fedavg: no models");
    if (models.size() != weights.size()) {
        throw ConfigError("aggregate_fedavg: weight count does not match model count");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw ConfigError("aggregate_fedavg: weights must be >= 0");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("aggregate_fedavg: weights must sum to 1");
    }

    LoraMlp global = *models[0];
    const std::size_t num_layers = global.layers.size();
    std::vector<const std::vector<double>*> tensors(models.size());

    const auto accumulate = [&](auto accessor, std::vector<double>& out) {
        for (std::size_t m = 0; m < models.size(); ++m) tensors[m] = accessor(*models[m]);
        weighted_accumulate(out, tensors, weights);
    };

    for (std::size_t l = 0; l < num_layers; ++l) {
        accumulate([l](const LoraMlp& m) { return &m.layers[l].a.data; },
                   global.layers[l].a.data);
        accumulate([l](const LoraMlp& m) { return &m.layers[l].b.data; },
                   global.layers[l].b.data);
    }
    accumulate([](const LoraMlp& m) { return &m.head.w.data; }, global.head.w.data);
    accumulate([](const LoraMlp& m) { return &m.head.bias; }, global.head.bias);
    return global;
}

namespace {

std::vector<double> scaffold_phase(ServerState& server, const Dataset& data,
                                   const TrainingParams& params, std::uint64_t seed,
                                   std::size_t round, const RoundObserver* observer) {
    if (!server.global_model) {
        throw ConfigError("scaffold: server has no global model");
    }
    if (params.learning_rate <= 0.0) {
        throw ConfigError("scaffold: learning rate must be > 0 (K*delta would be 0)");
    }
    const LoraMlp start = *server.global_model;
    if (!server.scaffold_c) server.scaffold_c = Gradients::zeros_like(start);

    const std::size_t n = server.clients.size();
    std::vector<double> losses(n, 0.0);
    std::vector<Gradients> variate_delta(n, Gradients::zeros_like(start));

    for_each_index(n, params.threads, [&](std::size_t i) {
        ClientState& client = server.clients[i];
        if (!client.scaffold_c_i) client.scaffold_c_i = Gradients::zeros_like(start);
        client.model = start;
        const LocalTrainResult res = local_train(
            client.model, data, client.splits.train, params,
            LocalTrainHooks{nullptr, 0.0, &*server.scaffold_c, &*client.scaffold_c_i},
            RngStream(seed, "batch", i, round));
        losses[i] = res.mean_loss;
        if (res.steps == 0) {
            throw ConfigError("scaffold: client took no SGD steps (K*delta = 0)");
        }
        // option II: c_i <- c_i - c + (x - y_i) / (K * delta)
        Gradients next = *client.scaffold_c_i;
        next.add_scaled(*server.scaffold_c, -1.0);
        Gradients drift = model_delta(start, client.model);
        next.add_scaled(drift,
                        1.0 / (static_cast<double>(res.steps) * params.learning_rate));
        variate_delta[i].add_scaled(next, 1.0);
        variate_delta[i].add_scaled(*client.scaffold_c_i, -1.0);
        client.scaffold_c_i = std::move(next);
    });

    if (observer && observer->before_aggregate) observer->before_aggregate(server);
    server.global_model =
        aggregate_fedavg(model_pointers(server.clients), train_size_weights(server.clients));
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        server.scaffold_c->add_scaled(variate_delta[i], inv_n);
    }
    for (auto& client : server.clients) client.model = *server.global_model;
    if (observer && observer->after_aggregate) observer->after_aggregate(server);
    return losses;
}

std::vector<double> apfl_phase(ServerState& server, const Dataset& data,
                               const TrainingParams& params, std::uint64_t seed,
                               std::size_t round, const RoundObserver* observer) {
    if (!server.global_model) throw ConfigError("apfl: server has no global model");
    const LoraMlp start = *server.global_model;
    const std::size_t n = server.clients.size();
    std::vector<double> losses(n, 0.0);

    for_each_index(n, params.threads, [&](std::size_t i) {
        ClientState& client = server.clients[i];
        if (!client.apfl_local) client.apfl_local = start;
        client.model = start;
        const LocalTrainResult shared = local_train(client.model, data,
                                                    client.splits.train, params, {},
                                                    RngStream(seed, "batch", i, round));
        local_train(*client.apfl_local, data, client.splits.train, params, {},
                    RngStream(seed, "batch-local", i, round));
        losses[i] = shared.mean_loss;
    });

    if (observer && observer->before_aggregate) observer->before_aggregate(server);
    server.global_model =
        aggregate_fedavg(model_pointers(server.clients), train_size_weights(server.clients));
    for (auto& client : server.clients) client.model = *server.global_model;
    if (observer && observer->after_aggregate) observer->after_aggregate(server);
    return losses;
}

}  // namespace

void scaffold_round(ServerState& server, const Dataset& data,
                    const TrainingParams& params, std::uint64_t seed,
                    std::size_t round) {
    scaffold_phase(server, data, params, seed, round, nullptr);
}

void apfl_round(ServerState& server, const Dataset& data, const TrainingParams& params,
                double mixture_alpha, std::uint64_t seed, std::size_t round) {
    (void)mixture_alpha;  // mixing happens at evaluation time
    apfl_phase(server, data, params, seed, round, nullptr);
}

LoraMlp apfl_eval_model(const ClientState& client, const LoraMlp& global_model,
                        double mixture_alpha) {
    if (mixture_alpha < 0.0 || mixture_alpha > 1.0) {
        throw ConfigError("apfl: mixture alpha must be in [0, 1]");
    }
    const LoraMlp& local = client.apfl_local ? *client.apfl_local : global_model;
    if (mixture_alpha == 0.0) return global_model;
    if (mixture_alpha == 1.0) return local;
    return aggregate_fedavg({&local, &global_model}, {mixture_alpha, 1.0 - mixture_alpha});
}

RoundMetrics run_round(ServerState& server, const Dataset& data,
                       const StrategyConfig& strategy, const TrainingParams& params,
                       std::uint64_t seed, const RoundObserver* observer) {
    if (server.round >= server.total_rounds) {
        throw ConfigError("run_round: all " + std::to_string(server.total_rounds) +
                          " rounds already executed");
    }
    const std::size_t round = server.round + 1;
    const std::size_t n = server.clients.size();
    std::vector<double> losses(n, 0.0);

    const auto plain_local_phase = [&](const LocalTrainHooks& hooks) {
        for_each_index(n, params.threads, [&](std::size_t i) {
            losses[i] = local_train(server.clients[i].model, data,
                                    server.clients[i].splits.train, params, hooks,
                                    RngStream(seed, "batch", i, round))
                            .mean_loss;
        });
    };

    switch (strategy.name) {
        case Strategy::local_only:
            plain_local_phase({});
            break;
        case Strategy::epfl: {
            plain_local_phase({});
            if (n >= 2) {
                const Matrix dbar =
                    pairwise_b_distance(model_pointers(server.clients), strategy.psi);
                const SimilarityMatrix weights =
                    similarity_weights(dbar, strategy.lambda, strategy.epsilon);
                if (observer && observer->before_aggregate) observer->before_aggregate(server);
                aggregate_epfl(weights, server.clients, strategy.aggregate_head);
                if (observer && observer->after_aggregate) observer->after_aggregate(server);
                server.last_weights = weights.s;
            }
            break;
        }
        case Strategy::simple_avg_a: {
            plain_local_phase({});
            if (n >= 2) {
                SimilarityMatrix uniform;
                uniform.lambda = 1.0 / static_cast<double>(n);
                uniform.s = Matrix(n, n);
                std::fill(uniform.s.data.begin(), uniform.s.data.end(), uniform.lambda);
                if (observer && observer->before_aggregate) observer->before_aggregate(server);
                aggregate_epfl(uniform, server.clients, false);
                if (observer && observer->after_aggregate) observer->after_aggregate(server);
            }
            break;
        }
        case Strategy::fedavg:
        case Strategy::fedprox: {
            if (!server.global_model) {
                throw ConfigError("run_round: strategy needs a global model");
            }
            LoraMlp reference;
            LocalTrainHooks hooks;
            if (strategy.name == Strategy::fedprox) {
                reference = *server.global_model;
                hooks.prox_reference = &reference;
                hooks.prox_mu = strategy.mu;
            }
            plain_local_phase(hooks);
            if (observer && observer->before_aggregate) observer->before_aggregate(server);
            server.global_model = aggregate_fedavg(model_pointers(server.clients),
                                                   train_size_weights(server.clients));
            for (auto& client : server.clients) client.model = *server.global_model;
            if (observer && observer->after_aggregate) observer->after_aggregate(server);
            break;
        }
        case Strategy::scaffold:
            losses = scaffold_phase(server, data, params, seed, round, observer);
            break;
        case Strategy::apfl:
            losses = apfl_phase(server, data, params, seed, round, observer);
            break;
    }

    RoundMetrics metrics;
    metrics.round = round;
    metrics.per_client.resize(n);
    for_each_index(n, params.threads, [&](std::size_t i) {
        const ClientState& client = server.clients[i];
        double accuracy;
        if (strategy.name == Strategy::apfl) {
            const LoraMlp mixed =
                apfl_eval_model(client, *server.global_model, strategy.apfl_alpha);
            accuracy = evaluate_accuracy(mixed, data, client.splits.val);
        } else {
            accuracy = evaluate_accuracy(client.model, data, client.splits.val);
        }
        metrics.per_client[i] = ClientRoundMetrics{accuracy, losses[i]};
    });
    double sum = 0.0;
    for (const auto& pc : metrics.per_client) sum += pc.val_accuracy;
    metrics.mean_accuracy = sum / static_cast<double>(n);
    server.round = round;
    return metrics;
}

ExperimentSetup setup_experiment(const ExperimentConfig& config) {
    ExperimentSetup setup;

    if (config.dataset.source == DatasetConfig::Source::synthetic) {
        setup.data = generate_synthetic(config.dataset.synthetic,
                                        RngStream(config.seed, "synthetic"));
    } else {
        setup.data = load_csv(config.dataset.csv_path);
    }
    if (config.dataset.subsample_fraction < 1.0) {
        setup.data = subsample(setup.data, config.dataset.subsample_fraction,
                               RngStream(config.seed, "subsample"));
    }

    if (config.partition.kind == PartitionKind::synthetic_dirichlet) {
        setup.partition = dirichlet_partition(setup.data.labels, config.partition.clients,
                                              config.partition.alpha,
                                              RngStream(config.seed, "dirichlet"),
                                              config.partition.min_per_client);
    } else {
        setup.partition = natural_partition(setup.data, config.partition.clients);
    }

    setup.arch = ModelArch{setup.data.features.cols, config.model.widths,
                           setup.data.classes};
    LoraMlp base_model = init_model(setup.arch, config.model.rank,
                                    RngStream(config.seed, "model-init"));
    for (std::size_t l = 0; l < base_model.layers.size(); ++l) {
        base_model.layers[l].psi = config.model.psi[l] == 1;
    }

    ServerState& server = setup.server;
    server.total_rounds = config.training.rounds;
    server.clients.resize(config.partition.clients);
    std::vector<std::size_t> pooled_train;
    for (std::size_t i = 0; i < config.partition.clients; ++i) {
        ClientState& client = server.clients[i];
        client.id = i;
        client.splits = split_4_3_3(setup.partition.client_indices[i],
                                    RngStream(config.seed, "split", i));
        pooled_train.insert(pooled_train.end(), client.splits.train.begin(),
                            client.splits.train.end());
    }

    const PretrainedBase base = pretrain_base(
        setup.arch, setup.data, pooled_train, config.model.pretrain_epochs,
        config.training.learning_rate, config.training.batch_size,
        RngStream(config.seed, "pretrain"));
    install_base(base_model, base);

    for (auto& client : server.clients) client.model = base_model;

    switch (config.strategy.name) {
        case Strategy::fedavg:
        case Strategy::fedprox:
            server.global_model = base_model;
            break;
        case Strategy::scaffold:
            server.global_model = base_model;
            server.scaffold_c = Gradients::zeros_like(base_model);
            for (auto& client : server.clients) {
                client.scaffold_c_i = Gradients::zeros_like(base_model);
            }
            break;
        case Strategy::apfl:
            server.global_model = base_model;
            for (auto& client : server.clients) client.apfl_local = base_model;
            break;
        default:
            break;
    }
    return setup;
}

Report run_experiment(const ExperimentConfig& config, const RoundObserver* observer) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentSetup setup = setup_experiment(config);
    ServerState& server = setup.server;

    const TrainingParams params{config.training.learning_rate,
                                config.training.local_epochs,
                                config.training.batch_size, config.training.threads};

    Report report;
    report.config_echo = config_to_json(config).dump();
    report.strategy = strategy_name(config.strategy.name);
    report.seed = config.seed;
    report.clients = server.clients.size();
    report.trace.reserve(config.training.rounds);
    for (std::size_t t = 0; t < config.training.rounds; ++t) {
        report.trace.push_back(
            run_round(server, setup.data, config.strategy, params, config.seed, observer));
    }

    report.final_test_accuracy.resize(server.clients.size());
    for_each_index(server.clients.size(), params.threads, [&](std::size_t i) {
        const ClientState& client = server.clients[i];
        if (config.strategy.name == Strategy::apfl) {
            const LoraMlp mixed = apfl_eval_model(client, *server.global_model,
                                                  config.strategy.apfl_alpha);
            report.final_test_accuracy[i] =
                evaluate_accuracy(mixed, setup.data, client.splits.test);
        } else {
            report.final_test_accuracy[i] =
                evaluate_accuracy(client.model, setup.data, client.splits.test);
        }
    });
    double sum = 0.0;
    for (double acc : report.final_test_accuracy) sum += acc;
    report.mean_final_accuracy = sum / static_cast<double>(report.final_test_accuracy.size());

    report.params = param_counts(server.clients.front().model, config.strategy,
                                 server.clients.size());
    if (config.strategy.name == Strategy::epfl && server.last_weights) {
        report.final_weights = server.last_weights;
    }
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace fedlora
