#include "fedlora/lora.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "fedlora/errors.hpp"
#include "fedlora/kernels.hpp"
#include "fedlora/loss.hpp"

namespace fedlora {

namespace {

void check_layer_shapes(const LoraLinear& layer) {
    const std::size_t d = layer.w0.rows;
    const std::size_t k = layer.w0.cols;
    const std::size_t r = layer.a.rows;
    if (layer.bias.size() != d || layer.a.cols != k || layer.b.rows != d ||
        layer.b.cols != r) {
        throw ShapeError("LoraLinear: inconsistent tensor shapes");
    }
    if (r > std::min(d, k)) {
        throw ShapeError("LoraLinear: rank exceeds min(d, k)");
    }
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev,
                       RngStream& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.normal(0.0, stddev);
    return m;
}

}  // namespace

Gradients Gradients::zeros_like(const LoraMlp& model) {
    Gradients g;
    g.layers.reserve(model.layers.size());
    for (const auto& layer : model.layers) {
        g.layers.push_back({Matrix(layer.a.rows, layer.a.cols),
                            Matrix(layer.b.rows, layer.b.cols)});
    }
    g.head_w = Matrix(model.head.w.rows, model.head.w.cols);
    g.head_bias.assign(model.head.bias.size(), 0.0);
    return g;
}

void Gradients::set_zero() {
    for (auto& lg : layers) {
        std::fill(lg.da.data.begin(), lg.da.data.end(), 0.0);
        std::fill(lg.db.data.begin(), lg.db.data.end(), 0.0);
    }
    std::fill(head_w.data.begin(), head_w.data.end(), 0.0);
    std::fill(head_bias.begin(), head_bias.end(), 0.0);
}

void Gradients::add_scaled(const Gradients& other, double factor) {
    if (other.layers.size() != layers.size()) {
        throw ShapeError("Gradients::add_scaled: layer count mismatch");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        kernels::axpy(factor, other.layers[l].da.data.data(),
                      layers[l].da.data.data(), layers[l].da.size());
        kernels::axpy(factor, other.layers[l].db.data.data(),
                      layers[l].db.data.data(), layers[l].db.size());
    }
    kernels::axpy(factor, other.head_w.data.data(), head_w.data.data(),
                  head_w.size());
    kernels::axpy(factor, other.head_bias.data(), head_bias.data(),
                  head_bias.size());
}

std::vector<double> lora_forward(const LoraLinear& layer, const std::vector<double>& x) {
    check_layer_shapes(layer);
    if (x.size() != layer.in_dim()) {
        throw ShapeError("lora_forward: input length " + std::to_string(x.size()) +
                         " does not match in_dim " + std::to_string(layer.in_dim()));
    }
    std::vector<double> h;
    matvec(layer.w0, x, h);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += layer.bias[i];

    std::vector<double> u;
    matvec(layer.a, x, u);  // r
    for (std::size_t i = 0; i < layer.b.rows; ++i) {
        h[i] += kernels::dot(layer.b.row_ptr(i), u.data(), layer.b.cols);
    }
    return h;
}

std::vector<double> model_forward(const LoraMlp& model, const std::vector<double>& x) {
    if (model.layers.empty()) throw ShapeError("model_forward: model has no layers");
    std::vector<double> act = x;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        act = lora_forward(model.layers[l], act);
        if (l + 1 < model.layers.size()) {
            for (double& v : act) v = std::max(0.0, v);
        }
    }
    std::vector<double> logits;
    matvec(model.head.w, act, logits);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += model.head.bias[i];
    return logits;
}

BackwardResult backward(const LoraMlp& model, const Matrix& features,
                        const std::vector<std::size_t>& labels,
                        const ProxTerm* prox) {
    const std::size_t n = features.rows;
    if (n == 0) throw DataError("backward: empty batch");
    if (labels.size() != n) throw ShapeError("backward: features/labels size mismatch");
    if (features.cols != model.input_dim()) {
        throw ShapeError("backward: feature width does not match model input");
    }

    const std::size_t num_layers = model.layers.size();
    BackwardResult out;
    out.grads = Gradients::zeros_like(model);
    const double inv_n = 1.0 / static_cast<double>(n);

    // per-sample caches
    std::vector<std::vector<double>> inputs(num_layers);   // x fed to each layer
    std::vector<std::vector<double>> pre(num_layers);      // layer output before ReLU
    std::vector<std::vector<double>> low_rank(num_layers);  // u = a x

    for (std::size_t s = 0; s < n; ++s) {
        std::vector<double> act(features.row_ptr(s), features.row_ptr(s) + features.cols);

        for (std::size_t l = 0; l < num_layers; ++l) {
            const LoraLinear& layer = model.layers[l];
            inputs[l] = act;
            std::vector<double> h;
            matvec(layer.w0, act, h);
            for (std::size_t i = 0; i < h.size(); ++i) h[i] += layer.bias[i];
            matvec(layer.a, act, low_rank[l]);
            for (std::size_t i = 0; i < layer.b.rows; ++i) {
                h[i] += kernels::dot(layer.b.row_ptr(i), low_rank[l].data(), layer.b.cols);
            }
            pre[l] = h;
            if (l + 1 < num_layers) {
                for (double& v : h) v = std::max(0.0, v);
            }
            act = std::move(h);
        }

        std::vector<double> logits;
        matvec(model.head.w, act, logits);
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += model.head.bias[i];

        LossGrad lg = softmax_cross_entropy(logits, labels[s]);
        out.mean_loss += lg.loss * inv_n;
        for (double& g : lg.grad) g *= inv_n;

        add_outer(out.grads.head_w, lg.grad, act);
        for (std::size_t i = 0; i < lg.grad.size(); ++i) {
            out.grads.head_bias[i] += lg.grad[i];
        }

        std::vector<double> delta(act.size(), 0.0);
        matvec_transposed_add(model.head.w, lg.grad, delta);

        for (std::size_t li = num_layers; li-- > 0;) {
            const LoraLinear& layer = model.layers[li];
            if (li + 1 < num_layers) {
                for (std::size_t i = 0; i < delta.size(); ++i) {
                    if (pre[li][i] <= 0.0) delta[i] = 0.0;
                }
            }
            // db += delta u^T ; t = b^T delta ; da += t x^T
            add_outer(out.grads.layers[li].db, delta, low_rank[li]);
            std::vector<double> t(layer.rank(), 0.0);
            matvec_transposed_add(layer.b, delta, t);
            add_outer(out.grads.layers[li].da, t, inputs[li]);

            if (li > 0) {
                std::vector<double> prev(layer.in_dim(), 0.0);
                matvec_transposed_add(layer.w0, delta, prev);
                matvec_transposed_add(layer.a, t, prev);
                delta = std::move(prev);
            }
        }
    }

    if (prox != nullptr && prox->mu != 0.0) {
        const LoraMlp& ref = *prox->reference;
        if (ref.layers.size() != num_layers) {
            throw ShapeError("backward: proximal reference has different layer count");
        }
        const double mu = prox->mu;
        for (std::size_t l = 0; l < num_layers; ++l) {
            auto& g = out.grads.layers[l];
            const auto& cur = model.layers[l];
            const auto& refl = ref.layers[l];
            for (std::size_t i = 0; i < g.da.size(); ++i) {
                g.da.data[i] += mu * (cur.a.data[i] - refl.a.data[i]);
            }
            for (std::size_t i = 0; i < g.db.size(); ++i) {
                g.db.data[i] += mu * (cur.b.data[i] - refl.b.data[i]);
            }
        }
        for (std::size_t i = 0; i < out.grads.head_w.size(); ++i) {
            out.grads.head_w.data[i] += mu * (model.head.w.data[i] - ref.head.w.data[i]);
        }
        for (std::size_t i = 0; i < out.grads.head_bias.size(); ++i) {
            out.grads.head_bias[i] += mu * (model.head.bias[i] - ref.head.bias[i]);
        }
    }

    return out;
}

void sgd_step(LoraMlp& model, const Gradients& grads, double lr,
              const Gradients* c, const Gradients* c_i) {
    if (lr <= 0.0) throw ConfigError("sgd_step: learning rate must be positive");
    if (grads.layers.size() != model.layers.size()) {
        throw ShapeError("sgd_step: gradient/model layer count mismatch");
    }

    auto apply = [lr](std::vector<double>& param, const std::vector<double>& g,
                      const std::vector<double>* cv, const std::vector<double>* cvi) {
        if (param.size() != g.size()) throw ShapeError("sgd_step: tensor shape mismatch");
        if (cv == nullptr && cvi == nullptr) {
            kernels::axpy(-lr, g.data(), param.data(), param.size());
            return;
        }
        // correction first: equal variates cancel exactly, so the step is
        // bit-identical to the uncorrected one
        for (std::size_t i = 0; i < param.size(); ++i) {
            double correction = 0.0;
            if (cv != nullptr && cvi != nullptr) {
                correction = (*cv)[i] - (*cvi)[i];
            } else if (cv != nullptr) {
                correction = (*cv)[i];
            } else {
                correction = -(*cvi)[i];
            }
            param[i] -= lr * (g[i] + correction);
        }
    };

    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        apply(model.layers[l].a.data, grads.layers[l].da.data,
              c != nullptr ? &c->layers[l].da.data : nullptr,
              c_i != nullptr ? &c_i->layers[l].da.data : nullptr);
        apply(model.layers[l].b.data, grads.layers[l].db.data,
              c != nullptr ? &c->layers[l].db.data : nullptr,
              c_i != nullptr ? &c_i->layers[l].db.data : nullptr);
    }
    apply(model.head.w.data, grads.head_w.data,
          c != nullptr ? &c->head_w.data : nullptr,
          c_i != nullptr ? &c_i->head_w.data : nullptr);
    apply(model.head.bias, grads.head_bias,
          c != nullptr ? &c->head_bias : nullptr,
          c_i != nullptr ? &c_i->head_bias : nullptr);
}

LoraMlp init_model(const ModelArch& arch, std::size_t rank, RngStream rng) {
    if (arch.input_dim == 0 || arch.classes < 2 || arch.hidden.empty()) {
        throw ConfigError("init_model: need input_dim >= 1, classes >= 2, and at "
                          "least one hidden layer");
    }
    if (rank == 0) throw ConfigError("init_model: rank must be >= 1");

    LoraMlp model;
    std::size_t in = arch.input_dim;
    for (std::size_t width : arch.hidden) {
        if (rank > std::min(width, in)) {
            throw ConfigError("init_model: rank " + std::to_string(rank) +
                              " exceeds min(d, k) = " +
                              std::to_string(std::min(width, in)));
        }
        LoraLinear layer;
        layer.w0 = gaussian_matrix(width, in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
        layer.bias.assign(width, 0.0);
        layer.a = gaussian_matrix(rank, in, 0.02, rng);
        layer.b = Matrix(width, rank);
        layer.psi = true;
        model.layers.push_back(std::move(layer));
        in = width;
    }
    model.head.w = gaussian_matrix(arch.classes, in, 0.02, rng);
    model.head.bias.assign(arch.classes, 0.0);
    return model;
}

Gradients model_delta(const LoraMlp& a, const LoraMlp& b) {
    if (a.layers.size() != b.layers.size()) {
        throw ShapeError("model_delta: layer count mismatch");
    }
    Gradients d = Gradients::zeros_like(a);
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        for (std::size_t i = 0; i < d.layers[l].da.size(); ++i) {
            d.layers[l].da.data[i] = a.layers[l].a.data[i] - b.layers[l].a.data[i];
        }
        for (std::size_t i = 0; i < d.layers[l].db.size(); ++i) {
            d.layers[l].db.data[i] = a.layers[l].b.data[i] - b.layers[l].b.data[i];
        }
    }
    for (std::size_t i = 0; i < d.head_w.size(); ++i) {
        d.head_w.data[i] = a.head.w.data[i] - b.head.w.data[i];
    }
    for (std::size_t i = 0; i < d.head_bias.size(); ++i) {
        d.head_bias[i] = a.head.bias[i] - b.head.bias[i];
    }
    return d;
}

std::size_t trainable_elements(const LoraMlp& model) {
    return adapter_a_elements(model) + adapter_b_elements(model) + head_elements(model);
}

std::size_t adapter_a_elements(const LoraMlp& model) {
    std::size_t n = 0;
    for (const auto& layer : model.layers) n += layer.a.size();
    return n;
}

std::size_t adapter_b_elements(const LoraMlp& model) {
    std::size_t n = 0;
    for (const auto& layer : model.layers) n += layer.b.size();
    return n;
}

std::size_t head_elements(const LoraMlp& model) {
    return model.head.w.size() + model.head.bias.size();
}

std::size_t frozen_elements(const LoraMlp& model) {
    std::size_t n = 0;
    for (const auto& layer : model.layers) n += layer.w0.size() + layer.bias.size();
    return n;
}

namespace {

using nlohmann::ordered_json;

ordered_json matrix_to_json(const Matrix& m) {
    return ordered_json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_from_json(const ordered_json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    const auto& data = j.at("data");
    if (data.size() != m.size()) {
        throw DataError("checkpoint: tensor data length does not match shape header");
    }
    m.data = data.get<std::vector<double>>();
    return m;
}

}  // namespace

void save_model_json(const LoraMlp& model, const std::filesystem::path& path) {
    ordered_json j;
    j["schema_version"] = 1;
    j["layers"] = ordered_json::array();
    for (const auto& layer : model.layers) {
        j["layers"].push_back(ordered_json{{"w0", matrix_to_json(layer.w0)},
                                           {"bias", layer.bias},
                                           {"a", matrix_to_json(layer.a)},
                                           {"b", matrix_to_json(layer.b)},
                                           {"psi", layer.psi ? 1 : 0}});
    }
    j["head"] = ordered_json{{"w", matrix_to_json(model.head.w)},
                             {"bias", model.head.bias}};
    std::ofstream out(path);
    if (!out) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

LoraMlp load_model_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("checkpoint: cannot open " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: invalid JSON in " + path.string() + ": " + e.what());
    }
    if (j.value("schema_version", 0) != 1) {
        throw DataError("checkpoint: unsupported schema_version in " + path.string());
    }
    LoraMlp model;
    for (const auto& jl : j.at("layers")) {
        LoraLinear layer;
        layer.w0 = matrix_from_json(jl.at("w0"));
        layer.bias = jl.at("bias").get<std::vector<double>>();
        layer.a = matrix_from_json(jl.at("a"));
        layer.b = matrix_from_json(jl.at("b"));
        layer.psi = jl.at("psi").get<int>() != 0;
        check_layer_shapes(layer);
        model.layers.push_back(std::move(layer));
    }
    model.head.w = matrix_from_json(j.at("head").at("w"));
    model.head.bias = j.at("head").at("bias").get<std::vector<double>>();
    return model;
}

}  // namespace fedlora
