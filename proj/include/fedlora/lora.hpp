#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "fedlora/matrix.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {

// One adapted linear layer: frozen base weight w0 (d x k) and bias, plus the
// trainable low-rank pair b (d x r) and a (r x k). psi marks whether the
// layer's b participates in distance computation.
struct LoraLinear {
    Matrix w0;                 // d x k, frozen
    std::vector<double> bias;  // d, frozen
    Matrix a;                  // r x k, trainable
    Matrix b;                  // d x r, trainable
    bool psi = true;

    std::size_t in_dim() const { return w0.cols; }
    std::size_t out_dim() const { return w0.rows; }
    std::size_t rank() const { return a.rows; }
};

struct DenseHead {
    Matrix w;                  // classes x hidden
    std::vector<double> bias;  // classes
};

// Adapted multilayer perceptron: LoRA layers with ReLU between them, linear
// head on the last layer's output. The ReLU sits strictly between adjacent
// LoRA layers; the head reads the final layer output directly.
struct LoraMlp {
    std::vector<LoraLinear> layers;
    DenseHead head;

    std::size_t input_dim() const { return layers.front().in_dim(); }
    std::size_t class_count() const { return head.w.rows; }
};

struct LayerGrads {
    Matrix da;  // r x k
    Matrix db;  // d x r
};

// Gradient (or gradient-shaped auxiliary) for every trainable tensor.
struct Gradients {
    std::vector<LayerGrads> layers;
    Matrix head_w;
    std::vector<double> head_bias;

    static Gradients zeros_like(const LoraMlp& model);

    void set_zero();
    // this += factor * other, tensor by tensor
    void add_scaled(const Gradients& other, double factor);
};

struct ModelArch {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;  // output width of each LoRA layer
    std::size_t classes = 0;
};

// h = w0 x + bias + b (a x)
std::vector<double> lora_forward(const LoraLinear& layer, const std::vector<double>& x);

std::vector<double> model_forward(const LoraMlp& model, const std::vector<double>& x);

struct ProxTerm {
    double mu = 0.0;
    const LoraMlp* reference = nullptr;  // pull trainables toward this model
};

struct BackwardResult {
    double mean_loss = 0.0;
    Gradients grads;
};

// Mean cross-entropy gradients over the batch for every a, b, and head
// tensor. w0 and bias receive no gradient. When prox is given,
// mu * (theta - theta_ref) is added to each trainable gradient.
BackwardResult backward(const LoraMlp& model, const Matrix& features,
                        const std::vector<std::size_t>& labels,
                        const ProxTerm* prox = nullptr);

// p <- p - lr * (g + c - c_i) on trainables; c and c_i default to zero.
void sgd_step(LoraMlp& model, const Gradients& grads, double lr,
              const Gradients* c = nullptr, const Gradients* c_i = nullptr);

// Fresh model: w0 ~ Gaussian(0, 1/sqrt(k)) frozen (pretraining replaces it),
// bias zero, a ~ Gaussian(0, 0.02^2), b zero, head ~ Gaussian(0, 0.02^2).
LoraMlp init_model(const ModelArch& arch, std::size_t rank, RngStream rng);

// difference of trainable tensors: a - b
Gradients model_delta(const LoraMlp& a, const LoraMlp& b);

// Exact element counts.
std::size_t trainable_elements(const LoraMlp& model);
std::size_t adapter_a_elements(const LoraMlp& model);
std::size_t adapter_b_elements(const LoraMlp& model);
std::size_t head_elements(const LoraMlp& model);
std::size_t frozen_elements(const LoraMlp& model);

// JSON checkpoint with named tensors and shape headers (schema_version 1).
void save_model_json(const LoraMlp& model, const std::filesystem::path& path);
LoraMlp load_model_json(const std::filesystem::path& path);

}  // namespace fedlora
