#include "fedlora/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedlora/errors.hpp"

namespace fedlora {

LossGrad softmax_cross_entropy(const std::vector<double>& logits, std::size_t label) {
    if (logits.size() < 2) {
        throw ShapeError("softmax_cross_entropy: need at least 2 classes");
    }
    if (label >= logits.size()) {
        throw DataError("softmax_cross_entropy: label " + std::to_string(label) +
                        " out of range for " + std::to_string(logits.size()) +
                        " classes");
    }

    const double shift = *std::max_element(logits.begin(), logits.end());
    LossGrad out;
    out.grad.resize(logits.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out.grad[i] = std::exp(logits[i] - shift);
        denom += out.grad[i];
    }
    for (double& g : out.grad) g /= denom;
    out.loss = -(logits[label] - shift - std::log(denom));
    out.grad[label] -= 1.0;
    return out;
}

}  // namespace fedlora
