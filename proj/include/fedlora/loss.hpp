#pragma once

#include <cstddef>
#include <vector>

namespace fedlora {

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;  // softmax(logits) - onehot(label)
};

// Cross-entropy of softmax(logits) against an integer label, with the
// max-shift stabilization. Requires at least 2 classes and a label in range.
LossGrad softmax_cross_entropy(const std::vector<double>& logits, std::size_t label);

}  // namespace fedlora
