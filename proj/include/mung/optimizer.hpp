#pragma once

#include <vector>

#include "mung/tensor.hpp"

namespace mung {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Decoupled-weight-decay Adam over an explicit parameter list. The frozen
// backbone is excluded simply by never handing its tensors to the optimizer.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg);

    // Applies one update from the accumulated grads. Params without grads are
    // skipped. Returns the pre-clip global gradient norm. A non-finite grad
    // raises NumericError.
    double step(double clip_norm = 0.0, double lr_scale = 1.0);
    void zero_grad();

    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

}  // namespace mung
