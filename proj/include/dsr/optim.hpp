#pragma once

#include <vector>

#include "dsr/tensor.hpp"

namespace dsr {

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Decoupled-weight-decay Adam with bias correction.
class AdamW {
public:
    AdamW(std::vector<TensorPtr> params, AdamWConfig cfg = {});

    /// Applies one update from the parameters' current grads, then clears them.
    /// Throws UsageError if any parameter has no grad populated.
    void step();

    int64_t step_count() const { return step_; }
    void set_step_count(int64_t s) { step_ = s; }
    const AdamWConfig& config() const { return cfg_; }

private:
    std::vector<TensorPtr> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    int64_t step_ = 0;
};

}  // namespace dsr
