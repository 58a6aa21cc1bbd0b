#include "dsr/optim.hpp"

#include <cmath>

#include "dsr/errors.hpp"

namespace dsr {

AdamW::AdamW(std::vector<TensorPtr> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->data.size(), 0.0f);
        v_.emplace_back(p->data.size(), 0.0f);
    }
}

void AdamW::step() {
    for (const auto& p : params_)
        if (p->grad.size() != p->data.size())
            throw UsageError("AdamW::step with unpopulated gradients");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = *params_[pi];
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double g = p.grad[i];
            double th = p.data[i];
            th -= cfg_.lr * cfg_.weight_decay * th;  // decoupled decay
            double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            th -= cfg_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
            p.data[i] = static_cast<float>(th);
        }
        p.zero_grad();
    }
}

}  // namespace dsr
