#include "dsr/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "dsr/errors.hpp"

namespace dsr {

NoiseSchedule build_schedule(int K, double beta_start, double beta_end) {
    if (K < 2) throw ParamError("schedule needs K >= 2");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw ParamError("schedule requires 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.K = K;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.resize(K);
    s.alpha_bar.resize(K);
    const double r0 = std::sqrt(beta_start), r1 = std::sqrt(beta_end);
    double prod = 1.0;
    for (int k = 0; k < K; ++k) {
        double r = r0 + (static_cast<double>(k) / (K - 1)) * (r1 - r0);
        s.beta[k] = r * r;
        prod *= 1.0 - s.beta[k];
        s.alpha_bar[k] = prod;
    }
    return s;
}

void add_noise(std::span<const float> x, int k, std::span<const float> eps,
               const NoiseSchedule& s, std::span<float> out) {
    if (k < 0 || k >= s.K) throw RangeError("timestep outside schedule");
    if (x.size() != eps.size() || x.size() != out.size())
        throw ShapeError("add_noise size mismatch");
    const double sa = std::sqrt(s.alpha_bar[k]);
    const double sb = std::sqrt(1.0 - s.alpha_bar[k]);
    for (size_t i = 0; i < x.size(); ++i)
        out[i] = static_cast<float>(sa * x[i] + sb * eps[i]);
}

float train_step(Denoiser& d, const TensorPtr& x, const TensorPtr& cond,
                 const NoiseSchedule& s, AdamW& opt, Rng& rng) {
    const int k = static_cast<int>(rng.uniform_int(0, s.K - 1));
    auto eps = make_tensor(x->shape);
    rng.fill_normal(eps->data);
    auto z = make_tensor(x->shape);
    add_noise(x->data, k, eps->data, s, z->data);

    auto pred = d.forward(z, k, cond, /*train=*/true);
    auto loss = mse(pred, eps);
    const float lv = loss->data[0];
    if (!std::isfinite(lv))
        throw DivergenceError("non-finite training loss at step " +
                              std::to_string(opt.step_count() + 1) +
                              " (k=" + std::to_string(k) + ")");
    backward(loss);
    opt.step();
    return lv;
}

float eval_loss(const Denoiser& d, const TensorPtr& x, const TensorPtr& cond,
                const NoiseSchedule& s, int k, std::span<const float> eps) {
    auto z = make_tensor(x->shape);
    add_noise(x->data, k, eps, s, z->data);
    auto pred = d.forward(z, k, cond, /*train=*/false);
    double acc = 0.0;
    for (size_t i = 0; i < pred->data.size(); ++i) {
        double dv = static_cast<double>(pred->data[i]) - eps[i];
        acc += dv * dv;
    }
    return static_cast<float>(acc / static_cast<double>(pred->data.size()));
}

namespace {
constexpr double kSigmaData = 0.5;
}

double consistency_c_skip(int k, int K) {
    double ks = static_cast<double>(k) / K;
    return kSigmaData * kSigmaData / (ks * ks + kSigmaData * kSigmaData);
}

double consistency_c_out(int k, int K) {
    double ks = static_cast<double>(k) / K;
    return kSigmaData * ks / std::sqrt(ks * ks + kSigmaData * kSigmaData);
}

std::vector<float> predict_x0(const Denoiser& d, std::span<const float> z, int k,
                              const TensorPtr& cond, const NoiseSchedule& s) {
    if (k < 0 || k >= s.K) throw RangeError("timestep outside schedule");
    auto zt = make_tensor({d.config().out_channels, cond->shape[1], cond->shape[2],
                           cond->shape[3]},
                          std::vector<float>(z.begin(), z.end()));
    auto eps_hat = d.forward(zt, k, cond, /*train=*/false);
    const double sa = std::sqrt(s.alpha_bar[k]);
    const double sb = std::sqrt(1.0 - s.alpha_bar[k]);
    std::vector<float> x0(z.size());
    for (size_t i = 0; i < z.size(); ++i)
        x0[i] = static_cast<float>((z[i] - sb * eps_hat->data[i]) / sa);
    return x0;
}

std::vector<float> consistency_predict(const Denoiser& d, std::span<const float> z,
                                       int k, const TensorPtr& cond,
                                       const NoiseSchedule& s) {
    const double cs = consistency_c_skip(k, s.K);
    const double co = consistency_c_out(k, s.K);
    if (k == 0 || co == 0.0)  // boundary: f(z_0, 0) = z_0
        return std::vector<float>(z.begin(), z.end());
    std::vector<float> x0 = predict_x0(d, z, k, cond, s);
    std::vector<float> f(z.size());
    for (size_t i = 0; i < z.size(); ++i)
        f[i] = static_cast<float>(cs * z[i] + co * x0[i]);
    return f;
}

std::vector<float> ddim_step(const Denoiser& teacher, std::span<const float> z,
                             int k_from, int k_to, const TensorPtr& cond,
                             const NoiseSchedule& s) {
    if (k_to < 0 || k_to >= k_from) throw ParamError("ddim_step requires 0 <= k_to < k_from");
    auto zt = make_tensor({teacher.config().out_channels, cond->shape[1],
                           cond->shape[2], cond->shape[3]},
                          std::vector<float>(z.begin(), z.end()));
    auto eps_hat = teacher.forward(zt, k_from, cond, /*train=*/false);
    const double sa_f = std::sqrt(s.alpha_bar[k_from]);
    const double sb_f = std::sqrt(1.0 - s.alpha_bar[k_from]);
    const double sa_t = std::sqrt(s.alpha_bar[k_to]);
    const double sb_t = std::sqrt(1.0 - s.alpha_bar[k_to]);
    std::vector<float> out(z.size());
    for (size_t i = 0; i < z.size(); ++i) {
        double e = eps_hat->data[i];
        double x0 = (z[i] - sb_f * e) / sa_f;
        out[i] = static_cast<float>(sa_t * x0 + sb_t * e);
    }
    return out;
}

std::vector<float> distill_consistency(const Denoiser& teacher, Denoiser& student,
                                       const NoiseSchedule& s,
                                       const DistillConfig& cfg,
                                       const BatchFn& batch) {
    if (cfg.skip <= 0 || cfg.skip >= s.K)
        throw ParamError("distillation skip must lie in (0, K)");
    Denoiser target = student.clone();  // EMA target network
    AdamW opt(student.parameter_tensors(), cfg.opt);
    Rng rng(cfg.seed);
    std::vector<float> losses;
    losses.reserve(cfg.iters);

    for (int it = 0; it < cfg.iters; ++it) {
        auto [x, cond] = batch(rng);
        const int k = static_cast<int>(rng.uniform_int(cfg.skip, s.K - 1));
        const int kp = k - cfg.skip;

        std::vector<float> eps(x->data.size());
        rng.fill_normal(eps);
        std::vector<float> zk(x->data.size());
        add_noise(x->data, k, eps, s, zk);

        // one deterministic teacher step down the trajectory
        std::vector<float> zprev = ddim_step(teacher, zk, k, kp, cond, s);
        // target value from the EMA network (kp may be 0: boundary identity)
        std::vector<float> tgt = consistency_predict(target, zprev, kp, cond, s);

        // student side, with gradients
        auto zt = make_tensor(x->shape, std::move(zk));
        auto eps_hat = student.forward(zt, k, cond, /*train=*/true);
        const double sa = std::sqrt(s.alpha_bar[k]);
        const double sb = std::sqrt(1.0 - s.alpha_bar[k]);
        const double cs = consistency_c_skip(k, s.K);
        const double co = consistency_c_out(k, s.K);
        // f = cs z + co (z - sb eps_hat)/sa = (cs + co/sa) z - (co sb/sa) eps_hat
        auto f_base = make_tensor(x->shape);
        const double zf = cs + co / sa;
        for (size_t i = 0; i < f_base->data.size(); ++i)
            f_base->data[i] = static_cast<float>(zf * zt->data[i]);
        auto f = add(f_base, scale(eps_hat, -co * sb / sa));
        auto loss = mse(f, make_tensor(x->shape, std::move(tgt)));
        const float lv = loss->data[0];
        if (!std::isfinite(lv)) throw DivergenceError("non-finite distillation loss");
        backward(loss);
        opt.step();
        target.ema_update_from(student, cfg.ema_decay);
        losses.push_back(lv);
    }
    return losses;
}

std::vector<int> sampling_grid(int n_steps, int K) {
    if (n_steps != 4 && n_steps != 8 && n_steps != 25 && n_steps != 50)
        throw ParamError("n_steps must be one of 4, 8, 25, 50");
    std::vector<int> grid(n_steps);
    const int gap = K / n_steps;
    for (int i = 0; i < n_steps; ++i) grid[i] = K - 1 - i * gap;
    return grid;
}

std::vector<float> sample(const Denoiser& d, const TensorPtr& cond,
                          const SamplerConfig& cfg, const NoiseSchedule& s) {
    const std::vector<int> grid = sampling_grid(cfg.n_steps, s.K);
    const size_t n = static_cast<size_t>(d.config().out_channels) * cond->shape[1] *
                     cond->shape[2] * cond->shape[3];
    Rng rng(cfg.seed);
    std::vector<float> z(n);
    for (auto& v : z) v = static_cast<float>(rng.normal());

    std::vector<float> x_hat;
    for (size_t gi = 0; gi < grid.size(); ++gi) {
        const int k = grid[gi];
        x_hat = (cfg.predictor == Predictor::Consistency)
                    ? consistency_predict(d, z, k, cond, s)
                    : predict_x0(d, z, k, cond, s);
        for (auto& v : x_hat) v = std::clamp(v, 0.0f, 1.0f);
        if (gi + 1 < grid.size()) {
            std::vector<float> eps(n);
            rng.fill_normal(eps);
            add_noise(x_hat, grid[gi + 1], eps, s, z);
        }
    }
    return x_hat;
}

}  // namespace dsr
