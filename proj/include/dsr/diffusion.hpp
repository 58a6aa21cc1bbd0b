#pragma once

#include <functional>
#include <vector>

#include "dsr/denoiser.hpp"
#include "dsr/optim.hpp"
#include "dsr/rng.hpp"

namespace dsr {

/// Scaled-linear beta schedule: beta_k = (sqrt(b0) + (k/(K-1))(sqrt(b1)-sqrt(b0)))^2.
struct NoiseSchedule {
    int K = 1000;
    double beta_start = 8.5e-4, beta_end = 1.2e-2;
    std::vector<double> beta;       // [K]
    std::vector<double> alpha_bar;  // [K], running product of (1-beta)
};

NoiseSchedule build_schedule(int K = 1000, double beta_start = 8.5e-4,
                             double beta_end = 1.2e-2);

/// z_k = sqrt(ab_k) x + sqrt(1-ab_k) eps.
void add_noise(std::span<const float> x, int k, std::span<const float> eps,
               const NoiseSchedule& s, std::span<float> out);

/// One epsilon-prediction training step: sample k ~ U{0..K-1} and eps,
/// minimize MSE(F(z_k,k,cond), eps). Throws DivergenceError on non-finite loss.
float train_step(Denoiser& d, const TensorPtr& x, const TensorPtr& cond,
                 const NoiseSchedule& s, AdamW& opt, Rng& rng);

/// Validation-style loss for a fixed (k, eps) draw; no parameter update.
float eval_loss(const Denoiser& d, const TensorPtr& x, const TensorPtr& cond,
                const NoiseSchedule& s, int k, std::span<const float> eps);

// Consistency parameterization: f(z,k,c) = c_skip(k) z + c_out(k) x0(z,k,c),
// with c_skip(0)=1, c_out(0)=0 so f(z_0,0)=z_0.
double consistency_c_skip(int k, int K);
double consistency_c_out(int k, int K);

/// x0 estimate from an epsilon prediction: (z - sqrt(1-ab_k) eps_hat)/sqrt(ab_k).
std::vector<float> predict_x0(const Denoiser& d, std::span<const float> z, int k,
                              const TensorPtr& cond, const NoiseSchedule& s);

/// Consistency function value f(z,k,c).
std::vector<float> consistency_predict(const Denoiser& d, std::span<const float> z,
                                       int k, const TensorPtr& cond,
                                       const NoiseSchedule& s);

/// Deterministic DDIM step k_from -> k_to using `teacher` as the noise model.
std::vector<float> ddim_step(const Denoiser& teacher, std::span<const float> z,
                             int k_from, int k_to, const TensorPtr& cond,
                             const NoiseSchedule& s);

struct DistillConfig {
    int iters = 200;
    int skip = 20;            // teacher step gap; must be < K
    double ema_decay = 0.95;  // target network EMA
    uint64_t seed = 0;
    AdamWConfig opt{};
};

/// Draws one normalized (x, cond) pair per call.
using BatchFn = std::function<std::pair<TensorPtr, TensorPtr>(Rng&)>;

/// Consistency distillation; student must share the teacher's config and is
/// typically initialized from it. Returns the per-iteration loss curve.
std::vector<float> distill_consistency(const Denoiser& teacher, Denoiser& student,
                                       const NoiseSchedule& s,
                                       const DistillConfig& cfg,
                                       const BatchFn& batch);

enum class Predictor {
    EpsilonX0,   // x_hat = x0 estimate (epsilon-trained model)
    Consistency  // x_hat = f(z,k,c) (distilled model)
};

struct SamplerConfig {
    int n_steps = 25;  // one of 4, 8, 25, 50
    uint64_t seed = 0;
    Predictor predictor = Predictor::Consistency;
};

/// Uniform skipping grid from K-1 toward 0; n_steps values.
std::vector<int> sampling_grid(int n_steps, int K);

/// Few-step sampler: z ~ N(0,I); per grid step predict x_hat, clamp to [0,1],
/// re-noise to the next grid timestep (none after the last). Returns x_hat.
std::vector<float> sample(const Denoiser& d, const TensorPtr& cond,
                          const SamplerConfig& cfg, const NoiseSchedule& s);

}  // namespace dsr
