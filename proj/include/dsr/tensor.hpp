#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dsr/rng.hpp"

namespace dsr {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Node in a reverse-mode graph. data/grad are f32; reduction internals
/// accumulate in f64 (or run through sgemm for the matmul-shaped kernels).
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // sized lazily on first accumulation
    bool requires_grad = false;

    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backprop;  // accumulates into parents' grads

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    int dim(int i) const { return shape[i]; }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
    void zero_grad() { if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f); }
};

/// While a guard is alive, newly built ops do not record the autodiff graph.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;

private:
    bool prev_;
};
bool grad_enabled();

TensorPtr make_tensor(std::vector<int> shape, bool requires_grad = false);
TensorPtr make_tensor(std::vector<int> shape, std::vector<float> data,
                      bool requires_grad = false);

/// Truncated normal (|x| <= 2 sigma), std = 1/sqrt(fan_in).
void init_trunc_normal(Tensor& t, int fan_in, Rng& rng);

/// Reverse-mode sweep from a scalar loss; throws UsageError on non-scalar.
void backward(const TensorPtr& loss);

struct Conv3dSpec {
    int stride_t = 1, stride_h = 1, stride_w = 1;
    int pad_t = 0, pad_h = 0, pad_w = 0;
};

/// Zero-padded cross-correlation. x [Cin,T,H,W], w [Cout,Cin,kT,kH,kW], b [Cout].
TensorPtr conv3d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b,
                 const Conv3dSpec& spec);

/// Per-group standardization over (channels-in-group x positions), then
/// per-channel affine. x [C,...], gamma/beta [C].
TensorPtr group_norm(const TensorPtr& x, int n_groups, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps = 1e-5);

/// Scaled dot-product attention per head. q [h,tq,d], k/v [h,tk,d] -> [h,tq,d].
TensorPtr attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v);

TensorPtr silu(const TensorPtr& x);

/// x [n,in] times w [out,in]^T plus b [out] -> [n,out].
TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

/// Nearest-neighbor x2 along H and W. x [C,T,H,W] -> [C,T,2H,2W].
TensorPtr upsample2x_hw(const TensorPtr& x);

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& x, double s);

/// Concatenate along axis 0 (channels).
TensorPtr concat_ch(const TensorPtr& a, const TensorPtr& b);

/// x [C,T,H,W] plus per-channel bias [C] broadcast over positions.
TensorPtr add_channel_bias(const TensorPtr& x, const TensorPtr& bias);

/// Reshape view (same data, new extents with equal numel).
TensorPtr reshape(const TensorPtr& x, std::vector<int> shape);

/// Average-pool H,W down to (oh, ow) bins (adaptive, floor-split bins).
TensorPtr avg_pool_hw(const TensorPtr& x, int oh, int ow);

/// Mean over axis `axis` of a 2-axis tensor. Used for token pooling.
TensorPtr mean_axis0_3d(const TensorPtr& x);  // [A,B,C] -> [B,C]

/// Mean over the time axis. x [C,T,H,W] -> [C,1,H,W].
TensorPtr mean_time(const TensorPtr& x);

/// [C,N] -> [heads,N,C/heads] and back; layout shuffles for attention.
TensorPtr split_heads(const TensorPtr& x, int heads);
TensorPtr merge_heads(const TensorPtr& x);  // [heads,N,d] -> [heads*d,N]

TensorPtr sum(const TensorPtr& x);  // -> scalar [1]

/// mean((a-b)^2) -> scalar [1].
TensorPtr mse(const TensorPtr& a, const TensorPtr& b);

/// Sinusoidal embedding of timestep k; dim must be even.
std::vector<float> timestep_embedding(int k, int dim);

/// Row-major sgemm wrapper: C = alpha*op(A)op(B) + beta*C.
void gemm_f32(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
              const float* a, int lda, const float* b, int ldb, float beta,
              float* c, int ldc);

}  // namespace dsr
