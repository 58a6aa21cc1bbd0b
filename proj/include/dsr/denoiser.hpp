#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dsr/checkpoint.hpp"
#include "dsr/tensor.hpp"

namespace dsr {

struct DenoiserConfig {
    // concat of the 7 predicted channels and the 20 conditioning channels
    int in_channels = 27;
    int out_channels = 7;
    std::vector<int> block_channels = {64, 128, 256, 512};
    int n_stages = 4;
    int layers_per_block = 2;
    int norm_groups = 8;
    int attn_heads = 8;
    int cond_channels = 20;

    static DenoiserConfig desk();  // block channels (8,16,32,64)

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
};

/// Conditioned 3D U-Net noise predictor. Spatial extents halve per stage,
/// the time axis is never downsampled; cross-attention at the bottleneck
/// attends to an 8x8 token grid pooled from the conditioning stack.
class Denoiser {
public:
    Denoiser(const DenoiserConfig& cfg, uint64_t seed);

    /// z [out_channels,T,H,W], cond [cond_channels,T,H,W] -> [out_channels,T,H,W].
    /// Pass train=true to build the autodiff graph.
    TensorPtr forward(const TensorPtr& z, int k, const TensorPtr& cond,
                      bool train = false) const;

    const DenoiserConfig& config() const { return cfg_; }
    const NamedParams& parameters() const { return params_; }
    std::vector<TensorPtr> parameter_tensors() const;
    TensorPtr param(const std::string& name) const;
    int64_t param_count() const;

    void save(const std::string& path) const { save_checkpoint(path, params_); }
    void load(const std::string& path) { load_checkpoint_into(path, params_); }

    /// Deep copy (fresh parameter tensors with identical values).
    Denoiser clone() const;

    /// In-place EMA update of this model's parameters toward `src`:
    /// theta <- decay*theta + (1-decay)*src.
    void ema_update_from(const Denoiser& src, double decay);

private:
    Denoiser() = default;
    TensorPtr add_param(const std::string& name, std::vector<int> shape, int fan_in,
                        Rng& rng, float fill = NAN);
    TensorPtr res_block(const std::string& name, const TensorPtr& x, int c_in,
                        int c_out, const TensorPtr& emb) const;

    DenoiserConfig cfg_;
    int emb_dim_ = 0;
    NamedParams params_;
    std::unordered_map<std::string, TensorPtr> by_name_;
};

}  // namespace dsr
