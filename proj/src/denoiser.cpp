#include "dsr/denoiser.hpp"

#include <cmath>

#include "dsr/errors.hpp"

namespace dsr {

DenoiserConfig DenoiserConfig::desk() {
    DenoiserConfig c;
    c.block_channels = {8, 16, 32, 64};
    return c;
}

void DenoiserConfig::validate() const {
    if (static_cast<int>(block_channels.size()) != n_stages)
        throw ConfigError("block_channels length must equal n_stages");
    if (n_stages < 2) throw ConfigError("need at least 2 stages");
    if (layers_per_block < 1) throw ConfigError("layers_per_block must be >= 1");
    for (int c : block_channels) {
        if (c <= 0 || c % norm_groups != 0)
            throw ConfigError("every block channel must be divisible by norm_groups");
    }
    if (block_channels.back() % attn_heads != 0)
        throw ConfigError("bottleneck channels must be divisible by attn_heads");
    if (in_channels != out_channels + cond_channels)
        throw ConfigError("in_channels must equal out_channels + cond_channels");
}

TensorPtr Denoiser::add_param(const std::string& name, std::vector<int> shape,
                              int fan_in, Rng& rng, float fill) {
    auto t = make_tensor(std::move(shape), /*requires_grad=*/true);
    if (std::isnan(fill)) {
        init_trunc_normal(*t, fan_in, rng);
    } else {
        std::fill(t->data.begin(), t->data.end(), fill);
    }
    params_.emplace_back(name, t);
    by_name_[name] = t;
    return t;
}

TensorPtr Denoiser::param(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("no such parameter: " + name);
    return it->second;
}

std::vector<TensorPtr> Denoiser::parameter_tensors() const {
    std::vector<TensorPtr> out;
    out.reserve(params_.size());
    for (const auto& [n, t] : params_) out.push_back(t);
    return out;
}

int64_t Denoiser::param_count() const {
    int64_t n = 0;
    for (const auto& [nm, t] : params_) n += t->numel();
    return n;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const auto& bc = cfg_.block_channels;
    emb_dim_ = bc[0] * 4;

    auto conv = [&](const std::string& name, int co, int ci, int kt, int kh, int kw) {
        add_param(name + ".w", {co, ci, kt, kh, kw}, ci * kt * kh * kw, rng);
        add_param(name + ".b", {co}, 0, rng, 0.0f);
    };
    auto lin = [&](const std::string& name, int out_f, int in_f) {
        add_param(name + ".w", {out_f, in_f}, in_f, rng);
        add_param(name + ".b", {out_f}, 0, rng, 0.0f);
    };
    auto gn = [&](const std::string& name, int c) {
        add_param(name + ".g", {c}, 0, rng, 1.0f);
        add_param(name + ".b", {c}, 0, rng, 0.0f);
    };
    auto res = [&](const std::string& name, int ci, int co) {
        gn(name + ".gn1", ci);
        conv(name + ".conv1", co, ci, 3, 3, 3);
        lin(name + ".emb", co, emb_dim_);
        gn(name + ".gn2", co);
        conv(name + ".conv2", co, co, 3, 3, 3);
        if (ci != co) conv(name + ".skip", co, ci, 1, 1, 1);
    };

    lin("time.fc1", emb_dim_, emb_dim_);
    lin("time.fc2", emb_dim_, emb_dim_);
    conv("in", bc[0], cfg_.in_channels, 3, 3, 3);

    for (int s = 0; s < cfg_.n_stages; ++s) {
        for (int l = 0; l < cfg_.layers_per_block; ++l)
            res("enc" + std::to_string(s) + "." + std::to_string(l), bc[s], bc[s]);
        if (s + 1 < cfg_.n_stages)
            conv("down" + std::to_string(s), bc[s + 1], bc[s], 1, 3, 3);
    }

    const int cb = bc.back();
    res("mid.res1", cb, cb);
    gn("mid.attn.norm", cb);
    conv("mid.attn.q", cb, cb, 1, 1, 1);
    conv("mid.attn.k", cb, cfg_.cond_channels, 1, 1, 1);
    conv("mid.attn.v", cb, cfg_.cond_channels, 1, 1, 1);
    conv("mid.attn.out", cb, cb, 1, 1, 1);
    res("mid.res2", cb, cb);

    for (int s = cfg_.n_stages - 2; s >= 0; --s) {
        conv("up" + std::to_string(s), bc[s], bc[s + 1], 1, 3, 3);
        for (int l = 0; l < cfg_.layers_per_block; ++l) {
            int ci = (l == 0) ? 2 * bc[s] : bc[s];
            res("dec" + std::to_string(s) + "." + std::to_string(l), ci, bc[s]);
        }
    }

    gn("out.gn", bc[0]);
    conv("out", cfg_.out_channels, bc[0], 3, 3, 3);
}

TensorPtr Denoiser::res_block(const std::string& n, const TensorPtr& x, int c_in,
                              int c_out, const TensorPtr& emb) const {
    const Conv3dSpec same{1, 1, 1, 1, 1, 1};
    auto h = group_norm(x, cfg_.norm_groups, param(n + ".gn1.g"), param(n + ".gn1.b"));
    h = silu(h);
    h = conv3d(h, param(n + ".conv1.w"), param(n + ".conv1.b"), same);
    auto eb = linear(emb, param(n + ".emb.w"), param(n + ".emb.b"));  // [1,c_out]
    h = add_channel_bias(h, reshape(eb, {c_out}));
    h = group_norm(h, cfg_.norm_groups, param(n + ".gn2.g"), param(n + ".gn2.b"));
    h = silu(h);
    h = conv3d(h, param(n + ".conv2.w"), param(n + ".conv2.b"), same);
    TensorPtr sk = x;
    if (c_in != c_out)
        sk = conv3d(x, param(n + ".skip.w"), param(n + ".skip.b"), Conv3dSpec{});
    return add(h, sk);
}

TensorPtr Denoiser::forward(const TensorPtr& z, int k, const TensorPtr& cond,
                            bool train) const {
    std::unique_ptr<NoGradGuard> guard;
    if (!train) guard = std::make_unique<NoGradGuard>();

    if (z->shape.size() != 4 || cond->shape.size() != 4)
        throw ShapeError("forward expects z and cond as [C,T,H,W]");
    if (z->shape[0] != cfg_.out_channels)
        throw ShapeError("z channel count mismatch");
    if (cond->shape[0] != cfg_.cond_channels)
        throw ShapeError("cond channel count mismatch");
    for (int a = 1; a < 4; ++a)
        if (z->shape[a] != cond->shape[a])
            throw ShapeError("z and cond must share T, H, W");
    const int T = z->shape[1], H = z->shape[2], W = z->shape[3];
    const int down = 1 << (cfg_.n_stages - 1);
    if (H % down != 0 || W % down != 0)
        throw ShapeError("H and W must be divisible by 2^(n_stages-1)");

    const auto& bc = cfg_.block_channels;
    const Conv3dSpec same{1, 1, 1, 1, 1, 1};
    const Conv3dSpec down_hw{1, 2, 2, 0, 1, 1};
    const Conv3dSpec same_hw{1, 1, 1, 0, 1, 1};

    auto emb0 = make_tensor({1, emb_dim_}, timestep_embedding(k, emb_dim_));
    auto emb = linear(emb0, param("time.fc1.w"), param("time.fc1.b"));
    emb = silu(emb);
    emb = linear(emb, param("time.fc2.w"), param("time.fc2.b"));

    auto h = conv3d(concat_ch(z, cond), param("in.w"), param("in.b"), same);

    std::vector<TensorPtr> skips(cfg_.n_stages);
    for (int s = 0; s < cfg_.n_stages; ++s) {
        for (int l = 0; l < cfg_.layers_per_block; ++l)
            h = res_block("enc" + std::to_string(s) + "." + std::to_string(l), h,
                          bc[s], bc[s], emb);
        skips[s] = h;
        if (s + 1 < cfg_.n_stages) {
            std::string dn = "down" + std::to_string(s);
            h = conv3d(h, param(dn + ".w"), param(dn + ".b"), down_hw);
        }
    }

    h = res_block("mid.res1", h, bc.back(), bc.back(), emb);
    {
        const int cb = bc.back();
        const int hb = h->shape[2], wb = h->shape[3];
        auto normed = group_norm(h, cfg_.norm_groups, param("mid.attn.norm.g"),
                                 param("mid.attn.norm.b"));
        auto q = conv3d(normed, param("mid.attn.q.w"), param("mid.attn.q.b"),
                        Conv3dSpec{});
        // context: conditioning pooled to an 8x8 token grid, time-averaged
        auto ctx = mean_time(avg_pool_hw(cond, 8, 8));
        auto kk = conv3d(ctx, param("mid.attn.k.w"), param("mid.attn.k.b"),
                         Conv3dSpec{});
        auto vv = conv3d(ctx, param("mid.attn.v.w"), param("mid.attn.v.b"),
                         Conv3dSpec{});
        auto q3 = split_heads(reshape(q, {cb, T * hb * wb}), cfg_.attn_heads);
        auto k3 = split_heads(reshape(kk, {cb, 64}), cfg_.attn_heads);
        auto v3 = split_heads(reshape(vv, {cb, 64}), cfg_.attn_heads);
        auto att = merge_heads(attention(q3, k3, v3));
        auto ar = reshape(att, {cb, T, hb, wb});
        ar = conv3d(ar, param("mid.attn.out.w"), param("mid.attn.out.b"),
                    Conv3dSpec{});
        h = add(h, ar);
    }
    h = res_block("mid.res2", h, bc.back(), bc.back(), emb);

    for (int s = cfg_.n_stages - 2; s >= 0; --s) {
        std::string un = "up" + std::to_string(s);
        h = upsample2x_hw(h);
        h = conv3d(h, param(un + ".w"), param(un + ".b"), same_hw);
        h = concat_ch(h, skips[s]);
        for (int l = 0; l < cfg_.layers_per_block; ++l) {
            int ci = (l == 0) ? 2 * bc[s] : bc[s];
            h = res_block("dec" + std::to_string(s) + "." + std::to_string(l), h, ci,
                          bc[s], emb);
        }
    }

    h = group_norm(h, cfg_.norm_groups, param("out.gn.g"), param("out.gn.b"));
    h = silu(h);
    h = conv3d(h, param("out.w"), param("out.b"), same);
    return h;
}

Denoiser Denoiser::clone() const {
    Denoiser d(cfg_, /*seed=*/0);
    for (size_t i = 0; i < params_.size(); ++i)
        d.params_[i].second->data = params_[i].second->data;
    return d;
}

void Denoiser::ema_update_from(const Denoiser& src, double decay) {
    if (src.params_.size() != params_.size())
        throw UsageError("ema_update_from: parameter sets differ");
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& dst = params_[i].second->data;
        const auto& s = src.params_[i].second->data;
        for (size_t j = 0; j < dst.size(); ++j)
            dst[j] = static_cast<float>(decay * dst[j] + (1.0 - decay) * s[j]);
    }
}

}  // namespace dsr
