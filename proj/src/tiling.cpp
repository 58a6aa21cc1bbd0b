#include "dsr/tiling.hpp"

#include <cmath>
#include <stdexcept>

#include "dsr/errors.hpp"

namespace dsr {

double taper_ramp(double u) { return 0.5 * (1.0 - std::cos(M_PI * u)); }

std::vector<float> taper_profile(int tile_size, int stride, bool clamp_lo,
                                 bool clamp_hi) {
    const int overlap = tile_size - stride;
    if (overlap <= 0 || overlap >= tile_size)
        throw ConfigError("taper requires 0 < tile_size - stride < tile_size");
    std::vector<float> w(tile_size, 1.0f);
    for (int i = 0; i < overlap; ++i) {
        // ramp sample at u=(i+0.5)/overlap; complementary pairs sum to 1
        float r = static_cast<float>(taper_ramp((i + 0.5) / overlap));
        if (!clamp_lo) w[i] = r;
        if (!clamp_hi) w[tile_size - 1 - i] = r;
    }
    return w;
}

std::vector<float> taper_weight(int tile_size, int stride) {
    auto w1 = taper_profile(tile_size, stride, false, false);
    std::vector<float> w(static_cast<size_t>(tile_size) * tile_size);
    for (int i = 0; i < tile_size; ++i)
        for (int j = 0; j < tile_size; ++j)
            w[static_cast<size_t>(i) * tile_size + j] = w1[i] * w1[j];
    return w;
}

TileLayout plan_tiles(int H, int W, int tile_size, int stride) {
    if (H < tile_size || W < tile_size)
        throw LayoutError("domain smaller than one tile");
    if (stride <= 0 || stride > tile_size)
        throw LayoutError("stride must lie in (0, tile_size]");

    auto origins = [&](int extent) {
        std::vector<int> o;
        for (int p = 0;; p += stride) {
            if (p + tile_size >= extent) {
                o.push_back(extent - tile_size);  // snap final tile to the edge
                break;
            }
            o.push_back(p);
        }
        return o;
    };
    const std::vector<int> rows = origins(H), cols = origins(W);

    TileLayout layout;
    layout.H = H;
    layout.W = W;
    layout.tile_size = tile_size;
    layout.stride = stride;
    layout.weight_sum.assign(static_cast<size_t>(H) * W, 0.0f);

    const bool single_r = rows.size() == 1, single_c = cols.size() == 1;
    for (size_t ri = 0; ri < rows.size(); ++ri) {
        auto wr = taper_profile(tile_size, stride, ri == 0 || single_r,
                                ri + 1 == rows.size() || single_r);
        for (size_t ci = 0; ci < cols.size(); ++ci) {
            auto wc = taper_profile(tile_size, stride, ci == 0 || single_c,
                                    ci + 1 == cols.size() || single_c);
            TileSpec t;
            t.row0 = rows[ri];
            t.col0 = cols[ci];
            t.weight.resize(static_cast<size_t>(tile_size) * tile_size);
            for (int i = 0; i < tile_size; ++i)
                for (int j = 0; j < tile_size; ++j) {
                    float w = wr[i] * wc[j];
                    t.weight[static_cast<size_t>(i) * tile_size + j] = w;
                    layout.weight_sum[static_cast<size_t>(t.row0 + i) * W + t.col0 +
                                      j] += w;
                }
            layout.tiles.push_back(std::move(t));
        }
    }
    for (float w : layout.weight_sum)
        if (w <= 0.0f) throw LayoutError("uncovered pixel in tile layout");
    return layout;
}

std::pair<int, int> sample_patch_corner(int H, int W, int size, Rng& rng) {
    if (H < size || W < size) throw RangeError("domain too small for patch size");
    int r = static_cast<int>(rng.uniform_int(0, H - size));
    int c = static_cast<int>(rng.uniform_int(0, W - size));
    return {r, c};
}

std::vector<float> crop_patch(std::span<const float> data, int C, int T, int H,
                              int W, int row0, int col0, int size) {
    if (row0 < 0 || col0 < 0 || row0 + size > H || col0 + size > W)
        throw RangeError("patch outside domain");
    std::vector<float> out(static_cast<size_t>(C) * T * size * size);
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            for (int i = 0; i < size; ++i) {
                const float* src = data.data() +
                                   ((static_cast<size_t>(c) * T + t) * H + row0 + i) * W +
                                   col0;
                float* dst = out.data() +
                             ((static_cast<size_t>(c) * T + t) * size + i) * size;
                std::copy(src, src + size, dst);
            }
    return out;
}

std::vector<float> run_tiled(const TileSampler& sampler, const ConditioningStack& cond,
                             const TileLayout& layout, int out_channels,
                             uint64_t seed) {
    if (layout.H != cond.H || layout.W != cond.W)
        throw LayoutError("tile layout does not cover the conditioning extents");
    const int T = cond.T, H = cond.H, W = cond.W, n = layout.tile_size;
    std::vector<double> acc(static_cast<size_t>(out_channels) * T * H * W, 0.0);

    for (size_t ti = 0; ti < layout.tiles.size(); ++ti) {
        const TileSpec& tile = layout.tiles[ti];
        ConditioningStack ct;
        ct.C = cond.C;
        ct.T = T;
        ct.H = n;
        ct.W = n;
        ct.channels = cond.channels;
        ct.data = crop_patch(cond.data, cond.C, T, H, W, tile.row0, tile.col0, n);

        const uint64_t tile_seed =
            mix_seed(mix_seed(seed, static_cast<uint64_t>(tile.row0)),
                     static_cast<uint64_t>(tile.col0));
        std::vector<float> pred;
        try {
            pred = sampler(ct, tile_seed);
        } catch (const std::exception& e) {
            throw RangeError("tile sampler failed at origin (" +
                             std::to_string(tile.row0) + "," +
                             std::to_string(tile.col0) + "): " + e.what());
        }
        if (pred.size() != static_cast<size_t>(out_channels) * T * n * n)
            throw ShapeError("tile sampler returned wrong extents");

        for (int c = 0; c < out_channels; ++c)
            for (int t = 0; t < T; ++t)
                for (int i = 0; i < n; ++i) {
                    const float* p =
                        pred.data() + ((static_cast<size_t>(c) * T + t) * n + i) * n;
                    const float* w = tile.weight.data() + static_cast<size_t>(i) * n;
                    double* a = acc.data() +
                                ((static_cast<size_t>(c) * T + t) * H + tile.row0 + i) *
                                    W +
                                tile.col0;
                    for (int j = 0; j < n; ++j) a[j] += static_cast<double>(p[j]) * w[j];
                }
    }

    std::vector<float> out(acc.size());
    for (int c = 0; c < out_channels; ++c)
        for (int t = 0; t < T; ++t)
            for (size_t px = 0; px < static_cast<size_t>(H) * W; ++px) {
                size_t i = (static_cast<size_t>(c) * T + t) * H * W + px;
                out[i] = static_cast<float>(acc[i] / layout.weight_sum[px]);
            }
    return out;
}

}  // namespace dsr
