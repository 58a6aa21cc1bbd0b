#pragma once

#include <functional>
#include <vector>

#include "dsr/prep.hpp"
#include "dsr/rng.hpp"

namespace dsr {

/// Cosine ramp 0->1: 0.5(1 - cos(pi u)), u in [0,1].
double taper_ramp(double u);

/// Separable 2D taper w(i,j) = w1(i) w1(j) for a tile in the interior
/// (ramps up and down on both ends over the overlap = tile - stride).
std::vector<float> taper_weight(int tile_size, int stride);

/// 1D profile; clamp_lo / clamp_hi force weight 1 at the corresponding edge
/// (tiles touching the physical domain boundary).
std::vector<float> taper_profile(int tile_size, int stride, bool clamp_lo,
                                 bool clamp_hi);

struct TileSpec {
    int row0 = 0, col0 = 0;
    std::vector<float> weight;  // tile_size x tile_size
};

struct TileLayout {
    int H = 0, W = 0, tile_size = 0, stride = 0;
    std::vector<TileSpec> tiles;
    std::vector<float> weight_sum;  // H x W, sum of tile weights per pixel

    int n_tiles() const { return static_cast<int>(tiles.size()); }
};

/// Origins at stride multiples with the final row/column snapped to the
/// domain edge; edge ramps clamped to 1 at physical boundaries.
TileLayout plan_tiles(int H, int W, int tile_size, int stride);

/// Uniformly random top-left corner for a size x size patch; returns (row, col).
std::pair<int, int> sample_patch_corner(int H, int W, int size, Rng& rng);

/// Crops all channels and frames of a [C,T,H,W] raster at (row0, col0).
std::vector<float> crop_patch(std::span<const float> data, int C, int T, int H,
                              int W, int row0, int col0, int size);

/// Per-tile sampler: conditioning tile (20 channels, all frames) + seed
/// -> prediction tile [out_ch][T][tile][tile].
using TileSampler =
    std::function<std::vector<float>(const ConditioningStack&, uint64_t)>;

/// Runs the sampler on every tile, blends with taper weights, normalizes by
/// the weight-sum raster. Per-tile seeds derive from (seed, tile row, col).
std::vector<float> run_tiled(const TileSampler& sampler, const ConditioningStack& cond,
                             const TileLayout& layout, int out_channels,
                             uint64_t seed);

}  // namespace dsr
