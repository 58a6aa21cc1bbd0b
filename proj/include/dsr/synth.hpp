#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsr/gridio.hpp"
#include "dsr/rng.hpp"

namespace dsr {

/// Names of the seven predicted surface variables, in channel order.
const std::vector<std::string>& target_variables();

struct SynthSpec {
    int H = 64, W = 64;  // fine grid extent
    int T = 8;           // fine (hourly) frames
    int coarsen = 8;     // block-mean factor; must divide H and W
    int t_stride = 1;    // coarse temporal stride; must divide T-1 (or T==1)
    std::vector<double> slopes;   // spectral slope per target; empty = all `slope`
    double slope = -3.0;          // default power-law exponent (< 0)
    double dem_strength = 0.5;    // additive topographic modulation
    double phase_drift = 0.15;    // per-frame spectral phase rate
    double precip_offset = 1.5;   // exp(field) - offset, clamped at 0
    int n_aux = 10;               // extra coarse-only conditioning fields
    uint64_t seed = 0;
    double lat0 = 40.0, lon0 = -105.0, dlat = -0.01, dlon = 0.01;
    int64_t t0 = 1640995200;  // 2022-01-01T00:00:00Z
    void validate() const;
};

struct SynthScene {
    GridField fine;          // the 7 targets on the fine grid
    GridField coarse;        // 7 block-meaned targets + aux fields, subsampled
    std::vector<float> dem;  // fine-grid synthetic terrain [H*W]
};

/// Paired coarse/fine scene: per-variable power-law Gaussian fields with
/// spectral phase drift in time, additive DEM modulation, exponentiated and
/// thresholded precipitation. Coarse values are exact block-means of fine.
SynthScene gen_scene(const SynthSpec& spec);

/// n observations of `var` at distinct random cell centers, one record per
/// frame, with additive N(0, noise_sd^2) observation noise.
std::vector<StationRecord> gen_station_set(const GridField& fine,
                                           const std::string& var, size_t n,
                                           double noise_sd, Rng& rng);

}  // namespace dsr
