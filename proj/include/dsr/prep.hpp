#pragma once

#include <span>
#include <string>
#include <vector>

#include "dsr/gridio.hpp"

namespace dsr {

enum class NormKind { MinMax, Log1pMinMax };

/// Per-variable normalization bounds. For Log1pMinMax, vmin/vmax are bounds
/// of log(1+x), i.e. already in transformed space.
struct NormSpec {
    NormKind kind = NormKind::MinMax;
    double vmin = 0.0, vmax = 1.0;
    void validate() const;
};

/// Maps into [0,1]; out-of-range values clamp. Log1pMinMax rejects x < 0.
void normalize(std::span<const float> x, const NormSpec& spec, std::span<float> out);
std::vector<float> normalize(std::span<const float> x, const NormSpec& spec);

/// Exact inverse of normalize on [0,1]; total on finite input.
void denormalize(std::span<const float> y, const NormSpec& spec, std::span<float> out);
std::vector<float> denormalize(std::span<const float> y, const NormSpec& spec);

/// Bounds from data (min/max of raw or log1p-transformed values).
NormSpec compute_norm_spec(std::span<const float> x, NormKind kind);

struct NamedNormSpec {
    std::string variable;
    NormSpec spec;
};

/// Sidecar CSV `variable,kind,vmin,vmax`.
void write_norm_stats(const std::string& path, const std::vector<NamedNormSpec>& specs);
std::vector<NamedNormSpec> read_norm_stats(const std::string& path);
const NormSpec& find_norm_spec(const std::vector<NamedNormSpec>& specs,
                               const std::string& variable);

/// Target raster geometry (cell centers, same conventions as GridField).
struct RasterGeom {
    int H = 0, W = 0;
    double lat0 = 0.0, lon0 = 0.0, dlat = 0.0, dlon = 0.0;
};

/// Bilinear resampling of every variable and frame onto the target geometry.
/// Throws RangeError when the target is outside the source hull.
GridField interp_bilinear(const GridField& src, const RasterGeom& tgt);

/// Linear interpolation along the time axis from T_src to T_tgt frames.
/// Output frame j samples source coordinate j*(T_src-1)/(T_tgt-1).
std::vector<float> interp_time_linear(std::span<const float> src, int C, int T_src,
                                      int HW, int T_tgt);

/// max(0, sin phi sin delta + cos phi cos delta cos h); cosine-approximation
/// declination, hour angle from UTC time and longitude.
double cos_solar_zenith(double lat_deg, double lon_deg, int64_t time);

/// Sky-view factor per cell: SVF = mean_i cos^2(H_i) over n_azimuths horizon
/// scans with the given radius in cells.
std::vector<float> sky_view_factor(std::span<const float> dem, int H, int W,
                                   double cell_size_m, int n_azimuths = 16,
                                   int scan_radius = 100);

inline constexpr int kConditioningChannels = 20;
inline constexpr int kCondVariableChannels = 17;

struct ConditioningStack {
    std::vector<std::string> channels;  // 20 names
    std::vector<float> data;            // [channel][time][row][col]
    int C = 0, T = 0, H = 0, W = 0;
    size_t idx(int c, int t, int i, int j) const {
        return ((static_cast<size_t>(c) * T + t) * H + i) * W + j;
    }
    void validate() const;
};

/// Channels 0-16: coarse variables bilinearly + temporally interpolated and
/// minmax-normalized; 17: normalized topography; 18: sky-view factor;
/// 19: cosine solar zenith per output frame.
ConditioningStack build_conditioning(const GridField& coarse,
                                     std::span<const float> dem,
                                     const RasterGeom& tgt, int T_target,
                                     int64_t t0, uint32_t dt_target,
                                     const std::vector<NamedNormSpec>& specs,
                                     double dem_cell_size_m = 1000.0);

}  // namespace dsr
