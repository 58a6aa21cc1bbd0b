#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dsr {

/// Multi-variable space-time raster in physical units.
/// data layout: [variable][time][row][col], row-major, 32-bit floats.
struct GridField {
    std::vector<std::string> variables;
    std::vector<float> data;
    int T = 0, H = 0, W = 0;
    double lat0 = 0.0, lon0 = 0.0;  // degrees of the (0,0) cell center
    double dlat = 0.0, dlon = 0.0;  // degrees per cell; dlat may be negative
    int64_t t0 = 0;                 // epoch seconds of frame 0
    uint32_t dt = 3600;             // seconds between frames

    int n_var() const { return static_cast<int>(variables.size()); }

    size_t idx(int v, int t, int i, int j) const {
        return ((static_cast<size_t>(v) * T + t) * H + i) * W + j;
    }
    float at(int v, int t, int i, int j) const { return data[idx(v, t, i, j)]; }
    float& at(int v, int t, int i, int j) { return data[idx(v, t, i, j)]; }

    double lat_of(int i) const { return lat0 + i * dlat; }
    double lon_of(int j) const { return lon0 + j * dlon; }

    int var_index(const std::string& name) const;  // -1 if absent

    /// Throws ConfigError if the invariants do not hold.
    void validate() const;
};

struct StationRecord {
    std::string station_id;
    double lat = 0.0, lon = 0.0;
    int64_t valid_time = 0;  // epoch seconds
    std::string variable;
    double value = 0.0;
};

// GRD1 fixed header: magic(4) ver(4) n_var(4) T(4) H(4) W(4)
// lat0(8) lon0(8) dlat(8) dlon(8) t0(8) dt(4) pad(4) = 72 bytes,
// then n_var x 16-byte zero-padded names, then the f32 payload.
inline constexpr size_t kGrdFixedHeaderBytes = 72;
inline constexpr size_t kGrdNameBytes = 16;

GridField read_grid(const std::string& path);
void write_grid(const GridField& g, const std::string& path);

/// CSV `station_id,lat,lon,valid_time,variable,value`, valid_time ISO-8601 UTC.
std::vector<StationRecord> read_stations(const std::string& path);

/// Parses "YYYY-MM-DDTHH:MM:SS[Z]" as UTC epoch seconds. Throws FormatError.
int64_t parse_iso8601_utc(const std::string& s);
std::string format_iso8601_utc(int64_t t);

/// Nearest cell center (planar lat/lon distance) at the nearest frame.
float sample_nearest(const GridField& g, const std::string& var, double lat,
                     double lon, int64_t time);

}  // namespace dsr
