#include "dsr/prep.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include "dsr/errors.hpp"

namespace dsr {

void NormSpec::validate() const {
    if (!(vmax > vmin)) throw ConfigError("NormSpec requires vmax > vmin");
    if (kind == NormKind::Log1pMinMax && vmin < 0.0)
        throw ConfigError("log1p-minmax requires vmin >= 0 in transformed space");
}

void normalize(std::span<const float> x, const NormSpec& spec, std::span<float> out) {
    spec.validate();
    const double lo = spec.vmin, scale = 1.0 / (spec.vmax - spec.vmin);
    for (size_t i = 0; i < x.size(); ++i) {
        double v = x[i];
        if (spec.kind == NormKind::Log1pMinMax) {
            if (v < 0.0) throw DomainError("negative input under log1p-minmax");
            v = std::log1p(v);
        }
        out[i] = static_cast<float>(std::clamp((v - lo) * scale, 0.0, 1.0));
    }
}

std::vector<float> normalize(std::span<const float> x, const NormSpec& spec) {
    std::vector<float> out(x.size());
    normalize(x, spec, out);
    return out;
}

void denormalize(std::span<const float> y, const NormSpec& spec, std::span<float> out) {
    spec.validate();
    const double lo = spec.vmin, span = spec.vmax - spec.vmin;
    for (size_t i = 0; i < y.size(); ++i) {
        double v = lo + span * y[i];
        if (spec.kind == NormKind::Log1pMinMax) v = std::expm1(v);
        out[i] = static_cast<float>(v);
    }
}

std::vector<float> denormalize(std::span<const float> y, const NormSpec& spec) {
    std::vector<float> out(y.size());
    denormalize(y, spec, out);
    return out;
}

NormSpec compute_norm_spec(std::span<const float> x, NormKind kind) {
    if (x.empty()) throw ConfigError("compute_norm_spec on empty data");
    double lo = 1e300, hi = -1e300;
    for (float raw : x) {
        double v = raw;
        if (kind == NormKind::Log1pMinMax) {
            if (v < 0.0) throw DomainError("negative input under log1p-minmax");
            v = std::log1p(v);
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi <= lo) hi = lo + 1.0;  // constant field; any span works
    return NormSpec{kind, lo, hi};
}

void write_norm_stats(const std::string& path, const std::vector<NamedNormSpec>& specs) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "variable,kind,vmin,vmax\n";
    char buf[256];
    for (const auto& s : specs) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g\n", s.variable.c_str(),
                      s.spec.kind == NormKind::MinMax ? "minmax" : "log1p-minmax",
                      s.spec.vmin, s.spec.vmax);
        f << buf;
    }
}

std::vector<NamedNormSpec> read_norm_stats(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw SchemaError("empty norm stats file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "variable,kind,vmin,vmax")
        throw SchemaError("unexpected norm stats header: " + line);
    std::vector<NamedNormSpec> out;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string var, kind, vmin, vmax;
        if (!std::getline(ss, var, ',') || !std::getline(ss, kind, ',') ||
            !std::getline(ss, vmin, ',') || !std::getline(ss, vmax))
            throw RowError(lineno, "expected 4 columns");
        NamedNormSpec s;
        s.variable = var;
        if (kind == "minmax") s.spec.kind = NormKind::MinMax;
        else if (kind == "log1p-minmax") s.spec.kind = NormKind::Log1pMinMax;
        else throw RowError(lineno, "unknown kind: " + kind);
        try {
            s.spec.vmin = std::stod(vmin);
            s.spec.vmax = std::stod(vmax);
        } catch (const std::exception&) {
            throw RowError(lineno, "unparseable bound");
        }
        out.push_back(std::move(s));
    }
    return out;
}

const NormSpec& find_norm_spec(const std::vector<NamedNormSpec>& specs,
                               const std::string& variable) {
    for (const auto& s : specs)
        if (s.variable == variable) return s.spec;
    throw ConfigError("no normalization spec for variable: " + variable);
}

namespace {

// clamp=true extends edge values for targets just outside the source
// cell-center hull (the fine-grid fringe around coarse block centers)
GridField interp_bilinear_impl(const GridField& src, const RasterGeom& tgt,
                               bool clamp) {
    src.validate();
    if (tgt.H <= 0 || tgt.W <= 0 || tgt.dlat == 0.0 || tgt.dlon == 0.0)
        throw ConfigError("invalid target geometry");

    GridField out;
    out.variables = src.variables;
    out.T = src.T;
    out.H = tgt.H;
    out.W = tgt.W;
    out.lat0 = tgt.lat0;
    out.lon0 = tgt.lon0;
    out.dlat = tgt.dlat;
    out.dlon = tgt.dlon;
    out.t0 = src.t0;
    out.dt = src.dt;
    out.data.resize(static_cast<size_t>(src.n_var()) * src.T * tgt.H * tgt.W);

    // Precompute per-row / per-col source coordinates and weights.
    std::vector<int> i0(tgt.H), j0(tgt.W);
    std::vector<double> wi(tgt.H), wj(tgt.W);
    for (int i = 0; i < tgt.H; ++i) {
        double fi = (tgt.lat0 + i * tgt.dlat - src.lat0) / src.dlat;
        if (fi < 0.0 || fi > src.H - 1) {
            if (!clamp) throw RangeError("target row outside source hull");
            fi = std::clamp(fi, 0.0, static_cast<double>(src.H - 1));
        }
        int a = std::min(static_cast<int>(fi), src.H - 2);
        if (src.H == 1) { a = 0; fi = 0.0; }
        i0[i] = a;
        wi[i] = fi - a;
    }
    for (int j = 0; j < tgt.W; ++j) {
        double fj = (tgt.lon0 + j * tgt.dlon - src.lon0) / src.dlon;
        if (fj < 0.0 || fj > src.W - 1) {
            if (!clamp) throw RangeError("target col outside source hull");
            fj = std::clamp(fj, 0.0, static_cast<double>(src.W - 1));
        }
        int a = std::min(static_cast<int>(fj), src.W - 2);
        if (src.W == 1) { a = 0; fj = 0.0; }
        j0[j] = a;
        wj[j] = fj - a;
    }

    for (int v = 0; v < src.n_var(); ++v)
        for (int t = 0; t < src.T; ++t)
            for (int i = 0; i < tgt.H; ++i) {
                const int ia = i0[i], ib = std::min(ia + 1, src.H - 1);
                const double u = wi[i];
                for (int j = 0; j < tgt.W; ++j) {
                    const int ja = j0[j], jb = std::min(ja + 1, src.W - 1);
                    const double w = wj[j];
                    double val = (1 - u) * (1 - w) * src.at(v, t, ia, ja) +
                                 (1 - u) * w * src.at(v, t, ia, jb) +
                                 u * (1 - w) * src.at(v, t, ib, ja) +
                                 u * w * src.at(v, t, ib, jb);
                    out.data[out.idx(v, t, i, j)] = static_cast<float>(val);
                }
            }
    return out;
}

}  // namespace

GridField interp_bilinear(const GridField& src, const RasterGeom& tgt) {
    return interp_bilinear_impl(src, tgt, false);
}

std::vector<float> interp_time_linear(std::span<const float> src, int C, int T_src,
                                      int HW, int T_tgt) {
    if (T_src < 2) throw ParamError("interp_time_linear requires T_src >= 2");
    if (T_tgt < 2) throw ParamError("interp_time_linear requires T_tgt >= 2");
    if (src.size() != static_cast<size_t>(C) * T_src * HW)
        throw ShapeError("interp_time_linear input size mismatch");
    std::vector<float> out(static_cast<size_t>(C) * T_tgt * HW);
    for (int c = 0; c < C; ++c) {
        const float* in_c = src.data() + static_cast<size_t>(c) * T_src * HW;
        float* out_c = out.data() + static_cast<size_t>(c) * T_tgt * HW;
        for (int j = 0; j < T_tgt; ++j) {
            double ft = static_cast<double>(j) * (T_src - 1) / (T_tgt - 1);
            int a = std::min(static_cast<int>(ft), T_src - 2);
            double u = ft - a;
            const float* fa = in_c + static_cast<size_t>(a) * HW;
            const float* fb = fa + HW;
            float* dst = out_c + static_cast<size_t>(j) * HW;
            for (int p = 0; p < HW; ++p)
                dst[p] = static_cast<float>((1.0 - u) * fa[p] + u * fb[p]);
        }
    }
    return out;
}

double cos_solar_zenith(double lat_deg, double lon_deg, int64_t time) {
    std::time_t tt = static_cast<std::time_t>(time);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    const double deg = M_PI / 180.0;
    int day_of_year = tm.tm_yday + 1;
    double decl = -23.44 * deg * std::cos(2.0 * M_PI * (day_of_year + 10) / 365.0);
    double utc_hours = tm.tm_hour + tm.tm_min / 60.0 + tm.tm_sec / 3600.0;
    double solar_hours = utc_hours + lon_deg / 15.0;
    double hour_angle = (solar_hours - 12.0) * 15.0 * deg;
    double phi = lat_deg * deg;
    double c = std::sin(phi) * std::sin(decl) +
               std::cos(phi) * std::cos(decl) * std::cos(hour_angle);
    return std::max(0.0, c);
}

std::vector<float> sky_view_factor(std::span<const float> dem, int H, int W,
                                   double cell_size_m, int n_azimuths,
                                   int scan_radius) {
    if (n_azimuths < 4) throw ParamError("sky_view_factor requires n_azimuths >= 4");
    if (cell_size_m <= 0.0) throw ParamError("cell_size must be positive");
    if (dem.size() != static_cast<size_t>(H) * W)
        throw ShapeError("dem size mismatch");
    for (float v : dem)
        if (!std::isfinite(v)) throw InputError("non-finite elevation in DEM");

    std::vector<float> out(static_cast<size_t>(H) * W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double z0 = dem[static_cast<size_t>(i) * W + j];
            double acc = 0.0;
            for (int a = 0; a < n_azimuths; ++a) {
                double ang = 2.0 * M_PI * a / n_azimuths;
                double di = std::sin(ang), dj = std::cos(ang);
                double max_tan = 0.0;  // horizon at or below eye level -> angle 0
                for (int r = 1; r <= scan_radius; ++r) {
                    int ii = i + static_cast<int>(std::lround(di * r));
                    int jj = j + static_cast<int>(std::lround(dj * r));
                    if (ii < 0 || ii >= H || jj < 0 || jj >= W) break;
                    double dz = dem[static_cast<size_t>(ii) * W + jj] - z0;
                    if (dz <= 0.0) continue;
                    max_tan = std::max(max_tan, dz / (r * cell_size_m));
                }
                double horizon = std::atan(max_tan);
                acc += std::cos(horizon) * std::cos(horizon);
            }
            out[static_cast<size_t>(i) * W + j] = static_cast<float>(acc / n_azimuths);
        }
    return out;
}

void ConditioningStack::validate() const {
    if (C != kConditioningChannels)
        throw ConfigError("conditioning stack must have exactly 20 channels");
    if (channels.size() != static_cast<size_t>(C))
        throw ConfigError("conditioning channel name count mismatch");
    if (data.size() != static_cast<size_t>(C) * T * H * W)
        throw ConfigError("conditioning data size mismatch");
    for (float v : data)
        if (!std::isfinite(v)) throw ConfigError("non-finite conditioning value");
}

ConditioningStack build_conditioning(const GridField& coarse,
                                     std::span<const float> dem,
                                     const RasterGeom& tgt, int T_target,
                                     int64_t t0, uint32_t dt_target,
                                     const std::vector<NamedNormSpec>& specs,
                                     double dem_cell_size_m) {
    if (coarse.n_var() != kCondVariableChannels)
        throw ConfigError("build_conditioning expects exactly 17 coarse variables, got " +
                          std::to_string(coarse.n_var()));
    if (dem.size() != static_cast<size_t>(tgt.H) * tgt.W)
        throw ConfigError("DEM extent does not match target geometry");

    ConditioningStack cs;
    cs.C = kConditioningChannels;
    cs.T = T_target;
    cs.H = tgt.H;
    cs.W = tgt.W;
    cs.data.resize(static_cast<size_t>(cs.C) * cs.T * cs.H * cs.W);

    const size_t HW = static_cast<size_t>(tgt.H) * tgt.W;

    // 0-16: spatial then temporal interpolation, then per-variable minmax.
    GridField spatial = interp_bilinear_impl(coarse, tgt, true);
    std::vector<float> timed =
        interp_time_linear(spatial.data, coarse.n_var(), coarse.T, static_cast<int>(HW),
                           T_target);
    for (int v = 0; v < kCondVariableChannels; ++v) {
        cs.channels.push_back(coarse.variables[v]);
        const NormSpec& spec = find_norm_spec(specs, coarse.variables[v]);
        std::span<const float> in(timed.data() + static_cast<size_t>(v) * T_target * HW,
                                  static_cast<size_t>(T_target) * HW);
        std::span<float> out(cs.data.data() + static_cast<size_t>(v) * T_target * HW,
                             static_cast<size_t>(T_target) * HW);
        normalize(in, spec, out);
    }

    // 17: normalized topography, replicated across time.
    cs.channels.push_back("topography");
    NormSpec dem_spec = compute_norm_spec(dem, NormKind::MinMax);
    std::vector<float> dem_norm = normalize(dem, dem_spec);
    for (int t = 0; t < T_target; ++t)
        std::copy(dem_norm.begin(), dem_norm.end(),
                  cs.data.begin() + cs.idx(17, t, 0, 0));

    // 18: sky-view factor, replicated across time.
    cs.channels.push_back("sky_view_factor");
    std::vector<float> svf = sky_view_factor(dem, tgt.H, tgt.W, dem_cell_size_m);
    for (int t = 0; t < T_target; ++t)
        std::copy(svf.begin(), svf.end(), cs.data.begin() + cs.idx(18, t, 0, 0));

    // 19: cosine solar zenith per frame and cell.
    cs.channels.push_back("cos_solar_zenith");
    for (int t = 0; t < T_target; ++t) {
        int64_t when = t0 + static_cast<int64_t>(t) * dt_target;
        for (int i = 0; i < tgt.H; ++i) {
            double lat = tgt.lat0 + i * tgt.dlat;
            for (int j = 0; j < tgt.W; ++j) {
                double lon = tgt.lon0 + j * tgt.dlon;
                cs.data[cs.idx(19, t, i, j)] =
                    static_cast<float>(cos_solar_zenith(lat, lon, when));
            }
        }
    }

    cs.validate();
    return cs;
}

}  // namespace dsr
