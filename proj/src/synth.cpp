#include "dsr/synth.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <set>

#include "dsr/errors.hpp"

namespace dsr {

const std::vector<std::string>& target_variables() {
    static const std::vector<std::string> v = {"precip", "t2m", "q2m",   "u10",
                                               "v10",    "sp",  "dlwrf"};
    return v;
}

void SynthSpec::validate() const {
    if (H < 8 || W < 8 || T < 1) throw ParamError("scene extent too small");
    if (coarsen < 1 || H % coarsen != 0 || W % coarsen != 0)
        throw ParamError("coarsening factor must divide H and W");
    if (t_stride < 1 || (T > 1 && (T - 1) % t_stride != 0))
        throw ParamError("t_stride must divide T-1");
    if (slope >= 0.0) throw ParamError("spectral slope must be negative");
    for (double s : slopes)
        if (s >= 0.0) throw ParamError("spectral slope must be negative");
    if (!slopes.empty() && slopes.size() != target_variables().size())
        throw ParamError("need one slope per target variable");
    if (n_aux < 0) throw ParamError("n_aux must be nonnegative");
    if (dlat == 0.0 || dlon == 0.0) throw ParamError("zero grid spacing");
}

namespace {

std::vector<float> make_dem(int H, int W, Rng& rng) {
    std::vector<float> dem(static_cast<size_t>(H) * W, 0.0f);
    const int n_bumps = 6;
    for (int b = 0; b < n_bumps; ++b) {
        double ci = rng.uniform(0.0, H);
        double cj = rng.uniform(0.0, W);
        double sg = rng.uniform(H / 16.0, H / 4.0);
        double amp = rng.uniform(0.3, 1.0);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                double d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
                dem[static_cast<size_t>(i) * W + j] +=
                    static_cast<float>(amp * std::exp(-d2 / (2.0 * sg * sg)));
            }
    }
    return dem;
}

// T frames of a power-law GRF; mode phases rotate at a fixed random rate per
// frame so consecutive frames correlate. Standardized to mean 0, sd 1 overall.
std::vector<float> grf_frames(int H, int W, int T, double slope, double drift,
                              Rng& rng) {
    const size_t n = static_cast<size_t>(H) * W;
    const size_t ns = static_cast<size_t>(H) * (W / 2 + 1);
    const int N = std::min(H, W);

    std::vector<double> white(n);
    for (auto& v : white) v = rng.normal();
    std::vector<fftw_complex> base(ns);
    fftw_plan fwd =
        fftw_plan_dft_r2c_2d(H, W, white.data(), base.data(), FFTW_ESTIMATE);
    fftw_execute(fwd);
    fftw_destroy_plan(fwd);

    std::vector<double> amp(ns, 0.0), rate(ns, 0.0);
    for (int i = 0; i < H; ++i) {
        const int ki = std::min(i, H - i);
        const bool i_self = (i == 0 || (H % 2 == 0 && i == H / 2));
        for (int j = 0; j < W / 2 + 1; ++j) {
            const size_t e = static_cast<size_t>(i) * (W / 2 + 1) + j;
            const double kr =
                N * std::sqrt(static_cast<double>(ki) * ki / (static_cast<double>(H) * H) +
                              static_cast<double>(j) * j / (static_cast<double>(W) * W));
            if (kr > 0.0) amp[e] = std::pow(kr, slope / 2.0);
            // self-conjugate modes must stay real under the c2r transform
            const bool j_self = (j == 0 || (W % 2 == 0 && j == W / 2));
            rate[e] = (i_self && j_self) ? 0.0 : drift * rng.normal();
        }
    }

    std::vector<fftw_complex> spec(ns);
    std::vector<double> frame(n);
    fftw_plan inv =
        fftw_plan_dft_c2r_2d(H, W, spec.data(), frame.data(), FFTW_ESTIMATE);

    std::vector<float> out(static_cast<size_t>(T) * n);
    double sum = 0.0, sq = 0.0;
    for (int t = 0; t < T; ++t) {
        for (size_t e = 0; e < ns; ++e) {
            const std::complex<double> b(base[e][0], base[e][1]);
            const std::complex<double> v =
                b * amp[e] * std::polar(1.0, rate[e] * t);
            spec[e][0] = v.real();
            spec[e][1] = v.imag();
        }
        fftw_execute(inv);
        for (size_t p = 0; p < n; ++p) {
            const double v = frame[p] / static_cast<double>(n);
            out[static_cast<size_t>(t) * n + p] = static_cast<float>(v);
            sum += v;
            sq += v * v;
        }
    }
    fftw_destroy_plan(inv);

    const double total = static_cast<double>(T) * static_cast<double>(n);
    const double mean = sum / total;
    const double sd = std::sqrt(std::max(sq / total - mean * mean, 1e-30));
    for (auto& v : out) v = static_cast<float>((v - mean) / sd);
    return out;
}

}  // namespace

SynthScene gen_scene(const SynthSpec& spec) {
    spec.validate();
    const auto& targets = target_variables();
    const int n_tgt = static_cast<int>(targets.size());
    const size_t plane = static_cast<size_t>(spec.H) * spec.W;

    Rng rng(mix_seed(spec.seed, 0x53594e54ull));  // scene stream
    std::vector<float> dem = make_dem(spec.H, spec.W, rng);
    double dsum = 0.0, dsq = 0.0;
    for (float v : dem) {
        dsum += v;
        dsq += static_cast<double>(v) * v;
    }
    const double dmean = dsum / static_cast<double>(plane);
    const double dsd =
        std::sqrt(std::max(dsq / static_cast<double>(plane) - dmean * dmean, 1e-30));

    // fine fields for targets and coarse-only aux conditioning variables
    std::vector<std::string> all_vars = targets;
    for (int a = 0; a < spec.n_aux; ++a)
        all_vars.push_back("aux" + std::to_string(a / 10) + std::to_string(a % 10));

    std::vector<std::vector<float>> fine_fields;
    for (size_t v = 0; v < all_vars.size(); ++v) {
        const double sl = (v < static_cast<size_t>(n_tgt) && !spec.slopes.empty())
                              ? spec.slopes[v]
                              : spec.slope;
        Rng vrng(mix_seed(spec.seed, 1000 + v));
        std::vector<float> f =
            grf_frames(spec.H, spec.W, spec.T, sl, spec.phase_drift, vrng);
        for (int t = 0; t < spec.T; ++t)
            for (size_t p = 0; p < plane; ++p)
                f[static_cast<size_t>(t) * plane + p] += static_cast<float>(
                    spec.dem_strength * (dem[p] - dmean) / dsd);
        if (all_vars[v] == "precip")
            for (auto& x : f)
                x = std::max(0.0f, std::exp(x) - static_cast<float>(spec.precip_offset));
        fine_fields.push_back(std::move(f));
    }

    SynthScene scene;
    scene.dem = std::move(dem);

    GridField& fine = scene.fine;
    fine.variables = targets;
    fine.T = spec.T;
    fine.H = spec.H;
    fine.W = spec.W;
    fine.lat0 = spec.lat0;
    fine.lon0 = spec.lon0;
    fine.dlat = spec.dlat;
    fine.dlon = spec.dlon;
    fine.t0 = spec.t0;
    fine.dt = 3600;
    fine.data.resize(static_cast<size_t>(n_tgt) * spec.T * plane);
    for (int v = 0; v < n_tgt; ++v)
        std::copy(fine_fields[v].begin(), fine_fields[v].end(),
                  fine.data.begin() + static_cast<size_t>(v) * spec.T * plane);

    const int cH = spec.H / spec.coarsen, cW = spec.W / spec.coarsen;
    const int cT = (spec.T - 1) / spec.t_stride + 1;
    GridField& coarse = scene.coarse;
    coarse.variables = all_vars;
    coarse.T = cT;
    coarse.H = cH;
    coarse.W = cW;
    coarse.dlat = spec.dlat * spec.coarsen;
    coarse.dlon = spec.dlon * spec.coarsen;
    coarse.lat0 = spec.lat0 + spec.dlat * (spec.coarsen - 1) / 2.0;
    coarse.lon0 = spec.lon0 + spec.dlon * (spec.coarsen - 1) / 2.0;
    coarse.t0 = spec.t0;
    coarse.dt = 3600u * static_cast<uint32_t>(spec.t_stride);
    coarse.data.resize(all_vars.size() * static_cast<size_t>(cT) * cH * cW);
    const float inv_block =
        1.0f / (static_cast<float>(spec.coarsen) * static_cast<float>(spec.coarsen));
    for (size_t v = 0; v < all_vars.size(); ++v)
        for (int ct = 0; ct < cT; ++ct) {
            const int t = ct * spec.t_stride;
            for (int ci = 0; ci < cH; ++ci)
                for (int cj = 0; cj < cW; ++cj) {
                    float acc = 0.0f;
                    for (int di = 0; di < spec.coarsen; ++di)
                        for (int dj = 0; dj < spec.coarsen; ++dj)
                            acc += fine_fields[v][static_cast<size_t>(t) * plane +
                                                  static_cast<size_t>(ci * spec.coarsen + di) *
                                                      spec.W +
                                                  cj * spec.coarsen + dj];
                    coarse.data[coarse.idx(static_cast<int>(v), ct, ci, cj)] =
                        acc * inv_block;
                }
        }
    fine.validate();
    coarse.validate();
    return scene;
}

std::vector<StationRecord> gen_station_set(const GridField& fine,
                                           const std::string& var, size_t n,
                                           double noise_sd, Rng& rng) {
    fine.validate();
    const int v = fine.var_index(var);
    if (v < 0) throw RangeError("no such variable: " + var);
    const size_t cells = static_cast<size_t>(fine.H) * fine.W;
    if (n > cells) throw ParamError("more stations than grid cells");

    std::set<size_t> taken;
    std::vector<StationRecord> out;
    out.reserve(n * fine.T);
    for (size_t s = 0; s < n; ++s) {
        size_t cell;
        do {
            cell = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(cells) - 1));
        } while (!taken.insert(cell).second);
        const int i = static_cast<int>(cell / fine.W);
        const int j = static_cast<int>(cell % fine.W);
        char id[24];
        std::snprintf(id, sizeof(id), "S%05u", static_cast<unsigned>(s));
        for (int t = 0; t < fine.T; ++t) {
            StationRecord r;
            r.station_id = id;
            r.lat = fine.lat_of(i);
            r.lon = fine.lon_of(j);
            r.valid_time = fine.t0 + static_cast<int64_t>(t) * fine.dt;
            r.variable = var;
            r.value = fine.at(v, t, i, j) + noise_sd * rng.normal();
            out.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace dsr
