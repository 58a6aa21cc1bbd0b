#include "dsr/verify.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dsr/errors.hpp"

namespace dsr {

SkillScores skill(std::span<const float> pred, std::span<const float> ref,
                  std::span<const uint8_t> mask) {
    if (pred.size() != ref.size()) throw ShapeError("skill: shape mismatch");
    if (!mask.empty() && mask.size() != pred.size())
        throw ShapeError("skill: mask shape mismatch");

    double se = 0.0, ae = 0.0, be = 0.0;
    double sp = 0.0, sr = 0.0, spp = 0.0, srr = 0.0, spr = 0.0;
    size_t n = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const double p = pred[i], r = ref[i], d = p - r;
        be += d;
        ae += std::abs(d);
        se += d * d;
        sp += p;
        sr += r;
        spp += p * p;
        srr += r * r;
        spr += p * r;
        ++n;
    }
    if (n < 2) throw RangeError("skill requires at least 2 unmasked samples");

    SkillScores s;
    s.n = n;
    const double dn = static_cast<double>(n);
    s.bias = be / dn;
    s.mae = ae / dn;
    s.rmse = std::sqrt(se / dn);
    const double vp = spp - sp * sp / dn;
    const double vr = srr - sr * sr / dn;
    const double cov = spr - sp * sr / dn;
    if (vp <= 0.0 || vr <= 0.0) {
        s.r_defined = false;
        s.r = 0.0;
    } else {
        s.r = cov / std::sqrt(vp * vr);
    }
    return s;
}

GridField accumulate_precip(const GridField& g, const std::string& var, int window) {
    g.validate();
    int v = g.var_index(var);
    if (v < 0) throw RangeError("no such variable: " + var);
    if (window <= 0) throw ParamError("window must be positive");
    if (g.T < window) throw RangeError("fewer frames than one accumulation window");
    if (g.dt != 3600) throw RangeError("accumulate_precip expects hourly frames");

    const int n_out = g.T / window;
    GridField out;
    out.variables = {var};
    out.T = n_out;
    out.H = g.H;
    out.W = g.W;
    out.lat0 = g.lat0;
    out.lon0 = g.lon0;
    out.dlat = g.dlat;
    out.dlon = g.dlon;
    out.t0 = g.t0;
    out.dt = static_cast<uint32_t>(window) * 3600u;
    out.data.assign(static_cast<size_t>(n_out) * g.H * g.W, 0.0f);
    for (int w = 0; w < n_out; ++w)
        for (int i = 0; i < g.H; ++i)
            for (int j = 0; j < g.W; ++j) {
                double acc = 0.0;
                for (int t = w * window; t < (w + 1) * window; ++t)
                    acc += g.at(v, t, i, j);
                out.data[out.idx(0, w, i, j)] = static_cast<float>(acc);
            }
    return out;
}

RadialPSD radial_psd(std::span<const float> field, int H, int W, double dx_km,
                     bool hann) {
    if (H < 8 || W < 8) throw InputError("radial_psd requires H, W >= 8");
    if (field.size() != static_cast<size_t>(H) * W)
        throw ShapeError("radial_psd extent mismatch");
    for (float v : field)
        if (!std::isfinite(v)) throw InputError("non-finite input to radial_psd");

    const size_t n = field.size();
    double mean = 0.0;
    for (float v : field) mean += v;
    mean /= static_cast<double>(n);

    std::vector<double> in(n);
    if (hann) {
        for (int i = 0; i < H; ++i) {
            double wi = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / (H - 1)));
            for (int j = 0; j < W; ++j) {
                double wj = 0.5 * (1.0 - std::cos(2.0 * M_PI * j / (W - 1)));
                in[static_cast<size_t>(i) * W + j] =
                    (field[static_cast<size_t>(i) * W + j] - mean) * wi * wj;
            }
        }
    } else {
        for (size_t i = 0; i < n; ++i) in[i] = field[i] - mean;
    }

    std::vector<fftw_complex> spec(static_cast<size_t>(H) * (W / 2 + 1));
    fftw_plan plan = fftw_plan_dft_r2c_2d(H, W, in.data(), spec.data(), FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);

    // integer radial rings in units of the shorter axis; covers the spectrum
    // corners so that ring power sums reproduce the field variance
    const int N = std::min(H, W);
    const int k_max = static_cast<int>(std::ceil(
        std::sqrt(0.25 * N * N + 0.25 * N * N)));
    std::vector<double> ring_power(k_max + 1, 0.0);
    std::vector<size_t> ring_count(k_max + 1, 0);
    const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n));

    for (int i = 0; i < H; ++i) {
        const int ki = std::min(i, H - i);
        for (int j = 0; j < W / 2 + 1; ++j) {
            const fftw_complex& c = spec[static_cast<size_t>(i) * (W / 2 + 1) + j];
            double p = (c[0] * c[0] + c[1] * c[1]) * norm;
            // r2c stores half the plane; double all but the self-conjugate cols
            int mult = (j == 0 || (W % 2 == 0 && j == W / 2)) ? 1 : 2;
            double fr = std::sqrt(static_cast<double>(ki) * ki * N * N / (static_cast<double>(H) * H) +
                                  static_cast<double>(j) * j * N * N / (static_cast<double>(W) * W));
            if (ki == 0 && j == 0) continue;  // DC: removed mean
            int ring = std::clamp(static_cast<int>(std::lround(fr)), 1, k_max);
            ring_power[ring] += mult * p;
            ring_count[ring] += static_cast<size_t>(mult);
        }
    }

    RadialPSD out;
    out.dx_km = dx_km;
    for (int k = 1; k <= k_max; ++k) {
        if (ring_count[k] == 0) continue;
        out.wavelength_km.push_back(static_cast<double>(N) * dx_km / k);
        out.power.push_back(ring_power[k] / static_cast<double>(ring_count[k]));
        out.count.push_back(ring_count[k]);
    }
    return out;
}

std::vector<LeadScores> verify_stations(const GridField& pred,
                                        const std::vector<StationRecord>& stations,
                                        const std::string& var,
                                        const std::vector<double>& lead_hours) {
    if (pred.var_index(var) < 0) throw RangeError("no such variable: " + var);
    std::vector<LeadScores> out;
    for (double lead : lead_hours) {
        const int64_t valid = pred.t0 + static_cast<int64_t>(std::llround(lead * 3600.0));
        std::vector<float> p, o;
        for (const auto& st : stations) {
            if (st.variable != var || st.valid_time != valid) continue;
            float g;
            try {
                g = sample_nearest(pred, var, st.lat, st.lon, st.valid_time);
            } catch (const RangeError&) {
                continue;  // station outside the predicted domain
            }
            p.push_back(g);
            o.push_back(static_cast<float>(st.value));
        }
        LeadScores ls;
        ls.lead_h = lead;
        if (p.size() < 2) {
            ls.empty = true;
        } else {
            ls.scores = skill(p, o);
        }
        out.push_back(std::move(ls));
    }
    return out;
}

namespace {

std::string fmt_scores(const SkillScores& s) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%.6g,%.6g,%zu",
                  s.r_defined ? s.r : std::nan(""), s.rmse, s.bias, s.mae, s.n);
    return buf;
}

}  // namespace

void write_skill_report(const std::string& path, std::vector<ReportRow> rows) {
    if (rows.empty()) throw UsageError("report requires at least one score");
    std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        if (a.variable != b.variable) return a.variable < b.variable;
        if (a.lead_h != b.lead_h) return a.lead_h < b.lead_h;
        return a.model < b.model;
    });
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "variable,lead_h,model,r,rmse,bias,mae,n\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6g", r.lead_h);
        f << r.variable << ',' << buf << ',' << r.model << ',' << fmt_scores(r.scores)
          << '\n';
    }
}

void write_psd_report(const std::string& path, const RadialPSD& psd) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "wavelength_km,power\n";
    char buf[96];
    for (size_t i = 0; i < psd.wavelength_km.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", psd.wavelength_km[i],
                      psd.power[i]);
        f << buf;
    }
}

}  // namespace dsr
