#include "dsr/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "dsr/checkpoint.hpp"
#include "dsr/diffusion.hpp"
#include "dsr/errors.hpp"
#include "dsr/gridio.hpp"
#include "dsr/prep.hpp"
#include "dsr/synth.hpp"
#include "dsr/tiling.hpp"
#include "dsr/verify.hpp"

namespace fs = std::filesystem;

namespace dsr {
namespace {

uint64_t fnv1a_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for digest: " + path);
    uint64_t h = 14695981039346656037ull;
    char buf[1 << 16];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<uint8_t>(buf[i]);
            h *= 1099511628211ull;
        }
        if (!f) break;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string make_run_dir(const std::string& override_dir) {
    std::string dir = override_dir;
    if (dir.empty()) {
        std::time_t now = std::time(nullptr);
        char stamp[32];
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
        dir = std::string("runs/") + stamp;
        int suffix = 0;
        while (fs::exists(dir))
            dir = std::string("runs/") + stamp + "-" + std::to_string(++suffix);
    }
    fs::create_directories(dir);
    return dir;
}

// flat `key = value` file; doubles as a CLI11-loadable config
struct Manifest {
    std::vector<std::pair<std::string, std::string>> kv;
    void add(const std::string& k, const std::string& v) { kv.emplace_back(k, v); }
    void add(const std::string& k, int64_t v) { add(k, std::to_string(v)); }
    void add(const std::string& k, uint64_t v) { add(k, std::to_string(v)); }
    void add(const std::string& k, int v) { add(k, std::to_string(v)); }
    void add(const std::string& k, double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        add(k, std::string(buf));
    }
    void digest(const std::string& k, const std::string& path) {
        add("digest." + k, hex64(fnv1a_file(path)));
    }
    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw IoError("cannot write manifest: " + path);
        for (const auto& [k, v] : kv) f << k << " = " << v << "\n";
    }
};

// ---------------------------------------------------------------------------
// shared data plumbing

bool is_target(const std::string& name) {
    const auto& t = target_variables();
    return std::find(t.begin(), t.end(), name) != t.end();
}

/// Normalization bounds from the chronologically first n_train fine frames;
/// aux conditioning variables use coarse frames inside the same window.
std::vector<NamedNormSpec> compute_stats(const GridField& fine,
                                         const GridField& coarse, int n_train) {
    if (n_train < 1 || n_train > fine.T) throw ParamError("bad training split");
    const size_t hw = static_cast<size_t>(fine.H) * fine.W;
    std::vector<NamedNormSpec> out;
    for (int v = 0; v < fine.n_var(); ++v) {
        NormKind kind = fine.variables[v] == "precip" ? NormKind::Log1pMinMax
                                                      : NormKind::MinMax;
        std::span<const float> s(fine.data.data() +
                                     static_cast<size_t>(v) * fine.T * hw,
                                 static_cast<size_t>(n_train) * hw);
        out.push_back({fine.variables[v], compute_norm_spec(s, kind)});
    }
    const int64_t cutoff = fine.t0 + static_cast<int64_t>(n_train) * fine.dt;
    int nc = 0;
    while (nc < coarse.T &&
           coarse.t0 + static_cast<int64_t>(nc) * coarse.dt < cutoff)
        ++nc;
    nc = std::max(nc, 1);
    const size_t chw = static_cast<size_t>(coarse.H) * coarse.W;
    for (int v = 0; v < coarse.n_var(); ++v) {
        if (is_target(coarse.variables[v])) continue;
        std::span<const float> s(coarse.data.data() +
                                     static_cast<size_t>(v) * coarse.T * chw,
                                 static_cast<size_t>(nc) * chw);
        out.push_back({coarse.variables[v], compute_norm_spec(s, NormKind::MinMax)});
    }
    return out;
}

std::vector<float> normalize_targets(const GridField& fine,
                                     const std::vector<NamedNormSpec>& specs) {
    const size_t plane = static_cast<size_t>(fine.T) * fine.H * fine.W;
    std::vector<float> out(fine.n_var() * plane);
    for (int v = 0; v < fine.n_var(); ++v) {
        std::span<const float> src(fine.data.data() + v * plane, plane);
        std::span<float> dst(out.data() + v * plane, plane);
        normalize(src, find_norm_spec(specs, fine.variables[v]), dst);
    }
    return out;
}

RasterGeom geom_of(const GridField& g) {
    return {g.H, g.W, g.lat0, g.lon0, g.dlat, g.dlon};
}

double cell_size_m(const RasterGeom& g) { return std::abs(g.dlat) * 111000.0; }

/// [C,T,H,W] -> the frames [t0, t0+n) as a contiguous copy.
std::vector<float> slice_frames(std::span<const float> data, int C, int T, int HW,
                                int t0, int n) {
    std::vector<float> out(static_cast<size_t>(C) * n * HW);
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < n; ++t)
            std::copy_n(data.data() + (static_cast<size_t>(c) * T + t0 + t) * HW,
                        HW, out.data() + (static_cast<size_t>(c) * n + t) * HW);
    return out;
}

void save_ckpt_with_step(const std::string& path, const Denoiser& m,
                         int64_t step) {
    NamedParams p = m.parameters();
    auto meta = make_tensor({1});
    meta->data[0] = static_cast<float>(step);
    p.emplace_back("_meta/step", meta);
    save_checkpoint(path, p);
}

/// Loads model weights from either a bare or a step-annotated checkpoint.
int64_t load_ckpt_flexible(const std::string& path, Denoiser& m) {
    NamedParams file = load_checkpoint(path);
    std::unordered_map<std::string, TensorPtr> by;
    for (const auto& [n, t] : m.parameters()) by[n] = t;
    int64_t step = 0;
    for (const auto& [n, t] : file) {
        if (n == "_meta/step") {
            step = std::llround(t->data[0]);
            continue;
        }
        auto it = by.find(n);
        if (it == by.end()) throw FormatError("unknown tensor in checkpoint: " + n);
        if (it->second->shape != t->shape)
            throw FormatError("tensor shape mismatch: " + n);
        it->second->data = t->data;
        by.erase(it);
    }
    if (!by.empty())
        throw FormatError("checkpoint missing tensor: " + by.begin()->first);
    return step;
}

DenoiserConfig preset_config(const std::string& preset) {
    if (preset == "desk") return DenoiserConfig::desk();
    if (preset == "paper") return DenoiserConfig{};
    throw ConfigError("unknown preset: " + preset);
}

struct TrainScene {
    GridField fine, coarse;
    std::vector<float> dem;
    std::vector<NamedNormSpec> specs;
    int n_train = 0;  // frames in the chronological training split
    // contiguous [C,T,·,·] splits of normalized targets and conditioning
    std::vector<float> x_train, x_val, cond_train, cond_val;
};

TrainScene load_train_scene(const std::string& fine_path,
                            const std::string& coarse_path,
                            const std::string& dem_path) {
    TrainScene sc;
    sc.fine = read_grid(fine_path);
    sc.coarse = read_grid(coarse_path);
    GridField demg = read_grid(dem_path);
    if (demg.H != sc.fine.H || demg.W != sc.fine.W)
        throw AlignmentError("dem extent does not match the fine grid");
    sc.dem.assign(demg.data.begin(),
                  demg.data.begin() + static_cast<size_t>(demg.H) * demg.W);

    sc.n_train = std::max(1, static_cast<int>(sc.fine.T * 0.8));
    if (sc.n_train >= sc.fine.T) sc.n_train = sc.fine.T - 1;
    if (sc.n_train < 1) throw ParamError("need at least 2 frames to split");
    sc.specs = compute_stats(sc.fine, sc.coarse, sc.n_train);

    std::vector<float> x = normalize_targets(sc.fine, sc.specs);
    ConditioningStack cond = build_conditioning(
        sc.coarse, sc.dem, geom_of(sc.fine), sc.fine.T, sc.fine.t0, sc.fine.dt,
        sc.specs, cell_size_m(geom_of(sc.fine)));

    const int hw = sc.fine.H * sc.fine.W;
    const int n_val = sc.fine.T - sc.n_train;
    const int n_tgt = sc.fine.n_var();
    sc.x_train = slice_frames(x, n_tgt, sc.fine.T, hw, 0, sc.n_train);
    sc.x_val = slice_frames(x, n_tgt, sc.fine.T, hw, sc.n_train, n_val);
    sc.cond_train =
        slice_frames(cond.data, cond.C, cond.T, hw, 0, sc.n_train);
    sc.cond_val = slice_frames(cond.data, cond.C, cond.T, hw, sc.n_train, n_val);
    return sc;
}

std::pair<TensorPtr, TensorPtr> draw_patch(const TrainScene& sc, int patch,
                                           bool val, Rng& rng) {
    const int T = val ? sc.fine.T - sc.n_train : sc.n_train;
    const int n_tgt = sc.fine.n_var();
    auto [r, c] = sample_patch_corner(sc.fine.H, sc.fine.W, patch, rng);
    const auto& xs = val ? sc.x_val : sc.x_train;
    const auto& cs = val ? sc.cond_val : sc.cond_train;
    auto x = make_tensor({n_tgt, T, patch, patch},
                         crop_patch(xs, n_tgt, T, sc.fine.H, sc.fine.W, r, c, patch));
    auto cond = make_tensor(
        {kConditioningChannels, T, patch, patch},
        crop_patch(cs, kConditioningChannels, T, sc.fine.H, sc.fine.W, r, c, patch));
    return {x, cond};
}

// ---------------------------------------------------------------------------
// subcommands

struct GenSynthArgs {
    std::string out_dir;
    SynthSpec spec;
    int n_stations = 32;
    double station_noise = 0.0;
    std::string station_var = "t2m";
};

int cmd_gen_synth(const GenSynthArgs& a) {
    const std::string dir = make_run_dir(a.out_dir);
    SynthScene scene = gen_scene(a.spec);
    write_grid(scene.fine, dir + "/fine.grd");
    write_grid(scene.coarse, dir + "/coarse.grd");

    GridField demg;
    demg.variables = {"dem"};
    demg.T = 1;
    demg.H = a.spec.H;
    demg.W = a.spec.W;
    demg.lat0 = a.spec.lat0;
    demg.lon0 = a.spec.lon0;
    demg.dlat = a.spec.dlat;
    demg.dlon = a.spec.dlon;
    demg.t0 = a.spec.t0;
    demg.data = scene.dem;
    write_grid(demg, dir + "/dem.grd");

    Rng srng(mix_seed(a.spec.seed, 0x5354ull));
    auto stations = gen_station_set(scene.fine, a.station_var,
                                    static_cast<size_t>(a.n_stations),
                                    a.station_noise, srng);
    std::ofstream sf(dir + "/stations.csv", std::ios::trunc);
    if (!sf) throw IoError("cannot write stations.csv");
    sf << "station_id,lat,lon,valid_time,variable,value\n";
    char num[64];
    for (const auto& s : stations) {
        std::snprintf(num, sizeof(num), "%.9g,%.9g", s.lat, s.lon);
        sf << s.station_id << ',' << num << ',' << format_iso8601_utc(s.valid_time)
           << ',' << s.variable << ',';
        std::snprintf(num, sizeof(num), "%.9g", s.value);
        sf << num << '\n';
    }
    sf.close();

    Manifest m;
    m.add("command", "gen-synth");
    m.add("seed", a.spec.seed);
    m.add("H", a.spec.H);
    m.add("W", a.spec.W);
    m.add("T", a.spec.T);
    m.add("coarsen", a.spec.coarsen);
    m.add("t-stride", a.spec.t_stride);
    m.add("slope", a.spec.slope);
    m.add("dem-strength", a.spec.dem_strength);
    m.add("phase-drift", a.spec.phase_drift);
    m.add("n-stations", a.n_stations);
    m.add("station-noise", a.station_noise);
    m.add("station-var", a.station_var);
    m.digest("fine", dir + "/fine.grd");
    m.digest("coarse", dir + "/coarse.grd");
    m.digest("dem", dir + "/dem.grd");
    m.digest("stations", dir + "/stations.csv");
    m.write(dir + "/manifest.txt");
    std::printf("wrote %s\n", dir.c_str());
    return 0;
}

struct TrainArgs {
    std::string fine, coarse, dem, out_dir, preset = "desk", resume;
    int steps = 200, patch = 64, val_every = 50, val_patches = 32;
    uint64_t seed = 0;
    double lr = 1e-4, wd = 1e-2;
};

int cmd_train(const TrainArgs& a) {
    const std::string dir = make_run_dir(a.out_dir);
    TrainScene sc = load_train_scene(a.fine, a.coarse, a.dem);
    write_norm_stats(dir + "/norm_stats.csv", sc.specs);

    DenoiserConfig cfg = preset_config(a.preset);
    Denoiser model(cfg, a.seed);
    int64_t step0 = 0;
    if (!a.resume.empty()) step0 = load_ckpt_flexible(a.resume, model);

    AdamWConfig oc;
    oc.lr = a.lr;
    oc.weight_decay = a.wd;
    AdamW opt(model.parameter_tensors(), oc);
    opt.set_step_count(step0);
    NoiseSchedule sched = build_schedule();

    // fixed seed-derived validation draws: patch corner + (k, eps) per patch
    struct ValDraw {
        TensorPtr x, cond;
        int k;
        std::vector<float> eps;
    };
    std::vector<ValDraw> val;
    {
        Rng vr(mix_seed(a.seed, 0x56414cull));
        for (int i = 0; i < a.val_patches; ++i) {
            auto [x, cond] = draw_patch(sc, a.patch, true, vr);
            ValDraw d;
            d.x = x;
            d.cond = cond;
            d.k = static_cast<int>(vr.uniform_int(0, sched.K - 1));
            d.eps.resize(x->numel());
            vr.fill_normal(d.eps);
            val.push_back(std::move(d));
        }
    }
    auto val_loss = [&](const Denoiser& m) {
        double s = 0.0;
        for (const auto& d : val) s += eval_loss(m, d.x, d.cond, sched, d.k, d.eps);
        return s / static_cast<double>(val.size());
    };

    std::ofstream lf(dir + "/loss.csv", std::ios::trunc);
    if (!lf) throw IoError("cannot write loss.csv");
    lf << "step,train_loss,val_loss\n";

    Rng trng(mix_seed(a.seed, step0 + 1));
    double best = HUGE_VAL;
    try {
        for (int64_t s = step0 + 1; s <= step0 + a.steps; ++s) {
            auto [x, cond] = draw_patch(sc, a.patch, false, trng);
            float loss = train_step(model, x, cond, sched, opt, trng);
            lf << s << ',' << loss;
            if (s % a.val_every == 0 || s == step0 + a.steps) {
                double vl = val_loss(model);
                lf << ',' << vl;
                if (vl < best) {
                    best = vl;
                    save_ckpt_with_step(dir + "/ckpt_best.ckpt", model, s);
                }
                save_ckpt_with_step(dir + "/ckpt_last.ckpt", model, s);
            }
            lf << '\n';
        }
    } catch (const DivergenceError&) {
        save_ckpt_with_step(dir + "/ckpt_last.ckpt", model, opt.step_count());
        throw;
    }
    save_ckpt_with_step(dir + "/ckpt_last.ckpt", model, step0 + a.steps);
    lf.close();

    Manifest m;
    m.add("command", "train");
    m.add("fine", a.fine);
    m.add("coarse", a.coarse);
    m.add("dem", a.dem);
    m.add("preset", a.preset);
    m.add("steps", a.steps);
    m.add("patch", a.patch);
    m.add("val-every", a.val_every);
    m.add("val-patches", a.val_patches);
    m.add("seed", a.seed);
    m.add("lr", a.lr);
    m.add("wd", a.wd);
    if (!a.resume.empty()) m.add("resume", a.resume);
    m.digest("fine", a.fine);
    m.digest("coarse", a.coarse);
    m.digest("dem", a.dem);
    m.add("best_val_loss", best);
    m.write(dir + "/manifest.txt");
    std::printf("wrote %s (best val loss %.6g)\n", dir.c_str(), best);
    return 0;
}

struct DistillArgs {
    std::string teacher, fine, coarse, dem, out_dir, preset = "desk";
    int iters = 200, skip = 20, patch = 64;
    double ema_decay = 0.95, lr = 1e-4, wd = 1e-2;
    uint64_t seed = 0;
};

int cmd_distill(const DistillArgs& a) {
    if (!fs::exists(a.teacher))
        throw ConfigError("teacher checkpoint not found: " + a.teacher);
    const std::string dir = make_run_dir(a.out_dir);
    TrainScene sc = load_train_scene(a.fine, a.coarse, a.dem);

    DenoiserConfig cfg = preset_config(a.preset);
    Denoiser teacher(cfg, a.seed);
    load_ckpt_flexible(a.teacher, teacher);
    Denoiser student = teacher.clone();

    NoiseSchedule sched = build_schedule();
    DistillConfig dc;
    dc.iters = a.iters;
    dc.skip = a.skip;
    dc.ema_decay = a.ema_decay;
    dc.seed = a.seed;
    dc.opt.lr = a.lr;
    dc.opt.weight_decay = a.wd;

    auto batch = [&](Rng& rng) { return draw_patch(sc, a.patch, false, rng); };
    std::vector<float> curve = distill_consistency(teacher, student, sched, dc, batch);

    save_ckpt_with_step(dir + "/student.ckpt", student, a.iters);
    std::ofstream lf(dir + "/loss.csv", std::ios::trunc);
    if (!lf) throw IoError("cannot write loss.csv");
    lf << "iter,loss\n";
    for (size_t i = 0; i < curve.size(); ++i) lf << i + 1 << ',' << curve[i] << '\n';
    lf.close();

    Manifest m;
    m.add("command", "distill");
    m.add("teacher", a.teacher);
    m.add("fine", a.fine);
    m.add("coarse", a.coarse);
    m.add("dem", a.dem);
    m.add("preset", a.preset);
    m.add("iters", a.iters);
    m.add("skip", a.skip);
    m.add("patch", a.patch);
    m.add("ema-decay", a.ema_decay);
    m.add("seed", a.seed);
    m.add("lr", a.lr);
    m.add("wd", a.wd);
    m.digest("teacher", a.teacher);
    m.digest("fine", a.fine);
    m.digest("coarse", a.coarse);
    m.digest("dem", a.dem);
    m.write(dir + "/manifest.txt");
    std::printf("wrote %s\n", dir.c_str());
    return 0;
}

struct InferArgs {
    std::string ckpt, coarse, dem, norm_stats, out_dir, preset = "desk";
    std::string predictor = "consistency";
    int n_steps = 25, scale = 8, t_target = 0, tile = 64, stride = 32, threads = 1;
    uint64_t seed = 0;
};

int cmd_infer(const InferArgs& a) {
    const std::string dir = make_run_dir(a.out_dir);
    GridField coarse = read_grid(a.coarse);
    GridField demg = read_grid(a.dem);
    auto specs = read_norm_stats(a.norm_stats);

    RasterGeom geom;
    geom.H = coarse.H * a.scale;
    geom.W = coarse.W * a.scale;
    geom.dlat = coarse.dlat / a.scale;
    geom.dlon = coarse.dlon / a.scale;
    geom.lat0 = coarse.lat0 - geom.dlat * (a.scale - 1) / 2.0;
    geom.lon0 = coarse.lon0 - geom.dlon * (a.scale - 1) / 2.0;
    if (demg.H != geom.H || demg.W != geom.W)
        throw AlignmentError("dem extent does not match the target grid");

    int T = a.t_target;
    if (T <= 0)
        T = static_cast<int>((static_cast<int64_t>(coarse.T - 1) * coarse.dt) / 3600) + 1;

    std::vector<float> dem(demg.data.begin(),
                           demg.data.begin() + static_cast<size_t>(demg.H) * demg.W);
    ConditioningStack cond = build_conditioning(coarse, dem, geom, T, coarse.t0,
                                                3600, specs, cell_size_m(geom));

    DenoiserConfig cfg = preset_config(a.preset);
    Denoiser model(cfg, a.seed);
    load_ckpt_flexible(a.ckpt, model);
    NoiseSchedule sched = build_schedule();
    Predictor pred;
    if (a.predictor == "consistency")
        pred = Predictor::Consistency;
    else if (a.predictor == "epsilon")
        pred = Predictor::EpsilonX0;
    else
        throw ConfigError("unknown predictor: " + a.predictor);

    TileLayout layout = plan_tiles(geom.H, geom.W, a.tile, a.stride);
    auto sampler = [&](const ConditioningStack& ct, uint64_t sd) {
        auto ctens = make_tensor({ct.C, ct.T, ct.H, ct.W}, ct.data);
        SamplerConfig scfg;
        scfg.n_steps = a.n_steps;
        scfg.seed = sd;
        scfg.predictor = pred;
        return sample(model, ctens, scfg, sched);
    };
    std::vector<float> blended =
        run_tiled(sampler, cond, layout, cfg.out_channels, a.seed);

    GridField out;
    out.variables = target_variables();
    out.T = T;
    out.H = geom.H;
    out.W = geom.W;
    out.lat0 = geom.lat0;
    out.lon0 = geom.lon0;
    out.dlat = geom.dlat;
    out.dlon = geom.dlon;
    out.t0 = coarse.t0;
    out.dt = 3600;
    out.data.resize(blended.size());
    const size_t plane = static_cast<size_t>(T) * geom.H * geom.W;
    for (int v = 0; v < out.n_var(); ++v) {
        std::span<const float> src(blended.data() + v * plane, plane);
        std::span<float> dst(out.data.data() + v * plane, plane);
        denormalize(src, find_norm_spec(specs, out.variables[v]), dst);
    }
    write_grid(out, dir + "/forecast.grd");

    Manifest m;
    m.add("command", "infer");
    m.add("ckpt", a.ckpt);
    m.add("coarse", a.coarse);
    m.add("dem", a.dem);
    m.add("norm-stats", a.norm_stats);
    m.add("preset", a.preset);
    m.add("predictor", a.predictor);
    m.add("n-steps", a.n_steps);
    m.add("scale", a.scale);
    m.add("t-target", T);
    m.add("tile", a.tile);
    m.add("stride", a.stride);
    m.add("seed", a.seed);
    m.digest("ckpt", a.ckpt);
    m.digest("coarse", a.coarse);
    m.digest("dem", a.dem);
    m.digest("norm-stats", a.norm_stats);
    m.digest("forecast", dir + "/forecast.grd");
    m.write(dir + "/manifest.txt");
    std::printf("wrote %s/forecast.grd\n", dir.c_str());
    return 0;
}

void check_aligned(const GridField& a, const GridField& b) {
    if (a.T != b.T) throw AlignmentError("time axis length differs");
    if (a.H != b.H) throw AlignmentError("row axis length differs");
    if (a.W != b.W) throw AlignmentError("column axis length differs");
    if (a.t0 != b.t0 || a.dt != b.dt)
        throw AlignmentError("time axis origin or step differs");
    if (std::abs(a.lat0 - b.lat0) > 1e-9 || std::abs(a.dlat - b.dlat) > 1e-12)
        throw AlignmentError("latitude axis differs");
    if (std::abs(a.lon0 - b.lon0) > 1e-9 || std::abs(a.dlon - b.dlon) > 1e-12)
        throw AlignmentError("longitude axis differs");
}

struct VerifyArgs {
    std::string pred, ref, out_dir, model = "model";
};

int cmd_verify(const VerifyArgs& a) {
    const std::string dir = make_run_dir(a.out_dir);
    GridField pred = read_grid(a.pred);
    GridField ref = read_grid(a.ref);
    check_aligned(pred, ref);

    const size_t hw = static_cast<size_t>(pred.H) * pred.W;
    std::vector<ReportRow> rows;
    for (int v = 0; v < pred.n_var(); ++v) {
        int rv = ref.var_index(pred.variables[v]);
        if (rv < 0) continue;
        for (int t = 0; t < pred.T; ++t) {
            ReportRow row;
            row.variable = pred.variables[v];
            row.lead_h = static_cast<double>(t) * pred.dt / 3600.0;
            row.model = a.model;
            row.scores = skill(
                std::span<const float>(pred.data.data() + pred.idx(v, t, 0, 0), hw),
                std::span<const float>(ref.data.data() + ref.idx(rv, t, 0, 0), hw));
            rows.push_back(std::move(row));
        }
    }
    if (rows.empty()) throw InputError("no shared variables between pred and ref");
    write_skill_report(dir + "/skill.csv", rows);

    Manifest m;
    m.add("command", "verify");
    m.add("pred", a.pred);
    m.add("ref", a.ref);
    m.add("model", a.model);
    m.digest("pred", a.pred);
    m.digest("ref", a.ref);
    m.write(dir + "/manifest.txt");
    std::printf("wrote %s/skill.csv\n", dir.c_str());
    return 0;
}

struct PsdArgs {
    std::string grid, var, out_dir;
    int frame = 0;
    double dx_km = 0.0;  // 0 = derive from grid spacing
    bool no_hann = false;
};

int cmd_psd(const PsdArgs& a) {
    const std::string dir = make_run_dir(a.out_dir);
    GridField g = read_grid(a.grid);
    int v = g.var_index(a.var);
    if (v < 0) throw RangeError("no such variable: " + a.var);
    if (a.frame < 0 || a.frame >= g.T) throw RangeError("frame out of range");
    double dx = a.dx_km > 0.0 ? a.dx_km : std::abs(g.dlat) * 111.0;
    const size_t hw = static_cast<size_t>(g.H) * g.W;
    RadialPSD psd = radial_psd(
        std::span<const float>(g.data.data() + g.idx(v, a.frame, 0, 0), hw), g.H,
        g.W, dx, !a.no_hann);
    write_psd_report(dir + "/psd.csv", psd);

    Manifest m;
    m.add("command", "psd");
    m.add("grid", a.grid);
    m.add("var", a.var);
    m.add("frame", a.frame);
    m.add("dx-km", dx);
    m.add("hann", a.no_hann ? 0 : 1);
    m.digest("grid", a.grid);
    m.write(dir + "/manifest.txt");
    std::printf("wrote %s/psd.csv\n", dir.c_str());
    return 0;
}

struct StationsArgs {
    std::string pred, stations, var, out_dir, model = "model";
    std::vector<double> leads;
};

int cmd_stations(const StationsArgs& a) {
    const std::string dir = make_run_dir(a.out_dir);
    GridField pred = read_grid(a.pred);
    auto obs = read_stations(a.stations);
    std::vector<double> leads = a.leads;
    if (leads.empty())
        for (int t = 0; t < pred.T; ++t)
            leads.push_back(static_cast<double>(t) * pred.dt / 3600.0);

    auto per_lead = verify_stations(pred, obs, a.var, leads);
    std::vector<ReportRow> rows;
    for (const auto& ls : per_lead) {
        if (ls.empty) continue;
        rows.push_back({a.var, ls.lead_h, a.model, ls.scores});
    }
    if (rows.empty()) throw InputError("no station observations matched any lead");
    write_skill_report(dir + "/stations.csv", rows);

    Manifest m;
    m.add("command", "stations");
    m.add("pred", a.pred);
    m.add("stations", a.stations);
    m.add("var", a.var);
    m.add("model", a.model);
    m.digest("pred", a.pred);
    m.digest("stations", a.stations);
    m.write(dir + "/manifest.txt");
    std::printf("wrote %s/stations.csv\n", dir.c_str());
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"desk-scale diffusion downscaling pipeline"};
    app.require_subcommand(1);

    GenSynthArgs ga;
    auto* gs = app.add_subcommand("gen-synth", "generate a paired synthetic scene");
    gs->set_config("--config");
    gs->add_option("--out-dir", ga.out_dir, "output directory (default runs/<ts>)");
    gs->add_option("--seed", ga.spec.seed);
    gs->add_option("--H", ga.spec.H);
    gs->add_option("--W", ga.spec.W);
    gs->add_option("--T", ga.spec.T);
    gs->add_option("--coarsen", ga.spec.coarsen);
    gs->add_option("--t-stride", ga.spec.t_stride);
    gs->add_option("--slope", ga.spec.slope);
    gs->add_option("--dem-strength", ga.spec.dem_strength);
    gs->add_option("--phase-drift", ga.spec.phase_drift);
    gs->add_option("--n-stations", ga.n_stations);
    gs->add_option("--station-noise", ga.station_noise);
    gs->add_option("--station-var", ga.station_var);

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "epsilon-prediction training");
    tr->set_config("--config");
    tr->add_option("--fine", ta.fine)->required();
    tr->add_option("--coarse", ta.coarse)->required();
    tr->add_option("--dem", ta.dem)->required();
    tr->add_option("--out-dir", ta.out_dir);
    tr->add_option("--preset", ta.preset);
    tr->add_option("--steps", ta.steps);
    tr->add_option("--patch", ta.patch);
    tr->add_option("--val-every", ta.val_every);
    tr->add_option("--val-patches", ta.val_patches);
    tr->add_option("--seed", ta.seed);
    tr->add_option("--lr", ta.lr);
    tr->add_option("--wd", ta.wd);
    tr->add_option("--resume", ta.resume);

    DistillArgs da;
    auto* di = app.add_subcommand("distill", "consistency distillation");
    di->set_config("--config");
    di->add_option("--teacher", da.teacher)->required();
    di->add_option("--fine", da.fine)->required();
    di->add_option("--coarse", da.coarse)->required();
    di->add_option("--dem", da.dem)->required();
    di->add_option("--out-dir", da.out_dir);
    di->add_option("--preset", da.preset);
    di->add_option("--iters", da.iters);
    di->add_option("--skip", da.skip);
    di->add_option("--patch", da.patch);
    di->add_option("--ema-decay", da.ema_decay);
    di->add_option("--seed", da.seed);
    di->add_option("--lr", da.lr);
    di->add_option("--wd", da.wd);

    InferArgs ia;
    auto* in = app.add_subcommand("infer", "tiled few-step sampling");
    in->set_config("--config");
    in->add_option("--ckpt", ia.ckpt)->required();
    in->add_option("--coarse", ia.coarse)->required();
    in->add_option("--dem", ia.dem)->required();
    in->add_option("--norm-stats", ia.norm_stats)->required();
    in->add_option("--out-dir", ia.out_dir);
    in->add_option("--preset", ia.preset);
    in->add_option("--predictor", ia.predictor, "epsilon | consistency");
    in->add_option("--n-steps", ia.n_steps)
        ->check(CLI::IsMember({4, 8, 25, 50}));
    in->add_option("--scale", ia.scale);
    in->add_option("--t-target", ia.t_target, "0 = hourly span of the coarse input");
    in->add_option("--tile", ia.tile);
    in->add_option("--stride", ia.stride);
    in->add_option("--threads", ia.threads, "reserved; tiles currently run serially");
    in->add_option("--seed", ia.seed);

    VerifyArgs va;
    auto* ve = app.add_subcommand("verify", "gridded skill report");
    ve->set_config("--config");
    ve->add_option("--pred", va.pred)->required();
    ve->add_option("--ref", va.ref)->required();
    ve->add_option("--out-dir", va.out_dir);
    ve->add_option("--model", va.model);

    PsdArgs pa;
    auto* ps = app.add_subcommand("psd", "radial power spectral density");
    ps->set_config("--config");
    ps->add_option("--grid", pa.grid)->required();
    ps->add_option("--var", pa.var)->required();
    ps->add_option("--frame", pa.frame);
    ps->add_option("--dx-km", pa.dx_km);
    ps->add_flag("--no-hann", pa.no_hann);
    ps->add_option("--out-dir", pa.out_dir);

    StationsArgs sa;
    auto* st = app.add_subcommand("stations", "station verification by lead");
    st->set_config("--config");
    st->add_option("--pred", sa.pred)->required();
    st->add_option("--stations", sa.stations)->required();
    st->add_option("--var", sa.var)->required();
    st->add_option("--leads", sa.leads, "lead hours (default every frame)");
    st->add_option("--out-dir", sa.out_dir);
    st->add_option("--model", sa.model);

    try {
        app.parse(argc, argv);
        if (gs->parsed()) return cmd_gen_synth(ga);
        if (tr->parsed()) return cmd_train(ta);
        if (di->parsed()) return cmd_distill(da);
        if (in->parsed()) return cmd_infer(ia);
        if (ve->parsed()) return cmd_verify(va);
        if (ps->parsed()) return cmd_psd(pa);
        if (st->parsed()) return cmd_stations(sa);
        return 1;
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    } catch (const ParamError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    }
}

}  // namespace dsr
