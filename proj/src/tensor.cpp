#include "dsr/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "dsr/errors.hpp"

namespace dsr {

TensorPtr make_tensor(std::vector<int> shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data.assign(static_cast<size_t>(t->numel()), 0.0f);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr make_tensor(std::vector<int> shape, std::vector<float> data,
                      bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    if (static_cast<int64_t>(data.size()) != t->numel())
        throw ShapeError("make_tensor data length mismatch");
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

void init_trunc_normal(Tensor& t, int fan_in, Rng& rng) {
    double std = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
    for (auto& v : t.data) {
        double x;
        do { x = rng.normal(); } while (std::abs(x) > 2.0);
        v = static_cast<float>(x * std);
    }
}

void gemm_f32(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
              const float* a, int lda, const float* b, int ldb, float beta,
              float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

namespace {
thread_local bool g_grad_enabled = true;

TensorPtr node(std::vector<int> shape, std::vector<TensorPtr> parents) {
    auto t = make_tensor(std::move(shape));
    bool rg = false;
    if (g_grad_enabled)
        for (const auto& p : parents) rg = rg || p->requires_grad;
    t->requires_grad = rg;
    if (rg) t->parents = std::move(parents);
    return t;
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const TensorPtr& loss) {
    if (loss->numel() != 1) throw UsageError("backward requires a scalar loss");
    // Post-order over the parent DAG.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    std::vector<std::pair<Tensor*, size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [t, i] = stack.back();
        if (i < t->parents.size()) {
            Tensor* p = t->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(t);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

// ---------------------------------------------------------------- conv3d

namespace {

struct ConvDims {
    int Ci, T, H, W, Co, kT, kH, kW, To, Ho, Wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Conv3dSpec& s) {
    if (x.shape.size() != 4 || w.shape.size() != 5)
        throw ShapeError("conv3d expects x [C,T,H,W], w [Co,Ci,kT,kH,kW]");
    ConvDims d;
    d.Ci = x.shape[0]; d.T = x.shape[1]; d.H = x.shape[2]; d.W = x.shape[3];
    d.Co = w.shape[0]; d.kT = w.shape[2]; d.kH = w.shape[3]; d.kW = w.shape[4];
    if (w.shape[1] != d.Ci) throw ShapeError("conv3d channel mismatch");
    if (d.kT % 2 == 0 || d.kH % 2 == 0 || d.kW % 2 == 0)
        throw ShapeError("conv3d requires odd kernel extents");
    d.To = (d.T + 2 * s.pad_t - d.kT) / s.stride_t + 1;
    d.Ho = (d.H + 2 * s.pad_h - d.kH) / s.stride_h + 1;
    d.Wo = (d.W + 2 * s.pad_w - d.kW) / s.stride_w + 1;
    if (d.To <= 0 || d.Ho <= 0 || d.Wo <= 0)
        throw ShapeError("conv3d output extents are non-positive");
    return d;
}

// col [Ci*kT*kH*kW][To*Ho*Wo]
void im2col(const float* x, const ConvDims& d, const Conv3dSpec& s, float* col) {
    const int64_t N = static_cast<int64_t>(d.To) * d.Ho * d.Wo;
    int64_t row = 0;
    for (int c = 0; c < d.Ci; ++c)
        for (int dt = 0; dt < d.kT; ++dt)
            for (int dh = 0; dh < d.kH; ++dh)
                for (int dw = 0; dw < d.kW; ++dw, ++row) {
                    float* dst = col + row * N;
                    const float* src = x + static_cast<int64_t>(c) * d.T * d.H * d.W;
                    // unit horizontal stride rows copy as three spans
                    // (zero prefix, contiguous middle, zero suffix)
                    const bool fast_w = s.stride_w == 1;
                    const int ow_lo = fast_w ? std::clamp(s.pad_w - dw, 0, d.Wo) : 0;
                    const int ow_hi =
                        fast_w ? std::clamp(d.W + s.pad_w - dw, 0, d.Wo) : 0;
                    int64_t n = 0;
                    for (int ot = 0; ot < d.To; ++ot) {
                        int it = ot * s.stride_t - s.pad_t + dt;
                        bool t_ok = it >= 0 && it < d.T;
                        for (int oh = 0; oh < d.Ho; ++oh, n += d.Wo) {
                            int ih = oh * s.stride_h - s.pad_h + dh;
                            bool h_ok = t_ok && ih >= 0 && ih < d.H;
                            if (!h_ok) {
                                std::fill(dst + n, dst + n + d.Wo, 0.0f);
                                continue;
                            }
                            const float* line =
                                src + (static_cast<int64_t>(it) * d.H + ih) * d.W;
                            if (fast_w) {
                                std::fill(dst + n, dst + n + ow_lo, 0.0f);
                                std::copy(line + (ow_lo - s.pad_w + dw),
                                          line + (ow_hi - s.pad_w + dw),
                                          dst + n + ow_lo);
                                std::fill(dst + n + ow_hi, dst + n + d.Wo, 0.0f);
                            } else {
                                for (int ow = 0; ow < d.Wo; ++ow) {
                                    int iw = ow * s.stride_w - s.pad_w + dw;
                                    dst[n + ow] =
                                        (iw >= 0 && iw < d.W) ? line[iw] : 0.0f;
                                }
                            }
                        }
                    }
                }
}

// scatter-add of col-layout gradients back onto the input raster
void col2im_add(const float* col, const ConvDims& d, const Conv3dSpec& s, float* gx) {
    const int64_t N = static_cast<int64_t>(d.To) * d.Ho * d.Wo;
    int64_t row = 0;
    for (int c = 0; c < d.Ci; ++c)
        for (int dt = 0; dt < d.kT; ++dt)
            for (int dh = 0; dh < d.kH; ++dh)
                for (int dw = 0; dw < d.kW; ++dw, ++row) {
                    const float* src = col + row * N;
                    float* dst = gx + static_cast<int64_t>(c) * d.T * d.H * d.W;
                    const bool fast_w = s.stride_w == 1;
                    const int ow_lo = fast_w ? std::clamp(s.pad_w - dw, 0, d.Wo) : 0;
                    const int ow_hi =
                        fast_w ? std::clamp(d.W + s.pad_w - dw, 0, d.Wo) : 0;
                    int64_t n = 0;
                    for (int ot = 0; ot < d.To; ++ot) {
                        int it = ot * s.stride_t - s.pad_t + dt;
                        bool t_ok = it >= 0 && it < d.T;
                        for (int oh = 0; oh < d.Ho; ++oh, n += d.Wo) {
                            int ih = oh * s.stride_h - s.pad_h + dh;
                            if (!(t_ok && ih >= 0 && ih < d.H)) continue;
                            float* line =
                                dst + (static_cast<int64_t>(it) * d.H + ih) * d.W;
                            if (fast_w) {
                                float* out = line + (ow_lo - s.pad_w + dw);
                                for (int ow = ow_lo; ow < ow_hi; ++ow)
                                    out[ow - ow_lo] += src[n + ow];
                            } else {
                                for (int ow = 0; ow < d.Wo; ++ow) {
                                    int iw = ow * s.stride_w - s.pad_w + dw;
                                    if (iw >= 0 && iw < d.W) line[iw] += src[n + ow];
                                }
                            }
                        }
                    }
                }
}

}  // namespace

TensorPtr conv3d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b,
                 const Conv3dSpec& spec) {
    ConvDims d = conv_dims(*x, *w, spec);
    if (b->numel() != d.Co) throw ShapeError("conv3d bias length mismatch");
    const int K = d.Ci * d.kT * d.kH * d.kW;
    const int64_t N = static_cast<int64_t>(d.To) * d.Ho * d.Wo;

    auto out = node({d.Co, d.To, d.Ho, d.Wo}, {x, w, b});
    {
        std::vector<float> col(static_cast<size_t>(K) * N);
        im2col(x->data.data(), d, spec, col.data());
        gemm_f32(false, false, d.Co, static_cast<int>(N), K, 1.0f, w->data.data(), K,
                 col.data(), static_cast<int>(N), 0.0f, out->data.data(),
                 static_cast<int>(N));
    }
    for (int c = 0; c < d.Co; ++c) {
        float bias = b->data[c];
        float* o = out->data.data() + static_cast<int64_t>(c) * N;
        for (int64_t i = 0; i < N; ++i) o[i] += bias;
    }

    if (out->requires_grad) {
        TensorPtr xp = x, wp = w, bp = b;
        Conv3dSpec sp = spec;
        out->backprop = [xp, wp, bp, sp, d, K, N](Tensor& self) {
            const float* gy = self.grad.data();
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (int c = 0; c < d.Co; ++c) {
                    double acc = 0.0;
                    const float* g = gy + static_cast<int64_t>(c) * N;
                    for (int64_t i = 0; i < N; ++i) acc += g[i];
                    bp->grad[c] += static_cast<float>(acc);
                }
            }
            // col is recomputed here; keeping it from the forward pass would
            // pin ~4x the activation memory across the whole graph.
            std::vector<float> col(static_cast<size_t>(K) * N);
            im2col(xp->data.data(), d, sp, col.data());
            if (wp->requires_grad) {
                wp->ensure_grad();
                gemm_f32(false, true, d.Co, K, static_cast<int>(N), 1.0f, gy,
                         static_cast<int>(N), col.data(), static_cast<int>(N), 1.0f,
                         wp->grad.data(), K);
            }
            if (xp->requires_grad) {
                xp->ensure_grad();
                std::vector<float>& gcol = col;  // reuse the buffer
                gemm_f32(true, false, K, static_cast<int>(N), d.Co, 1.0f,
                         wp->data.data(), K, gy, static_cast<int>(N), 0.0f,
                         gcol.data(), static_cast<int>(N));
                col2im_add(gcol.data(), d, sp, xp->grad.data());
            }
        };
    }
    return out;
}

// ------------------------------------------------------------- group_norm

TensorPtr group_norm(const TensorPtr& x, int n_groups, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps) {
    const int C = x->shape[0];
    if (n_groups <= 0 || C % n_groups != 0)
        throw ConfigError("group_norm: channel count not divisible by n_groups");
    if (gamma->numel() != C || beta->numel() != C)
        throw ShapeError("group_norm affine parameter length mismatch");
    const int64_t spatial = x->numel() / C;
    const int cpg = C / n_groups;
    const int64_t group_n = cpg * spatial;

    auto out = node(x->shape, {x, gamma, beta});
    std::vector<double> mean(n_groups), istd(n_groups);
    for (int g = 0; g < n_groups; ++g) {
        const float* xd = x->data.data() + static_cast<int64_t>(g) * group_n;
        double m = 0.0;
        for (int64_t i = 0; i < group_n; ++i) m += xd[i];
        m /= static_cast<double>(group_n);
        double var = 0.0;
        for (int64_t i = 0; i < group_n; ++i) {
            double dv = xd[i] - m;
            var += dv * dv;
        }
        var /= static_cast<double>(group_n);
        mean[g] = m;
        istd[g] = 1.0 / std::sqrt(var + eps);
    }
    for (int c = 0; c < C; ++c) {
        int g = c / cpg;
        const double m = mean[g], is = istd[g];
        const double ga = gamma->data[c], be = beta->data[c];
        const float* xd = x->data.data() + static_cast<int64_t>(c) * spatial;
        float* od = out->data.data() + static_cast<int64_t>(c) * spatial;
        for (int64_t i = 0; i < spatial; ++i)
            od[i] = static_cast<float>(ga * ((xd[i] - m) * is) + be);
    }

    if (out->requires_grad) {
        TensorPtr xp = x, gp = gamma, bp = beta;
        out->backprop = [xp, gp, bp, mean, istd, C, cpg, spatial, group_n,
                         n_groups](Tensor& self) {
            const float* gy = self.grad.data();
            if (gp->requires_grad) gp->ensure_grad();
            if (bp->requires_grad) bp->ensure_grad();
            for (int c = 0; c < C; ++c) {
                int g = c / cpg;
                const double m = mean[g], is = istd[g];
                const float* xd = xp->data.data() + static_cast<int64_t>(c) * spatial;
                const float* gyd = gy + static_cast<int64_t>(c) * spatial;
                double dg = 0.0, db = 0.0;
                for (int64_t i = 0; i < spatial; ++i) {
                    dg += gyd[i] * (xd[i] - m) * is;
                    db += gyd[i];
                }
                if (gp->requires_grad) gp->grad[c] += static_cast<float>(dg);
                if (bp->requires_grad) bp->grad[c] += static_cast<float>(db);
            }
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            for (int g = 0; g < n_groups; ++g) {
                const double m = mean[g], is = istd[g];
                // means of gamma-scaled upstream grad and its xhat projection
                double s1 = 0.0, s2 = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                    int c = g * cpg + cc;
                    const double ga = gp->data[c];
                    const float* xd =
                        xp->data.data() + static_cast<int64_t>(c) * spatial;
                    const float* gyd =
                        self.grad.data() + static_cast<int64_t>(c) * spatial;
                    for (int64_t i = 0; i < spatial; ++i) {
                        double dyp = ga * gyd[i];
                        s1 += dyp;
                        s2 += dyp * (xd[i] - m) * is;
                    }
                }
                s1 /= static_cast<double>(group_n);
                s2 /= static_cast<double>(group_n);
                for (int cc = 0; cc < cpg; ++cc) {
                    int c = g * cpg + cc;
                    const double ga = gp->data[c];
                    const float* xd =
                        xp->data.data() + static_cast<int64_t>(c) * spatial;
                    const float* gyd =
                        self.grad.data() + static_cast<int64_t>(c) * spatial;
                    float* gxd = xp->grad.data() + static_cast<int64_t>(c) * spatial;
                    for (int64_t i = 0; i < spatial; ++i) {
                        double xhat = (xd[i] - m) * is;
                        gxd[i] += static_cast<float>(
                            is * (ga * gyd[i] - s1 - xhat * s2));
                    }
                }
            }
        };
    }
    return out;
}

// -------------------------------------------------------------- attention

TensorPtr attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v) {
    if (q->shape.size() != 3 || k->shape.size() != 3 || v->shape.size() != 3)
        throw ShapeError("attention expects [heads,tokens,dim]");
    const int h = q->shape[0], tq = q->shape[1], d = q->shape[2];
    const int tk = k->shape[1];
    if (k->shape[0] != h || v->shape[0] != h || k->shape[2] != d ||
        v->shape[1] != tk || v->shape[2] != d)
        throw ShapeError("attention head/dim mismatch between q, k, v");

    auto out = node({h, tq, d}, {q, k, v});
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    auto probs = std::make_shared<std::vector<float>>(
        static_cast<size_t>(h) * tq * tk);
    for (int hd = 0; hd < h; ++hd) {
        const float* qd = q->data.data() + static_cast<int64_t>(hd) * tq * d;
        const float* kd = k->data.data() + static_cast<int64_t>(hd) * tk * d;
        const float* vd = v->data.data() + static_cast<int64_t>(hd) * tk * d;
        float* p = probs->data() + static_cast<int64_t>(hd) * tq * tk;
        gemm_f32(false, true, tq, tk, d, static_cast<float>(scale), qd, d, kd, d,
                 0.0f, p, tk);
        for (int i = 0; i < tq; ++i) {
            float* row = p + static_cast<int64_t>(i) * tk;
            float mx = row[0];
            for (int j = 1; j < tk; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (int j = 0; j < tk; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            float inv = static_cast<float>(1.0 / sum);
            for (int j = 0; j < tk; ++j) row[j] *= inv;
        }
        gemm_f32(false, false, tq, d, tk, 1.0f, p, tk, vd, d, 0.0f,
                 out->data.data() + static_cast<int64_t>(hd) * tq * d, d);
    }

    if (out->requires_grad) {
        TensorPtr qp = q, kp = k, vp = v;
        out->backprop = [qp, kp, vp, probs, h, tq, tk, d, scale](Tensor& self) {
            if (qp->requires_grad) qp->ensure_grad();
            if (kp->requires_grad) kp->ensure_grad();
            if (vp->requires_grad) vp->ensure_grad();
            std::vector<float> dp(static_cast<size_t>(tq) * tk);
            std::vector<float> ds(static_cast<size_t>(tq) * tk);
            for (int hd = 0; hd < h; ++hd) {
                const float* p = probs->data() + static_cast<int64_t>(hd) * tq * tk;
                const float* go = self.grad.data() + static_cast<int64_t>(hd) * tq * d;
                const float* qd = qp->data.data() + static_cast<int64_t>(hd) * tq * d;
                const float* kd = kp->data.data() + static_cast<int64_t>(hd) * tk * d;
                const float* vd = vp->data.data() + static_cast<int64_t>(hd) * tk * d;
                if (vp->requires_grad)
                    gemm_f32(true, false, tk, d, tq, 1.0f, p, tk, go, d, 1.0f,
                             vp->grad.data() + static_cast<int64_t>(hd) * tk * d, d);
                // dS = P o (dP - rowsum(dP o P))
                gemm_f32(false, true, tq, tk, d, 1.0f, go, d, vd, d, 0.0f, dp.data(),
                         tk);
                for (int i = 0; i < tq; ++i) {
                    const float* pr = p + static_cast<int64_t>(i) * tk;
                    const float* dpr = dp.data() + static_cast<int64_t>(i) * tk;
                    double dot = 0.0;
                    for (int j = 0; j < tk; ++j) dot += dpr[j] * pr[j];
                    float* dsr = ds.data() + static_cast<int64_t>(i) * tk;
                    for (int j = 0; j < tk; ++j)
                        dsr[j] = pr[j] * static_cast<float>(dpr[j] - dot);
                }
                if (qp->requires_grad)
                    gemm_f32(false, false, tq, d, tk, static_cast<float>(scale),
                             ds.data(), tk, kd, d, 1.0f,
                             qp->grad.data() + static_cast<int64_t>(hd) * tq * d, d);
                if (kp->requires_grad)
                    gemm_f32(true, false, tk, d, tq, static_cast<float>(scale),
                             ds.data(), tk, qd, d, 1.0f,
                             kp->grad.data() + static_cast<int64_t>(hd) * tk * d, d);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------- element-wise

TensorPtr silu(const TensorPtr& x) {
    auto out = node(x->shape, {x});
    const int64_t n = x->numel();
    for (int64_t i = 0; i < n; ++i) {
        double v = x->data[i];
        out->data[i] = static_cast<float>(v / (1.0 + std::exp(-v)));
    }
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, n](Tensor& self) {
            xp->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                double v = xp->data[i];
                double s = 1.0 / (1.0 + std::exp(-v));
                xp->grad[i] += self.grad[i] * static_cast<float>(s * (1.0 + v * (1.0 - s)));
            }
        };
    }
    return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw ShapeError("add shape mismatch");
    auto out = node(a->shape, {a, b});
    const int64_t n = a->numel();
    for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
    if (out->requires_grad) {
        TensorPtr ap = a, bp = b;
        out->backprop = [ap, bp, n](Tensor& self) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (int64_t i = 0; i < n; ++i) ap->grad[i] += self.grad[i];
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (int64_t i = 0; i < n; ++i) bp->grad[i] += self.grad[i];
            }
        };
    }
    return out;
}

TensorPtr scale(const TensorPtr& x, double s) {
    auto out = node(x->shape, {x});
    const int64_t n = x->numel();
    for (int64_t i = 0; i < n; ++i)
        out->data[i] = static_cast<float>(x->data[i] * s);
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, s, n](Tensor& self) {
            xp->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                xp->grad[i] += static_cast<float>(self.grad[i] * s);
        };
    }
    return out;
}

TensorPtr concat_ch(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != b->shape.size())
        throw ShapeError("concat_ch rank mismatch");
    for (size_t i = 1; i < a->shape.size(); ++i)
        if (a->shape[i] != b->shape[i]) throw ShapeError("concat_ch trailing extent mismatch");
    std::vector<int> shape = a->shape;
    shape[0] += b->shape[0];
    auto out = node(shape, {a, b});
    std::copy(a->data.begin(), a->data.end(), out->data.begin());
    std::copy(b->data.begin(), b->data.end(), out->data.begin() + a->numel());
    if (out->requires_grad) {
        TensorPtr ap = a, bp = b;
        const int64_t na = a->numel(), nb = b->numel();
        out->backprop = [ap, bp, na, nb](Tensor& self) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (int64_t i = 0; i < na; ++i) ap->grad[i] += self.grad[i];
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (int64_t i = 0; i < nb; ++i) bp->grad[i] += self.grad[na + i];
            }
        };
    }
    return out;
}

TensorPtr add_channel_bias(const TensorPtr& x, const TensorPtr& bias) {
    const int C = x->shape[0];
    if (bias->numel() != C) throw ShapeError("add_channel_bias length mismatch");
    auto out = node(x->shape, {x, bias});
    const int64_t spatial = x->numel() / C;
    for (int c = 0; c < C; ++c) {
        const float b = bias->data[c];
        const float* xd = x->data.data() + static_cast<int64_t>(c) * spatial;
        float* od = out->data.data() + static_cast<int64_t>(c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) od[i] = xd[i] + b;
    }
    if (out->requires_grad) {
        TensorPtr xp = x, bp = bias;
        out->backprop = [xp, bp, C, spatial](Tensor& self) {
            if (xp->requires_grad) {
                xp->ensure_grad();
                const int64_t n = xp->numel();
                for (int64_t i = 0; i < n; ++i) xp->grad[i] += self.grad[i];
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (int c = 0; c < C; ++c) {
                    double acc = 0.0;
                    const float* g = self.grad.data() + static_cast<int64_t>(c) * spatial;
                    for (int64_t i = 0; i < spatial; ++i) acc += g[i];
                    bp->grad[c] += static_cast<float>(acc);
                }
            }
        };
    }
    return out;
}

TensorPtr reshape(const TensorPtr& x, std::vector<int> shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    if (n != x->numel()) throw ShapeError("reshape numel mismatch");
    auto out = node(std::move(shape), {x});
    out->data = x->data;
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, n](Tensor& self) {
            xp->ensure_grad();
            for (int64_t i = 0; i < n; ++i) xp->grad[i] += self.grad[i];
        };
    }
    return out;
}

// --------------------------------------------------------------- linear

TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    if (x->shape.size() != 2 || w->shape.size() != 2)
        throw ShapeError("linear expects x [n,in], w [out,in]");
    const int n = x->shape[0], in = x->shape[1], out_f = w->shape[0];
    if (w->shape[1] != in) throw ShapeError("linear in-feature mismatch");
    if (b->numel() != out_f) throw ShapeError("linear bias length mismatch");
    auto out = node({n, out_f}, {x, w, b});
    gemm_f32(false, true, n, out_f, in, 1.0f, x->data.data(), in, w->data.data(), in,
             0.0f, out->data.data(), out_f);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_f; ++j) out->data[static_cast<int64_t>(i) * out_f + j] += b->data[j];
    if (out->requires_grad) {
        TensorPtr xp = x, wp = w, bp = b;
        out->backprop = [xp, wp, bp, n, in, out_f](Tensor& self) {
            const float* gy = self.grad.data();
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (int j = 0; j < out_f; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) acc += gy[static_cast<int64_t>(i) * out_f + j];
                    bp->grad[j] += static_cast<float>(acc);
                }
            }
            if (wp->requires_grad) {
                wp->ensure_grad();
                gemm_f32(true, false, out_f, in, n, 1.0f, gy, out_f, xp->data.data(),
                         in, 1.0f, wp->grad.data(), in);
            }
            if (xp->requires_grad) {
                xp->ensure_grad();
                gemm_f32(false, false, n, in, out_f, 1.0f, gy, out_f, wp->data.data(),
                         in, 1.0f, xp->grad.data(), in);
            }
        };
    }
    return out;
}

// ------------------------------------------------------------ resampling

TensorPtr upsample2x_hw(const TensorPtr& x) {
    if (x->shape.size() != 4) throw ShapeError("upsample2x_hw expects [C,T,H,W]");
    const int C = x->shape[0], T = x->shape[1], H = x->shape[2], W = x->shape[3];
    auto out = node({C, T, 2 * H, 2 * W}, {x});
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            for (int i = 0; i < H; ++i) {
                const float* src =
                    x->data.data() +
                    ((static_cast<int64_t>(c) * T + t) * H + i) * W;
                for (int r = 0; r < 2; ++r) {
                    float* dst = out->data.data() +
                                 ((static_cast<int64_t>(c) * T + t) * 2 * H + 2 * i + r) *
                                     (2 * W);
                    for (int j = 0; j < W; ++j) {
                        dst[2 * j] = src[j];
                        dst[2 * j + 1] = src[j];
                    }
                }
            }
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, C, T, H, W](Tensor& self) {
            xp->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < T; ++t)
                    for (int i = 0; i < H; ++i) {
                        float* gx = xp->grad.data() +
                                    ((static_cast<int64_t>(c) * T + t) * H + i) * W;
                        for (int r = 0; r < 2; ++r) {
                            const float* gy =
                                self.grad.data() +
                                ((static_cast<int64_t>(c) * T + t) * 2 * H + 2 * i + r) *
                                    (2 * W);
                            for (int j = 0; j < W; ++j)
                                gx[j] += gy[2 * j] + gy[2 * j + 1];
                        }
                    }
        };
    }
    return out;
}

TensorPtr avg_pool_hw(const TensorPtr& x, int oh, int ow) {
    if (x->shape.size() != 4) throw ShapeError("avg_pool_hw expects [C,T,H,W]");
    const int C = x->shape[0], T = x->shape[1], H = x->shape[2], W = x->shape[3];
    if (oh > H || ow > W) throw ShapeError("avg_pool_hw output larger than input");
    auto out = node({C, T, oh, ow}, {x});
    auto lo = [](int b, int n, int o) { return b * n / o; };
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            for (int bi = 0; bi < oh; ++bi) {
                int i0 = lo(bi, H, oh), i1 = lo(bi + 1, H, oh);
                for (int bj = 0; bj < ow; ++bj) {
                    int j0 = lo(bj, W, ow), j1 = lo(bj + 1, W, ow);
                    double acc = 0.0;
                    for (int i = i0; i < i1; ++i)
                        for (int j = j0; j < j1; ++j)
                            acc += x->data[((static_cast<int64_t>(c) * T + t) * H + i) * W + j];
                    out->data[((static_cast<int64_t>(c) * T + t) * oh + bi) * ow + bj] =
                        static_cast<float>(acc / ((i1 - i0) * (j1 - j0)));
                }
            }
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, C, T, H, W, oh, ow, lo](Tensor& self) {
            xp->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < T; ++t)
                    for (int bi = 0; bi < oh; ++bi) {
                        int i0 = lo(bi, H, oh), i1 = lo(bi + 1, H, oh);
                        for (int bj = 0; bj < ow; ++bj) {
                            int j0 = lo(bj, W, ow), j1 = lo(bj + 1, W, ow);
                            float g = self.grad[((static_cast<int64_t>(c) * T + t) * oh +
                                                 bi) * ow + bj] /
                                      static_cast<float>((i1 - i0) * (j1 - j0));
                            for (int i = i0; i < i1; ++i)
                                for (int j = j0; j < j1; ++j)
                                    xp->grad[((static_cast<int64_t>(c) * T + t) * H + i) *
                                                 W + j] += g;
                        }
                    }
        };
    }
    return out;
}

TensorPtr mean_axis0_3d(const TensorPtr& x) {
    if (x->shape.size() != 3) throw ShapeError("mean_axis0_3d expects rank 3");
    const int A = x->shape[0], B = x->shape[1], C = x->shape[2];
    auto out = node({B, C}, {x});
    const int64_t bc = static_cast<int64_t>(B) * C;
    for (int64_t i = 0; i < bc; ++i) {
        double acc = 0.0;
        for (int a = 0; a < A; ++a) acc += x->data[a * bc + i];
        out->data[i] = static_cast<float>(acc / A);
    }
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, A, bc](Tensor& self) {
            xp->ensure_grad();
            for (int64_t i = 0; i < bc; ++i) {
                float g = self.grad[i] / static_cast<float>(A);
                for (int a = 0; a < A; ++a) xp->grad[a * bc + i] += g;
            }
        };
    }
    return out;
}

TensorPtr mean_time(const TensorPtr& x) {
    if (x->shape.size() != 4) throw ShapeError("mean_time expects [C,T,H,W]");
    const int C = x->shape[0], T = x->shape[1];
    const int64_t hw = static_cast<int64_t>(x->shape[2]) * x->shape[3];
    auto out = node({C, 1, x->shape[2], x->shape[3]}, {x});
    for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < hw; ++i) {
            double acc = 0.0;
            for (int t = 0; t < T; ++t)
                acc += x->data[(static_cast<int64_t>(c) * T + t) * hw + i];
            out->data[c * hw + i] = static_cast<float>(acc / T);
        }
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, C, T, hw](Tensor& self) {
            xp->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int64_t i = 0; i < hw; ++i) {
                    float g = self.grad[c * hw + i] / static_cast<float>(T);
                    for (int t = 0; t < T; ++t)
                        xp->grad[(static_cast<int64_t>(c) * T + t) * hw + i] += g;
                }
        };
    }
    return out;
}

TensorPtr split_heads(const TensorPtr& x, int heads) {
    if (x->shape.size() != 2) throw ShapeError("split_heads expects [C,N]");
    const int C = x->shape[0], N = x->shape[1];
    if (heads <= 0 || C % heads != 0)
        throw ConfigError("split_heads: C not divisible by heads");
    const int d = C / heads;
    auto out = node({heads, N, d}, {x});
    for (int h = 0; h < heads; ++h)
        for (int n = 0; n < N; ++n)
            for (int i = 0; i < d; ++i)
                out->data[(static_cast<int64_t>(h) * N + n) * d + i] =
                    x->data[static_cast<int64_t>(h * d + i) * N + n];
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, heads, N, d](Tensor& self) {
            xp->ensure_grad();
            for (int h = 0; h < heads; ++h)
                for (int n = 0; n < N; ++n)
                    for (int i = 0; i < d; ++i)
                        xp->grad[static_cast<int64_t>(h * d + i) * N + n] +=
                            self.grad[(static_cast<int64_t>(h) * N + n) * d + i];
        };
    }
    return out;
}

TensorPtr merge_heads(const TensorPtr& x) {
    if (x->shape.size() != 3) throw ShapeError("merge_heads expects [heads,N,d]");
    const int heads = x->shape[0], N = x->shape[1], d = x->shape[2];
    auto out = node({heads * d, N}, {x});
    for (int h = 0; h < heads; ++h)
        for (int n = 0; n < N; ++n)
            for (int i = 0; i < d; ++i)
                out->data[static_cast<int64_t>(h * d + i) * N + n] =
                    x->data[(static_cast<int64_t>(h) * N + n) * d + i];
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp, heads, N, d](Tensor& self) {
            xp->ensure_grad();
            for (int h = 0; h < heads; ++h)
                for (int n = 0; n < N; ++n)
                    for (int i = 0; i < d; ++i)
                        xp->grad[(static_cast<int64_t>(h) * N + n) * d + i] +=
                            self.grad[static_cast<int64_t>(h * d + i) * N + n];
        };
    }
    return out;
}

// ------------------------------------------------------------- reductions

TensorPtr sum(const TensorPtr& x) {
    auto out = node({1}, {x});
    double acc = 0.0;
    for (float v : x->data) acc += v;
    out->data[0] = static_cast<float>(acc);
    if (out->requires_grad) {
        TensorPtr xp = x;
        out->backprop = [xp](Tensor& self) {
            xp->ensure_grad();
            const float g = self.grad[0];
            for (auto& gv : xp->grad) gv += g;
        };
    }
    return out;
}

TensorPtr mse(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw ShapeError("mse shape mismatch");
    auto out = node({1}, {a, b});
    const int64_t n = a->numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(a->data[i]) - b->data[i];
        acc += d * d;
    }
    out->data[0] = static_cast<float>(acc / static_cast<double>(n));
    if (out->requires_grad) {
        TensorPtr ap = a, bp = b;
        out->backprop = [ap, bp, n](Tensor& self) {
            const double g = 2.0 * self.grad[0] / static_cast<double>(n);
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    ap->grad[i] += static_cast<float>(g * (ap->data[i] - bp->data[i]));
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    bp->grad[i] -= static_cast<float>(g * (ap->data[i] - bp->data[i]));
            }
        };
    }
    return out;
}

std::vector<float> timestep_embedding(int k, int dim) {
    if (dim <= 0 || dim % 2 != 0)
        throw ConfigError("timestep_embedding requires even dim");
    const int half = dim / 2;
    std::vector<float> out(dim);
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * i / half);
        out[2 * i] = static_cast<float>(std::sin(k * freq));
        out[2 * i + 1] = static_cast<float>(std::cos(k * freq));
    }
    return out;
}

}  // namespace dsr
