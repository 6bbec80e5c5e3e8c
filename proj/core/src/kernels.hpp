#pragma once

// Dense kernels behind the tape. Forward kernels write their output buffer,
// backward kernels accumulate (+=) into pre-zeroed gradient buffers. Every
// reduction runs in a fixed serial order, so results are bit-reproducible.
//
// Inner loops run over the contiguous w axis so the compiler can vectorize
// them; conv3d in particular is arranged as one axpy per (ci,kz,ky,kx) tap
// over each output row.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "voxnas/ops.hpp"
#include "voxnas/tensor.hpp"

namespace voxnas::kernels {

// ---------------------------------------------------------------------------
// conv3d, stride 1, zero "same" padding, per-axis dilation
// ---------------------------------------------------------------------------

template <typename T>
void conv3d_fwd(const Tensor5<T>& x, const Tensor5<T>& k, const Tensor5<T>& bias, Axes3 dil, Tensor5<T>& out) {
    const int64_t N = x.shape.n, Ci = x.shape.c, D = x.shape.d, H = x.shape.h, W = x.shape.w;
    const int64_t Co = k.shape.n, KD = k.shape.d, KH = k.shape.h, KW = k.shape.w;
    const int64_t cd = (KD - 1) / 2, ch = (KH - 1) / 2, cw = (KW - 1) / 2;
    const int64_t plane = D * H * W;

    if (KD == 1 && KH == 1 && KW == 1 && plane == 1) {
        // Pure channel mixing on a single voxel (the recurrent-cell shape):
        // a plain matrix-vector product, same accumulation order as below.
        for (int64_t n = 0; n < N; ++n) {
            const T* in = x.ptr() + n * Ci;
            T* o = out.ptr() + n * Co;
            for (int64_t co = 0; co < Co; ++co) {
                const T* kp = k.ptr() + co * Ci;
                T acc = bias.data[static_cast<size_t>(co)];
                for (int64_t ci = 0; ci < Ci; ++ci) acc += kp[ci] * in[ci];
                o[co] = acc;
            }
        }
        return;
    }

    for (int64_t n = 0; n < N; ++n) {
        for (int64_t co = 0; co < Co; ++co) {
            T* o = out.ptr() + (n * Co + co) * plane;
            std::fill(o, o + plane, bias.data[static_cast<size_t>(co)]);
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const T* in = x.ptr() + (n * Ci + ci) * plane;
                const T* kp = k.ptr() + ((co * Ci + ci) * KD) * KH * KW;
                for (int64_t kz = 0; kz < KD; ++kz) {
                    const int64_t dz = dil.d * (kz - cd);
                    const int64_t z0 = std::max<int64_t>(0, -dz), z1 = std::min<int64_t>(D, D - dz);
                    for (int64_t ky = 0; ky < KH; ++ky) {
                        const int64_t dy = dil.h * (ky - ch);
                        const int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min<int64_t>(H, H - dy);
                        for (int64_t kx = 0; kx < KW; ++kx) {
                            const T kv = kp[(kz * KH + ky) * KW + kx];
                            if (kv == T(0)) continue;
                            const int64_t dx = dil.w * (kx - cw);
                            const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min<int64_t>(W, W - dx);
                            const int64_t len = x1 - x0;
                            if (len <= 0 || z1 <= z0 || y1 <= y0) continue;
                            for (int64_t z = z0; z < z1; ++z) {
                                for (int64_t y = y0; y < y1; ++y) {
                                    T* orow = o + (z * H + y) * W + x0;
                                    const T* irow = in + ((z + dz) * H + (y + dy)) * W + x0 + dx;
                                    for (int64_t i = 0; i < len; ++i) orow[i] += kv * irow[i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_bwd_input(const Tensor5<T>& gout, const Tensor5<T>& k, Axes3 dil, Tensor5<T>& gin) {
    const int64_t N = gin.shape.n, Ci = gin.shape.c, D = gin.shape.d, H = gin.shape.h, W = gin.shape.w;
    const int64_t Co = k.shape.n, KD = k.shape.d, KH = k.shape.h, KW = k.shape.w;
    const int64_t cd = (KD - 1) / 2, ch = (KH - 1) / 2, cw = (KW - 1) / 2;
    const int64_t plane = D * H * W;

    if (KD == 1 && KH == 1 && KW == 1 && plane == 1) {
        for (int64_t n = 0; n < N; ++n) {
            const T* go = gout.ptr() + n * Co;
            T* gi = gin.ptr() + n * Ci;
            for (int64_t ci = 0; ci < Ci; ++ci) {
                T acc = T(0);
                for (int64_t co = 0; co < Co; ++co) acc += k.ptr()[co * Ci + ci] * go[co];
                gi[ci] += acc;
            }
        }
        return;
    }

    // out[z] reads in[z + dz], so gin[z] gathers gout[z - dz].
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
            T* gi = gin.ptr() + (n * Ci + ci) * plane;
            for (int64_t co = 0; co < Co; ++co) {
                const T* go = gout.ptr() + (n * Co + co) * plane;
                const T* kp = k.ptr() + ((co * Ci + ci) * KD) * KH * KW;
                for (int64_t kz = 0; kz < KD; ++kz) {
                    const int64_t dz = dil.d * (kz - cd);
                    const int64_t z0 = std::max<int64_t>(0, dz), z1 = std::min<int64_t>(D, D + dz);
                    for (int64_t ky = 0; ky < KH; ++ky) {
                        const int64_t dy = dil.h * (ky - ch);
                        const int64_t y0 = std::max<int64_t>(0, dy), y1 = std::min<int64_t>(H, H + dy);
                        for (int64_t kx = 0; kx < KW; ++kx) {
                            const T kv = kp[(kz * KH + ky) * KW + kx];
                            if (kv == T(0)) continue;
                            const int64_t dx = dil.w * (kx - cw);
                            const int64_t x0 = std::max<int64_t>(0, dx), x1 = std::min<int64_t>(W, W + dx);
                            const int64_t len = x1 - x0;
                            if (len <= 0 || z1 <= z0 || y1 <= y0) continue;
                            for (int64_t z = z0; z < z1; ++z) {
                                for (int64_t y = y0; y < y1; ++y) {
                                    T* grow = gi + (z * H + y) * W + x0;
                                    const T* orow = go + ((z - dz) * H + (y - dy)) * W + x0 - dx;
                                    for (int64_t i = 0; i < len; ++i) grow[i] += kv * orow[i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_bwd_kernel(const Tensor5<T>& gout, const Tensor5<T>& x, Axes3 dil, Tensor5<T>& gk) {
    const int64_t N = x.shape.n, Ci = x.shape.c, D = x.shape.d, H = x.shape.h, W = x.shape.w;
    const int64_t Co = gk.shape.n, KD = gk.shape.d, KH = gk.shape.h, KW = gk.shape.w;
    const int64_t cd = (KD - 1) / 2, ch = (KH - 1) / 2, cw = (KW - 1) / 2;
    const int64_t plane = D * H * W;

    if (KD == 1 && KH == 1 && KW == 1 && plane == 1) {
        for (int64_t co = 0; co < Co; ++co) {
            for (int64_t ci = 0; ci < Ci; ++ci) {
                T acc = T(0);
                for (int64_t n = 0; n < N; ++n) acc += gout.ptr()[n * Co + co] * x.ptr()[n * Ci + ci];
                gk.ptr()[co * Ci + ci] += acc;
            }
        }
        return;
    }

    for (int64_t co = 0; co < Co; ++co) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
            T* gkp = gk.ptr() + ((co * Ci + ci) * KD) * KH * KW;
            for (int64_t kz = 0; kz < KD; ++kz) {
                const int64_t dz = dil.d * (kz - cd);
                const int64_t z0 = std::max<int64_t>(0, -dz), z1 = std::min<int64_t>(D, D - dz);
                for (int64_t ky = 0; ky < KH; ++ky) {
                    const int64_t dy = dil.h * (ky - ch);
                    const int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min<int64_t>(H, H - dy);
                    for (int64_t kx = 0; kx < KW; ++kx) {
                        const int64_t dx = dil.w * (kx - cw);
                        const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min<int64_t>(W, W - dx);
                        const int64_t len = x1 - x0;
                        T acc = T(0);
                        if (len > 0 && z1 > z0 && y1 > y0) {
                            for (int64_t n = 0; n < N; ++n) {
                                const T* go = gout.ptr() + (n * Co + co) * plane;
                                const T* in = x.ptr() + (n * Ci + ci) * plane;
                                for (int64_t z = z0; z < z1; ++z) {
                                    for (int64_t y = y0; y < y1; ++y) {
                                        const T* orow = go + (z * H + y) * W + x0;
                                        const T* irow = in + ((z + dz) * H + (y + dy)) * W + x0 + dx;
                                        T dot = T(0);
                                        for (int64_t i = 0; i < len; ++i) dot += orow[i] * irow[i];
                                        acc += dot;
                                    }
                                }
                            }
                        }
                        gkp[(kz * KH + ky) * KW + kx] += acc;
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_bwd_bias(const Tensor5<T>& gout, Tensor5<T>& gbias) {
    const int64_t N = gout.shape.n, Co = gout.shape.c, plane = gout.shape.spatial();
    for (int64_t co = 0; co < Co; ++co) {
        T acc = T(0);
        for (int64_t n = 0; n < N; ++n) {
            const T* go = gout.ptr() + (n * Co + co) * plane;
            for (int64_t i = 0; i < plane; ++i) acc += go[i];
        }
        gbias.data[static_cast<size_t>(co)] += acc;
    }
}

// ---------------------------------------------------------------------------
// pool3d, window == stride, remainder voxels dropped (floor semantics)
// ---------------------------------------------------------------------------

template <typename T>
void pool3d_fwd(const Tensor5<T>& x, PoolKind kind, Axes3 stride, Tensor5<T>& out, std::vector<int64_t>* argmax) {
    const int64_t N = x.shape.n, C = x.shape.c, D = x.shape.d, H = x.shape.h, W = x.shape.w;
    const int64_t OD = out.shape.d, OH = out.shape.h, OW = out.shape.w;
    const T inv_vol = T(1) / static_cast<T>(stride.product());
    if (argmax) argmax->assign(static_cast<size_t>(out.numel()), -1);

    int64_t oi = 0;
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            const T* in = x.ptr() + (n * C + c) * D * H * W;
            for (int64_t oz = 0; oz < OD; ++oz) {
                for (int64_t oy = 0; oy < OH; ++oy) {
                    for (int64_t ox = 0; ox < OW; ++ox, ++oi) {
                        const int64_t z0 = oz * stride.d, y0 = oy * stride.h, x0 = ox * stride.w;
                        if (kind == PoolKind::kMax) {
                            T best = in[(z0 * H + y0) * W + x0];
                            int64_t best_idx = (z0 * H + y0) * W + x0;
                            for (int64_t dz = 0; dz < stride.d; ++dz)
                                for (int64_t dy = 0; dy < stride.h; ++dy)
                                    for (int64_t dx = 0; dx < stride.w; ++dx) {
                                        const int64_t idx = ((z0 + dz) * H + (y0 + dy)) * W + (x0 + dx);
                                        if (in[idx] > best) {
                                            best = in[idx];
                                            best_idx = idx;
                                        }
                                    }
                            out.data[static_cast<size_t>(oi)] = best;
                            if (argmax) (*argmax)[static_cast<size_t>(oi)] = (n * C + c) * D * H * W + best_idx;
                        } else {
                            T acc = T(0);
                            for (int64_t dz = 0; dz < stride.d; ++dz)
                                for (int64_t dy = 0; dy < stride.h; ++dy)
                                    for (int64_t dx = 0; dx < stride.w; ++dx)
                                        acc += in[((z0 + dz) * H + (y0 + dy)) * W + (x0 + dx)];
                            out.data[static_cast<size_t>(oi)] = acc * inv_vol;
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void pool3d_bwd(const Tensor5<T>& gout, const Shape5& in_shape, PoolKind kind, Axes3 stride,
                const std::vector<int64_t>& argmax, Tensor5<T>& gin) {
    const int64_t N = in_shape.n, C = in_shape.c, D = in_shape.d, H = in_shape.h, W = in_shape.w;
    const int64_t OD = gout.shape.d, OH = gout.shape.h, OW = gout.shape.w;
    const T inv_vol = T(1) / static_cast<T>(stride.product());

    if (kind == PoolKind::kMax) {
        for (int64_t i = 0; i < gout.numel(); ++i)
            gin.data[static_cast<size_t>(argmax[static_cast<size_t>(i)])] += gout.data[static_cast<size_t>(i)];
        return;
    }
    int64_t oi = 0;
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            T* gi = gin.ptr() + (n * C + c) * D * H * W;
            for (int64_t oz = 0; oz < OD; ++oz)
                for (int64_t oy = 0; oy < OH; ++oy)
                    for (int64_t ox = 0; ox < OW; ++ox, ++oi) {
                        const T g = gout.data[static_cast<size_t>(oi)] * inv_vol;
                        const int64_t z0 = oz * stride.d, y0 = oy * stride.h, x0 = ox * stride.w;
                        for (int64_t dz = 0; dz < stride.d; ++dz)
                            for (int64_t dy = 0; dy < stride.h; ++dy)
                                for (int64_t dx = 0; dx < stride.w; ++dx)
                                    gi[((z0 + dz) * H + (y0 + dy)) * W + (x0 + dx)] += g;
                    }
        }
    }
}

// ---------------------------------------------------------------------------
// instance normalization, statistics per (n, c) over the spatial volume
// ---------------------------------------------------------------------------

// stats holds {mean, invstd} per (n, c) pair, laid out pairwise.
template <typename T>
void instnorm_fwd(const Tensor5<T>& x, const Tensor5<T>& gamma, const Tensor5<T>& beta, T eps, Tensor5<T>& out,
                  std::vector<T>& stats) {
    const int64_t N = x.shape.n, C = x.shape.c, V = x.shape.spatial();
    stats.assign(static_cast<size_t>(2 * N * C), T(0));
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            const T* in = x.ptr() + (n * C + c) * V;
            T* o = out.ptr() + (n * C + c) * V;
            T sum = T(0);
            for (int64_t i = 0; i < V; ++i) sum += in[i];
            const T mean = sum / static_cast<T>(V);
            T var = T(0);
            for (int64_t i = 0; i < V; ++i) {
                const T dx = in[i] - mean;
                var += dx * dx;
            }
            var /= static_cast<T>(V);
            const T invstd = T(1) / std::sqrt(var + eps);
            const T g = gamma.data[static_cast<size_t>(c)], b = beta.data[static_cast<size_t>(c)];
            for (int64_t i = 0; i < V; ++i) o[i] = (in[i] - mean) * invstd * g + b;
            stats[static_cast<size_t>(2 * (n * C + c))] = mean;
            stats[static_cast<size_t>(2 * (n * C + c) + 1)] = invstd;
        }
    }
}

template <typename T>
void instnorm_bwd(const Tensor5<T>& gout, const Tensor5<T>& x, const Tensor5<T>& gamma, const std::vector<T>& stats,
                  Tensor5<T>* gx, Tensor5<T>* ggamma, Tensor5<T>* gbeta) {
    const int64_t N = x.shape.n, C = x.shape.c, V = x.shape.spatial();
    const T invV = T(1) / static_cast<T>(V);
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            const T* in = x.ptr() + (n * C + c) * V;
            const T* go = gout.ptr() + (n * C + c) * V;
            const T mean = stats[static_cast<size_t>(2 * (n * C + c))];
            const T invstd = stats[static_cast<size_t>(2 * (n * C + c) + 1)];

            T sum_g = T(0), sum_gxhat = T(0);
            for (int64_t i = 0; i < V; ++i) {
                const T xhat = (in[i] - mean) * invstd;
                sum_g += go[i];
                sum_gxhat += go[i] * xhat;
            }
            if (gbeta) gbeta->data[static_cast<size_t>(c)] += sum_g;
            if (ggamma) ggamma->data[static_cast<size_t>(c)] += sum_gxhat;
            if (gx) {
                const T g = gamma.data[static_cast<size_t>(c)];
                T* gxp = gx->ptr() + (n * C + c) * V;
                const T mg = sum_g * invV, mgx = sum_gxhat * invV;
                for (int64_t i = 0; i < V; ++i) {
                    const T xhat = (in[i] - mean) * invstd;
                    gxp[i] += g * invstd * (go[i] - mg - xhat * mgx);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise activations (subgradient at 0 from the positive side)
// ---------------------------------------------------------------------------

template <typename T>
void act_fwd(const Tensor5<T>& x, ActKind kind, Tensor5<T>& out) {
    const int64_t n = x.numel();
    const T slope = static_cast<T>(kLeakySlope), alpha = static_cast<T>(kEluAlpha);
    for (int64_t i = 0; i < n; ++i) {
        const T v = x.data[static_cast<size_t>(i)];
        T r;
        switch (kind) {
            case ActKind::kRelu: r = v >= T(0) ? v : T(0); break;
            case ActKind::kLeakyRelu: r = v >= T(0) ? v : slope * v; break;
            default: r = v >= T(0) ? v : alpha * (std::exp(v) - T(1)); break;
        }
        out.data[static_cast<size_t>(i)] = r;
    }
}

template <typename T>
void act_bwd(const Tensor5<T>& gout, const Tensor5<T>& x, const Tensor5<T>& y, ActKind kind, Tensor5<T>& gin) {
    const int64_t n = x.numel();
    const T slope = static_cast<T>(kLeakySlope), alpha = static_cast<T>(kEluAlpha);
    for (int64_t i = 0; i < n; ++i) {
        const T v = x.data[static_cast<size_t>(i)];
        T d;
        switch (kind) {
            case ActKind::kRelu: d = v >= T(0) ? T(1) : T(0); break;
            case ActKind::kLeakyRelu: d = v >= T(0) ? T(1) : slope; break;
            default: d = v >= T(0) ? T(1) : y.data[static_cast<size_t>(i)] + alpha; break;
        }
        gin.data[static_cast<size_t>(i)] += d * gout.data[static_cast<size_t>(i)];
    }
}

template <typename T>
void sigmoid_fwd(const Tensor5<T>& x, Tensor5<T>& out) {
    for (int64_t i = 0; i < x.numel(); ++i) {
        const T v = x.data[static_cast<size_t>(i)];
        out.data[static_cast<size_t>(i)] =
            v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    }
}

template <typename T>
void tanh_fwd(const Tensor5<T>& x, Tensor5<T>& out) {
    for (int64_t i = 0; i < x.numel(); ++i) out.data[static_cast<size_t>(i)] = std::tanh(x.data[static_cast<size_t>(i)]);
}

// ---------------------------------------------------------------------------
// trilinear resize, align-corners
// ---------------------------------------------------------------------------

struct AxisMap {
    std::vector<int64_t> lo, hi;
    std::vector<double> frac;
};

inline AxisMap make_axis_map(int64_t in, int64_t out) {
    AxisMap m;
    m.lo.resize(static_cast<size_t>(out));
    m.hi.resize(static_cast<size_t>(out));
    m.frac.resize(static_cast<size_t>(out));
    for (int64_t i = 0; i < out; ++i) {
        // Degenerate axes anchor at index 0: a length-1 input replicates, a
        // length-1 output samples the first corner.
        if (in == 1 || out == 1) {
            m.lo[static_cast<size_t>(i)] = 0;
            m.hi[static_cast<size_t>(i)] = 0;
            m.frac[static_cast<size_t>(i)] = 0.0;
            continue;
        }
        const double s = static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
        int64_t lo = static_cast<int64_t>(std::floor(s));
        if (lo > in - 2) lo = in - 2;
        m.lo[static_cast<size_t>(i)] = lo;
        m.hi[static_cast<size_t>(i)] = lo + 1;
        m.frac[static_cast<size_t>(i)] = s - static_cast<double>(lo);
    }
    return m;
}

template <typename T>
void resize_trilinear_fwd(const Tensor5<T>& x, Tensor5<T>& out) {
    const int64_t N = x.shape.n, C = x.shape.c;
    const int64_t D = x.shape.d, H = x.shape.h, W = x.shape.w;
    const int64_t OD = out.shape.d, OH = out.shape.h, OW = out.shape.w;
    const AxisMap md = make_axis_map(D, OD), mh = make_axis_map(H, OH), mw = make_axis_map(W, OW);

    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            const T* in = x.ptr() + (n * C + c) * D * H * W;
            T* o = out.ptr() + (n * C + c) * OD * OH * OW;
            for (int64_t z = 0; z < OD; ++z) {
                const int64_t z0 = md.lo[static_cast<size_t>(z)], z1 = md.hi[static_cast<size_t>(z)];
                const T fz = static_cast<T>(md.frac[static_cast<size_t>(z)]);
                for (int64_t y = 0; y < OH; ++y) {
                    const int64_t y0 = mh.lo[static_cast<size_t>(y)], y1 = mh.hi[static_cast<size_t>(y)];
                    const T fy = static_cast<T>(mh.frac[static_cast<size_t>(y)]);
                    for (int64_t xo = 0; xo < OW; ++xo) {
                        const int64_t x0 = mw.lo[static_cast<size_t>(xo)], x1 = mw.hi[static_cast<size_t>(xo)];
                        const T fx = static_cast<T>(mw.frac[static_cast<size_t>(xo)]);
                        const T c000 = in[(z0 * H + y0) * W + x0], c001 = in[(z0 * H + y0) * W + x1];
                        const T c010 = in[(z0 * H + y1) * W + x0], c011 = in[(z0 * H + y1) * W + x1];
                        const T c100 = in[(z1 * H + y0) * W + x0], c101 = in[(z1 * H + y0) * W + x1];
                        const T c110 = in[(z1 * H + y1) * W + x0], c111 = in[(z1 * H + y1) * W + x1];
                        const T a00 = c000 + (c001 - c000) * fx, a01 = c010 + (c011 - c010) * fx;
                        const T a10 = c100 + (c101 - c100) * fx, a11 = c110 + (c111 - c110) * fx;
                        const T b0 = a00 + (a01 - a00) * fy, b1 = a10 + (a11 - a10) * fy;
                        o[(z * OH + y) * OW + xo] = b0 + (b1 - b0) * fz;
                    }
                }
            }
        }
    }
}

template <typename T>
void resize_trilinear_bwd(const Tensor5<T>& gout, const Shape5& in_shape, Tensor5<T>& gin) {
    const int64_t N = in_shape.n, C = in_shape.c;
    const int64_t D = in_shape.d, H = in_shape.h, W = in_shape.w;
    const int64_t OD = gout.shape.d, OH = gout.shape.h, OW = gout.shape.w;
    const AxisMap md = make_axis_map(D, OD), mh = make_axis_map(H, OH), mw = make_axis_map(W, OW);

    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            T* gi = gin.ptr() + (n * C + c) * D * H * W;
            const T* go = gout.ptr() + (n * C + c) * OD * OH * OW;
            for (int64_t z = 0; z < OD; ++z) {
                const int64_t z0 = md.lo[static_cast<size_t>(z)], z1 = md.hi[static_cast<size_t>(z)];
                const T fz = static_cast<T>(md.frac[static_cast<size_t>(z)]);
                for (int64_t y = 0; y < OH; ++y) {
                    const int64_t y0 = mh.lo[static_cast<size_t>(y)], y1 = mh.hi[static_cast<size_t>(y)];
                    const T fy = static_cast<T>(mh.frac[static_cast<size_t>(y)]);
                    for (int64_t xo = 0; xo < OW; ++xo) {
                        const int64_t x0 = mw.lo[static_cast<size_t>(xo)], x1 = mw.hi[static_cast<size_t>(xo)];
                        const T fx = static_cast<T>(mw.frac[static_cast<size_t>(xo)]);
                        const T g = go[(z * OH + y) * OW + xo];
                        const T wz0 = T(1) - fz, wy0 = T(1) - fy, wx0 = T(1) - fx;
                        gi[(z0 * H + y0) * W + x0] += g * wz0 * wy0 * wx0;
                        gi[(z0 * H + y0) * W + x1] += g * wz0 * wy0 * fx;
                        gi[(z0 * H + y1) * W + x0] += g * wz0 * fy * wx0;
                        gi[(z0 * H + y1) * W + x1] += g * wz0 * fy * fx;
                        gi[(z1 * H + y0) * W + x0] += g * fz * wy0 * wx0;
                        gi[(z1 * H + y0) * W + x1] += g * fz * wy0 * fx;
                        gi[(z1 * H + y1) * W + x0] += g * fz * fy * wx0;
                        gi[(z1 * H + y1) * W + x1] += g * fz * fy * fx;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// soft dice loss, averaged over (n, c) pairs
// ---------------------------------------------------------------------------

// sums holds {sum_pg, sum_p, sum_g} per (n, c) pair.
template <typename T>
T dice_loss_fwd(const Tensor5<T>& pred, const Tensor5<T>& target, T eps, std::vector<T>& sums) {
    const int64_t N = pred.shape.n, C = pred.shape.c, V = pred.shape.spatial();
    sums.assign(static_cast<size_t>(3 * N * C), T(0));
    T loss = T(0);
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            const T* p = pred.ptr() + (n * C + c) * V;
            const T* g = target.ptr() + (n * C + c) * V;
            T spg = T(0), sp = T(0), sg = T(0);
            for (int64_t i = 0; i < V; ++i) {
                spg += p[i] * g[i];
                sp += p[i];
                sg += g[i];
            }
            sums[static_cast<size_t>(3 * (n * C + c))] = spg;
            sums[static_cast<size_t>(3 * (n * C + c) + 1)] = sp;
            sums[static_cast<size_t>(3 * (n * C + c) + 2)] = sg;
            loss += T(1) - (T(2) * spg + eps) / (sp + sg + eps);
        }
    }
    return loss / static_cast<T>(N * C);
}

template <typename T>
void dice_loss_bwd(T gloss, const Tensor5<T>& pred, const Tensor5<T>& target, T eps, const std::vector<T>& sums,
                   Tensor5<T>& gpred) {
    const int64_t N = pred.shape.n, C = pred.shape.c, V = pred.shape.spatial();
    const T scale = gloss / static_cast<T>(N * C);
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            const T spg = sums[static_cast<size_t>(3 * (n * C + c))];
            const T sp = sums[static_cast<size_t>(3 * (n * C + c) + 1)];
            const T sg = sums[static_cast<size_t>(3 * (n * C + c) + 2)];
            const T num = T(2) * spg + eps, den = sp + sg + eps;
            const T inv_den = T(1) / den, num_den2 = num * inv_den * inv_den;
            const T* g = target.ptr() + (n * C + c) * V;
            T* gp = gpred.ptr() + (n * C + c) * V;
            // d/dp_i [1 - num/den] = -(2 g_i den - num) / den^2
            for (int64_t i = 0; i < V; ++i) gp[i] += scale * (num_den2 - T(2) * g[i] * inv_den);
        }
    }
}

// ---------------------------------------------------------------------------
// categorical log-prob and entropy over the channel axis of a (1,k,1,1,1)
// logit vector; probs is the softmax cache for backward
// ---------------------------------------------------------------------------

template <typename T>
void softmax_vec(const T* logits, int64_t k, T* probs) {
    T mx = logits[0];
    for (int64_t i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
    T sum = T(0);
    for (int64_t i = 0; i < k; ++i) {
        probs[i] = std::exp(logits[i] - mx);
        sum += probs[i];
    }
    for (int64_t i = 0; i < k; ++i) probs[i] /= sum;
}

template <typename T>
T log_prob_cat_fwd(const Tensor5<T>& logits, int64_t action, std::vector<T>& probs) {
    const int64_t k = logits.shape.c;
    probs.resize(static_cast<size_t>(k));
    softmax_vec(logits.ptr(), k, probs.data());
    return std::log(probs[static_cast<size_t>(action)]);
}

template <typename T>
void log_prob_cat_bwd(T g, int64_t action, const std::vector<T>& probs, Tensor5<T>& glogits) {
    const int64_t k = glogits.shape.c;
    for (int64_t i = 0; i < k; ++i)
        glogits.data[static_cast<size_t>(i)] += g * ((i == action ? T(1) : T(0)) - probs[static_cast<size_t>(i)]);
}

template <typename T>
T entropy_cat_fwd(const Tensor5<T>& logits, std::vector<T>& probs) {
    const int64_t k = logits.shape.c;
    probs.resize(static_cast<size_t>(k));
    softmax_vec(logits.ptr(), k, probs.data());
    T h = T(0);
    for (int64_t i = 0; i < k; ++i) {
        const T p = probs[static_cast<size_t>(i)];
        if (p > T(0)) h -= p * std::log(p);
    }
    return h;
}

template <typename T>
void entropy_cat_bwd(T g, T entropy, const std::vector<T>& probs, Tensor5<T>& glogits) {
    const int64_t k = glogits.shape.c;
    for (int64_t i = 0; i < k; ++i) {
        const T p = probs[static_cast<size_t>(i)];
        const T logp = p > T(0) ? std::log(p) : T(0);
        glogits.data[static_cast<size_t>(i)] += g * (-p * (logp + entropy));
    }
}

}  // namespace voxnas::kernels
