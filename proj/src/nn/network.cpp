#include "blobsurrogate/nn/network.hpp"

#include "blobsurrogate/error.hpp"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <limits>

namespace blobsurrogate::nn {

namespace {

template <typename T>
T logistic(T x) {
    const T y = T(1) / (T(1) + std::exp(-x));
    // Keep the output strictly inside (0, 1) in finite precision.
    constexpr T lo = std::numeric_limits<T>::min();
    constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / 2;
    return std::clamp(y, lo, hi);
}

template <typename T>
T activate(T x, Activation a) {
    switch (a) {
        case Activation::Relu:
            return x > T(0) ? x : T(0);
        case Activation::Sigmoid:
            return logistic(x);
        case Activation::None:
            break;
    }
    return x;
}

// Gradient with respect to the pre-activation, from the activated output.
template <typename T>
Tensor<T> pre_activation_grad(const Tensor<T>& upstream, const Tensor<T>& output, Activation a) {
    if (upstream.shape() != output.shape()) {
        throw ShapeMismatch("upstream gradient " + shape_string(upstream.shape()) +
                            " does not match layer output " + shape_string(output.shape()));
    }
    Tensor<T> g = upstream;
    auto gd = g.data();
    auto od = output.data();
    switch (a) {
        case Activation::Relu:
            for (std::size_t i = 0; i < gd.size(); ++i) {
                if (!(od[i] > T(0))) gd[i] = T(0);
            }
            break;
        case Activation::Sigmoid:
            for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= od[i] * (T(1) - od[i]);
            break;
        case Activation::None:
            break;
    }
    return g;
}

struct ConvGeometry {
    std::ptrdiff_t n, ci, co, d, h, w, od, oh, ow, k, s, p;
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Layer<T>& layer) {
    if (layer.kind != LayerKind::Conv3d) throw ShapeMismatch("layer is not a conv layer");
    if (input.rank() != 5) {
        throw ShapeMismatch("conv3d expects [N, C, D, H, W], got " + shape_string(input.shape()));
    }
    if (input.extent(1) != layer.in_channels) {
        throw ShapeMismatch("conv3d input has " + std::to_string(input.extent(1)) +
                            " channels, layer expects " + std::to_string(layer.in_channels));
    }
    for (std::size_t a = 2; a < 5; ++a) {
        if (input.extent(a) < 1) throw ShapeMismatch("conv3d spatial dims must be >= 1");
    }
    const auto k = static_cast<std::ptrdiff_t>(layer.kernel);
    const auto s = static_cast<std::ptrdiff_t>(layer.stride);
    auto out_dim = [&](std::size_t n) { return (static_cast<std::ptrdiff_t>(n) + s - 1) / s; };
    return {static_cast<std::ptrdiff_t>(input.extent(0)),
            static_cast<std::ptrdiff_t>(layer.in_channels),
            static_cast<std::ptrdiff_t>(layer.out_channels),
            static_cast<std::ptrdiff_t>(input.extent(2)),
            static_cast<std::ptrdiff_t>(input.extent(3)),
            static_cast<std::ptrdiff_t>(input.extent(4)),
            out_dim(input.extent(2)),
            out_dim(input.extent(3)),
            out_dim(input.extent(4)),
            k,
            s,
            k / 2};
}

// Stride-1 forward: per output row, accumulate every (ci, dz, dy, dx) tap
// into contiguous x-rows so the innermost loop vectorizes.
// Stride-1 fast path. Each batch element is copied into a zero-padded
// buffer whose rows are long enough for whole vector blocks, so the inner
// loops carry no bounds checks and keep a block of output channels in
// registers.
constexpr std::ptrdiff_t kBlock = 64;
// Narrower block for the weight gradient, whose accumulators live in memory.
constexpr std::ptrdiff_t kGradBlock = 16;

struct Padded {
    std::ptrdiff_t dp, hp, wp, wround;
};

Padded padded_geometry(const ConvGeometry& g) {
    const std::ptrdiff_t wround = (g.w + kBlock - 1) / kBlock * kBlock;
    return {g.d + 2 * g.p, g.h + 2 * g.p, wround + 2 * g.p, wround};
}

template <typename T>
void pad_channels(const T* src, std::ptrdiff_t channels, const ConvGeometry& g, const Padded& pg,
                  std::vector<T>& dst) {
    dst.assign(static_cast<std::size_t>(channels * pg.dp * pg.hp * pg.wp), T(0));
    for (std::ptrdiff_t c = 0; c < channels; ++c) {
        for (std::ptrdiff_t z = 0; z < g.d; ++z) {
            for (std::ptrdiff_t y = 0; y < g.h; ++y) {
                const T* s = src + ((c * g.d + z) * g.h + y) * g.w;
                T* d = dst.data() + ((c * pg.dp + z + g.p) * pg.hp + y + g.p) * pg.wp + g.p;
                std::copy_n(s, g.w, d);
            }
        }
    }
}

template <typename T>
struct SimdVec;
template <>
struct SimdVec<float> {
    typedef float type __attribute__((vector_size(64)));
    typedef float unaligned __attribute__((vector_size(64), aligned(4)));
};
template <>
struct SimdVec<double> {
    typedef double type __attribute__((vector_size(64)));
    typedef double unaligned __attribute__((vector_size(64), aligned(8)));
};

// out[co] = act(bias[co] + sum_ci sum_taps w[co][ci][tap] * padded[ci][shifted]),
// for output channels [co0, co0 + COB).
template <typename T, int COB>
void correlate_block(const T* padded, std::ptrdiff_t cin, const T* weights, const T* bias,
                     std::ptrdiff_t co0, Activation act, const ConvGeometry& g, const Padded& pg,
                     T* out) {
    using V = typename SimdVec<T>::type;
    using VU = typename SimdVec<T>::unaligned;
    constexpr std::ptrdiff_t lanes = sizeof(V) / sizeof(T);
    constexpr std::ptrdiff_t nv = kBlock / lanes;
    const std::ptrdiff_t k3 = g.k * g.k * g.k;
    const std::ptrdiff_t plane = g.h * g.w;
    const std::ptrdiff_t vol = g.d * plane;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t z = 0; z < g.d; ++z) {
        for (std::ptrdiff_t y = 0; y < g.h; ++y) {
            for (std::ptrdiff_t xb = 0; xb < pg.wround; xb += kBlock) {
                V acc[COB][nv];
#pragma GCC unroll 4
                for (int c = 0; c < COB; ++c) {
                    const T b = bias ? bias[co0 + c] : T(0);
#pragma GCC unroll 8
                    for (std::ptrdiff_t j = 0; j < nv; ++j) acc[c][j] = V{} + b;
                }
                for (std::ptrdiff_t ci = 0; ci < cin; ++ci) {
                    const T* wci = weights + (co0 * cin + ci) * k3;
                    for (std::ptrdiff_t dz = 0; dz < g.k; ++dz) {
                        for (std::ptrdiff_t dy = 0; dy < g.k; ++dy) {
                            const T* r = padded + ((ci * pg.dp + z + dz) * pg.hp + y + dy) * pg.wp + xb;
                            const T* wt = wci + (dz * g.k + dy) * g.k;
                            for (std::ptrdiff_t dx = 0; dx < g.k; ++dx) {
                                V x[nv];
#pragma GCC unroll 8
                                for (std::ptrdiff_t j = 0; j < nv; ++j) {
                                    x[j] = *reinterpret_cast<const VU*>(r + dx + j * lanes);
                                }
#pragma GCC unroll 4
                                for (int c = 0; c < COB; ++c) {
                                    const T wv = wt[c * cin * k3 + dx];
#pragma GCC unroll 8
                                    for (std::ptrdiff_t j = 0; j < nv; ++j) acc[c][j] += wv * x[j];
                                }
                            }
                        }
                    }
                }
                const std::ptrdiff_t n = std::min(kBlock, g.w - xb);
#pragma GCC unroll 4
                for (int c = 0; c < COB; ++c) {
                    if (act == Activation::Relu) {
#pragma GCC unroll 8
                        for (std::ptrdiff_t j = 0; j < nv; ++j) acc[c][j] = acc[c][j] > T(0) ? acc[c][j] : V{};
                    }
                    T* o = out + (co0 + c) * vol + z * plane + y * g.w + xb;
                    if (n == kBlock && act != Activation::Sigmoid) {
#pragma GCC unroll 8
                        for (std::ptrdiff_t j = 0; j < nv; ++j) *reinterpret_cast<VU*>(o + j * lanes) = acc[c][j];
                        continue;
                    }
                    T lane[kBlock];
#pragma GCC unroll 8
                    for (std::ptrdiff_t j = 0; j < nv; ++j) *reinterpret_cast<VU*>(lane + j * lanes) = acc[c][j];
                    for (std::ptrdiff_t v = 0; v < n; ++v) o[v] = activate(lane[v], act);
                }
            }
        }
    }
}

template <typename T>
void correlate(const T* padded, std::ptrdiff_t cin, std::ptrdiff_t cout, const T* weights,
               const T* bias, Activation act, const ConvGeometry& g, const Padded& pg, T* out) {
    std::ptrdiff_t co = 0;
    for (; co + 4 <= cout; co += 4) correlate_block<T, 4>(padded, cin, weights, bias, co, act, g, pg, out);
    switch (cout - co) {
        case 3:
            correlate_block<T, 3>(padded, cin, weights, bias, co, act, g, pg, out);
            break;
        case 2:
            correlate_block<T, 2>(padded, cin, weights, bias, co, act, g, pg, out);
            break;
        case 1:
            correlate_block<T, 1>(padded, cin, weights, bias, co, act, g, pg, out);
            break;
        default:
            break;
    }
}

template <typename T>
void conv_forward_unit_stride(const Tensor<T>& input, const Layer<T>& layer, const ConvGeometry& g,
                              Tensor<T>& out) {
    const Padded pg = padded_geometry(g);
    const std::ptrdiff_t vol = g.d * g.h * g.w;
    std::vector<T> padded;
    for (std::ptrdiff_t n = 0; n < g.n; ++n) {
        pad_channels(input.ptr() + n * g.ci * vol, g.ci, g, pg, padded);
        correlate(padded.data(), g.ci, g.co, layer.weights.ptr(), layer.bias.ptr(), layer.activation, g,
                  pg, out.ptr() + n * g.co * vol);
    }
}

template <typename T>
void conv_backward_unit_stride(const Tensor<T>& gpre, const Tensor<T>& input, const Layer<T>& layer,
                               const ConvGeometry& g, LayerGrad<T>& grads, bool want_input) {
    const Padded pg = padded_geometry(g);
    const std::ptrdiff_t vol = g.d * g.h * g.w;
    const std::ptrdiff_t k3 = g.k * g.k * g.k;
    const std::ptrdiff_t nw = g.co * g.ci * k3;
    std::vector<T> padded;

    // Weight gradient. Each z slice accumulates vector-wide partial sums in
    // its own buffer; slices are reduced in a fixed order afterwards, so the
    // result does not depend on the thread count.
    std::vector<T> slice_sums(static_cast<std::size_t>(g.d * nw));
    T* gw = grads.weights.ptr();
    for (std::ptrdiff_t n = 0; n < g.n; ++n) {
        pad_channels(input.ptr() + n * g.ci * vol, g.ci, g, pg, padded);
        const T* gp = gpre.ptr() + n * g.co * vol;
#pragma omp parallel
        {
            std::vector<T> acc(static_cast<std::size_t>(nw * kGradBlock));
            std::vector<T> grow(static_cast<std::size_t>(g.co * kGradBlock));
#pragma omp for schedule(static)
            for (std::ptrdiff_t z = 0; z < g.d; ++z) {
                std::fill(acc.begin(), acc.end(), T(0));
                for (std::ptrdiff_t y = 0; y < g.h; ++y) {
                    for (std::ptrdiff_t xb = 0; xb < pg.wround; xb += kGradBlock) {
                        const std::ptrdiff_t m = std::min(kGradBlock, g.w - xb);
                        for (std::ptrdiff_t co = 0; co < g.co; ++co) {
                            const T* s = gp + (co * g.d + z) * g.h * g.w + y * g.w + xb;
                            T* d = grow.data() + co * kGradBlock;
                            for (std::ptrdiff_t v = 0; v < kGradBlock; ++v) d[v] = v < m ? s[v] : T(0);
                        }
                        for (std::ptrdiff_t ci = 0; ci < g.ci; ++ci) {
                            for (std::ptrdiff_t dz = 0; dz < g.k; ++dz) {
                                for (std::ptrdiff_t dy = 0; dy < g.k; ++dy) {
                                    const T* r = padded.data() +
                                                 ((ci * pg.dp + z + dz) * pg.hp + y + dy) * pg.wp + xb;
                                    for (std::ptrdiff_t dx = 0; dx < g.k; ++dx) {
                                        const T* rr = r + dx;
                                        const std::ptrdiff_t tap = (dz * g.k + dy) * g.k + dx;
                                        for (std::ptrdiff_t co = 0; co < g.co; ++co) {
                                            T* a = acc.data() + ((co * g.ci + ci) * k3 + tap) * kGradBlock;
                                            const T* gr = grow.data() + co * kGradBlock;
#pragma omp simd
                                            for (std::ptrdiff_t v = 0; v < kGradBlock; ++v) a[v] += gr[v] * rr[v];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                T* dst = slice_sums.data() + z * nw;
                for (std::ptrdiff_t i = 0; i < nw; ++i) {
                    const T* a = acc.data() + i * kGradBlock;
                    T s = T(0);
                    for (std::ptrdiff_t v = 0; v < kGradBlock; ++v) s += a[v];
                    dst[i] = s;
                }
            }
        }
        for (std::ptrdiff_t z = 0; z < g.d; ++z) {
            const T* src = slice_sums.data() + z * nw;
            for (std::ptrdiff_t i = 0; i < nw; ++i) gw[i] += src[i];
        }
    }

    if (!want_input) return;
    // Input gradient: correlation of the padded output gradient with the
    // spatially flipped, channel-transposed kernel.
    std::vector<T> flipped(static_cast<std::size_t>(nw));
    const T* w = layer.weights.ptr();
    for (std::ptrdiff_t co = 0; co < g.co; ++co) {
        for (std::ptrdiff_t ci = 0; ci < g.ci; ++ci) {
            for (std::ptrdiff_t t = 0; t < k3; ++t) {
                flipped[static_cast<std::size_t>((ci * g.co + co) * k3 + (k3 - 1 - t))] = w[(co * g.ci + ci) * k3 + t];
            }
        }
    }
    for (std::ptrdiff_t n = 0; n < g.n; ++n) {
        pad_channels(gpre.ptr() + n * g.co * vol, g.co, g, pg, padded);
        correlate(padded.data(), g.co, g.ci, flipped.data(), static_cast<const T*>(nullptr),
                  Activation::None, g, pg, grads.input.ptr() + n * g.ci * vol);
    }
}

template <typename T>
void conv_forward_general(const Tensor<T>& input, const Layer<T>& layer, const ConvGeometry& g,
                          Tensor<T>& out) {
    const T* src = input.ptr();
    const T* wts = layer.weights.ptr();
    T* dst = out.ptr();
    const std::ptrdiff_t k3 = g.k * g.k * g.k;
    const std::ptrdiff_t in_vol = g.d * g.h * g.w;
    const std::ptrdiff_t out_vol = g.od * g.oh * g.ow;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t nco = 0; nco < g.n * g.co; ++nco) {
        const std::ptrdiff_t n = nco / g.co;
        const std::ptrdiff_t co = nco % g.co;
        T* o = dst + nco * out_vol;
        for (std::ptrdiff_t oz = 0; oz < g.od; ++oz) {
            for (std::ptrdiff_t oy = 0; oy < g.oh; ++oy) {
                for (std::ptrdiff_t ox = 0; ox < g.ow; ++ox) {
                    T sum = layer.bias[static_cast<std::size_t>(co)];
                    for (std::ptrdiff_t ci = 0; ci < g.ci; ++ci) {
                        const T* chan = src + (n * g.ci + ci) * in_vol;
                        const T* wk = wts + (co * g.ci + ci) * k3;
                        for (std::ptrdiff_t dz = 0; dz < g.k; ++dz) {
                            const std::ptrdiff_t iz = oz * g.s + dz - g.p;
                            if (iz < 0 || iz >= g.d) continue;
                            for (std::ptrdiff_t dy = 0; dy < g.k; ++dy) {
                                const std::ptrdiff_t iy = oy * g.s + dy - g.p;
                                if (iy < 0 || iy >= g.h) continue;
                                for (std::ptrdiff_t dx = 0; dx < g.k; ++dx) {
                                    const std::ptrdiff_t ix = ox * g.s + dx - g.p;
                                    if (ix < 0 || ix >= g.w) continue;
                                    sum += wk[(dz * g.k + dy) * g.k + dx] *
                                           chan[(iz * g.h + iy) * g.w + ix];
                                }
                            }
                        }
                    }
                    o[(oz * g.oh + oy) * g.ow + ox] = activate(sum, layer.activation);
                }
            }
        }
    }
}

template <typename T>
void conv_backward_general(const Tensor<T>& gpre, const Tensor<T>& input, const Layer<T>& layer,
                           const ConvGeometry& g, LayerGrad<T>& grads, bool want_input) {
    const T* src = input.ptr();
    const T* gp = gpre.ptr();
    const T* wts = layer.weights.ptr();
    const std::ptrdiff_t k3 = g.k * g.k * g.k;
    const std::ptrdiff_t in_vol = g.d * g.h * g.w;
    const std::ptrdiff_t out_vol = g.od * g.oh * g.ow;

    T* gw = grads.weights.ptr();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pair = 0; pair < g.co * g.ci; ++pair) {
        const std::ptrdiff_t co = pair / g.ci;
        const std::ptrdiff_t ci = pair % g.ci;
        T* wk = gw + pair * k3;
        for (std::ptrdiff_t n = 0; n < g.n; ++n) {
            const T* gchan = gp + (n * g.co + co) * out_vol;
            const T* ichan = src + (n * g.ci + ci) * in_vol;
            for (std::ptrdiff_t oz = 0; oz < g.od; ++oz) {
                for (std::ptrdiff_t oy = 0; oy < g.oh; ++oy) {
                    for (std::ptrdiff_t ox = 0; ox < g.ow; ++ox) {
                        const T gv = gchan[(oz * g.oh + oy) * g.ow + ox];
                        if (gv == T(0)) continue;
                        for (std::ptrdiff_t dz = 0; dz < g.k; ++dz) {
                            const std::ptrdiff_t iz = oz * g.s + dz - g.p;
                            if (iz < 0 || iz >= g.d) continue;
                            for (std::ptrdiff_t dy = 0; dy < g.k; ++dy) {
                                const std::ptrdiff_t iy = oy * g.s + dy - g.p;
                                if (iy < 0 || iy >= g.h) continue;
                                for (std::ptrdiff_t dx = 0; dx < g.k; ++dx) {
                                    const std::ptrdiff_t ix = ox * g.s + dx - g.p;
                                    if (ix < 0 || ix >= g.w) continue;
                                    wk[(dz * g.k + dy) * g.k + dx] +=
                                        gv * ichan[(iz * g.h + iy) * g.w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if (!want_input) return;
    T* gi = grads.input.ptr();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t n = 0; n < g.n; ++n) {
        for (std::ptrdiff_t co = 0; co < g.co; ++co) {
            const T* gchan = gp + (n * g.co + co) * out_vol;
            for (std::ptrdiff_t oz = 0; oz < g.od; ++oz) {
                for (std::ptrdiff_t oy = 0; oy < g.oh; ++oy) {
                    for (std::ptrdiff_t ox = 0; ox < g.ow; ++ox) {
                        const T gv = gchan[(oz * g.oh + oy) * g.ow + ox];
                        if (gv == T(0)) continue;
                        for (std::ptrdiff_t ci = 0; ci < g.ci; ++ci) {
                            T* ichan = gi + (n * g.ci + ci) * in_vol;
                            const T* wk = wts + (co * g.ci + ci) * k3;
                            for (std::ptrdiff_t dz = 0; dz < g.k; ++dz) {
                                const std::ptrdiff_t iz = oz * g.s + dz - g.p;
                                if (iz < 0 || iz >= g.d) continue;
                                for (std::ptrdiff_t dy = 0; dy < g.k; ++dy) {
                                    const std::ptrdiff_t iy = oy * g.s + dy - g.p;
                                    if (iy < 0 || iy >= g.h) continue;
                                    for (std::ptrdiff_t dx = 0; dx < g.k; ++dx) {
                                        const std::ptrdiff_t ix = ox * g.s + dx - g.p;
                                        if (ix < 0 || ix >= g.w) continue;
                                        ichan[(iz * g.h + iy) * g.w + ix] +=
                                            wk[(dz * g.k + dy) * g.k + dx] * gv;
                                    }
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
LayerGrad<T> conv_backward_impl(const Tensor<T>& upstream, const Tensor<T>& input,
                                const Tensor<T>& output, const Layer<T>& layer, bool want_input) {
    const ConvGeometry g = conv_geometry(input, layer);
    const Shape out_shape = layer.output_shape(input.shape());
    if (output.shape() != out_shape) {
        throw ShapeMismatch("cached output " + shape_string(output.shape()) + " does not match " +
                            shape_string(out_shape));
    }
    const Tensor<T> gpre = pre_activation_grad(upstream, output, layer.activation);
    LayerGrad<T> grads;
    grads.weights = Tensor<T>(layer.weights.shape());
    grads.bias = Tensor<T>(layer.bias.shape());
    if (want_input) grads.input = Tensor<T>(input.shape());

    const std::ptrdiff_t out_vol = g.od * g.oh * g.ow;
    for (std::ptrdiff_t co = 0; co < g.co; ++co) {
        T s = T(0);
        for (std::ptrdiff_t n = 0; n < g.n; ++n) {
            const T* gc = gpre.ptr() + (n * g.co + co) * out_vol;
            for (std::ptrdiff_t i = 0; i < out_vol; ++i) s += gc[i];
        }
        grads.bias[static_cast<std::size_t>(co)] = s;
    }
    if (g.s == 1) {
        conv_backward_unit_stride(gpre, input, layer, g, grads, want_input);
    } else {
        conv_backward_general(gpre, input, layer, g, grads, want_input);
    }
    return grads;
}

template <typename T>
LayerGrad<T> dense_backward_impl(const Tensor<T>& upstream, const Tensor<T>& input,
                                 const Tensor<T>& output, const Layer<T>& layer, bool want_input) {
    const std::size_t n = input.extent(0);
    const std::size_t fin = layer.in_channels;
    const std::size_t fout = layer.out_channels;
    if (input.size() != n * fin) throw ShapeMismatch("dense input has the wrong feature count");
    const Tensor<T> gpre = pre_activation_grad(upstream, output, layer.activation);
    LayerGrad<T> grads;
    grads.weights = Tensor<T>(layer.weights.shape());
    grads.bias = Tensor<T>(layer.bias.shape());
    for (std::size_t o = 0; o < fout; ++o) {
        T sb = T(0);
        for (std::size_t b = 0; b < n; ++b) {
            const T gv = gpre[b * fout + o];
            sb += gv;
            const T* x = input.ptr() + b * fin;
            T* gw = grads.weights.ptr() + o * fin;
            for (std::size_t i = 0; i < fin; ++i) gw[i] += gv * x[i];
        }
        grads.bias[o] = sb;
    }
    if (want_input) {
        grads.input = Tensor<T>(input.shape());
        for (std::size_t b = 0; b < n; ++b) {
            T* gx = grads.input.ptr() + b * fin;
            for (std::size_t o = 0; o < fout; ++o) {
                const T gv = gpre[b * fout + o];
                const T* w = layer.weights.ptr() + o * fin;
                for (std::size_t i = 0; i < fin; ++i) gx[i] += w[i] * gv;
            }
        }
    }
    return grads;
}

template <typename T>
LayerGrad<T> layer_backward_impl(const Tensor<T>& upstream, const Tensor<T>& input,
                                 const Tensor<T>& output, const Layer<T>& layer, bool want_input) {
    if (layer.kind == LayerKind::Dense) {
        return dense_backward_impl(upstream, input, output, layer, want_input);
    }
    return conv_backward_impl(upstream, input, output, layer, want_input);
}

}  // namespace

template <typename T>
Layer<T> Layer<T>::conv(std::size_t in, std::size_t out, std::size_t k, Activation act,
                        std::size_t stride) {
    if (k == 0 || k % 2 == 0) throw InvalidArgument("conv kernel size must be odd");
    if (in == 0 || out == 0 || stride == 0) throw InvalidArgument("conv layer sizes must be positive");
    Layer l;
    l.kind = LayerKind::Conv3d;
    l.in_channels = in;
    l.out_channels = out;
    l.kernel = k;
    l.stride = stride;
    l.activation = act;
    l.weights = Tensor<T>({out, in, k, k, k});
    l.bias = Tensor<T>({out});
    return l;
}

template <typename T>
Layer<T> Layer<T>::dense(std::size_t in, std::size_t out, Activation act) {
    if (in == 0 || out == 0) throw InvalidArgument("dense layer sizes must be positive");
    Layer l;
    l.kind = LayerKind::Dense;
    l.in_channels = in;
    l.out_channels = out;
    l.kernel = 1;
    l.stride = 1;
    l.activation = act;
    l.weights = Tensor<T>({out, in});
    l.bias = Tensor<T>({out});
    return l;
}

template <typename T>
std::size_t Layer<T>::fan_in() const {
    return kind == LayerKind::Dense ? in_channels : in_channels * kernel * kernel * kernel;
}

template <typename T>
std::size_t Layer<T>::fan_out() const {
    return kind == LayerKind::Dense ? out_channels : out_channels * kernel * kernel * kernel;
}

template <typename T>
Shape Layer<T>::output_shape(const Shape& input) const {
    if (input.empty()) throw ShapeMismatch("empty input shape");
    if (kind == LayerKind::Dense) return {input[0], out_channels};
    if (input.size() != 5) throw ShapeMismatch("conv3d expects rank-5 input");
    auto od = [&](std::size_t n) { return (n + stride - 1) / stride; };
    return {input[0], out_channels, od(input[2]), od(input[3]), od(input[4])};
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Layer<T>& layer) {
    const ConvGeometry g = conv_geometry(input, layer);
    Tensor<T> out(layer.output_shape(input.shape()));
    if (g.s == 1) {
        conv_forward_unit_stride(input, layer, g, out);
    } else {
        conv_forward_general(input, layer, g, out);
    }
    return out;
}

template <typename T>
LayerGrad<T> conv3d_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                             const Tensor<T>& output, const Layer<T>& layer) {
    return conv_backward_impl(upstream, input, output, layer, true);
}

template <typename T>
LayerGrad<T> conv3d_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                             const Layer<T>& layer) {
    return conv_backward_impl(upstream, input, conv3d_forward(input, layer), layer, true);
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Layer<T>& layer) {
    if (layer.kind != LayerKind::Dense) throw ShapeMismatch("layer is not a dense layer");
    if (input.rank() < 1) throw ShapeMismatch("dense input needs a batch axis");
    const std::size_t n = input.extent(0);
    const std::size_t fin = layer.in_channels;
    const std::size_t fout = layer.out_channels;
    if (input.size() != n * fin) {
        throw ShapeMismatch("dense layer expects " + std::to_string(fin) + " features, input is " +
                            shape_string(input.shape()));
    }
    Tensor<T> out({n, fout});
    for (std::size_t b = 0; b < n; ++b) {
        const T* x = input.ptr() + b * fin;
        for (std::size_t o = 0; o < fout; ++o) {
            const T* w = layer.weights.ptr() + o * fin;
            T s = layer.bias[o];
            for (std::size_t i = 0; i < fin; ++i) s += w[i] * x[i];
            out[b * fout + o] = activate(s, layer.activation);
        }
    }
    return out;
}

template <typename T>
LayerGrad<T> dense_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                            const Tensor<T>& output, const Layer<T>& layer) {
    return dense_backward_impl(upstream, input, output, layer, true);
}

template <typename T>
Tensor<T> layer_forward(const Tensor<T>& input, const Layer<T>& layer) {
    return layer.kind == LayerKind::Dense ? dense_forward(input, layer) : conv3d_forward(input, layer);
}

template <typename T>
LayerGrad<T> layer_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                            const Tensor<T>& output, const Layer<T>& layer) {
    return layer_backward_impl(upstream, input, output, layer, true);
}

template <typename T>
Tensor<T> glorot_uniform_init(Shape shape, std::size_t fan_in, std::size_t fan_out,
                              std::mt19937_64& rng) {
    if (fan_in == 0 || fan_out == 0) throw InvalidArgument("Glorot fans must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& input) const {
    Tensor<T> x = input;
    for (const auto& layer : layers) x = layer_forward(x, layer);
    return x;
}

template <typename T>
T sigmoid(T x) {
    return logistic(x);
}

template <typename T>
Tensor<T> Network<T>::forward_logits(const Tensor<T>& input) const {
    if (layers.empty()) return input;
    Tensor<T> x = input;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) x = layer_forward(x, layers[i]);
    Layer<T> last = layers.back();
    last.activation = Activation::None;
    return layer_forward(x, last);
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& input, ForwardCache<T>& cache) const {
    cache.activations.clear();
    cache.activations.reserve(layers.size() + 1);
    cache.activations.push_back(input);
    for (const auto& layer : layers) {
        cache.activations.push_back(layer_forward(cache.activations.back(), layer));
    }
    return cache.activations.back();
}

template <typename T>
Gradients<T> Network<T>::backward(const ForwardCache<T>& cache, const Tensor<T>& output_grad,
                                  bool input_grad) const {
    if (cache.activations.size() != layers.size() + 1) {
        throw ShapeMismatch("forward cache does not match the network");
    }
    Gradients<T> grads;
    grads.weights.resize(layers.size());
    grads.bias.resize(layers.size());
    Tensor<T> g = output_grad;
    for (std::size_t i = layers.size(); i-- > 0;) {
        const bool want_input = i > 0 || input_grad;
        LayerGrad<T> lg = layer_backward_impl(g, cache.activations[i], cache.activations[i + 1],
                                              layers[i], want_input);
        grads.weights[i] = std::move(lg.weights);
        grads.bias[i] = std::move(lg.bias);
        g = std::move(lg.input);
    }
    if (input_grad) grads.input = std::move(g);
    return grads;
}

template <typename T>
void Network<T>::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& layer : layers) {
        layer.weights = glorot_uniform_init<T>(layer.weights.shape(), layer.fan_in(), layer.fan_out(), rng);
        layer.bias.fill(T(0));
    }
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
}

template <typename T>
bool Network<T>::operator==(const Network& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& a = layers[i];
        const auto& b = other.layers[i];
        if (a.kind != b.kind || a.in_channels != b.in_channels || a.out_channels != b.out_channels ||
            a.kernel != b.kernel || a.stride != b.stride || a.activation != b.activation ||
            !(a.weights == b.weights) || !(a.bias == b.bias)) {
            return false;
        }
    }
    return true;
}

#define BLOBSURROGATE_INSTANTIATE(T)                                                              \
    template struct Layer<T>;                                                                     \
    template class Network<T>;                                                                    \
    template Tensor<T> conv3d_forward(const Tensor<T>&, const Layer<T>&);                         \
    template LayerGrad<T> conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                          const Layer<T>&);                                       \
    template LayerGrad<T> conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Layer<T>&);   \
    template Tensor<T> dense_forward(const Tensor<T>&, const Layer<T>&);                          \
    template LayerGrad<T> dense_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                         const Layer<T>&);                                        \
    template Tensor<T> layer_forward(const Tensor<T>&, const Layer<T>&);                          \
    template LayerGrad<T> layer_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                         const Layer<T>&);                                        \
    template Tensor<T> glorot_uniform_init(Shape, std::size_t, std::size_t, std::mt19937_64&);    \
    template T sigmoid(T);

BLOBSURROGATE_INSTANTIATE(float)
BLOBSURROGATE_INSTANTIATE(double)

#undef BLOBSURROGATE_INSTANTIATE

}  // namespace blobsurrogate::nn
