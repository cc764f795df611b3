#pragma once

// Forward and backward kernels for the layer vocabulary. All kernels take
// NHWC activations. Every output element is reduced by one worker in a fixed
// loop order, so results are independent of the thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "attendseg/error.hpp"
#include "attendseg/parallel.hpp"
#include "attendseg/tensor.hpp"

namespace attendseg {

enum class Padding { same, valid };

struct ConvParams {
    std::size_t kernel = 1;
    std::size_t stride = 1;
    Padding padding = Padding::same;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t groups = 1;  ///< 1 or in_channels (depthwise)

    bool depthwise() const noexcept { return groups != 1; }
};

template <typename T>
struct OpGrad {
    BasicTensor<T> grad_input;
    std::map<std::string, BasicTensor<T>> grad_params;
};

/// Output extent along one spatial axis. Same padding gives ceil(in/s);
/// valid padding gives floor((in-k)/s)+1 and requires in >= k.
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding pad) {
    if (kernel == 0 || stride == 0) throw ShapeError("kernel and stride must be >= 1");
    if (pad == Padding::same) return (in + stride - 1) / stride;
    if (in < kernel) {
        throw ShapeError("valid padding with kernel " + std::to_string(kernel) + " on extent " + std::to_string(in) +
                         " produces an empty output");
    }
    return (in - kernel) / stride + 1;
}

/// Zero-fill rows/cols inserted before the input. Same padding splits the
/// total as floor(total/2) before, the rest after.
inline std::size_t conv_pad_before(std::size_t in, std::size_t kernel, std::size_t stride, Padding pad) {
    if (pad == Padding::valid) return 0;
    const std::size_t out = conv_out_extent(in, kernel, stride, pad);
    const std::size_t span = (out - 1) * stride + kernel;
    return span > in ? (span - in) / 2 : 0;
}

namespace detail {

struct ConvGeometry {
    std::size_t n, h, w, cin, oh, ow, cout, k, s, pad_h, pad_w;
};

template <typename T>
ConvGeometry check_conv(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                        const ConvParams& p, bool depthwise) {
    if (x.shape().rank() != 4) throw ShapeError("conv: input must be NHWC, got " + x.shape().str());
    const std::size_t cin = x.dim(3);
    if (cin != p.in_channels) {
        throw ShapeError("conv: input has " + std::to_string(cin) + " channels, params expect " +
                         std::to_string(p.in_channels));
    }
    const Shape expect_w = depthwise ? Shape{p.kernel, p.kernel, cin, 1}
                                     : Shape{p.kernel, p.kernel, cin, p.out_channels};
    if (w.shape() != expect_w) {
        throw ShapeError("conv: weight shape " + w.shape().str() + " != expected " + expect_w.str());
    }
    const std::size_t cout = depthwise ? cin : p.out_channels;
    if (b.shape() != Shape{cout}) {
        throw ShapeError("conv: bias shape " + b.shape().str() + " != [" + std::to_string(cout) + "]");
    }
    ConvGeometry g{};
    g.n = x.dim(0);
    g.h = x.dim(1);
    g.w = x.dim(2);
    g.cin = cin;
    g.cout = cout;
    g.k = p.kernel;
    g.s = p.stride;
    g.oh = conv_out_extent(g.h, g.k, g.s, p.padding);
    g.ow = conv_out_extent(g.w, g.k, g.s, p.padding);
    g.pad_h = conv_pad_before(g.h, g.k, g.s, p.padding);
    g.pad_w = conv_pad_before(g.w, g.k, g.s, p.padding);
    return g;
}

template <typename T>
void check_grad_shape(const BasicTensor<T>& grad_out, const Shape& expect, const char* op) {
    if (grad_out.shape() != expect) {
        throw ShapeError(std::string(op) + ": grad_out shape " + grad_out.shape().str() + " != forward output " +
                         expect.str());
    }
}

// Input index iy feeding output oy through kernel tap ky, or -1 if padded.
inline std::ptrdiff_t tap(std::size_t o, std::size_t kk, std::size_t s, std::size_t pad, std::size_t extent) {
    const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(o * s + kk) - static_cast<std::ptrdiff_t>(pad);
    return (i < 0 || i >= static_cast<std::ptrdiff_t>(extent)) ? -1 : i;
}

template <typename T>
BasicTensor<T> depthwise_fwd_impl(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                                  const ConvGeometry& g) {
    BasicTensor<T> out(Shape{g.n, g.oh, g.ow, g.cout});
    const T* px = x.ptr();
    const T* pw = w.ptr();
    T* po = out.ptr();
    parallel_for(g.n * g.oh, g.ow * g.k * g.k * g.cin, [&](std::size_t r0, std::size_t r1) {
        std::vector<T> acc(g.cin);
        for (std::size_t r = r0; r < r1; ++r) {
            const std::size_t n = r / g.oh, oy = r % g.oh;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                std::fill(acc.begin(), acc.end(), T(0));
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const auto iy = tap(oy, ky, g.s, g.pad_h, g.h);
                    if (iy < 0) continue;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const auto ix = tap(ox, kx, g.s, g.pad_w, g.w);
                        if (ix < 0) continue;
                        const T* xr = px + ((n * g.h + iy) * g.w + ix) * g.cin;
                        const T* wr = pw + (ky * g.k + kx) * g.cin;
                        for (std::size_t c = 0; c < g.cin; ++c) acc[c] += xr[c] * wr[c];
                    }
                }
                T* orow = po + ((n * g.oh + oy) * g.ow + ox) * g.cout;
                for (std::size_t c = 0; c < g.cin; ++c) orow[c] = acc[c] + b[c];
            }
        }
    });
    return out;
}

}  // namespace detail

/// Dense 2-D convolution. w is [k,k,Cin,Cout]; each output element is
/// sum over (ky, kx, ci) of x*w, padded taps skipped, then + bias.
/// groups == in_channels dispatches to the depthwise kernel.
template <typename T>
BasicTensor<T> conv2d_fwd(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                          const ConvParams& p) {
    if (p.groups != 1) {
        if (p.groups != p.in_channels || p.out_channels != p.in_channels) {
            throw ShapeError("conv: groups must be 1 or in_channels (depthwise multiplier 1)");
        }
        const auto g = detail::check_conv(x, w, b, p, true);
        return detail::depthwise_fwd_impl(x, w, b, g);
    }
    const auto g = detail::check_conv(x, w, b, p, false);
    BasicTensor<T> out(Shape{g.n, g.oh, g.ow, g.cout});
    const T* px = x.ptr();
    const T* pw = w.ptr();
    T* po = out.ptr();
    parallel_for(g.n * g.oh, g.ow * g.k * g.k * g.cin * g.cout, [&](std::size_t r0, std::size_t r1) {
        std::vector<T> acc(g.cout);
        for (std::size_t r = r0; r < r1; ++r) {
            const std::size_t n = r / g.oh, oy = r % g.oh;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                std::fill(acc.begin(), acc.end(), T(0));
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const auto iy = detail::tap(oy, ky, g.s, g.pad_h, g.h);
                    if (iy < 0) continue;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const auto ix = detail::tap(ox, kx, g.s, g.pad_w, g.w);
                        if (ix < 0) continue;
                        const T* xr = px + ((n * g.h + iy) * g.w + ix) * g.cin;
                        const T* wk = pw + (ky * g.k + kx) * g.cin * g.cout;
                        for (std::size_t ci = 0; ci < g.cin; ++ci) {
                            const T xv = xr[ci];
                            const T* wr = wk + ci * g.cout;
                            for (std::size_t co = 0; co < g.cout; ++co) acc[co] += xv * wr[co];
                        }
                    }
                }
                T* orow = po + ((n * g.oh + oy) * g.ow + ox) * g.cout;
                for (std::size_t co = 0; co < g.cout; ++co) orow[co] = acc[co] + b[co];
            }
        }
    });
    return out;
}

/// Per-channel spatial convolution. w is [k,k,C,1].
template <typename T>
BasicTensor<T> depthwise_conv2d_fwd(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                                    ConvParams p) {
    p.groups = p.in_channels;
    p.out_channels = p.in_channels;
    const auto g = detail::check_conv(x, w, b, p, true);
    return detail::depthwise_fwd_impl(x, w, b, g);
}

/// 1x1 channel mixing. w is [1,1,Cin,Cout].
template <typename T>
BasicTensor<T> pointwise_conv2d_fwd(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
    if (w.shape().rank() != 4 || w.dim(0) != 1 || w.dim(1) != 1) {
        throw ShapeError("pointwise: weight must be [1,1,Cin,Cout], got " + w.shape().str());
    }
    ConvParams p;
    p.in_channels = w.dim(2);
    p.out_channels = w.dim(3);
    return conv2d_fwd(x, w, b, p);
}

/// Gradients of conv2d_fwd (dense or depthwise per p.groups).
template <typename T>
OpGrad<T> conv2d_bwd(const BasicTensor<T>& x, const BasicTensor<T>& w, const ConvParams& p,
                     const BasicTensor<T>& grad_out) {
    const bool dw = p.groups != 1;
    const std::size_t cout_expect = dw ? p.in_channels : p.out_channels;
    const auto g = detail::check_conv(x, w, BasicTensor<T>(Shape{cout_expect}), p, dw);
    detail::check_grad_shape(grad_out, Shape{g.n, g.oh, g.ow, g.cout}, "conv2d_bwd");

    OpGrad<T> r{BasicTensor<T>(x.shape()), {}};
    BasicTensor<T> gw(w.shape());
    BasicTensor<T> gb(Shape{g.cout});
    const T* px = x.ptr();
    const T* pw = w.ptr();
    const T* pg = grad_out.ptr();

    // bias: sum over (n, oy, ox)
    for (std::size_t i = 0; i < g.n * g.oh * g.ow; ++i) {
        for (std::size_t c = 0; c < g.cout; ++c) gb[c] += pg[i * g.cout + c];
    }

    // weights: one worker per kernel tap (ky, kx)
    parallel_for(g.k * g.k, g.n * g.oh * g.ow * g.cin * (dw ? 1 : g.cout), [&](std::size_t t0, std::size_t t1) {
        for (std::size_t t = t0; t < t1; ++t) {
            const std::size_t ky = t / g.k, kx = t % g.k;
            T* gwk = gw.ptr() + t * g.cin * (dw ? 1 : g.cout);
            for (std::size_t n = 0; n < g.n; ++n) {
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const auto iy = detail::tap(oy, ky, g.s, g.pad_h, g.h);
                    if (iy < 0) continue;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const auto ix = detail::tap(ox, kx, g.s, g.pad_w, g.w);
                        if (ix < 0) continue;
                        const T* xr = px + ((n * g.h + iy) * g.w + ix) * g.cin;
                        const T* gr = pg + ((n * g.oh + oy) * g.ow + ox) * g.cout;
                        if (dw) {
                            for (std::size_t c = 0; c < g.cin; ++c) gwk[c] += xr[c] * gr[c];
                        } else {
                            for (std::size_t ci = 0; ci < g.cin; ++ci) {
                                const T xv = xr[ci];
                                T* gwr = gwk + ci * g.cout;
                                for (std::size_t co = 0; co < g.cout; ++co) gwr[co] += xv * gr[co];
                            }
                        }
                    }
                }
            }
        }
    });

    // input: gather over taps that touched each input pixel
    T* pgx = r.grad_input.ptr();
    parallel_for(g.n * g.h, g.w * g.k * g.k * g.cin * (dw ? 1 : g.cout), [&](std::size_t r0, std::size_t r1) {
        for (std::size_t row = r0; row < r1; ++row) {
            const std::size_t n = row / g.h, iy = row % g.h;
            for (std::size_t ix = 0; ix < g.w; ++ix) {
                T* gxr = pgx + ((n * g.h + iy) * g.w + ix) * g.cin;
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const std::ptrdiff_t ty = static_cast<std::ptrdiff_t>(iy + g.pad_h) - static_cast<std::ptrdiff_t>(ky);
                    if (ty < 0 || ty % static_cast<std::ptrdiff_t>(g.s) != 0) continue;
                    const std::size_t oy = static_cast<std::size_t>(ty) / g.s;
                    if (oy >= g.oh) continue;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const std::ptrdiff_t tx = static_cast<std::ptrdiff_t>(ix + g.pad_w) - static_cast<std::ptrdiff_t>(kx);
                        if (tx < 0 || tx % static_cast<std::ptrdiff_t>(g.s) != 0) continue;
                        const std::size_t ox = static_cast<std::size_t>(tx) / g.s;
                        if (ox >= g.ow) continue;
                        const T* gr = pg + ((n * g.oh + oy) * g.ow + ox) * g.cout;
                        if (dw) {
                            const T* wr = pw + (ky * g.k + kx) * g.cin;
                            for (std::size_t c = 0; c < g.cin; ++c) gxr[c] += wr[c] * gr[c];
                        } else {
                            const T* wk = pw + (ky * g.k + kx) * g.cin * g.cout;
                            for (std::size_t ci = 0; ci < g.cin; ++ci) {
                                const T* wr = wk + ci * g.cout;
                                T acc = T(0);
                                for (std::size_t co = 0; co < g.cout; ++co) acc += wr[co] * gr[co];
                                gxr[ci] += acc;
                            }
                        }
                    }
                }
            }
        }
    });

    r.grad_params.emplace("w", std::move(gw));
    r.grad_params.emplace("b", std::move(gb));
    return r;
}

template <typename T>
OpGrad<T> depthwise_conv2d_bwd(const BasicTensor<T>& x, const BasicTensor<T>& w, ConvParams p,
                               const BasicTensor<T>& grad_out) {
    p.groups = p.in_channels;
    p.out_channels = p.in_channels;
    return conv2d_bwd(x, w, p, grad_out);
}

template <typename T>
OpGrad<T> pointwise_conv2d_bwd(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& grad_out) {
    ConvParams p;
    p.in_channels = w.dim(2);
    p.out_channels = w.dim(3);
    return conv2d_bwd(x, w, p, grad_out);
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
struct MaxPoolResult {
    BasicTensor<T> output;
    std::vector<std::uint64_t> argmax;  ///< flat input index per output element
};

/// Channelwise max over k x k windows with stride s. Window placement follows
/// the same-padding rule (output ceil(H/s)); padded cells act as -inf. Ties
/// resolve to the first maximal element in row-major window order.
template <typename T>
MaxPoolResult<T> maxpool2d(const BasicTensor<T>& x, std::size_t k, std::size_t s) {
    if (x.shape().rank() != 4) throw ShapeError("maxpool: input must be NHWC, got " + x.shape().str());
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::size_t oh = conv_out_extent(h, k, s, Padding::same);
    const std::size_t ow = conv_out_extent(w, k, s, Padding::same);
    const std::size_t ph = conv_pad_before(h, k, s, Padding::same);
    const std::size_t pw = conv_pad_before(w, k, s, Padding::same);
    MaxPoolResult<T> r{BasicTensor<T>(Shape{n, oh, ow, c}), std::vector<std::uint64_t>(n * oh * ow * c)};
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::uint64_t best_i = 0;
                    bool found = false;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const auto iy = detail::tap(oy, ky, s, ph, h);
                        if (iy < 0) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const auto ix = detail::tap(ox, kx, s, pw, w);
                            if (ix < 0) continue;
                            const std::uint64_t i = ((b * h + iy) * w + ix) * c + ch;
                            if (!found || x[i] > best) {
                                best = x[i];
                                best_i = i;
                                found = true;
                            }
                        }
                    }
                    const std::size_t o = ((b * oh + oy) * ow + ox) * c + ch;
                    r.output[o] = best;
                    r.argmax[o] = best_i;
                }
    return r;
}

template <typename T>
OpGrad<T> maxpool2d_bwd(const Shape& input_shape, const std::vector<std::uint64_t>& argmax,
                        const BasicTensor<T>& grad_out) {
    if (argmax.size() != grad_out.size()) {
        throw ShapeError("maxpool_bwd: " + std::to_string(argmax.size()) + " indices for grad of " +
                         grad_out.shape().str());
    }
    OpGrad<T> r{BasicTensor<T>(input_shape), {}};
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        if (argmax[i] >= r.grad_input.size()) throw ShapeError("maxpool_bwd: stale argmax index");
        r.grad_input[argmax[i]] += grad_out[i];
    }
    return r;
}

// ---------------------------------------------------------------------------
// Bilinear resize

namespace detail {

struct Lerp {
    std::size_t i0, i1;
    double frac;
};

// Half-pixel-center source coordinates, clamped to the input range.
inline std::vector<Lerp> lerp_table(std::size_t in, std::size_t out) {
    std::vector<Lerp> t(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(src));
        t[i] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
    }
    return t;
}

}  // namespace detail

/// Bilinear resize to out_h x out_w, align_corners = false.
template <typename T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w) {
    if (x.shape().rank() != 4) throw ShapeError("upsample: input must be NHWC, got " + x.shape().str());
    if (out_h == 0 || out_w == 0) throw ShapeError("upsample: output extent must be >= 1");
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const auto ty = detail::lerp_table(h, out_h);
    const auto tx = detail::lerp_table(w, out_w);
    BasicTensor<T> out(Shape{n, out_h, out_w, c});
    parallel_for(n * out_h, out_w * c * 4, [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            const std::size_t b = r / out_h, oy = r % out_h;
            const T ly = static_cast<T>(ty[oy].frac);
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const T lx = static_cast<T>(tx[ox].frac);
                const T* v00 = &x.at(b, ty[oy].i0, tx[ox].i0, 0);
                const T* v01 = &x.at(b, ty[oy].i0, tx[ox].i1, 0);
                const T* v10 = &x.at(b, ty[oy].i1, tx[ox].i0, 0);
                const T* v11 = &x.at(b, ty[oy].i1, tx[ox].i1, 0);
                T* o = &out.at(b, oy, ox, 0);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const T top = (T(1) - lx) * v00[ch] + lx * v01[ch];
                    const T bot = (T(1) - lx) * v10[ch] + lx * v11[ch];
                    o[ch] = (T(1) - ly) * top + ly * bot;
                }
            }
        }
    });
    return out;
}

template <typename T>
OpGrad<T> upsample_bilinear_bwd(const Shape& input_shape, const BasicTensor<T>& grad_out) {
    if (input_shape.rank() != 4 || grad_out.shape().rank() != 4 || grad_out.dim(0) != input_shape[0] ||
        grad_out.dim(3) != input_shape[3]) {
        throw ShapeError("upsample_bwd: grad " + grad_out.shape().str() + " incompatible with input " +
                         input_shape.str());
    }
    const std::size_t n = input_shape[0], h = input_shape[1], w = input_shape[2], c = input_shape[3];
    const std::size_t out_h = grad_out.dim(1), out_w = grad_out.dim(2);
    const auto ty = detail::lerp_table(h, out_h);
    const auto tx = detail::lerp_table(w, out_w);
    OpGrad<T> r{BasicTensor<T>(input_shape), {}};
    auto& gx = r.grad_input;
    parallel_for(n, out_h * out_w * c * 4, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b)
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                const T ly = static_cast<T>(ty[oy].frac);
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const T lx = static_cast<T>(tx[ox].frac);
                    const T* g = &grad_out.at(b, oy, ox, 0);
                    T* g00 = &gx.at(b, ty[oy].i0, tx[ox].i0, 0);
                    T* g01 = &gx.at(b, ty[oy].i0, tx[ox].i1, 0);
                    T* g10 = &gx.at(b, ty[oy].i1, tx[ox].i0, 0);
                    T* g11 = &gx.at(b, ty[oy].i1, tx[ox].i1, 0);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const T top = (T(1) - ly) * g[ch];
                        const T bot = ly * g[ch];
                        g00[ch] += (T(1) - lx) * top;
                        g01[ch] += lx * top;
                        g10[ch] += (T(1) - lx) * bot;
                        g11[ch] += lx * bot;
                    }
                }
            }
    });
    return r;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    BasicTensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    return out;
}

template <typename T>
OpGrad<T> relu_bwd(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
    detail::check_grad_shape(grad_out, x.shape(), "relu_bwd");
    OpGrad<T> r{BasicTensor<T>(x.shape()), {}};
    for (std::size_t i = 0; i < x.size(); ++i) r.grad_input[i] = x[i] > T(0) ? grad_out[i] : T(0);
    return r;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
    BasicTensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
    return out;
}

/// Takes the forward output y = sigmoid(x).
template <typename T>
OpGrad<T> sigmoid_bwd(const BasicTensor<T>& y, const BasicTensor<T>& grad_out) {
    detail::check_grad_shape(grad_out, y.shape(), "sigmoid_bwd");
    OpGrad<T> r{BasicTensor<T>(y.shape()), {}};
    for (std::size_t i = 0; i < y.size(); ++i) r.grad_input[i] = grad_out[i] * y[i] * (T(1) - y[i]);
    return r;
}

/// Softmax over the innermost (channel) axis.
template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& x) {
    const auto& dims = x.shape().dims();
    const std::size_t c = dims.back();
    const std::size_t rows = x.size() / c;
    BasicTensor<T> out(x.shape());
    parallel_for(rows, c * 8, [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            const T* in = x.ptr() + r * c;
            T* o = out.ptr() + r * c;
            T m = in[0];
            for (std::size_t i = 1; i < c; ++i) m = std::max(m, in[i]);
            T sum = T(0);
            for (std::size_t i = 0; i < c; ++i) {
                o[i] = std::exp(in[i] - m);
                sum += o[i];
            }
            for (std::size_t i = 0; i < c; ++i) o[i] /= sum;
        }
    });
    return out;
}

/// Takes the forward output y = softmax(x).
template <typename T>
OpGrad<T> softmax_channels_bwd(const BasicTensor<T>& y, const BasicTensor<T>& grad_out) {
    detail::check_grad_shape(grad_out, y.shape(), "softmax_bwd");
    const std::size_t c = y.shape().dims().back();
    OpGrad<T> r{BasicTensor<T>(y.shape()), {}};
    for (std::size_t row = 0; row < y.size() / c; ++row) {
        const T* yr = y.ptr() + row * c;
        const T* gr = grad_out.ptr() + row * c;
        T dot = T(0);
        for (std::size_t i = 0; i < c; ++i) dot += gr[i] * yr[i];
        for (std::size_t i = 0; i < c; ++i) r.grad_input[row * c + i] = yr[i] * (gr[i] - dot);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Multi-path refinement

/// Upsamples `deep` to `skip`'s spatial size and adds `skip`.
template <typename T>
BasicTensor<T> fuse_refine(const BasicTensor<T>& deep, const BasicTensor<T>& skip) {
    if (deep.shape().rank() != 4 || skip.shape().rank() != 4) throw ShapeError("fuse_refine: inputs must be NHWC");
    if (deep.dim(0) != skip.dim(0) || deep.dim(3) != skip.dim(3)) {
        throw ShapeError("fuse_refine: deep " + deep.shape().str() + " and skip " + skip.shape().str() +
                         " differ in batch or channels");
    }
    if (deep.dim(1) > skip.dim(1) || deep.dim(2) > skip.dim(2)) {
        throw ShapeError("fuse_refine: deep " + deep.shape().str() + " is larger than skip " + skip.shape().str());
    }
    return add(upsample_bilinear(deep, skip.dim(1), skip.dim(2)), skip);
}

template <typename T>
struct FuseRefineGrad {
    BasicTensor<T> grad_deep;
    BasicTensor<T> grad_skip;
};

template <typename T>
FuseRefineGrad<T> fuse_refine_bwd(const Shape& deep_shape, const BasicTensor<T>& grad_out) {
    return {upsample_bilinear_bwd(deep_shape, grad_out).grad_input, grad_out};
}

}  // namespace attendseg
