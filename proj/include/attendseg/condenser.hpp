#pragma once

// Attention condenser block:
//
//   Q     = maxpool(V, r, r)                    condensation
//   K     = pw_down(relu(depthwise(Q)))         embedding
//   A_low = pw_up(K)                            expansion (channels)
//   A     = sigmoid(upsample(A_low, H, W))      expansion (spatial)
//   V'    = V * A                               selective attention
//
// The operator choice for each stage is a reconstruction; only the four
// stages themselves are fixed by the design this block follows.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attendseg/ops.hpp"

namespace attendseg {

struct CondenserParams {
    std::size_t channels = 1;
    std::size_t reduction = 1;  ///< condensation pool size and stride
    std::size_t embed_channels = 1;
    std::size_t embed_kernel = 3;

    void check() const {
        if (channels == 0 || reduction == 0 || embed_channels == 0 || embed_kernel == 0) {
            throw ShapeError("condenser: channels, reduction, embed_channels and embed_kernel must be >= 1");
        }
        if (embed_channels > channels) {
            throw ShapeError("condenser: embed_channels " + std::to_string(embed_channels) + " exceeds channels " +
                             std::to_string(channels));
        }
    }
};

template <typename T>
struct CondenserWeights {
    BasicTensor<T> dw_w, dw_b, down_w, down_b, up_w, up_b;
};

/// Names and shapes of the six learnable tensors, in serialization order.
inline std::vector<std::pair<std::string, Shape>> condenser_weight_shapes(const CondenserParams& p) {
    const std::size_t k = p.embed_kernel, c = p.channels, e = p.embed_channels;
    return {{"dw_w", Shape{k, k, c, 1}}, {"dw_b", Shape{c}},    {"down_w", Shape{1, 1, c, e}},
            {"down_b", Shape{e}},        {"up_w", Shape{1, 1, e, c}}, {"up_b", Shape{c}}};
}

template <typename T>
CondenserWeights<T> zero_condenser_weights(const CondenserParams& p) {
    const auto s = condenser_weight_shapes(p);
    return {BasicTensor<T>(s[0].second), BasicTensor<T>(s[1].second), BasicTensor<T>(s[2].second),
            BasicTensor<T>(s[3].second), BasicTensor<T>(s[4].second), BasicTensor<T>(s[5].second)};
}

template <typename T>
struct CondenserCache {
    BasicTensor<T> input;                 // V
    std::vector<std::uint64_t> pool_argmax;
    BasicTensor<T> condensed;             // Q
    BasicTensor<T> embed_pre;             // depthwise(Q), before relu
    BasicTensor<T> embed_act;             // relu(depthwise(Q))
    BasicTensor<T> embedding;             // K
    BasicTensor<T> attention_low;         // A_low
    BasicTensor<T> attention;             // A
};

template <typename T>
struct CondenserOutput {
    BasicTensor<T> output;
    CondenserCache<T> cache;
};

namespace detail {

inline ConvParams embed_conv_params(const CondenserParams& p) {
    ConvParams c;
    c.kernel = p.embed_kernel;
    c.stride = 1;
    c.padding = Padding::same;
    c.in_channels = p.channels;
    c.out_channels = p.channels;
    c.groups = p.channels;
    return c;
}

}  // namespace detail

template <typename T>
CondenserOutput<T> condenser_fwd(const BasicTensor<T>& v, const CondenserParams& p, const CondenserWeights<T>& wt) {
    p.check();
    if (v.shape().rank() != 4 || v.dim(3) != p.channels) {
        throw ShapeError("condenser: input " + v.shape().str() + " does not have " + std::to_string(p.channels) +
                         " channels");
    }
    if (p.reduction > v.dim(1) || p.reduction > v.dim(2)) {
        throw ShapeError("condenser: reduction " + std::to_string(p.reduction) + " exceeds spatial extent of " +
                         v.shape().str());
    }
    CondenserOutput<T> r;
    auto& c = r.cache;
    c.input = v;
    auto pooled = maxpool2d(v, p.reduction, p.reduction);
    c.condensed = std::move(pooled.output);
    c.pool_argmax = std::move(pooled.argmax);
    c.embed_pre = depthwise_conv2d_fwd(c.condensed, wt.dw_w, wt.dw_b, detail::embed_conv_params(p));
    c.embed_act = relu(c.embed_pre);
    c.embedding = pointwise_conv2d_fwd(c.embed_act, wt.down_w, wt.down_b);
    c.attention_low = pointwise_conv2d_fwd(c.embedding, wt.up_w, wt.up_b);
    c.attention = sigmoid(upsample_bilinear(c.attention_low, v.dim(1), v.dim(2)));
    r.output = mul(v, c.attention);
    return r;
}

/// Gradients for V and the six weight tensors (keys as in
/// condenser_weight_shapes).
template <typename T>
OpGrad<T> condenser_bwd(const CondenserCache<T>& c, const CondenserParams& p, const CondenserWeights<T>& wt,
                        const BasicTensor<T>& grad_out) {
    if (grad_out.shape() != c.input.shape() || c.attention.shape() != c.input.shape()) {
        throw ShapeError("condenser_bwd: grad " + grad_out.shape().str() + " does not match cached input " +
                         c.input.shape().str());
    }
    BasicTensor<T> grad_att(grad_out.shape());
    OpGrad<T> r{BasicTensor<T>(grad_out.shape()), {}};
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        r.grad_input[i] = grad_out[i] * c.attention[i];
        grad_att[i] = grad_out[i] * c.input[i];
    }
    auto g_up_in = sigmoid_bwd(c.attention, grad_att).grad_input;
    auto g_low = upsample_bilinear_bwd(c.attention_low.shape(), g_up_in).grad_input;
    auto up = pointwise_conv2d_bwd(c.embedding, wt.up_w, g_low);
    auto down = pointwise_conv2d_bwd(c.embed_act, wt.down_w, up.grad_input);
    auto g_pre = relu_bwd(c.embed_pre, down.grad_input).grad_input;
    auto dw = depthwise_conv2d_bwd(c.condensed, wt.dw_w, detail::embed_conv_params(p), g_pre);
    auto pool = maxpool2d_bwd(c.input.shape(), c.pool_argmax, dw.grad_input);
    for (std::size_t i = 0; i < r.grad_input.size(); ++i) r.grad_input[i] += pool.grad_input[i];

    r.grad_params.emplace("dw_w", std::move(dw.grad_params.at("w")));
    r.grad_params.emplace("dw_b", std::move(dw.grad_params.at("b")));
    r.grad_params.emplace("down_w", std::move(down.grad_params.at("w")));
    r.grad_params.emplace("down_b", std::move(down.grad_params.at("b")));
    r.grad_params.emplace("up_w", std::move(up.grad_params.at("w")));
    r.grad_params.emplace("up_b", std::move(up.grad_params.at("b")));
    return r;
}

struct LayerCost {
    std::uint64_t macs = 0;
    std::uint64_t params = 0;
};

/// MACs and parameters of one condenser on an H x W input. The embedding and
/// expansion convolutions run at ceil(H/r) x ceil(W/r); the gating multiply
/// costs one MAC per output element.
inline LayerCost condenser_cost(const CondenserParams& p, std::size_t h, std::size_t w) {
    const std::uint64_t k = p.embed_kernel, c = p.channels, e = p.embed_channels;
    const std::uint64_t reduced = conv_out_extent(h, p.reduction, p.reduction, Padding::same) *
                                  conv_out_extent(w, p.reduction, p.reduction, Padding::same);
    LayerCost cost;
    cost.params = k * k * c + c + c * e + e + e * c + c;
    cost.macs = reduced * (k * k * c + c * e + e * c) + c * static_cast<std::uint64_t>(h) * w;
    return cost;
}

}  // namespace attendseg
