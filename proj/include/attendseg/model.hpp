#pragma once

// Models (graph + weights) and the graph executor used for inference and
// training. The executor is templated on the scalar type so whole-graph
// gradients can be checked in f64.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "attendseg/condenser.hpp"
#include "attendseg/graph.hpp"
#include "attendseg/ops.hpp"
#include "attendseg/random.hpp"

namespace attendseg {

template <typename T>
using ParamMap = std::map<std::string, BasicTensor<T>>;

/// Symmetric 8-bit tensor: value = scale * q, q in [-127, 127].
struct QTensor {
    Shape shape;
    std::vector<std::int8_t> payload;
    float scale = 1.0f;
    std::int8_t zero_point = 0;

    Tensor dequantize() const {
        Tensor t(shape);
        for (std::size_t i = 0; i < payload.size(); ++i) {
            t[i] = static_cast<float>(static_cast<double>(scale) * payload[i]);
        }
        return t;
    }

    bool operator==(const QTensor& o) const {
        return shape == o.shape && payload == o.payload && scale == o.scale && zero_point == o.zero_point;
    }
};

enum class Precision { f32, q8 };

inline std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "q8"; }

/// A graph plus its parameters. For q8 models the non-bias weights live in
/// `qweights`; biases stay f32 in `weights`.
struct Model {
    GraphSpec graph;
    Precision precision = Precision::f32;
    ParamMap<float> weights;
    std::map<std::string, QTensor> qweights;
};

/// Every learnable tensor of the graph as (full name, shape), in layer order.
inline std::vector<std::pair<std::string, Shape>> model_param_shapes(const GraphSpec& g) {
    std::vector<std::pair<std::string, Shape>> out;
    for (const auto& l : g.layers) {
        for (auto& [local, shape] : layer_weight_shapes(l)) out.emplace_back(param_key(l.id, local), shape);
    }
    return out;
}

/// Throws ShapeError unless every parameter the graph implies is present with
/// the exact shape, in the store the precision tag requires, and nothing else.
inline void check_model(const Model& m) {
    const auto expected = model_param_shapes(m.graph);
    std::size_t f32_count = 0, q8_count = 0;
    for (const auto& [name, shape] : expected) {
        const bool quantized = m.precision == Precision::q8 && !is_bias_name(name);
        if (quantized) {
            auto it = m.qweights.find(name);
            if (it == m.qweights.end()) throw ShapeError("model is missing quantized tensor '" + name + "'");
            if (it->second.shape != shape || it->second.payload.size() != shape.numel()) {
                throw ShapeError("tensor '" + name + "' has shape " + it->second.shape.str() + ", graph implies " +
                                 shape.str());
            }
            ++q8_count;
        } else {
            auto it = m.weights.find(name);
            if (it == m.weights.end()) throw ShapeError("model is missing tensor '" + name + "'");
            if (it->second.shape() != shape) {
                throw ShapeError("tensor '" + name + "' has shape " + it->second.shape().str() + ", graph implies " +
                                 shape.str());
            }
            ++f32_count;
        }
    }
    if (f32_count != m.weights.size() || q8_count != m.qweights.size()) {
        throw ShapeError("model carries tensors the graph does not declare");
    }
}

/// He-uniform initialization for convolutions, zero biases. Condenser
/// expansion biases start at +1 so fresh gates pass most of the signal.
inline Model init_model(const GraphSpec& g, std::uint64_t seed) {
    const auto diags = validate(g);
    if (!diags.empty()) throw ShapeError("cannot initialize invalid graph: " + diags.front().message);
    Model m;
    m.graph = g;
    Rng rng(seed);
    for (const auto& l : g.layers) {
        for (const auto& [local, shape] : layer_weight_shapes(l)) {
            Tensor t(shape);
            if (!is_bias_name(local)) {
                // fan-in: everything but the output-channel axis
                const double fan_in = static_cast<double>(shape.numel()) / static_cast<double>(shape[3]);
                double limit = std::sqrt(6.0 / fan_in);
                if (l.kind == LayerKind::depthwise || local == "dw_w") limit = std::sqrt(6.0 / (shape[0] * shape[1]));
                for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-limit, limit));
            } else if (local == "up_b") {
                for (auto& v : t.data()) v = 1.0f;
            }
            m.weights.emplace(param_key(l.id, local), std::move(t));
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Executor

template <typename T>
struct LayerCache {
    std::vector<std::uint64_t> argmax;         // maxpool
    std::optional<CondenserCache<T>> condenser;  // condenser
};

/// Activations retained by a training forward pass.
template <typename T>
struct Tape {
    BasicTensor<T> input;
    std::vector<BasicTensor<T>> outputs;  // per layer, in layer order
    std::vector<LayerCache<T>> caches;
};

template <typename T>
using TraceFn = std::function<void(const LayerSpec&, const BasicTensor<T>&)>;

/// Runs a validated graph over a parameter map.
template <typename T>
class GraphExecutor {
public:
    explicit GraphExecutor(const GraphSpec& g) : graph_(g) {
        const auto diags = validate(g);
        if (!diags.empty()) throw ShapeError("invalid graph '" + g.name + "': " + diags.front().message);
        std::map<std::string, int> index{{kInputId, -1}};
        for (std::size_t i = 0; i < g.layers.size(); ++i) index[g.layers[i].id] = static_cast<int>(i);
        for (const auto& l : g.layers) {
            std::vector<int> ins;
            for (const auto& s : l.inputs) ins.push_back(index.at(s));
            inputs_.push_back(std::move(ins));
        }
    }

    const GraphSpec& graph() const noexcept { return graph_; }

    /// Forward pass. With `tape` set, intermediate state needed by backward()
    /// is kept. With `check_finite`, the first layer producing NaN/Inf raises
    /// NumericError naming that layer.
    BasicTensor<T> forward(const ParamMap<T>& params, const BasicTensor<T>& x, Tape<T>* tape = nullptr,
                           bool check_finite = false, const TraceFn<T>& trace = {}) const {
        const auto& g = graph_;
        if (x.shape().rank() != 4 || x.dim(1) != g.input_h || x.dim(2) != g.input_w || x.dim(3) != g.input_c) {
            throw ShapeError("input " + x.shape().str() + " does not match graph '" + g.name + "' input [N," +
                             std::to_string(g.input_h) + "," + std::to_string(g.input_w) + "," +
                             std::to_string(g.input_c) + "]");
        }
        std::vector<BasicTensor<T>> outs(g.layers.size());
        std::vector<LayerCache<T>> caches(tape ? g.layers.size() : 0);
        auto in = [&](std::size_t i, std::size_t k) -> const BasicTensor<T>& {
            const int j = inputs_[i][k];
            return j < 0 ? x : outs[static_cast<std::size_t>(j)];
        };
        for (std::size_t i = 0; i < g.layers.size(); ++i) {
            const auto& l = g.layers[i];
            try {
                outs[i] = run_layer(l, params, in(i, 0), l.inputs.size() > 1 ? &in(i, 1) : nullptr,
                                    tape ? &caches[i] : nullptr);
            } catch (const ShapeError& e) {
                throw ShapeError("layer '" + l.id + "': " + e.what());
            }
            if (check_finite && !outs[i].all_finite()) {
                throw NumericError("non-finite activations first produced by layer '" + l.id + "'", l.id);
            }
            if (trace) trace(l, outs[i]);
            // free activations no later layer or backward pass needs
            if (!tape) release_dead(i, outs);
        }
        BasicTensor<T> result = outs.back();
        if (tape) {
            tape->input = x;
            tape->outputs = std::move(outs);
            tape->caches = std::move(caches);
        }
        return result;
    }

    /// Parameter gradients (keyed like the parameter map) of a scalar loss
    /// whose gradient wrt the graph output is `grad_out`. When `grad_input`
    /// is set it receives the gradient wrt the graph input.
    ParamMap<T> backward(const ParamMap<T>& params, const Tape<T>& tape, const BasicTensor<T>& grad_out,
                         BasicTensor<T>* grad_input = nullptr) const {
        const auto& g = graph_;
        const std::size_t n = g.layers.size();
        std::vector<std::optional<BasicTensor<T>>> grads(n);
        std::optional<BasicTensor<T>> g_input;
        grads[n - 1] = grad_out;
        ParamMap<T> out;

        auto value = [&](std::size_t i, std::size_t k) -> const BasicTensor<T>& {
            const int j = inputs_[i][k];
            return j < 0 ? tape.input : tape.outputs[static_cast<std::size_t>(j)];
        };
        auto accumulate = [&](std::size_t i, std::size_t k, BasicTensor<T>&& gr) {
            const int j = inputs_[i][k];
            auto& slot = j < 0 ? g_input : grads[static_cast<std::size_t>(j)];
            if (!slot) {
                slot = std::move(gr);
            } else {
                for (std::size_t e = 0; e < gr.size(); ++e) (*slot)[e] += gr[e];
            }
        };

        for (std::size_t i = n; i-- > 0;) {
            const auto& l = g.layers[i];
            if (!grads[i]) {
                for (const auto& [local, shape] : layer_weight_shapes(l)) out.emplace(param_key(l.id, local), BasicTensor<T>(shape));
                continue;
            }
            const BasicTensor<T>& gy = *grads[i];
            switch (l.kind) {
                case LayerKind::conv:
                case LayerKind::depthwise:
                case LayerKind::pointwise: {
                    auto r = conv2d_bwd(value(i, 0), params.at(param_key(l.id, "w")), l.conv(), gy);
                    out.emplace(param_key(l.id, "w"), std::move(r.grad_params.at("w")));
                    out.emplace(param_key(l.id, "b"), std::move(r.grad_params.at("b")));
                    accumulate(i, 0, std::move(r.grad_input));
                    break;
                }
                case LayerKind::condenser: {
                    const auto wt = condenser_weights(l, params);
                    auto r = condenser_bwd(*tape.caches.at(i).condenser, l.condenser(), wt, gy);
                    for (auto& [local, t] : r.grad_params) out.emplace(param_key(l.id, local), std::move(t));
                    accumulate(i, 0, std::move(r.grad_input));
                    break;
                }
                case LayerKind::maxpool:
                    accumulate(i, 0, maxpool2d_bwd(value(i, 0).shape(), tape.caches.at(i).argmax, gy).grad_input);
                    break;
                case LayerKind::upsample:
                    accumulate(i, 0, upsample_bilinear_bwd(value(i, 0).shape(), gy).grad_input);
                    break;
                case LayerKind::fuse_refine: {
                    auto r = fuse_refine_bwd(value(i, 0).shape(), gy);
                    accumulate(i, 0, std::move(r.grad_deep));
                    accumulate(i, 1, std::move(r.grad_skip));
                    break;
                }
                case LayerKind::relu:
                    accumulate(i, 0, relu_bwd(value(i, 0), gy).grad_input);
                    break;
                case LayerKind::softmax:
                    accumulate(i, 0, softmax_channels_bwd(tape.outputs[i], gy).grad_input);
                    break;
            }
            grads[i].reset();
        }
        if (grad_input) *grad_input = g_input ? std::move(*g_input) : BasicTensor<T>(tape.input.shape());
        return out;
    }

private:
    static CondenserWeights<T> condenser_weights(const LayerSpec& l, const ParamMap<T>& p) {
        auto get = [&](const char* local) -> const BasicTensor<T>& { return p.at(param_key(l.id, local)); };
        return {get("dw_w"), get("dw_b"), get("down_w"), get("down_b"), get("up_w"), get("up_b")};
    }

    BasicTensor<T> run_layer(const LayerSpec& l, const ParamMap<T>& params, const BasicTensor<T>& x,
                             const BasicTensor<T>* x2, LayerCache<T>* cache) const {
        auto param = [&](const char* local) -> const BasicTensor<T>& {
            auto it = params.find(param_key(l.id, local));
            if (it == params.end()) throw ShapeError("missing parameter '" + param_key(l.id, local) + "'");
            return it->second;
        };
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::depthwise:
            case LayerKind::pointwise:
                return conv2d_fwd(x, param("w"), param("b"), l.conv());
            case LayerKind::condenser: {
                auto r = condenser_fwd(x, l.condenser(), condenser_weights(l, params));
                if (cache) cache->condenser = std::move(r.cache);
                return std::move(r.output);
            }
            case LayerKind::maxpool: {
                auto r = maxpool2d(x, l.pool().kernel, l.pool().stride);
                if (cache) cache->argmax = std::move(r.argmax);
                return std::move(r.output);
            }
            case LayerKind::upsample:
                return upsample_bilinear(x, l.upsample().height, l.upsample().width);
            case LayerKind::fuse_refine:
                return fuse_refine(x, *x2);
            case LayerKind::relu:
                return relu(x);
            case LayerKind::softmax:
                return softmax_channels(x);
        }
        throw ShapeError("unhandled layer kind");
    }

    void release_dead(std::size_t i, std::vector<BasicTensor<T>>& outs) const {
        for (int j : inputs_[i]) {
            if (j < 0) continue;
            bool needed = false;
            for (std::size_t k = i + 1; k < inputs_.size() && !needed; ++k) {
                for (int u : inputs_[k]) needed |= (u == j);
            }
            if (!needed) outs[static_cast<std::size_t>(j)] = BasicTensor<T>();
        }
    }

    GraphSpec graph_;
    std::vector<std::vector<int>> inputs_;
};

/// Layer activation as seen by a trace callback.
struct TraceEntry {
    std::string layer;
    Tensor activation;
};

/// Per-pixel class distribution [N,H,W,num_classes] of an f32 model.
inline Tensor forward(const Model& m, const Tensor& x, std::vector<TraceEntry>* trace = nullptr) {
    if (m.precision != Precision::f32) {
        throw Error("forward: model '" + m.graph.name + "' is " + to_string(m.precision) +
                    "; use forward_q8 for quantized models");
    }
    GraphExecutor<float> exec(m.graph);
    TraceFn<float> fn;
    if (trace) fn = [trace](const LayerSpec& l, const Tensor& t) { trace->push_back({l.id, t}); };
    return exec.forward(m.weights, x, nullptr, false, fn);
}

}  // namespace attendseg
