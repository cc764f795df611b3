#pragma once

// Symmetric per-tensor 8-bit post-training weight quantization.
//   scale = max|w| / 127   (1 when w is all zeros)
//   q     = clamp(round_half_away(w / scale), -127, 127)
// Biases and activations stay 32-bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "attendseg/error.hpp"
#include "attendseg/model.hpp"

namespace attendseg {

inline QTensor quantize_tensor(const Tensor& w) {
    double max_abs = 0.0;
    for (float v : w.data()) {
        if (!std::isfinite(v)) throw NumericError("quantize_tensor: non-finite weight");
        max_abs = std::max(max_abs, std::fabs(static_cast<double>(v)));
    }
    QTensor q;
    q.shape = w.shape();
    q.scale = max_abs == 0.0 ? 1.0f : static_cast<float>(max_abs / 127.0);
    q.payload.resize(w.size());
    const double s = q.scale;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double r = std::round(static_cast<double>(w[i]) / s);  // halves round away from zero
        q.payload[i] = static_cast<std::int8_t>(std::clamp(r, -127.0, 127.0));
    }
    return q;
}

inline Tensor dequantize(const QTensor& q) { return q.dequantize(); }

struct QuantTensorStats {
    std::string name;
    float scale = 1.0f;
    double max_abs_error = 0;
    double mean_abs_error = 0;
};

struct QuantReport {
    std::vector<QuantTensorStats> tensors;
    std::uint64_t quantized_params = 0;  ///< int8 values
    std::uint64_t f32_params = 0;        ///< biases kept at 32-bit
};

/// Errors of `q` against the original weights, measured on the exact
/// dequantized values scale * q.
inline QuantTensorStats quant_error(const std::string& name, const Tensor& w, const QTensor& q) {
    QuantTensorStats s{name, q.scale, 0.0, 0.0};
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double e = std::fabs(static_cast<double>(q.scale) * q.payload[i] - static_cast<double>(w[i]));
        s.max_abs_error = std::max(s.max_abs_error, e);
        sum += e;
    }
    s.mean_abs_error = w.size() ? sum / static_cast<double>(w.size()) : 0.0;
    return s;
}

struct QuantizedModel {
    Model model;
    QuantReport report;
};

/// Quantizes every non-bias weight tensor; biases are copied as f32.
inline QuantizedModel quantize_model(const Model& m) {
    if (m.precision != Precision::f32) throw Error("quantize_model: model '" + m.graph.name + "' is already q8");
    check_model(m);
    QuantizedModel out;
    out.model.graph = m.graph;
    out.model.precision = Precision::q8;
    for (const auto& [name, shape] : model_param_shapes(m.graph)) {
        const Tensor& w = m.weights.at(name);
        if (is_bias_name(name)) {
            out.model.weights.emplace(name, w);
            out.report.f32_params += w.size();
        } else {
            QTensor q = quantize_tensor(w);
            out.report.tensors.push_back(quant_error(name, w, q));
            out.report.quantized_params += w.size();
            out.model.qweights.emplace(name, std::move(q));
        }
    }
    return out;
}

/// The f32 model whose weights are exactly the dequantized q8 values.
inline Model dequantized_model(const Model& q8) {
    if (q8.precision != Precision::q8) throw Error("dequantized_model: model '" + q8.graph.name + "' is not q8");
    Model m;
    m.graph = q8.graph;
    m.precision = Precision::f32;
    m.weights = q8.weights;
    for (const auto& [name, q] : q8.qweights) m.weights.emplace(name, q.dequantize());
    return m;
}

/// Inference with quantized weights: dequantize, then the f32 forward.
inline Tensor forward_q8(const Model& q8, const Tensor& x) {
    if (q8.precision != Precision::q8) {
        throw Error("forward_q8: model '" + q8.graph.name + "' is " + to_string(q8.precision) + ", expected q8");
    }
    return forward(dequantized_model(q8), x);
}

}  // namespace attendseg
