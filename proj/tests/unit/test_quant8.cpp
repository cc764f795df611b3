#include <gtest/gtest.h>

#include <cmath>

#include "attendseg/complexity.hpp"
#include "attendseg/quant8.hpp"
#include "attendseg/reference.hpp"
#include "attendseg/serialize.hpp"
#include "support/helpers.hpp"

using namespace attendseg;
using testing_support::random_tensor;

TEST(Quantize, AllZerosUsesUnitScale) {
    const auto q = quantize_tensor(Tensor(Shape{3, 2}));
    EXPECT_EQ(q.scale, 1.0f);
    for (auto v : q.payload) EXPECT_EQ(v, 0);
    EXPECT_EQ(q.zero_point, 0);
}

TEST(Quantize, SmallVector) {
    const auto q = quantize_tensor(Tensor(Shape{3}, {-1.0f, 0.5f, 1.0f}));
    EXPECT_FLOAT_EQ(q.scale, 1.0f / 127.0f);
    EXPECT_EQ(q.payload, (std::vector<std::int8_t>{-127, 64, 127}));
}

TEST(Quantize, RoundTripErrorWithinHalfStep) {
    Rng rng(8);
    for (int t = 0; t < 1000; ++t) {
        const double span = std::exp(rng.uniform(-6.0, 4.0));
        const auto w = random_tensor<float>(Shape{1 + rng.below(40)}, rng, -span, span);
        const auto q = quantize_tensor(w);
        const auto s = quant_error("w", w, q);
        ASSERT_LE(s.max_abs_error, q.scale / 2.0 * (1 + 1e-6)) << "tensor " << t;
        for (auto v : q.payload) ASSERT_GE(v, -127);
    }
}

TEST(Quantize, Idempotent) {
    Rng rng(9);
    for (int t = 0; t < 100; ++t) {
        const auto w = random_tensor<float>(Shape{5, 7}, rng, -3, 3);
        const auto q1 = quantize_tensor(w);
        const auto q2 = quantize_tensor(q1.dequantize());
        EXPECT_EQ(q1.payload, q2.payload);
        EXPECT_NEAR(q1.scale, q2.scale, q1.scale * 1e-6);
    }
}

TEST(Quantize, RejectsNonFinite) {
    EXPECT_THROW(quantize_tensor(Tensor(Shape{2}, {1.0f, NAN})), NumericError);
}

TEST(QuantizeModel, BiasesStayF32AndCountsAddUp) {
    const Model m = init_model(reference_config("attendseg-mini"), 5);
    const auto q = quantize_model(m);
    EXPECT_EQ(q.model.precision, Precision::q8);
    std::uint64_t total = 0;
    for (const auto& [name, shape] : model_param_shapes(m.graph)) {
        total += shape.numel();
        EXPECT_EQ(is_bias_name(name), q.model.weights.count(name) == 1) << name;
        EXPECT_EQ(!is_bias_name(name), q.model.qweights.count(name) == 1) << name;
    }
    EXPECT_EQ(q.report.quantized_params + q.report.f32_params, total);
    EXPECT_NO_THROW(check_model(q.model));
    EXPECT_THROW(quantize_model(q.model), Error);
}

TEST(QuantizeModel, ExactlyRepresentableWeightsAreBitExact) {
    // weights already on a q8 grid survive quantization unchanged, so the
    // q8 forward equals the f32 forward exactly
    const Model m0 = init_model(reference_config("attendseg-mini"), 6);
    const Model grid = dequantized_model(quantize_model(m0).model);
    const auto q = quantize_model(grid);
    for (const auto& [name, qt] : q.model.qweights) EXPECT_EQ(qt.dequantize(), grid.weights.at(name)) << name;
    Rng rng(10);
    const auto x = random_tensor<float>(Shape{2, 64, 64, 3}, rng, 0, 1);
    EXPECT_EQ(forward_q8(q.model, x), forward(grid, x));
}

TEST(QuantizeModel, PayloadNearOneBytePerParameter) {
    const Model m = init_model(reference_config("attendseg-mini"), 7);
    const auto q = quantize_model(m).model;
    const auto st = inspect_model_bytes(encode_model(q));
    const auto params = analyze(m.graph).total_params;
    EXPECT_LE(st.q8_payload_bytes, 1.05 * static_cast<double>(params));
    EXPECT_EQ(st.q8_payload_bytes + st.f32_payload_bytes / 4, params);
}

TEST(QuantizeModel, ForwardQ8RequiresQ8) {
    const Model m = init_model(reference_config("attendseg-mini"), 7);
    EXPECT_THROW(forward_q8(m, Tensor(Shape{1, 64, 64, 3})), Error);
    EXPECT_THROW(dequantized_model(m), Error);
}
