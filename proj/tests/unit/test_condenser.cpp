#include <gtest/gtest.h>

#include "attendseg/condenser.hpp"
#include "support/helpers.hpp"

using namespace attendseg;
using testing_support::random_tensor;
using testing_support::to_oracle;
using testing_support::values;

TEST(Condenser, ZeroWeightsHalveTheInput) {
    Rng rng(1);
    const CondenserParams p{4, 2, 2, 3};
    const auto v = random_tensor<float>(Shape{2, 8, 8, 4}, rng);
    const auto r = condenser_fwd(v, p, zero_condenser_weights<float>(p));
    for (float a : r.cache.attention.data()) EXPECT_EQ(a, 0.5f);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(r.output[i], 0.5f * v[i]);
}

TEST(Condenser, SaturatedGatePassesInput) {
    // r = 1, identity embedding/expansion, expansion bias +20.
    Rng rng(2);
    const CondenserParams p{2, 1, 2, 1};
    auto wt = zero_condenser_weights<float>(p);
    wt.dw_w = full(Shape{1, 1, 2, 1}, 1.0f);
    wt.down_w = Tensor(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
    wt.up_w = Tensor(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
    wt.up_b = full(Shape{2}, 20.0f);
    const auto v = random_tensor<float>(Shape{1, 5, 5, 2}, rng);
    const auto out = condenser_fwd(v, p, wt).output;
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out[i], v[i], 1e-3);
}

TEST(Condenser, PreservesShape) {
    Rng rng(3);
    const CondenserParams p{4, 2, 2, 3};
    auto wt = zero_condenser_weights<float>(p);
    wt.dw_w = random_tensor<float>(wt.dw_w.shape(), rng);
    const auto v = random_tensor<float>(Shape{2, 8, 8, 4}, rng);
    EXPECT_EQ(condenser_fwd(v, p, wt).output.shape(), (Shape{2, 8, 8, 4}));
}

TEST(Condenser, MatchesComposedOracle) {
    for (int seed = 0; seed < 40; ++seed) {
        Rng rng(100 + seed);
        CondenserParams p;
        p.channels = 1 + rng.below(5);
        p.embed_channels = 1 + rng.below(p.channels);
        p.reduction = 1 + rng.below(3);
        p.embed_kernel = rng.bernoulli(0.5) ? 3 : 1;
        const std::size_t h = p.reduction + rng.below(7), w = p.reduction + rng.below(7);
        const auto v = random_tensor<float>(Shape{1 + rng.below(2), h, w, p.channels}, rng);
        CondenserWeights<float> wt;
        wt.dw_w = random_tensor<float>(Shape{p.embed_kernel, p.embed_kernel, p.channels, 1}, rng);
        wt.dw_b = random_tensor<float>(Shape{p.channels}, rng);
        wt.down_w = random_tensor<float>(Shape{1, 1, p.channels, p.embed_channels}, rng);
        wt.down_b = random_tensor<float>(Shape{p.embed_channels}, rng);
        wt.up_w = random_tensor<float>(Shape{1, 1, p.embed_channels, p.channels}, rng);
        wt.up_b = random_tensor<float>(Shape{p.channels}, rng);
        std::uint64_t macs = 0;
        const auto ref = oracle::condenser(to_oracle(v), p.reduction, p.embed_kernel, p.embed_channels, values(wt.dw_w),
                                           values(wt.dw_b), values(wt.down_w), values(wt.down_b), values(wt.up_w),
                                           values(wt.up_b), macs);
        ASSERT_EQ(values(condenser_fwd(v, p, wt).output), ref.v) << "seed " << seed;
        // per-sample MAC count
        EXPECT_EQ(macs, v.dim(0) * condenser_cost(p, h, w).macs) << "seed " << seed;
    }
}

TEST(Condenser, RejectsBadConfigs) {
    const CondenserParams p{4, 4, 2, 3};
    EXPECT_THROW(condenser_fwd(Tensor(Shape{1, 3, 8, 4}), p, zero_condenser_weights<float>(p)), ShapeError);
    EXPECT_THROW(condenser_fwd(Tensor(Shape{1, 8, 8, 3}), p, zero_condenser_weights<float>(p)), ShapeError);
    EXPECT_THROW((CondenserParams{4, 2, 5, 3}.check()), ShapeError);
    EXPECT_THROW((CondenserParams{4, 0, 2, 3}.check()), ShapeError);
}

TEST(CondenserCost, WorkedExample) {
    const CondenserParams p{4, 2, 2, 3};
    const auto c = condenser_cost(p, 8, 8);
    EXPECT_EQ(c.params, 62u);      // 36 + 4 + 8 + 2 + 8 + 4
    EXPECT_EQ(c.macs, 1088u);      // 576 + 128 + 128 + 256
}

TEST(CondenserCost, ReductionOneUsesFullSpatial) {
    const CondenserParams p{4, 1, 2, 3};
    const auto c = condenser_cost(p, 8, 8);
    EXPECT_EQ(c.macs, 64u * (36 + 8 + 8) + 4 * 64);
}

TEST(CondenserCost, ParamsMatchWeightShapes) {
    for (std::size_t c = 1; c <= 8; ++c)
        for (std::size_t e = 1; e <= c; ++e) {
            const CondenserParams p{c, 2, e, 3};
            std::uint64_t n = 0;
            for (const auto& [name, s] : condenser_weight_shapes(p)) n += s.numel();
            EXPECT_EQ(condenser_cost(p, 9, 7).params, n);
        }
}
