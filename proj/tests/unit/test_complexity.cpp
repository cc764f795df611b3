#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "attendseg/complexity.hpp"
#include "attendseg/reference.hpp"
#include "oracle/reference_ops.hpp"
#include "support/helpers.hpp"

using namespace attendseg;

namespace {

GraphSpec single(LayerSpec l, std::size_t h, std::size_t w, std::size_t c) {
    GraphSpec g;
    g.name = "single";
    g.input_h = h;
    g.input_w = w;
    g.input_c = c;
    g.num_classes = c;
    g.layers = {std::move(l)};
    return g;
}

double ratio_digit(double r) { return std::round(r * 10) / 10; }

}  // namespace

TEST(Analyze, SingleConv) {
    const auto r = analyze(single(make_conv("c", kInputId, 3, 1, 3, 8), 16, 16, 3));
    EXPECT_EQ(r.total_macs, 55296u);
    EXPECT_EQ(r.total_params, 224u);
}

TEST(Analyze, SingleDepthwise) {
    const auto r = analyze(single(make_depthwise("d", kInputId, 3, 1, 8), 16, 16, 8));
    EXPECT_EQ(r.total_macs, 18432u);
    EXPECT_EQ(r.total_params, 80u);
}

TEST(Analyze, ParameterFreeLayers) {
    for (const auto& l : {make_relu("x", kInputId), make_softmax("x", kInputId), make_maxpool("x", kInputId, 3, 2),
                          make_upsample("x", kInputId, 32, 32)}) {
        const auto r = analyze(single(l, 16, 16, 4));
        EXPECT_EQ(r.total_macs, 0u) << to_string(l.kind);
        EXPECT_EQ(r.total_params, 0u) << to_string(l.kind);
    }
}

TEST(Analyze, MatchesInstrumentedOracleCounters) {
    Rng rng(17);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t h = 3 + rng.below(12), w = 3 + rng.below(12), cin = 1 + rng.below(5), cout = 1 + rng.below(5);
        const std::size_t k = 1 + 2 * rng.below(3), s = 1 + rng.below(4);
        const bool same = h < k || w < k || rng.bernoulli(0.5);
        const Padding pad = same ? Padding::same : Padding::valid;
        oracle::Nhwc<double> x(1, h, w, cin);
        std::uint64_t conv_macs = 0, dw_macs = 0, pw_macs = 0;
        oracle::conv(x, std::vector<double>(k * k * cin * cout), std::vector<double>(cout), k, s, same, cout, conv_macs);
        oracle::depthwise(x, std::vector<double>(k * k * cin), std::vector<double>(cin), k, s, same, dw_macs);
        oracle::conv(x, std::vector<double>(cin * cout), std::vector<double>(cout), 1, 1, true, cout, pw_macs);
        EXPECT_EQ(analyze(single(make_conv("c", kInputId, k, s, cin, cout, pad), h, w, cin)).total_macs, conv_macs);
        EXPECT_EQ(analyze(single(make_depthwise("d", kInputId, k, s, cin, pad), h, w, cin)).total_macs, dw_macs);
        EXPECT_EQ(analyze(single(make_pointwise("p", kInputId, cin, cout), h, w, cin)).total_macs, pw_macs);
    }
}

TEST(Analyze, CondenserAndFuseCounters) {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        CondenserParams p;
        p.channels = 1 + rng.below(6);
        p.embed_channels = 1 + rng.below(p.channels);
        p.reduction = 1 + rng.below(3);
        p.embed_kernel = 3;
        const std::size_t h = p.reduction + rng.below(9), w = p.reduction + rng.below(9);
        const std::size_t c = p.channels, e = p.embed_channels, k = 3;
        oracle::Nhwc<double> v(1, h, w, c);
        std::uint64_t macs = 0;
        oracle::condenser(v, p.reduction, k, e, std::vector<double>(k * k * c), std::vector<double>(c),
                          std::vector<double>(c * e), std::vector<double>(e), std::vector<double>(e * c),
                          std::vector<double>(c), macs);
        EXPECT_EQ(analyze(single(make_condenser("a", kInputId, p), h, w, c)).total_macs, macs);

        GraphSpec g = single(make_relu("r", kInputId), h, w, c);
        g.layers.push_back(make_fuse_refine("f", "r", kInputId));
        std::uint64_t fmacs = 0;
        oracle::fuse_refine(v, v, fmacs);
        EXPECT_EQ(analyze(g).rows.back().macs, fmacs);
    }
}

TEST(Analyze, TotalsAreRowSumsAndDeterministic) {
    const auto g = reference_config("attendseg-512");
    const auto r = analyze(g);
    std::uint64_t m = 0, p = 0;
    for (const auto& row : r.rows) {
        m += row.macs;
        p += row.params;
    }
    EXPECT_EQ(m, r.total_macs);
    EXPECT_EQ(p, r.total_params);
    EXPECT_EQ(r.rows.size(), g.layers.size());
    EXPECT_EQ(report_to_json(analyze(g)).dump(), report_to_json(r).dump());
}

TEST(Analyze, ReferenceBudgets) {
    const auto big = analyze(reference_config("attendseg-512"));
    EXPECT_LE(big.total_params, 1'250'000u);
    EXPECT_LE(big.total_macs, 7'800'000'000u);
    EXPECT_LE(analyze(reference_config("attendseg-mini")).total_params, 60'000u);
}

TEST(Analyze, MacsScaleWithResolutionParamsDoNot) {
    // doubling both spatial dims quadruples every conv-family count on a stride-1 graph
    GraphSpec a = single(make_conv("c", kInputId, 3, 1, 3, 8), 16, 16, 3);
    a.layers.push_back(make_depthwise("d", "c", 3, 1, 8));
    a.layers.push_back(make_pointwise("p", "d", 8, 4));
    GraphSpec b = a;
    b.input_h = b.input_w = 32;
    const auto ra = analyze(a), rb = analyze(b);
    EXPECT_EQ(rb.total_macs, 4 * ra.total_macs);
    EXPECT_EQ(rb.total_params, ra.total_params);
}

TEST(WeightMemory, Examples) {
    EXPECT_EQ(weight_memory(1'190'000, 8), 1'190'000u);
    EXPECT_EQ(weight_memory(85'690'000, 32), 342'760'000u);
    EXPECT_NEAR(weight_memory(85'690'000, 32) / 1e6, 343.0, 343.0 * 0.003);
    EXPECT_EQ(weight_memory(0, 8), 0u);
    EXPECT_EQ(weight_memory(0, 32), 0u);
    EXPECT_THROW(weight_memory(10, 16), FormatError);
    const auto r = analyze(reference_config("attendseg-mini"));
    EXPECT_EQ(r.weight_memory_bytes(32), 4 * r.weight_memory_bytes(8));
}

TEST(Compare, TableRatios) {
    const auto cards = published_cards();
    const auto t = compare(cards, "RefineNet");
    const auto& a = t.row("AttendSeg");
    EXPECT_EQ(format_ratio(a.params), "72.0x");
    EXPECT_NEAR(a.macs, 27.18, 0.01);
    EXPECT_NEAR(a.weight_memory, 288.24, 0.01);
    EXPECT_EQ(ratio_digit(t.row("RefineNet").macs), 1.0);

    const auto e = compare(cards, "EdgeSegNet").row("AttendSeg");
    EXPECT_NEAR(e.macs, 10.455, 0.01);
    EXPECT_NEAR(e.params, 5.958, 0.01);
    EXPECT_NEAR(e.weight_memory, 23.78, 0.01);
}

TEST(Compare, Errors) {
    auto cards = published_cards();
    EXPECT_THROW(compare(cards, "SegNet"), FormatError);
    cards[1].params = 0;
    EXPECT_THROW(compare(cards, "RefineNet"), FormatError);
    EXPECT_THROW(compare(published_cards(), "RefineNet").row("nope"), FormatError);
}

TEST(Compare, ScalingACardScalesItsRatio) {
    auto cards = published_cards();
    const double before = compare(cards, "RefineNet").row("AttendSeg").params;
    cards[2].params /= 2;
    EXPECT_NEAR(compare(cards, "RefineNet").row("AttendSeg").params, 2 * before, 1e-9);
}

TEST(Cards, JsonFixtureMatchesBuiltins) {
    std::ifstream in(std::string(ATTENDSEG_SOURCE_DIR) + "/data/published_cards.json");
    ASSERT_TRUE(in.good());
    const auto cards = cards_from_json(nlohmann::json::parse(in));
    const auto ref = published_cards();
    ASSERT_EQ(cards.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        EXPECT_EQ(cards[i].name, ref[i].name);
        EXPECT_NEAR(cards[i].macs, ref[i].macs, 1);
        EXPECT_NEAR(cards[i].params, ref[i].params, 1e-3);
        EXPECT_EQ(cards[i].weight_memory_mb, ref[i].weight_memory_mb);
        EXPECT_EQ(cards[i].accuracy, ref[i].accuracy);
    }
    EXPECT_THROW(cards_from_json(nlohmann::json::parse(R"([{"name":"x","macs_g":1,"params_m":1,"weight_memory_mb":1,"flops":2}])")),
                 FormatError);
    EXPECT_THROW(cards_from_json(nlohmann::json::parse(R"({"name":"x"})")), FormatError);
}

TEST(Format, ReportMentionsEveryLayer) {
    const auto g = reference_config("attendseg-mini");
    const auto text = format_report(analyze(g));
    for (const auto& l : g.layers) EXPECT_NE(text.find(l.id), std::string::npos) << l.id;
    EXPECT_NE(format_ratio_table(compare(published_cards(), "RefineNet")).find("72.0x"), std::string::npos);
}
