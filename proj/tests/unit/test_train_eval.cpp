#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "attendseg/dataset.hpp"
#include "attendseg/parallel.hpp"
#include "attendseg/reference.hpp"
#include "attendseg/train.hpp"
#include "support/helpers.hpp"

using namespace attendseg;
using testing_support::scratch_dir;

namespace {

GraphSpec small_graph(std::size_t classes) {
    GraphSpec g;
    g.name = "small";
    g.input_h = 16;
    g.input_w = 16;
    g.input_c = 3;
    g.num_classes = classes;
    g.layers = {make_conv("stem", kInputId, 3, 2, 3, 8),
                make_relu("stem_relu", "stem"),
                make_condenser("ac", "stem_relu", CondenserParams{8, 2, 4, 3}),
                make_pointwise("proj", kInputId, 3, 8),
                make_upsample("up", "ac", 16, 16),
                make_fuse_refine("fuse", "up", "proj"),
                make_pointwise("cls", "fuse", 8, classes),
                make_softmax("probs", "cls")};
    return g;
}

LabelMap map_of(std::size_t h, std::size_t w, std::vector<std::uint8_t> v) { return LabelMap{h, w, std::move(v)}; }

// brute force: count every pixel into the class pair it touches
EvalResult brute_force(const std::vector<LabelMap>& pred, const std::vector<LabelMap>& truth, std::size_t classes) {
    EvalResult r;
    std::size_t correct = 0, total = 0;
    std::vector<double> tp(classes), fp(classes), fn(classes);
    std::vector<bool> present(classes);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        for (std::size_t p = 0; p < pred[i].labels.size(); ++p) {
            const auto t = truth[i].labels[p], q = pred[i].labels[p];
            ++total;
            present[t] = true;
            if (t == q) {
                ++correct;
                tp[t] += 1;
            } else {
                fp[q] += 1;
                fn[t] += 1;
            }
        }
    }
    r.pixel_accuracy = double(correct) / double(total);
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (!present[c]) continue;
        sum += tp[c] / (tp[c] + fp[c] + fn[c]);
        ++n;
    }
    r.mean_iou = sum / double(n);
    return r;
}

}  // namespace

TEST(Loss, UniformPredictionIsLogC) {
    const Tensor pred = full(Shape{2, 3, 3, 4}, 0.25f);
    const auto lm = map_of(3, 3, {0, 1, 2, 3, 0, 1, 2, 3, 0});
    const auto r = cross_entropy_loss(pred, {&lm, &lm});
    EXPECT_NEAR(r.loss, std::log(4.0), 1e-6);
}

TEST(Loss, PerfectOneHotIsZero) {
    const auto lm = map_of(2, 2, {0, 1, 2, 1});
    Tensor pred(Shape{1, 2, 2, 3});
    for (std::size_t p = 0; p < 4; ++p) pred[p * 3 + lm.labels[p]] = 1.0f;
    EXPECT_EQ(cross_entropy_loss(pred, {&lm}).loss, 0.0);
    // a zero probability on the labelled class is clamped, not infinite
    Tensor wrong(Shape{1, 2, 2, 3});
    for (std::size_t p = 0; p < 4; ++p) wrong[p * 3 + (lm.labels[p] + 1) % 3] = 1.0f;
    EXPECT_NEAR(cross_entropy_loss(wrong, {&lm}).loss, -std::log(1e-12), 1e-9);
}

TEST(Loss, LabelOutOfRange) {
    const auto lm = map_of(1, 2, {0, 4});
    EXPECT_THROW(cross_entropy_loss(full(Shape{1, 1, 2, 4}, 0.25f), {&lm}), FormatError);
}

TEST(Train, ZeroLearningRateLeavesWeights) {
    const Model m = init_model(small_graph(3), 1);
    const auto data = synth_dataset(6, 16, 16, 3, 2);
    const auto r = train(m, data, TrainConfig{2, 4, 0.0, 0.9, 5});
    EXPECT_EQ(r.model.weights, m.weights);
    EXPECT_EQ(r.loss_curve.size(), 2u);
}

TEST(Train, SameSeedSameWeightsAnyThreadCount) {
    const Model m = init_model(small_graph(3), 1);
    const auto data = synth_dataset(10, 16, 16, 3, 2);
    const TrainConfig cfg{3, 4, 0.05, 0.9, 5};
    set_num_threads(1);
    const auto a = train(m, data, cfg);
    set_num_threads(3);
    const auto b = train(m, data, cfg);
    set_num_threads(0);
    const auto c = train(m, data, cfg);
    EXPECT_EQ(a.model.weights, b.model.weights);
    EXPECT_EQ(a.model.weights, c.model.weights);
    EXPECT_EQ(a.loss_curve, b.loss_curve);
    EXPECT_NE(a.model.weights, m.weights);
    auto other = cfg;
    other.seed = 6;
    EXPECT_NE(train(m, data, other).model.weights, a.model.weights);
}

TEST(Train, LossDecreasesOnSmallProblem) {
    const Model m = init_model(small_graph(3), 2);
    const auto data = synth_dataset(24, 16, 16, 3, 4);
    const auto r = train(m, data, TrainConfig{8, 4, 0.05, 0.9, 1});
    EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
}

TEST(Train, NonFiniteWeightsNameTheLayer) {
    Model m = init_model(small_graph(3), 1);
    m.weights.at("proj/w")[0] = std::numeric_limits<float>::infinity();
    const auto data = synth_dataset(2, 16, 16, 3, 2);
    try {
        train(m, data, TrainConfig{1, 2, 0.05, 0.9, 1});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_EQ(e.layer(), "proj");
    }
}

TEST(Train, RejectsBadConfig) {
    const Model m = init_model(small_graph(3), 1);
    const auto data = synth_dataset(2, 16, 16, 3, 2);
    EXPECT_THROW(train(m, data, TrainConfig{0, 2, 0.05, 0.9, 1}), Error);
    EXPECT_THROW(train(m, data, TrainConfig{1, 0, 0.05, 0.9, 1}), Error);
    EXPECT_THROW(train(m, data, TrainConfig{1, 2, -1.0, 0.9, 1}), Error);
    EXPECT_THROW(train(m, {}, TrainConfig{1, 2, 0.05, 0.9, 1}), Error);
}

TEST(Metrics, PerfectPrediction) {
    const auto gt = map_of(2, 2, {0, 1, 2, 2});
    const auto r = evaluate_predictions({gt}, {&gt}, 4);
    EXPECT_EQ(r.pixel_accuracy, 1.0);
    EXPECT_EQ(r.mean_iou, 1.0);
    EXPECT_FALSE(r.per_class_iou[3].has_value());  // absent class is excluded
}

TEST(Metrics, AllBackgroundOnHalfBackground) {
    const auto gt = map_of(2, 2, {0, 0, 1, 1});
    const auto pred = map_of(2, 2, {0, 0, 0, 0});
    const auto r = evaluate_predictions({pred}, {&gt}, 2);
    EXPECT_EQ(r.pixel_accuracy, 0.5);
    EXPECT_DOUBLE_EQ(r.mean_iou, (0.5 + 0.0) / 2);
}

TEST(Metrics, MatchBruteForceOnRandomFixtures) {
    Rng rng(31);
    for (int t = 0; t < 200; ++t) {
        const std::size_t classes = 2 + rng.below(5), n = 1 + rng.below(3);
        std::vector<LabelMap> pred, truth;
        for (std::size_t i = 0; i < n; ++i) {
            LabelMap a{8, 8, std::vector<std::uint8_t>(64)}, b = a;
            for (auto& v : a.labels) v = static_cast<std::uint8_t>(rng.below(classes));
            for (std::size_t p = 0; p < 64; ++p) {
                b.labels[p] = rng.bernoulli(0.6) ? a.labels[p] : static_cast<std::uint8_t>(rng.below(classes));
            }
            pred.push_back(a);
            truth.push_back(b);
        }
        std::vector<const LabelMap*> tp;
        for (const auto& x : truth) tp.push_back(&x);
        const auto r = evaluate_predictions(pred, tp, classes);
        const auto o = brute_force(pred, truth, classes);
        ASSERT_DOUBLE_EQ(r.pixel_accuracy, o.pixel_accuracy);
        ASSERT_NEAR(r.mean_iou, o.mean_iou, 1e-12);
        for (const auto& iou : r.per_class_iou) {
            if (iou) {
                ASSERT_TRUE(*iou >= 0 && *iou <= 1);
            }
        }
        ASSERT_TRUE(r.pixel_accuracy >= 0 && r.pixel_accuracy <= 1);
        ASSERT_TRUE(r.mean_iou >= 0 && r.mean_iou <= 1);
    }
}

TEST(Metrics, EvaluateRejectsClassMismatch) {
    const Model m = init_model(small_graph(3), 1);
    EXPECT_THROW(evaluate(m, synth_dataset(2, 16, 16, 5, 1)), FormatError);
}

TEST(Metrics, ArgmaxTiesGoLow) {
    const auto lm = argmax_labels(Tensor(Shape{1, 1, 2, 3}, {0.2f, 0.4f, 0.4f, 0.5f, 0.5f, 0.0f}));
    EXPECT_EQ(lm[0].labels, (std::vector<std::uint8_t>{1, 0}));
}

TEST(Synth, Deterministic) {
    const auto a = synth_dataset(5, 32, 24, 4, 7), b = synth_dataset(5, 32, 24, 4, 7);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].image, b[i].image);
        EXPECT_EQ(a[i].labels, b[i].labels);
    }
    // a prefix of a longer run is the shorter run
    const auto c = synth_dataset(8, 32, 24, 4, 7);
    EXPECT_EQ(c[4].image, a[4].image);
    EXPECT_NE(synth_dataset(1, 32, 24, 4, 8)[0].image, a[0].image);
}

TEST(Synth, LabelsInRangeAndTwoClassHistogram) {
    const auto data = synth_dataset(1000, 32, 32, 2, 11);
    std::size_t both = 0;
    for (const auto& s : data) {
        bool seen[2] = {false, false};
        for (auto v : s.labels.labels) {
            ASSERT_LT(v, 2);
            seen[v] = true;
        }
        both += seen[0] && seen[1];
        for (float v : s.image.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    }
    EXPECT_GE(both, 950u);
    for (const auto& s : synth_dataset(50, 16, 16, 8, 3)) {
        for (auto v : s.labels.labels) ASSERT_LT(v, 8);
    }
}

TEST(Synth, DegenerateArgumentsThrow) {
    EXPECT_THROW(synth_dataset(1, 2, 16, 3, 1), FormatError);
    EXPECT_THROW(synth_dataset(1, 16, 16, 1, 1), FormatError);
}

TEST(Netpbm, RoundTripWithinQuantization) {
    const auto dir = scratch_dir("netpbm_rt");
    const auto s = synth_dataset(1, 20, 12, 4, 5)[0];
    write_image_ppm(s.image, (dir / "a.ppm").string());
    write_labels_pgm(s.labels, (dir / "a.pgm").string());
    const auto img = load_image_ppm((dir / "a.ppm").string());
    ASSERT_EQ(img.shape(), s.image.shape());
    for (std::size_t i = 0; i < img.size(); ++i) ASSERT_NEAR(img[i], s.image[i], 1.0 / 255 / 2 + 1e-6);
    EXPECT_EQ(load_labels_pgm((dir / "a.pgm").string(), 4), s.labels);
}

TEST(Netpbm, AllBlackIsZero) {
    const auto path = (scratch_dir("netpbm_black") / "k.ppm").string();
    std::ofstream(path, std::ios::binary) << "P6\n3 2\n255\n" << std::string(18, '\0');
    const auto t = load_image_ppm(path);
    EXPECT_EQ(t.shape(), (Shape{2, 3, 3}));
    for (float v : t.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Netpbm, MalformedFilesAreRejected) {
    const auto dir = scratch_dir("netpbm_bad");
    const auto put = [&](const std::string& name, const std::string& bytes) {
        std::ofstream((dir / name).string(), std::ios::binary) << bytes;
        return (dir / name).string();
    };
    EXPECT_THROW(load_image_ppm(put("magic.ppm", "P3\n1 1\n255\n000")), FormatError);
    EXPECT_THROW(load_image_ppm(put("short.ppm", "P6\n2 2\n255\n" + std::string(5, 'a'))), FormatError);
    EXPECT_THROW(load_image_ppm(put("maxval.ppm", "P6\n1 1\n65535\n" + std::string(6, 'a'))), FormatError);
    EXPECT_THROW(load_labels_pgm(put("magic.pgm", "P6\n1 1\n255\n\x01\x01\x01")), FormatError);
    EXPECT_THROW(load_image_ppm((dir / "missing.ppm").string()), Error);
}

TEST(Netpbm, LabelBeyondClassCountNamesThePixel) {
    const auto path = (scratch_dir("netpbm_label") / "l.pgm").string();
    std::ofstream(path, std::ios::binary) << "P5\n3 2\n255\n" << std::string("\x00\x01\x02\x01\x07\x00", 6);
    try {
        load_labels_pgm(path, 5);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("pixel 4"), std::string::npos) << e.what();
    }
    EXPECT_NO_THROW(load_labels_pgm(path, 8));
}

TEST(Netpbm, OverlayBlendsHalfway) {
    const auto path = (scratch_dir("netpbm_overlay") / "o.ppm").string();
    const Tensor img = full(Shape{1, 2, 3}, 0.0f);
    write_overlay_ppm(img, map_of(1, 2, {0, 1}), {{1.0f, 1.0f, 1.0f}, {0.0f, 1.0f, 0.0f}}, path);
    const auto back = load_image_ppm(path);
    EXPECT_NEAR(back[0], 0.5f, 1.0 / 255);
    EXPECT_NEAR(back[3], 0.0f, 1e-6);
    EXPECT_NEAR(back[4], 0.5f, 1.0 / 255);
    EXPECT_THROW(write_overlay_ppm(img, map_of(1, 2, {0, 2}), default_palette(2), path), FormatError);
}

TEST(DatasetDir, WriteThenRead) {
    const auto dir = (scratch_dir("dataset_dir") / "d").string();
    const auto samples = synth_dataset(3, 16, 16, 3, 9);
    write_dataset(dir, samples, DatasetManifest{3, 16, 16, 3, 9});
    const auto d = read_dataset(dir);
    EXPECT_EQ(d.manifest, (DatasetManifest{3, 16, 16, 3, 9}));
    ASSERT_EQ(d.samples.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(d.samples[i].labels, samples[i].labels);
    EXPECT_TRUE(std::filesystem::exists(dataset_file(dir, "img", 2, "ppm")));
    EXPECT_THROW(read_dataset((scratch_dir("dataset_dir") / "none").string()), FormatError);
}
