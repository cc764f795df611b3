#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "attendseg/cli.hpp"
#include "attendseg/dataset.hpp"
#include "attendseg/serialize.hpp"
#include "support/helpers.hpp"

using namespace attendseg;
using testing_support::scratch_dir;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
    const auto help = run({"--help"});
    EXPECT_EQ(help.code, exit_ok);
    for (const char* sub : {"analyze", "train", "eval", "quantize", "infer", "search", "synth"}) {
        EXPECT_TRUE(contains(help.out, sub)) << sub;
    }
    EXPECT_EQ(run({}).code, exit_usage);
    const auto bad = run({"frobnicate"});
    EXPECT_EQ(bad.code, exit_usage);
    EXPECT_FALSE(bad.err.empty());
    EXPECT_EQ(run({"train", "attendseg-mini"}).code, exit_usage);
    EXPECT_EQ(run({"eval", "/nonexistent/model.aseg", "/nonexistent"}).code, exit_usage);
    EXPECT_EQ(run({"synth", (scratch_dir("cli_usage") / "d").string(), "--hw", "12by12"}).code, exit_usage);
    EXPECT_EQ(run({"analyze", "--help"}).code, exit_ok);
}

TEST(Cli, AnalyzeReference) {
    const auto r = run({"analyze", "attendseg-512"});
    ASSERT_EQ(r.code, exit_ok) << r.err;
    EXPECT_TRUE(contains(r.out, "stem"));
    EXPECT_TRUE(contains(r.out, "72.0x"));
    EXPECT_TRUE(contains(r.out, "RefineNet"));
    EXPECT_TRUE(contains(r.out, "EdgeSegNet"));
    EXPECT_EQ(run({"analyze", "attendseg-512"}).out, r.out);
}

TEST(Cli, AnalyzeFileWithReportAndCards) {
    const auto dir = scratch_dir("cli_analyze");
    const auto report = (dir / "r.json").string();
    const auto r = run({"analyze", std::string(ATTENDSEG_SOURCE_DIR) + "/configs/attendseg-mini.json", "--cards",
                        std::string(ATTENDSEG_SOURCE_DIR) + "/data/published_cards.json", "--report", report});
    ASSERT_EQ(r.code, exit_ok) << r.err;
    const auto j = nlohmann::json::parse(slurp(report));
    EXPECT_TRUE(j.contains("total_params"));
    EXPECT_LE(j.at("total_params").get<std::uint64_t>(), 60000u);
}

TEST(Cli, InvalidGraphIsADataError) {
    const auto dir = scratch_dir("cli_badgraph");
    std::ofstream(dir / "g.json") << R"({"name":"x","input":{"h":8,"w":8,"c":3},"num_classes":2,
        "layers":[{"id":"a","kind":"relu","inputs":["b"],"params":{}},{"id":"b","kind":"relu","inputs":["a"],"params":{}}]})";
    const auto r = run({"analyze", (dir / "g.json").string()});
    EXPECT_EQ(r.code, exit_data);
    EXPECT_TRUE(contains(r.err, "cycle")) << r.err;
    std::ofstream(dir / "broken.json") << "{ nope";
    const auto b = run({"analyze", (dir / "broken.json").string()});
    EXPECT_EQ(b.code, exit_data);
    EXPECT_TRUE(contains(b.err, "broken.json")) << b.err;
}

TEST(Cli, PipelineSynthTrainEvalQuantizeInfer) {
    const auto dir = scratch_dir("cli_pipeline");
    const auto data = (dir / "data").string(), held = (dir / "held").string();
    ASSERT_EQ(run({"synth", data, "--n", "6", "--hw", "64", "--classes", "5", "--seed", "1"}).code, exit_ok);
    ASSERT_EQ(run({"synth", held, "--n", "3", "--hw", "64x64", "--classes", "5", "--seed", "2"}).code, exit_ok);
    EXPECT_EQ(read_manifest(data), (DatasetManifest{6, 64, 64, 5, 1}));

    const auto model = (dir / "m.aseg").string();
    const auto t = run({"train", "attendseg-mini", data, "-o", model, "--eval", held, "--epochs", "2", "--threads", "2"});
    ASSERT_EQ(t.code, exit_ok) << t.err;
    EXPECT_TRUE(contains(t.out, "epoch 1/2 loss "));
    EXPECT_TRUE(contains(t.out, "epoch 2/2 loss "));
    EXPECT_TRUE(contains(t.out, "pixel accuracy"));
    const auto model_bytes = slurp(model);

    // same invocation, same bytes
    const auto model2 = (dir / "m2.aseg").string();
    ASSERT_EQ(run({"train", "attendseg-mini", data, "-o", model2, "--eval", held, "--epochs", "2"}).code, exit_ok);
    EXPECT_EQ(slurp(model2), model_bytes);

    const auto e = run({"eval", model, held, "--report", (dir / "eval.json").string()});
    ASSERT_EQ(e.code, exit_ok) << e.err;
    EXPECT_TRUE(contains(e.out, "mean IoU"));
    EXPECT_TRUE(nlohmann::json::parse(slurp(dir / "eval.json")).contains("pixel_accuracy"));

    const auto q8 = (dir / "m.q8.aseg").string();
    ASSERT_EQ(run({"quantize", model, "-o", q8}).code, exit_ok);
    EXPECT_EQ(load_model(q8).precision, Precision::q8);
    EXPECT_LT(slurp(q8).size(), model_bytes.size());
    EXPECT_EQ(run({"quantize", model, "-o", q8, "--bits", "4"}).code, exit_usage);
    EXPECT_EQ(run({"quantize", q8, "-o", (dir / "again.aseg").string()}).code, exit_data);
    EXPECT_EQ(run({"eval", q8, held}).code, exit_ok);

    const auto overlay = (dir / "overlay.ppm").string(), labels = (dir / "labels.pgm").string();
    const auto i = run({"infer", q8, dataset_file(held, "img", 0, "ppm"), "-o", overlay, "--labels", labels});
    ASSERT_EQ(i.code, exit_ok) << i.err;
    EXPECT_EQ(slurp(overlay).substr(0, 2), "P6");
    EXPECT_EQ(load_image_ppm(overlay).shape(), (Shape{64, 64, 3}));
    EXPECT_EQ(load_labels_pgm(labels, 5).labels.size(), 64u * 64u);

    // wrong-size image for the graph
    const auto small = (dir / "small").string();
    ASSERT_EQ(run({"synth", small, "--n", "1", "--hw", "32", "--classes", "5"}).code, exit_ok);
    EXPECT_EQ(run({"infer", model, dataset_file(small, "img", 0, "ppm"), "-o", overlay}).code, exit_data);
    // dataset with more classes than the model
    const auto wide = (dir / "wide").string();
    ASSERT_EQ(run({"synth", wide, "--n", "1", "--hw", "64", "--classes", "8"}).code, exit_ok);
    EXPECT_EQ(run({"eval", model, wide}).code, exit_data);
}

TEST(Cli, CorruptModelIsADataError) {
    const auto dir = scratch_dir("cli_corrupt");
    std::ofstream(dir / "bad.aseg", std::ios::binary) << "NOPE0000000000000000";
    const auto r = run({"eval", (dir / "bad.aseg").string(), dir.string()});
    EXPECT_EQ(r.code, exit_data);
    EXPECT_TRUE(contains(r.err, "ASEG")) << r.err;
}

TEST(Cli, DivergentTrainingIsANumericError) {
    const auto dir = scratch_dir("cli_diverge");
    const auto data = (dir / "data").string();
    ASSERT_EQ(run({"synth", data, "--n", "4", "--hw", "64", "--classes", "5"}).code, exit_ok);
    const auto r = run({"train", "attendseg-mini", data, "-o", (dir / "m.aseg").string(), "--epochs", "3", "--lr", "1e30"});
    EXPECT_EQ(r.code, exit_numeric) << r.out << r.err;
    EXPECT_TRUE(contains(r.err, "layer")) << r.err;
}

TEST(Cli, SearchWritesHistory) {
    const auto dir = scratch_dir("cli_search");
    std::ofstream(dir / "s.json") << R"({"prototype":"attendseg-mini","budget":3,"seed":2,
        "indicator":{"min_accuracy":0.5},
        "short_train":{"train_samples":6,"eval_samples":3,"epochs":1,"batch_size":3}})";
    const auto hist = (dir / "h.tsv").string();
    const auto r = run({"search", (dir / "s.json").string(), "-o", hist, "--budget", "2"});
    ASSERT_EQ(r.code, exit_ok) << r.err;
    const auto text = slurp(hist);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);  // header + 2 rows
    EXPECT_EQ(text.rfind("index\t", 0), 0u);
    const auto hist2 = (dir / "h2.tsv").string();
    ASSERT_EQ(run({"search", (dir / "s.json").string(), "-o", hist2, "--budget", "2"}).code, exit_ok);
    EXPECT_EQ(slurp(hist2), text);

    std::ofstream(dir / "bad.json") << R"({"budget":3,"temperature":1})";
    EXPECT_EQ(run({"search", (dir / "bad.json").string(), "-o", hist}).code, exit_data);
}

TEST(Cli, ToolBinaryExitCodes) {
    const std::string tool = ATTENDSEG_TOOL;
    auto status = [](const std::string& cmd) {
        const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
        return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
    };
    EXPECT_EQ(status(tool + " --help"), 0);
    EXPECT_EQ(status(tool + " no-such-command"), 1);
    EXPECT_EQ(status(tool + " analyze attendseg-mini"), 0);
    EXPECT_EQ(status(tool + " analyze no-such-graph.json"), 2);
}
