#include "attendseg/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "attendseg/complexity.hpp"
#include "attendseg/dataset.hpp"
#include "attendseg/explorer.hpp"
#include "attendseg/parallel.hpp"
#include "attendseg/quant8.hpp"
#include "attendseg/reference.hpp"
#include "attendseg/serialize.hpp"
#include "attendseg/train.hpp"

namespace attendseg {
namespace {

using ojson = nlohmann::ordered_json;

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw FormatError(path + ": write failed");
}

// Prefixes the message with `path` unless it already names it.
template <typename Fn>
auto at_path(const std::string& path, Fn&& fn) {
    try {
        return fn();
    } catch (const NumericError&) {
        throw;
    } catch (const Error& e) {
        const std::string msg = e.what();
        if (msg.find(path) != std::string::npos) throw;
        throw FormatError(path + ": " + msg);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

// A graph argument is a JSON file path or a built-in reference name.
GraphSpec load_graph(const std::string& arg) {
    if (!std::filesystem::exists(arg) && (arg == "attendseg-512" || arg == "attendseg-mini")) {
        return reference_config(arg);
    }
    return at_path(arg, [&] {
        GraphSpec g = graph_from_text(read_text(arg));
        const auto diags = validate(g);
        if (!diags.empty()) {
            const auto& d = diags.front();
            throw FormatError("layer '" + d.layer + "' [" + d.rule + "]: " + d.message);
        }
        return g;
    });
}

Model load_model_arg(const std::string& path) { return at_path(path, [&] { return load_model(path); }); }

Dataset load_dataset_arg(const std::string& dir) { return at_path(dir, [&] { return read_dataset(dir); }); }

void check_classes(const std::string& dir, const Dataset& d, const GraphSpec& g) {
    if (d.manifest.classes != g.num_classes) {
        throw FormatError(dir + ": dataset has " + std::to_string(d.manifest.classes) + " classes but graph '" + g.name +
                          "' predicts " + std::to_string(g.num_classes));
    }
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

ojson eval_to_json(const EvalResult& r) {
    ojson j;
    j["pixel_accuracy"] = r.pixel_accuracy;
    j["mean_iou"] = r.mean_iou;
    auto per = ojson::array();
    for (const auto& v : r.per_class_iou) per.push_back(v ? ojson(*v) : ojson(nullptr));
    j["per_class_iou"] = std::move(per);
    j["confusion"] = r.confusion;
    return j;
}

void print_eval(std::ostream& out, const EvalResult& r) {
    out << "pixel accuracy " << fmt("%.6f", r.pixel_accuracy) << "\n";
    out << "mean IoU       " << fmt("%.6f", r.mean_iou) << "\n";
    for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
        out << "  class " << c << " IoU " << (r.per_class_iou[c] ? fmt("%.6f", *r.per_class_iou[c]) : "n/a") << "\n";
    }
}

ojson candidate_to_json(const Candidate& c) {
    ojson j;
    j["index"] = c.index;
    j["knobs"] = knobs_to_string(c.knobs);
    j["accuracy"] = c.metrics->accuracy;
    j["q8_accuracy"] = c.metrics->q8_accuracy;
    j["params"] = c.metrics->params;
    j["macs"] = c.metrics->macs;
    j["omega"] = *c.u_score;
    j["feasible"] = c.feasible;
    return j;
}

struct Common {
    std::size_t threads = 0;
    std::string report;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--threads", c.threads, "Cap on worker threads (default: ATTENDSEG_THREADS or all cores)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--report", c.report, "Also write a machine-readable JSON report to this path");
}

void write_report(const Common& c, const ojson& j) {
    if (!c.report.empty()) write_text(c.report, j.dump(2) + "\n");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"attendseg: compact segmentation networks with attention condensers", "attendseg"};
    app.require_subcommand(1);
    Common common;

    // analyze
    std::string a_graph, a_cards;
    auto* analyze_cmd = app.add_subcommand("analyze", "Complexity report and comparison against the published cards");
    analyze_cmd->add_option("graph", a_graph, "Graph JSON file or reference name (attendseg-512, attendseg-mini)")
        ->required();
    analyze_cmd->add_option("--cards", a_cards, "JSON array of model cards to compare against (default: built-in)");
    add_common(analyze_cmd, common);

    // train
    std::string t_graph, t_data, t_out, t_eval;
    TrainConfig tcfg;
    auto* train_cmd = app.add_subcommand("train", "Train a graph on a dataset directory and save the model");
    train_cmd->add_option("graph", t_graph, "Graph JSON file or reference name")->required();
    train_cmd->add_option("dataset", t_data, "Dataset directory (see synth)")->required()->check(CLI::ExistingDirectory);
    train_cmd->add_option("-o,--output", t_out, "Output model file")->required();
    train_cmd->add_option("--eval", t_eval, "Held-out dataset directory (default: the training set)")
        ->check(CLI::ExistingDirectory);
    train_cmd->add_option("--epochs", tcfg.epochs, "Training epochs")->capture_default_str();
    train_cmd->add_option("--batch-size", tcfg.batch_size, "Minibatch size")->capture_default_str();
    train_cmd->add_option("--lr", tcfg.learning_rate, "Learning rate")->capture_default_str();
    train_cmd->add_option("--momentum", tcfg.momentum, "SGD momentum")->capture_default_str();
    train_cmd->add_option("--seed", tcfg.seed, "Seed for weight init and shuffling")->capture_default_str();
    add_common(train_cmd, common);

    // eval
    std::string e_model, e_data;
    auto* eval_cmd = app.add_subcommand("eval", "Pixel accuracy and IoU of a model on a dataset directory");
    eval_cmd->add_option("model", e_model, "Model file (f32 or q8)")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("dataset", e_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    add_common(eval_cmd, common);

    // quantize
    std::string q_model, q_out;
    unsigned q_bits = 8;
    auto* quant_cmd = app.add_subcommand("quantize", "Post-training 8-bit weight quantization");
    quant_cmd->add_option("model", q_model, "f32 model file")->required()->check(CLI::ExistingFile);
    quant_cmd->add_option("-o,--output", q_out, "Output q8 model file")->required();
    quant_cmd->add_option("--bits", q_bits, "Weight bit width (only 8 is supported)")
        ->capture_default_str()
        ->check(CLI::IsMember({8u}));
    add_common(quant_cmd, common);

    // infer
    std::string i_model, i_image, i_out, i_labels;
    auto* infer_cmd = app.add_subcommand("infer", "Segment one PPM image and write a color overlay");
    infer_cmd->add_option("model", i_model, "Model file (f32 or q8)")->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("image", i_image, "Input P6 image")->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("-o,--output", i_out, "Output overlay P6 image")->required();
    infer_cmd->add_option("--labels", i_labels, "Also write the argmax label map as P5");
    add_common(infer_cmd, common);

    // search
    std::string s_config, s_out;
    std::optional<std::size_t> s_budget;
    std::optional<std::uint64_t> s_seed;
    auto* search_cmd = app.add_subcommand("search", "Seeded design exploration over a prototype's knob space");
    search_cmd->add_option("config", s_config, "Search config JSON")->required()->check(CLI::ExistingFile);
    search_cmd->add_option("-o,--output", s_out, "History file, one tab-separated row per candidate")->required();
    search_cmd->add_option("--budget", s_budget, "Override the number of evaluated candidates");
    search_cmd->add_option("--seed", s_seed, "Override the search seed");
    add_common(search_cmd, common);

    // synth
    std::string y_dir, y_hw = "64";
    std::size_t y_n = 200, y_classes = 5;
    std::uint64_t y_seed = 1;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic segmentation dataset directory");
    synth_cmd->add_option("dir", y_dir, "Output directory")->required();
    synth_cmd->add_option("--n", y_n, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
    synth_cmd->add_option("--hw", y_hw, "Image size, N or HxW")->capture_default_str();
    synth_cmd->add_option("--classes", y_classes, "Number of classes, background included")->capture_default_str();
    synth_cmd->add_option("--seed", y_seed, "Dataset seed")->capture_default_str();
    add_common(synth_cmd, common);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        err << app.help();
        return exit_usage;
    }
    set_num_threads(common.threads);
    try {
        if (*analyze_cmd) {
            const GraphSpec g = load_graph(a_graph);
            const auto report = analyze(g);
            const auto sp = structural_properties(g);
            out << format_report(report);
            out << "structure: " << sp.condensers << " condensers, " << sp.depthwise << " depthwise, " << sp.pointwise
                << " pointwise, " << sp.refine_edges << " refinement edges over " << sp.encoder_scales
                << " encoder scales, max conv stride " << sp.max_conv_stride << "\n";
            auto cards = a_cards.empty() ? published_cards()
                                         : at_path(a_cards, [&] { return cards_from_json(nlohmann::json::parse(read_text(a_cards))); });
            cards.push_back(card_from_report(report, 8, g.name + " (8-bit)"));
            ojson tables = ojson::array();
            for (const char* base : {"RefineNet", "EdgeSegNet"}) {
                bool present = false;
                for (const auto& c : cards) present = present || c.name == base;
                if (!present) continue;
                const auto t = compare(cards, base);
                out << "\n" << format_ratio_table(t);
                tables.push_back(ratio_table_to_json(t));
            }
            ojson j = report_to_json(report);
            j["structure"] = {{"condensers", sp.condensers},
                              {"depthwise", sp.depthwise},
                              {"pointwise", sp.pointwise},
                              {"refine_edges", sp.refine_edges},
                              {"encoder_scales", sp.encoder_scales},
                              {"max_conv_stride", sp.max_conv_stride}};
            j["ratios"] = std::move(tables);
            write_report(common, j);
        } else if (*train_cmd) {
            tcfg.check();
            const GraphSpec g = load_graph(t_graph);
            const Dataset data = load_dataset_arg(t_data);
            check_classes(t_data, data, g);
            const auto result = train(init_model(g, tcfg.seed), data.samples, tcfg, [&](std::size_t e, double l) {
                out << "epoch " << (e + 1) << "/" << tcfg.epochs << " loss " << fmt("%.6f", l) << "\n";
            });
            save_model(result.model, t_out);
            const Dataset held = t_eval.empty() ? Dataset{} : load_dataset_arg(t_eval);
            if (!t_eval.empty()) check_classes(t_eval, held, g);
            const auto& eval_set = t_eval.empty() ? data.samples : held.samples;
            const auto ev = at_path(t_eval.empty() ? t_data : t_eval, [&] { return evaluate(result.model, eval_set); });
            out << "saved " << t_out << "\n";
            out << "evaluated on " << (t_eval.empty() ? t_data : t_eval) << "\n";
            print_eval(out, ev);
            ojson j;
            j["loss_curve"] = result.loss_curve;
            j["eval"] = eval_to_json(ev);
            write_report(common, j);
        } else if (*eval_cmd) {
            const Model m = load_model_arg(e_model);
            const Dataset data = load_dataset_arg(e_data);
            check_classes(e_data, data, m.graph);
            const auto ev = at_path(e_data, [&] { return evaluate(m, data.samples); });
            out << "model " << m.graph.name << " (" << to_string(m.precision) << ") on " << e_data << "\n";
            print_eval(out, ev);
            write_report(common, eval_to_json(ev));
        } else if (*quant_cmd) {
            const Model m = load_model_arg(q_model);
            const auto q = at_path(q_model, [&] { return quantize_model(m); });
            save_model(q.model, q_out);
            out << "quantized " << q.report.tensors.size() << " weight tensors (" << q.report.quantized_params
                << " int8 values, " << q.report.f32_params << " f32 bias values)\n";
            char line[160];
            std::snprintf(line, sizeof line, "%-26s %14s %14s %14s\n", "tensor", "scale", "max |err|", "mean |err|");
            out << line;
            ojson rows = ojson::array();
            for (const auto& s : q.report.tensors) {
                std::snprintf(line, sizeof line, "%-26s %14.6e %14.6e %14.6e\n", s.name.c_str(), s.scale,
                              s.max_abs_error, s.mean_abs_error);
                out << line;
                rows.push_back({{"name", s.name},
                                {"scale", s.scale},
                                {"max_abs_error", s.max_abs_error},
                                {"mean_abs_error", s.mean_abs_error}});
            }
            out << "saved " << q_out << "\n";
            write_report(common, ojson{{"tensors", rows},
                                       {"quantized_params", q.report.quantized_params},
                                       {"f32_params", q.report.f32_params}});
        } else if (*infer_cmd) {
            const Model m = load_model_arg(i_model);
            const Tensor image = at_path(i_image, [&] { return load_image_ppm(i_image); });
            if (image.dim(0) != m.graph.input_h || image.dim(1) != m.graph.input_w) {
                throw FormatError(i_image + ": image is " + std::to_string(image.dim(0)) + "x" +
                                  std::to_string(image.dim(1)) + " but model '" + m.graph.name + "' expects " +
                                  std::to_string(m.graph.input_h) + "x" + std::to_string(m.graph.input_w));
            }
            const Model f32 = m.precision == Precision::q8 ? dequantized_model(m) : m;
            const Tensor probs = forward(f32, image.reshaped(Shape{1, image.dim(0), image.dim(1), image.dim(2)}));
            const LabelMap labels = argmax_labels(probs).front();
            write_overlay_ppm(image, labels, default_palette(m.graph.num_classes), i_out);
            if (!i_labels.empty()) write_labels_pgm(labels, i_labels);
            std::vector<std::uint64_t> hist(m.graph.num_classes, 0);
            for (auto v : labels.labels) ++hist[v];
            out << "wrote " << i_out << "\nclass pixel counts:";
            for (auto h : hist) out << " " << h;
            out << "\n";
            write_report(common, ojson{{"class_pixels", hist}});
        } else if (*search_cmd) {
            SearchConfig cfg =
                at_path(s_config, [&] { return search_config_from_json(nlohmann::json::parse(read_text(s_config))); });
            if (s_budget) cfg.budget = *s_budget;
            if (s_seed) cfg.seed = *s_seed;
            if (cfg.budget == 0) throw FormatError("--budget must be >= 1");
            const Prototype proto = at_path(s_config, [&] { return prototype_by_name(cfg.prototype); });
            const auto evaluator = short_train_evaluator(cfg.short_train, proto.base.num_classes, proto.base.input_h,
                                                         proto.base.input_w);
            std::ofstream hist(s_out, std::ios::trunc);
            if (!hist) throw FormatError(s_out + ": cannot open for writing");
            hist << history_header();
            const auto r = explore(proto, cfg.perf, cfg.indicator, cfg.budget, cfg.seed, evaluator, [&](const Candidate& c) {
                hist << history_row(c) << std::flush;
                out << "candidate " << c.index << " acc " << fmt("%.4f", c.metrics->accuracy) << " omega "
                    << fmt("%.3f", *c.u_score) << (c.feasible ? " feasible" : " infeasible") << "\n";
            });
            if (!hist) throw FormatError(s_out + ": write failed");
            out << (r.feasible_found ? "incumbent" : "no feasible candidate; best infeasible") << ": candidate "
                << r.best.index << " [" << knobs_to_string(r.best.knobs) << "] acc "
                << fmt("%.4f", r.best.metrics->accuracy) << " q8 " << fmt("%.4f", r.best.metrics->q8_accuracy)
                << " params " << r.best.metrics->params << " MACs " << r.best.metrics->macs << " omega "
                << fmt("%.4f", *r.best.u_score) << "\n";
            ojson hj = ojson::array();
            for (const auto& c : r.history) hj.push_back(candidate_to_json(c));
            write_report(common, ojson{{"feasible_found", r.feasible_found},
                                       {"best", candidate_to_json(r.best)},
                                       {"best_graph", graph_to_json(r.best.graph)},
                                       {"history", hj}});
        } else if (*synth_cmd) {
            std::size_t h = 0, w = 0;
            char tail = 0;
            if (std::sscanf(y_hw.c_str(), "%zux%zu%c", &h, &w, &tail) == 2) {
            } else if (std::sscanf(y_hw.c_str(), "%zu%c", &h, &tail) == 1) {
                w = h;
            } else {
                err << "error: --hw expects N or HxW, got '" << y_hw << "'\n" << synth_cmd->help();
                return exit_usage;
            }
            const auto samples = synth_dataset(y_n, h, w, y_classes, y_seed);
            write_dataset(y_dir, samples, DatasetManifest{y_n, h, w, y_classes, y_seed});
            out << "wrote " << y_n << " samples (" << h << "x" << w << ", " << y_classes << " classes, seed " << y_seed
                << ") to " << y_dir << "\n";
            write_report(common, ojson{{"dir", y_dir}, {"count", y_n}, {"height", h}, {"width", w},
                                       {"classes", y_classes}, {"seed", y_seed}});
        }
    } catch (const NumericError& e) {
        err << "numerical failure" << (e.layer().empty() ? "" : " in layer '" + e.layer() + "'") << ": " << e.what()
            << "\n";
        return exit_numeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_data;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_data;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return exit_data;
    }
    return exit_ok;
}

}  // namespace attendseg
