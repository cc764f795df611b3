#pragma once

// Loss, SGD+momentum training and segmentation metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "attendseg/dataset.hpp"
#include "attendseg/model.hpp"
#include "attendseg/quant8.hpp"
#include "attendseg/random.hpp"

namespace attendseg {

inline constexpr double kLogClamp = 1e-12;

template <typename T>
struct LossResult {
    double loss = 0;
    BasicTensor<T> grad;  ///< d loss / d pred
};

/// Mean over pixels of -log(max(pred[label], 1e-12)). `pred` is the
/// post-softmax [N,H,W,C] tensor; labels hold one map per batch entry.
template <typename T>
LossResult<T> cross_entropy_loss(const BasicTensor<T>& pred, const std::vector<const LabelMap*>& labels) {
    if (pred.shape().rank() != 4 || pred.dim(0) != labels.size()) {
        throw ShapeError("cross_entropy: prediction " + pred.shape().str() + " does not match " +
                         std::to_string(labels.size()) + " label maps");
    }
    const std::size_t n = pred.dim(0), h = pred.dim(1), w = pred.dim(2), c = pred.dim(3);
    const double pixels = static_cast<double>(n * h * w);
    LossResult<T> r{0.0, BasicTensor<T>(pred.shape())};
    for (std::size_t b = 0; b < n; ++b) {
        const LabelMap& lm = *labels[b];
        if (lm.height != h || lm.width != w) throw ShapeError("cross_entropy: label map size mismatch");
        for (std::size_t p = 0; p < h * w; ++p) {
            const std::size_t cls = lm.labels[p];
            if (cls >= c) {
                throw FormatError("cross_entropy: label " + std::to_string(cls) + " out of range for " +
                                  std::to_string(c) + " classes");
            }
            const std::size_t idx = (b * h * w + p) * c + cls;
            const double prob = static_cast<double>(pred[idx]);
            if (prob > kLogClamp) {
                r.loss -= std::log(prob);
                r.grad[idx] = static_cast<T>(-1.0 / (pixels * prob));
            } else {
                r.loss -= std::log(kLogClamp);
            }
        }
    }
    r.loss /= pixels;
    return r;
}

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 8;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 7;

    void check() const {
        if (epochs == 0 || batch_size == 0) throw FormatError("train: epochs and batch_size must be >= 1");
        if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw FormatError("train: learning_rate must be >= 0");
        if (!(momentum >= 0 && momentum < 1)) throw FormatError("train: momentum must be in [0, 1)");
    }
};

struct TrainResult {
    Model model;
    std::vector<double> loss_curve;  ///< mean minibatch loss per epoch
};

/// Stacks images [H,W,3] into a batch [N,H,W,3].
inline Tensor make_batch(const std::vector<Sample>& data, const std::vector<std::size_t>& idx, std::size_t begin,
                         std::size_t end) {
    const Shape& s = data.at(idx[begin]).image.shape();
    Tensor batch(Shape{end - begin, s[0], s[1], s[2]});
    std::size_t off = 0;
    for (std::size_t i = begin; i < end; ++i) {
        const auto& img = data[idx[i]].image;
        if (img.shape() != s) throw ShapeError("make_batch: image sizes differ within the dataset");
        std::copy(img.data().begin(), img.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(off));
        off += img.size();
    }
    return batch;
}

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

/// SGD with momentum over minibatches shuffled from cfg.seed. A non-finite
/// activation aborts with NumericError naming the first offending layer.
inline TrainResult train(const Model& initial, const std::vector<Sample>& data, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
    cfg.check();
    if (initial.precision != Precision::f32) throw Error("train: model must be f32");
    if (data.empty()) throw FormatError("train: empty dataset");
    check_model(initial);
    GraphExecutor<float> exec(initial.graph);

    TrainResult r{initial, {}};
    ParamMap<float>& params = r.model.weights;
    ParamMap<float> velocity;
    for (const auto& [name, t] : params) velocity.emplace(name, Tensor(t.shape()));

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const auto lr = static_cast<float>(cfg.learning_rate);
    const auto mom = static_cast<float>(cfg.momentum);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double epoch_loss = 0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(order.size(), b + cfg.batch_size);
            const Tensor x = make_batch(data, order, b, e);
            std::vector<const LabelMap*> labels;
            for (std::size_t i = b; i < e; ++i) labels.push_back(&data[order[i]].labels);

            Tape<float> tape;
            const Tensor pred = exec.forward(params, x, &tape, true);
            const auto loss = cross_entropy_loss(pred, labels);
            if (!std::isfinite(loss.loss)) throw NumericError("training loss became non-finite", "loss");
            const auto grads = exec.backward(params, tape, loss.grad);
            for (auto& [name, w] : params) {
                const Tensor& g = grads.at(name);
                Tensor& v = velocity.at(name);
                for (std::size_t k = 0; k < w.size(); ++k) {
                    v[k] = mom * v[k] + g[k];
                    w[k] -= lr * v[k];
                }
                if (!w.all_finite()) {
                    throw NumericError("parameter '" + name + "' became non-finite", name.substr(0, name.find('/')));
                }
            }
            epoch_loss += loss.loss;
            ++batches;
        }
        r.loss_curve.push_back(epoch_loss / static_cast<double>(batches));
        if (on_epoch) on_epoch(epoch, r.loss_curve.back());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Metrics

struct EvalResult {
    double pixel_accuracy = 0;
    std::vector<std::optional<double>> per_class_iou;  ///< empty when the class never occurs
    double mean_iou = 0;                                ///< over classes present in ground truth
    std::vector<std::vector<std::uint64_t>> confusion;  ///< [truth][pred]
};

/// Per-pixel argmax of a [N,H,W,C] distribution (ties go to the lower class).
inline std::vector<LabelMap> argmax_labels(const Tensor& probs) {
    const std::size_t n = probs.dim(0), h = probs.dim(1), w = probs.dim(2), c = probs.dim(3);
    std::vector<LabelMap> out(n, LabelMap{h, w, std::vector<std::uint8_t>(h * w)});
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t p = 0; p < h * w; ++p) {
            const float* row = probs.ptr() + (b * h * w + p) * c;
            out[b].labels[p] = static_cast<std::uint8_t>(std::max_element(row, row + c) - row);
        }
    }
    return out;
}

inline EvalResult evaluate_predictions(const std::vector<LabelMap>& pred, const std::vector<const LabelMap*>& truth,
                                       std::size_t classes) {
    if (pred.size() != truth.size()) throw ShapeError("evaluate: prediction and ground-truth counts differ");
    EvalResult r;
    r.confusion.assign(classes, std::vector<std::uint64_t>(classes, 0));
    std::uint64_t correct = 0, total = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].labels.size() != truth[i]->labels.size()) throw ShapeError("evaluate: label map sizes differ");
        for (std::size_t p = 0; p < pred[i].labels.size(); ++p) {
            const std::size_t t = truth[i]->labels[p], q = pred[i].labels[p];
            if (t >= classes || q >= classes) throw FormatError("evaluate: label outside class range");
            ++r.confusion[t][q];
            correct += (t == q);
            ++total;
        }
    }
    r.pixel_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    double iou_sum = 0;
    std::size_t present = 0;
    r.per_class_iou.resize(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        std::uint64_t tp = r.confusion[c][c], fp = 0, fn = 0;
        for (std::size_t k = 0; k < classes; ++k) {
            if (k == c) continue;
            fp += r.confusion[k][c];
            fn += r.confusion[c][k];
        }
        if (tp + fp + fn > 0) r.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        if (tp + fn > 0) {
            iou_sum += *r.per_class_iou[c];
            ++present;
        }
    }
    r.mean_iou = present ? iou_sum / static_cast<double>(present) : 0.0;
    return r;
}

/// Runs the model (f32 or q8) over the dataset in fixed-size chunks.
inline std::vector<LabelMap> predict(const Model& m, const std::vector<Sample>& data, std::size_t chunk = 16) {
    const Model f32 = m.precision == Precision::q8 ? dequantized_model(m) : Model{};
    const Model& run = m.precision == Precision::q8 ? f32 : m;
    GraphExecutor<float> exec(run.graph);
    std::vector<std::size_t> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<LabelMap> out;
    for (std::size_t b = 0; b < data.size(); b += chunk) {
        const std::size_t e = std::min(data.size(), b + chunk);
        for (auto& lm : argmax_labels(exec.forward(run.weights, make_batch(data, idx, b, e)))) out.push_back(std::move(lm));
    }
    return out;
}

inline EvalResult evaluate(const Model& m, const std::vector<Sample>& data) {
    const std::size_t classes = m.graph.num_classes;
    std::vector<const LabelMap*> truth;
    for (const auto& s : data) {
        for (auto v : s.labels.labels) {
            if (v >= classes) {
                throw FormatError("evaluate: dataset label " + std::to_string(v) + " exceeds model class count " +
                                  std::to_string(classes));
            }
        }
        truth.push_back(&s.labels);
    }
    if (data.empty()) return evaluate_predictions({}, {}, classes);
    return evaluate_predictions(predict(m, data), truth, classes);
}

}  // namespace attendseg
