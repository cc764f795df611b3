#pragma once

// Constrained design exploration: maximize a NetScore-style universal
// performance function over a prototype's knob space, subject to an
// indicator of operational requirements (accuracy floor, 8-bit weights).
// The generator is a seeded mutate/resample loop around the incumbent.

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attendseg/complexity.hpp"
#include "attendseg/dataset.hpp"
#include "attendseg/quant8.hpp"
#include "attendseg/reference.hpp"
#include "attendseg/train.hpp"

namespace attendseg {

struct UniversalPerf {
    double kappa = 2.0;  ///< accuracy exponent
    double beta = 0.5;   ///< parameter exponent
    double gamma = 0.5;  ///< MAC exponent
};

/// Omega = 20 log10(a^kappa / (p^beta m^gamma)), with a in percent, p in
/// millions of parameters and m in billions of MACs.
inline double u_score(double accuracy_pct, double params_m, double macs_g, const UniversalPerf& u = {}) {
    if (!(u.kappa > 0 && u.beta > 0 && u.gamma > 0)) throw FormatError("u_score: exponents must be positive");
    if (params_m <= 0 || macs_g <= 0) throw FormatError("u_score: params and MACs must be positive");
    if (accuracy_pct <= 0) return -std::numeric_limits<double>::infinity();
    return 20.0 * (u.kappa * std::log10(accuracy_pct) - u.beta * std::log10(params_m) - u.gamma * std::log10(macs_g));
}

struct IndicatorSpec {
    double min_accuracy = 0.8;  ///< fraction on the held-out toy set
    bool require_q8 = true;     ///< q8 accuracy may drop by at most max_q8_drop_points
    double max_q8_drop_points = 2.0;
};

/// Knob assignment over the prototype. Widths are multipliers of the
/// prototype's stage widths.
struct Knobs {
    std::vector<double> width_mult;
    std::vector<std::size_t> condensers;
    double embed_ratio = 0.25;
    std::vector<bool> refine_mask;
    std::vector<std::size_t> strides;
    bool operator==(const Knobs&) const = default;
};

struct KnobBounds {
    std::vector<double> width_mults = {0.5, 0.75, 1.0, 1.25};
    std::size_t max_condensers = 3;
    std::vector<double> embed_ratios = {0.125, 0.25, 0.5};
    std::vector<std::size_t> strides = {1, 2};
};

struct Prototype {
    ArchKnobs base;
    KnobBounds bounds;

    Knobs pinned() const {
        Knobs k;
        for (const auto& s : base.stages) {
            k.width_mult.push_back(1.0);
            k.condensers.push_back(s.condensers);
            k.strides.push_back(s.stride);
        }
        k.embed_ratio = base.embed_ratio;
        k.refine_mask = base.refine_mask;
        return k;
    }

    ArchKnobs realize_knobs(const Knobs& k) const {
        ArchKnobs a = base;
        for (std::size_t s = 0; s < a.stages.size(); ++s) {
            const double w = static_cast<double>(base.stages[s].width) * k.width_mult.at(s);
            a.stages[s].width = std::max<std::size_t>(4, static_cast<std::size_t>(std::lround(w / 4.0)) * 4);
            a.stages[s].condensers = k.condensers.at(s);
            a.stages[s].stride = k.strides.at(s);
        }
        a.embed_ratio = k.embed_ratio;
        a.refine_mask = k.refine_mask;
        return a;
    }

    GraphSpec realize(const Knobs& k) const { return build_family_graph(realize_knobs(k)); }
};

inline std::string knobs_to_string(const Knobs& k) {
    std::ostringstream os;
    auto list = [&](const auto& v) {
        for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    };
    os << "w=";
    list(k.width_mult);
    os << " c=";
    list(k.condensers);
    os << " e=" << k.embed_ratio << " m=";
    for (bool b : k.refine_mask) os << (b ? '1' : '0');
    os << " s=";
    list(k.strides);
    return os.str();
}

struct CandidateMetrics {
    double accuracy = 0;     ///< pixel accuracy, fraction
    double q8_accuracy = 0;  ///< after weight quantization
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
};

struct Candidate {
    std::size_t index = 0;
    Knobs knobs;
    GraphSpec graph;
    std::optional<CandidateMetrics> metrics;
    std::optional<double> u_score;
    bool feasible = false;
};

inline double u_score(const CandidateMetrics& m, const UniversalPerf& u) {
    return u_score(m.accuracy * 100.0, static_cast<double>(m.params) / 1e6, static_cast<double>(m.macs) / 1e9, u);
}

inline bool indicator(const CandidateMetrics& m, const IndicatorSpec& ind) {
    if (m.accuracy < ind.min_accuracy) return false;
    if (ind.require_q8 && (m.accuracy - m.q8_accuracy) * 100.0 > ind.max_q8_drop_points) return false;
    return true;
}

/// Index of the feasible candidate with maximal Omega (earliest on ties).
inline std::optional<std::size_t> select_incumbent(const std::vector<Candidate>& history) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& c = history[i];
        if (!c.feasible || !c.u_score) continue;
        if (!best || *c.u_score > *history[*best].u_score) best = i;
    }
    return best;
}

/// Fixed mini-budget used to score each candidate.
struct ShortTrain {
    std::size_t train_samples = 100;
    std::size_t eval_samples = 50;
    std::uint64_t data_seed = 3;
    TrainConfig train{5, 8, 0.05, 0.9, 7};
};

struct ExploreResult {
    Candidate best;
    bool feasible_found = false;
    std::vector<Candidate> history;
    std::vector<std::optional<double>> incumbent_trace;  ///< incumbent Omega after each evaluation
};

using CandidateEvaluator = std::function<CandidateMetrics(const GraphSpec&)>;

/// Trains a fresh model of the graph on the toy set and measures f32 and q8
/// held-out pixel accuracy plus complexity.
inline CandidateEvaluator short_train_evaluator(const ShortTrain& st, std::size_t classes, std::size_t h,
                                                std::size_t w) {
    auto train_set = std::make_shared<std::vector<Sample>>(synth_dataset(st.train_samples, h, w, classes, st.data_seed));
    auto eval_set =
        std::make_shared<std::vector<Sample>>(synth_dataset(st.eval_samples, h, w, classes, st.data_seed + 1000003));
    return [st, train_set, eval_set](const GraphSpec& g) {
        CandidateMetrics m;
        const auto report = analyze(g);
        m.params = report.total_params;
        m.macs = report.total_macs;
        const auto trained = train(init_model(g, st.train.seed), *train_set, st.train);
        m.accuracy = evaluate(trained.model, *eval_set).pixel_accuracy;
        m.q8_accuracy = evaluate(quantize_model(trained.model).model, *eval_set).pixel_accuracy;
        return m;
    };
}

namespace detail {

template <typename V>
auto pick(const V& options, Rng& rng) {
    return options[rng.below(options.size())];
}

inline Knobs resample(const Prototype& p, Rng& rng) {
    Knobs k = p.pinned();
    for (std::size_t s = 0; s < k.width_mult.size(); ++s) {
        k.width_mult[s] = pick(p.bounds.width_mults, rng);
        k.condensers[s] = rng.below(p.bounds.max_condensers + 1);
        k.strides[s] = pick(p.bounds.strides, rng);
    }
    k.embed_ratio = pick(p.bounds.embed_ratios, rng);
    for (std::size_t i = 0; i < k.refine_mask.size(); ++i) k.refine_mask[i] = rng.bernoulli(0.5);
    return k;
}

// Changes exactly one knob to a different value.
inline Knobs mutate(const Prototype& p, const Knobs& from, Rng& rng) {
    Knobs k = from;
    const std::size_t stages = k.width_mult.size();
    for (int attempt = 0; attempt < 64 && k == from; ++attempt) {
        switch (rng.below(5)) {
            case 0: k.width_mult[rng.below(stages)] = pick(p.bounds.width_mults, rng); break;
            case 1: k.condensers[rng.below(stages)] = rng.below(p.bounds.max_condensers + 1); break;
            case 2: k.embed_ratio = pick(p.bounds.embed_ratios, rng); break;
            case 3: {
                const std::size_t i = rng.below(k.refine_mask.size());
                k.refine_mask[i] = !k.refine_mask[i];
                break;
            }
            default: k.strides[rng.below(stages)] = pick(p.bounds.strides, rng); break;
        }
    }
    return k;
}

}  // namespace detail

/// Candidate 0 is the prototype itself. Each later candidate mutates the
/// incumbent (or the prototype while none is feasible) with probability 0.7,
/// otherwise resamples every knob uniformly.
inline ExploreResult explore(const Prototype& proto, const UniversalPerf& u, const IndicatorSpec& ind,
                             std::size_t budget, std::uint64_t seed, const CandidateEvaluator& evaluate_candidate,
                             const std::function<void(const Candidate&)>& on_candidate = {}) {
    if (budget == 0) throw FormatError("explore: budget must be >= 1");
    Rng rng(seed);
    ExploreResult r;
    std::optional<std::size_t> incumbent;
    for (std::size_t i = 0; i < budget; ++i) {
        Candidate c;
        c.index = i;
        if (i == 0) {
            c.knobs = proto.pinned();
        } else {
            const Knobs& parent = incumbent ? r.history[*incumbent].knobs : proto.pinned();
            c.knobs = rng.bernoulli(0.7) ? detail::mutate(proto, parent, rng) : detail::resample(proto, rng);
        }
        c.graph = proto.realize(c.knobs);
        c.metrics = evaluate_candidate(c.graph);
        c.u_score = attendseg::u_score(*c.metrics, u);
        c.feasible = indicator(*c.metrics, ind);
        r.history.push_back(c);
        incumbent = select_incumbent(r.history);
        r.incumbent_trace.push_back(incumbent ? r.history[*incumbent].u_score : std::nullopt);
        if (on_candidate) on_candidate(r.history.back());
    }
    if (incumbent) {
        r.best = r.history[*incumbent];
        r.feasible_found = true;
    } else {
        std::size_t best = 0;
        for (std::size_t i = 1; i < r.history.size(); ++i) {
            if (*r.history[i].u_score > *r.history[best].u_score) best = i;
        }
        r.best = r.history[best];
    }
    return r;
}

inline std::string history_header() { return "index\tknobs\taccuracy\tq8_accuracy\tparams\tmacs\tomega\tfeasible\n"; }

inline std::string history_row(const Candidate& c) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    const auto& m = *c.metrics;
    os << c.index << '\t' << knobs_to_string(c.knobs) << '\t' << m.accuracy << '\t' << m.q8_accuracy << '\t'
       << m.params << '\t' << m.macs << '\t' << *c.u_score << '\t' << (c.feasible ? 1 : 0) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Search config file

struct SearchConfig {
    std::string prototype = "attendseg-mini";
    std::size_t budget = 20;
    std::uint64_t seed = 11;
    UniversalPerf perf;
    IndicatorSpec indicator;
    ShortTrain short_train;
};

inline SearchConfig search_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, {"prototype", "budget", "seed", "universal_perf", "indicator", "short_train"}, "search");
    SearchConfig c;
    try {
        if (j.contains("prototype")) c.prototype = j.at("prototype").get<std::string>();
        if (j.contains("budget")) c.budget = j.at("budget").get<std::size_t>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("universal_perf")) {
            const auto& u = j.at("universal_perf");
            detail::reject_unknown(u, {"kappa", "beta", "gamma"}, "search.universal_perf");
            c.perf.kappa = u.value("kappa", c.perf.kappa);
            c.perf.beta = u.value("beta", c.perf.beta);
            c.perf.gamma = u.value("gamma", c.perf.gamma);
        }
        if (j.contains("indicator")) {
            const auto& i = j.at("indicator");
            detail::reject_unknown(i, {"min_accuracy", "require_q8", "max_q8_drop_points"}, "search.indicator");
            c.indicator.min_accuracy = i.value("min_accuracy", c.indicator.min_accuracy);
            c.indicator.require_q8 = i.value("require_q8", c.indicator.require_q8);
            c.indicator.max_q8_drop_points = i.value("max_q8_drop_points", c.indicator.max_q8_drop_points);
        }
        if (j.contains("short_train")) {
            const auto& s = j.at("short_train");
            detail::reject_unknown(s,
                                   {"train_samples", "eval_samples", "data_seed", "epochs", "batch_size",
                                    "learning_rate", "momentum", "train_seed"},
                                   "search.short_train");
            auto& st = c.short_train;
            st.train_samples = s.value("train_samples", st.train_samples);
            st.eval_samples = s.value("eval_samples", st.eval_samples);
            st.data_seed = s.value("data_seed", st.data_seed);
            st.train.epochs = s.value("epochs", st.train.epochs);
            st.train.batch_size = s.value("batch_size", st.train.batch_size);
            st.train.learning_rate = s.value("learning_rate", st.train.learning_rate);
            st.train.momentum = s.value("momentum", st.train.momentum);
            st.train.seed = s.value("train_seed", st.train.seed);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("search config: ") + e.what());
    }
    if (c.budget == 0) throw FormatError("search config: budget must be >= 1");
    if (!(c.indicator.min_accuracy > 0 && c.indicator.min_accuracy < 1)) {
        throw FormatError("search config: indicator.min_accuracy must be in (0, 1)");
    }
    if (!(c.perf.kappa > 0 && c.perf.beta > 0 && c.perf.gamma > 0)) {
        throw FormatError("search config: universal_perf exponents must be positive");
    }
    c.short_train.train.check();
    return c;
}

inline Prototype prototype_by_name(const std::string& name) {
    if (name == "attendseg-mini") return {attendseg_mini_knobs(), {}};
    if (name == "attendseg-512") return {attendseg_512_knobs(), {}};
    throw FormatError("unknown prototype '" + name + "'");
}

}  // namespace attendseg
