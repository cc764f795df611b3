#pragma once

// MAC / parameter / weight-memory accounting.
//
// Convention: one MAC per multiply-accumulate (no x2 for FLOPs).
//   conv       H'*W'*Cout*k*k*Cin
//   depthwise  H'*W'*C*k*k
//   pointwise  H'*W'*Cin*Cout
//   condenser  condenser_cost()
//   fuse_refine one MAC per output element (the add)
//   maxpool, upsample, relu, softmax: 0
// Parameters are weights plus biases.

#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attendseg/condenser.hpp"
#include "attendseg/error.hpp"
#include "attendseg/graph.hpp"

namespace attendseg {

struct ComplexityRow {
    std::string id;
    LayerKind kind = LayerKind::relu;
    FeatureShape out_shape;
    std::uint64_t macs = 0;
    std::uint64_t params = 0;
};

struct ComplexityReport {
    std::string graph_name;
    std::vector<ComplexityRow> rows;
    std::uint64_t total_macs = 0;
    std::uint64_t total_params = 0;

    /// Bytes to hold every parameter at `bits` per value.
    std::uint64_t weight_memory_bytes(unsigned bits) const;
};

inline std::uint64_t weight_memory(std::uint64_t params, unsigned bits) {
    if (bits != 8 && bits != 32) throw FormatError("weight memory bit width must be 8 or 32, got " + std::to_string(bits));
    return params * bits / 8;
}

inline std::uint64_t weight_memory(const ComplexityReport& r, unsigned bits) { return weight_memory(r.total_params, bits); }

inline std::uint64_t ComplexityReport::weight_memory_bytes(unsigned bits) const { return weight_memory(total_params, bits); }

/// Cost of one layer given its realized input shapes.
inline LayerCost layer_cost(const LayerSpec& l, const std::vector<FeatureShape>& in, const FeatureShape& out) {
    LayerCost c;
    for (const auto& [name, shape] : layer_weight_shapes(l)) c.params += shape.numel();
    const std::uint64_t spatial = static_cast<std::uint64_t>(out.h) * out.w;
    switch (l.kind) {
        case LayerKind::conv: {
            const auto& p = l.conv();
            c.macs = spatial * p.out_channels * p.kernel * p.kernel * p.in_channels;
            break;
        }
        case LayerKind::depthwise: {
            const auto& p = l.conv();
            c.macs = spatial * p.in_channels * p.kernel * p.kernel;
            break;
        }
        case LayerKind::pointwise: {
            const auto& p = l.conv();
            c.macs = spatial * p.in_channels * p.out_channels;
            break;
        }
        case LayerKind::condenser:
            c.macs = condenser_cost(l.condenser(), in.at(0).h, in.at(0).w).macs;
            break;
        case LayerKind::fuse_refine:
            c.macs = spatial * out.c;
            break;
        default:
            break;
    }
    return c;
}

inline ComplexityReport analyze(const GraphSpec& g) {
    const auto shapes = infer_shapes(g, HeadRule::any);
    ComplexityReport r;
    r.graph_name = g.name;
    for (const auto& l : g.layers) {
        std::vector<FeatureShape> in;
        for (const auto& id : l.inputs) in.push_back(shapes.at(id));
        const auto& out = shapes.at(l.id);
        const auto cost = layer_cost(l, in, out);
        r.rows.push_back({l.id, l.kind, out, cost.macs, cost.params});
        r.total_macs += cost.macs;
        r.total_params += cost.params;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Model cards and ratio tables

struct ModelCard {
    std::string name;
    double macs = 0;              ///< multiply-accumulates
    double params = 0;            ///< parameter count
    double weight_memory_mb = 0;  ///< 10^6 bytes
    std::optional<double> accuracy;
};

/// Published figures of the three compared networks (MACs at 512x512;
/// RefineNet and EdgeSegNet at 32-bit weights, AttendSeg at 8-bit).
inline std::vector<ModelCard> published_cards() {
    return {{"RefineNet", 202.47e9, 85.69e6, 343.0, 90.0},
            {"EdgeSegNet", 77.89e9, 7.09e6, 28.3, 89.15},
            {"AttendSeg", 7.45e9, 1.19e6, 1.19, 89.89}};
}

inline ModelCard card_from_report(const ComplexityReport& r, unsigned bits, const std::string& name = {}) {
    return {name.empty() ? r.graph_name : name, static_cast<double>(r.total_macs), static_cast<double>(r.total_params),
            static_cast<double>(weight_memory(r, bits)) / 1e6, std::nullopt};
}

inline std::vector<ModelCard> cards_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw FormatError("model cards: expected an array");
    std::vector<ModelCard> out;
    for (const auto& c : j) {
        detail::reject_unknown(c, {"name", "macs_g", "params_m", "weight_memory_mb", "accuracy"}, "model card");
        ModelCard m;
        try {
            m.name = c.at("name").get<std::string>();
            m.macs = c.at("macs_g").get<double>() * 1e9;
            m.params = c.at("params_m").get<double>() * 1e6;
            m.weight_memory_mb = c.at("weight_memory_mb").get<double>();
            if (c.contains("accuracy") && !c.at("accuracy").is_null()) m.accuracy = c.at("accuracy").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("model card: ") + e.what());
        }
        if (m.macs < 0 || m.params < 0 || m.weight_memory_mb < 0) {
            throw FormatError("model card '" + m.name + "': values must be nonnegative");
        }
        out.push_back(std::move(m));
    }
    return out;
}

struct RatioRow {
    std::string name;
    double macs = 0;
    double params = 0;
    double weight_memory = 0;
};

struct RatioTable {
    std::string baseline;
    std::vector<RatioRow> rows;

    const RatioRow& row(const std::string& name) const {
        for (const auto& r : rows) {
            if (r.name == name) return r;
        }
        throw FormatError("ratio table has no row '" + name + "'");
    }
};

/// For every card, baseline_metric / card_metric.
inline RatioTable compare(const std::vector<ModelCard>& cards, const std::string& baseline) {
    const ModelCard* base = nullptr;
    for (const auto& c : cards) {
        if (c.name == baseline) base = &c;
    }
    if (!base) throw FormatError("compare: baseline '" + baseline + "' is not among the cards");
    RatioTable t{baseline, {}};
    for (const auto& c : cards) {
        if (c.macs <= 0 || c.params <= 0 || c.weight_memory_mb <= 0) {
            throw FormatError("compare: card '" + c.name + "' has a zero metric");
        }
        t.rows.push_back({c.name, base->macs / c.macs, base->params / c.params, base->weight_memory_mb / c.weight_memory_mb});
    }
    return t;
}

inline std::string format_ratio(double r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fx", r);
    return buf;
}

// ---------------------------------------------------------------------------
// Report emission

inline std::string format_report(const ComplexityReport& r) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-22s %-11s %-16s %16s %12s\n", "layer", "kind", "out (HxWxC)", "MACs", "params");
    os << "complexity report: " << r.graph_name << "\n" << line;
    for (const auto& row : r.rows) {
        const std::string shape =
            std::to_string(row.out_shape.h) + "x" + std::to_string(row.out_shape.w) + "x" + std::to_string(row.out_shape.c);
        std::snprintf(line, sizeof line, "%-22s %-11s %-16s %16llu %12llu\n", row.id.c_str(), to_string(row.kind).c_str(),
                      shape.c_str(), static_cast<unsigned long long>(row.macs),
                      static_cast<unsigned long long>(row.params));
        os << line;
    }
    std::snprintf(line, sizeof line, "%-51s %16llu %12llu\n", "total", static_cast<unsigned long long>(r.total_macs),
                  static_cast<unsigned long long>(r.total_params));
    os << line;
    std::snprintf(line, sizeof line, "MACs %.4f G | params %.4f M | weight memory %.4f MB (8-bit), %.4f MB (32-bit)\n",
                  r.total_macs / 1e9, r.total_params / 1e6, weight_memory(r, 8) / 1e6, weight_memory(r, 32) / 1e6);
    os << line;
    return os.str();
}

inline std::string format_ratio_table(const RatioTable& t) {
    std::ostringstream os;
    char line[128];
    os << "ratios vs " << t.baseline << " (baseline / model)\n";
    std::snprintf(line, sizeof line, "%-16s %10s %10s %14s\n", "model", "MACs", "params", "weight mem");
    os << line;
    for (const auto& r : t.rows) {
        std::snprintf(line, sizeof line, "%-16s %10s %10s %14s\n", r.name.c_str(), format_ratio(r.macs).c_str(),
                      format_ratio(r.params).c_str(), format_ratio(r.weight_memory).c_str());
        os << line;
    }
    return os.str();
}

inline nlohmann::ordered_json report_to_json(const ComplexityReport& r) {
    nlohmann::ordered_json j;
    j["graph"] = r.graph_name;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"id", row.id},
                        {"kind", to_string(row.kind)},
                        {"out_shape", {row.out_shape.h, row.out_shape.w, row.out_shape.c}},
                        {"macs", row.macs},
                        {"params", row.params}});
    }
    j["layers"] = std::move(rows);
    j["total_macs"] = r.total_macs;
    j["total_params"] = r.total_params;
    j["weight_memory_bytes_8bit"] = weight_memory(r, 8);
    j["weight_memory_bytes_32bit"] = weight_memory(r, 32);
    return j;
}

inline nlohmann::ordered_json ratio_table_to_json(const RatioTable& t) {
    nlohmann::ordered_json j;
    j["baseline"] = t.baseline;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : t.rows) {
        rows.push_back({{"name", r.name}, {"macs", r.macs}, {"params", r.params}, {"weight_memory", r.weight_memory}});
    }
    j["rows"] = std::move(rows);
    return j;
}

}  // namespace attendseg
