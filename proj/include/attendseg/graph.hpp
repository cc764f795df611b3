#pragma once

// Declarative network description: layer specs, the JSON config format,
// validation diagnostics, and static shape propagation.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "attendseg/condenser.hpp"
#include "attendseg/error.hpp"
#include "attendseg/ops.hpp"

namespace attendseg {

/// Reserved layer id naming the graph input.
inline constexpr const char* kInputId = "input";

enum class LayerKind { conv, depthwise, pointwise, condenser, maxpool, upsample, fuse_refine, relu, softmax };

inline const std::vector<std::pair<LayerKind, std::string>>& layer_kind_names() {
    static const std::vector<std::pair<LayerKind, std::string>> names = {
        {LayerKind::conv, "conv"},           {LayerKind::depthwise, "depthwise"},
        {LayerKind::pointwise, "pointwise"}, {LayerKind::condenser, "condenser"},
        {LayerKind::maxpool, "maxpool"},     {LayerKind::upsample, "upsample"},
        {LayerKind::fuse_refine, "fuse_refine"}, {LayerKind::relu, "relu"},
        {LayerKind::softmax, "softmax"}};
    return names;
}

inline std::string to_string(LayerKind k) {
    for (const auto& [kind, name] : layer_kind_names()) {
        if (kind == k) return name;
    }
    return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
    for (const auto& [kind, name] : layer_kind_names()) {
        if (name == s) return kind;
    }
    throw FormatError("unknown layer kind '" + s + "'");
}

struct PoolParams {
    std::size_t kernel = 2;
    std::size_t stride = 2;
};

struct UpsampleParams {
    std::size_t height = 1;
    std::size_t width = 1;
};

using LayerParams = std::variant<std::monostate, ConvParams, CondenserParams, PoolParams, UpsampleParams>;

struct LayerSpec {
    std::string id;
    LayerKind kind = LayerKind::relu;
    std::vector<std::string> inputs;
    LayerParams params;

    const ConvParams& conv() const { return std::get<ConvParams>(params); }
    const CondenserParams& condenser() const { return std::get<CondenserParams>(params); }
    const PoolParams& pool() const { return std::get<PoolParams>(params); }
    const UpsampleParams& upsample() const { return std::get<UpsampleParams>(params); }
};

struct GraphSpec {
    std::string name;
    std::size_t input_h = 1, input_w = 1, input_c = 1;
    std::size_t num_classes = 2;
    std::vector<LayerSpec> layers;

    const LayerSpec* find(const std::string& id) const {
        for (const auto& l : layers) {
            if (l.id == id) return &l;
        }
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Layer constructors. Depthwise and pointwise layers carry a ConvParams with
// groups / kernel fixed accordingly.

inline LayerSpec make_conv(std::string id, std::string in, std::size_t kernel, std::size_t stride, std::size_t cin,
                           std::size_t cout, Padding pad = Padding::same) {
    ConvParams p{kernel, stride, pad, cin, cout, 1};
    return {std::move(id), LayerKind::conv, {std::move(in)}, p};
}

inline LayerSpec make_depthwise(std::string id, std::string in, std::size_t kernel, std::size_t stride,
                                std::size_t channels, Padding pad = Padding::same) {
    ConvParams p{kernel, stride, pad, channels, channels, channels};
    return {std::move(id), LayerKind::depthwise, {std::move(in)}, p};
}

inline LayerSpec make_pointwise(std::string id, std::string in, std::size_t cin, std::size_t cout) {
    ConvParams p{1, 1, Padding::same, cin, cout, 1};
    return {std::move(id), LayerKind::pointwise, {std::move(in)}, p};
}

inline LayerSpec make_condenser(std::string id, std::string in, CondenserParams p) {
    return {std::move(id), LayerKind::condenser, {std::move(in)}, p};
}

inline LayerSpec make_maxpool(std::string id, std::string in, std::size_t kernel, std::size_t stride) {
    return {std::move(id), LayerKind::maxpool, {std::move(in)}, PoolParams{kernel, stride}};
}

inline LayerSpec make_upsample(std::string id, std::string in, std::size_t h, std::size_t w) {
    return {std::move(id), LayerKind::upsample, {std::move(in)}, UpsampleParams{h, w}};
}

inline LayerSpec make_fuse_refine(std::string id, std::string deep, std::string skip) {
    return {std::move(id), LayerKind::fuse_refine, {std::move(deep), std::move(skip)}, std::monostate{}};
}

inline LayerSpec make_relu(std::string id, std::string in) {
    return {std::move(id), LayerKind::relu, {std::move(in)}, std::monostate{}};
}

inline LayerSpec make_softmax(std::string id, std::string in) {
    return {std::move(id), LayerKind::softmax, {std::move(in)}, std::monostate{}};
}

/// Learnable tensors of a layer (local names, e.g. "w", "b"), in
/// serialization order.
inline std::vector<std::pair<std::string, Shape>> layer_weight_shapes(const LayerSpec& l) {
    switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::pointwise: {
            const auto& p = l.conv();
            return {{"w", Shape{p.kernel, p.kernel, p.in_channels, p.out_channels}}, {"b", Shape{p.out_channels}}};
        }
        case LayerKind::depthwise: {
            const auto& p = l.conv();
            return {{"w", Shape{p.kernel, p.kernel, p.in_channels, 1}}, {"b", Shape{p.in_channels}}};
        }
        case LayerKind::condenser:
            return condenser_weight_shapes(l.condenser());
        default:
            return {};
    }
}

/// Bias tensors stay in 32-bit after quantization.
inline bool is_bias_name(const std::string& full_name) {
    const auto slash = full_name.rfind('/');
    const std::string local = slash == std::string::npos ? full_name : full_name.substr(slash + 1);
    return local == "b" || (local.size() > 2 && local.compare(local.size() - 2, 2, "_b") == 0);
}

inline std::string param_key(const std::string& layer, const std::string& local) { return layer + "/" + local; }

// ---------------------------------------------------------------------------
// Validation and shape propagation

struct Diagnostic {
    std::string layer;
    std::string rule;
    std::string message;
};

struct FeatureShape {
    std::size_t h = 0, w = 0, c = 0;
    bool operator==(const FeatureShape&) const = default;
};

namespace detail {

inline std::optional<FeatureShape> layer_out_shape(const LayerSpec& l, const std::vector<FeatureShape>& in,
                                                   const std::vector<std::string>& in_ids,
                                                   std::vector<Diagnostic>& diags) {
    auto fail = [&](const std::string& rule, const std::string& msg) -> std::optional<FeatureShape> {
        diags.push_back({l.id, rule, l.id + ": " + msg});
        return std::nullopt;
    };
    const FeatureShape& x = in.front();
    try {
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::depthwise:
            case LayerKind::pointwise: {
                if (!std::holds_alternative<ConvParams>(l.params)) return fail("params", "missing convolution params");
                const auto& p = l.conv();
                if (p.kernel == 0 || p.stride == 0 || p.in_channels == 0 || p.out_channels == 0) {
                    return fail("params", "kernel, stride and channels must be >= 1");
                }
                if (x.c != p.in_channels) {
                    return fail("channel-mismatch", "expects " + std::to_string(p.in_channels) + " input channels, '" +
                                                        in_ids[0] + "' produces " + std::to_string(x.c));
                }
                if (l.kind == LayerKind::depthwise && p.out_channels != p.in_channels) {
                    return fail("params", "depthwise requires out_channels == in_channels");
                }
                if (l.kind == LayerKind::pointwise && (p.kernel != 1 || p.stride != 1)) {
                    return fail("params", "pointwise requires kernel 1 and stride 1");
                }
                return FeatureShape{conv_out_extent(x.h, p.kernel, p.stride, p.padding),
                                    conv_out_extent(x.w, p.kernel, p.stride, p.padding), p.out_channels};
            }
            case LayerKind::condenser: {
                if (!std::holds_alternative<CondenserParams>(l.params)) return fail("params", "missing condenser params");
                const auto& p = l.condenser();
                p.check();
                if (x.c != p.channels) {
                    return fail("channel-mismatch", "expects " + std::to_string(p.channels) + " channels, '" +
                                                        in_ids[0] + "' produces " + std::to_string(x.c));
                }
                if (p.reduction > x.h || p.reduction > x.w) {
                    return fail("shape", "reduction " + std::to_string(p.reduction) + " exceeds spatial extent " +
                                             std::to_string(x.h) + "x" + std::to_string(x.w));
                }
                return x;
            }
            case LayerKind::maxpool: {
                if (!std::holds_alternative<PoolParams>(l.params)) return fail("params", "missing pool params");
                const auto& p = l.pool();
                return FeatureShape{conv_out_extent(x.h, p.kernel, p.stride, Padding::same),
                                    conv_out_extent(x.w, p.kernel, p.stride, Padding::same), x.c};
            }
            case LayerKind::upsample: {
                if (!std::holds_alternative<UpsampleParams>(l.params)) return fail("params", "missing upsample params");
                const auto& p = l.upsample();
                if (p.height == 0 || p.width == 0) return fail("params", "upsample target must be >= 1");
                return FeatureShape{p.height, p.width, x.c};
            }
            case LayerKind::fuse_refine: {
                const FeatureShape& skip = in[1];
                if (x.c != skip.c) {
                    return fail("channel-mismatch", "fuse_refine inputs '" + in_ids[0] + "' (" + std::to_string(x.c) +
                                                        " channels) and '" + in_ids[1] + "' (" +
                                                        std::to_string(skip.c) + " channels) differ");
                }
                if (x.h > skip.h || x.w > skip.w) {
                    return fail("shape", "deep input '" + in_ids[0] + "' is larger than skip '" + in_ids[1] + "'");
                }
                return skip;
            }
            case LayerKind::relu:
            case LayerKind::softmax:
                return x;
        }
    } catch (const ShapeError& e) {
        return fail("shape", e.what());
    }
    return std::nullopt;
}

inline std::size_t expected_arity(LayerKind k) { return k == LayerKind::fuse_refine ? 2 : 1; }

}  // namespace detail

/// Checks every structural and shape invariant. Returns an empty list iff the
/// graph is valid. Each diagnostic names the offending layer and rule.
/// `segmentation` additionally requires the last layer to be a softmax
/// producing input_h x input_w x num_classes. `any` checks wiring and shapes
/// only, which is what cost analysis of a bare layer stack needs.
enum class HeadRule { segmentation, any };

inline std::vector<Diagnostic> validate(const GraphSpec& g, HeadRule head = HeadRule::segmentation) {
    std::vector<Diagnostic> diags;
    if (g.input_h == 0 || g.input_w == 0 || g.input_c == 0) {
        diags.push_back({kInputId, "input", "input extents must be >= 1"});
    }
    if (g.num_classes == 0) diags.push_back({"", "num_classes", "num_classes must be >= 1"});
    if (g.layers.empty()) {
        diags.push_back({"", "empty", "graph has no layers"});
        return diags;
    }

    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        const auto& l = g.layers[i];
        if (l.id.empty()) diags.push_back({l.id, "id", "layer " + std::to_string(i) + " has an empty id"});
        if (l.id == kInputId) diags.push_back({l.id, "reserved-id", "'input' is reserved for the graph input"});
        if (!index.emplace(l.id, i).second) diags.push_back({l.id, "duplicate-id", "duplicate layer id '" + l.id + "'"});
    }

    bool wiring_ok = true;
    for (const auto& l : g.layers) {
        if (l.inputs.size() != detail::expected_arity(l.kind)) {
            diags.push_back({l.id, "arity", l.id + ": " + to_string(l.kind) + " takes " +
                                                std::to_string(detail::expected_arity(l.kind)) + " input(s), got " +
                                                std::to_string(l.inputs.size())});
            wiring_ok = false;
        }
        for (const auto& in : l.inputs) {
            if (in != kInputId && !index.count(in)) {
                diags.push_back({l.id, "unknown-input", l.id + ": references unknown layer '" + in + "'"});
                wiring_ok = false;
            }
        }
    }
    if (!wiring_ok) return diags;

    // cycle detection (iterative DFS colouring)
    {
        std::vector<int> colour(g.layers.size(), 0);
        bool cyclic = false;
        std::string where;
        for (std::size_t root = 0; root < g.layers.size() && !cyclic; ++root) {
            if (colour[root]) continue;
            std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
            colour[root] = 1;
            while (!stack.empty() && !cyclic) {
                auto& [node, next] = stack.back();
                const auto& ins = g.layers[node].inputs;
                if (next == ins.size()) {
                    colour[node] = 2;
                    stack.pop_back();
                    continue;
                }
                const std::string& in = ins[next++];
                if (in == kInputId) continue;
                const std::size_t j = index.at(in);
                if (colour[j] == 1) {
                    cyclic = true;
                    where = g.layers[j].id;
                } else if (colour[j] == 0) {
                    colour[j] = 1;
                    stack.push_back({j, 0});
                }
            }
        }
        if (cyclic) {
            diags.push_back({where, "cycle", "cycle through layer '" + where + "'"});
            return diags;
        }
    }

    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        for (const auto& in : g.layers[i].inputs) {
            if (in != kInputId && index.at(in) > i) {
                diags.push_back({g.layers[i].id, "order",
                                 g.layers[i].id + ": input '" + in + "' is defined later in the layer list"});
            }
        }
    }

    std::set<std::string> consumed;
    for (const auto& l : g.layers) consumed.insert(l.inputs.begin(), l.inputs.end());
    std::vector<std::string> sinks;
    for (const auto& l : g.layers) {
        if (!consumed.count(l.id)) sinks.push_back(l.id);
    }
    if (sinks.size() != 1) {
        std::string list;
        for (const auto& s : sinks) list += (list.empty() ? "" : ", ") + s;
        diags.push_back({sinks.empty() ? "" : sinks.front(), "output-count",
                         "graph must have exactly one output layer, found " + std::to_string(sinks.size()) +
                             (list.empty() ? "" : " (" + list + ")")});
    }
    if (!consumed.count(kInputId)) diags.push_back({kInputId, "input-unused", "no layer consumes the graph input"});
    if (!diags.empty()) return diags;

    std::map<std::string, FeatureShape> shapes{{kInputId, {g.input_h, g.input_w, g.input_c}}};
    for (const auto& l : g.layers) {
        std::vector<FeatureShape> in;
        for (const auto& id : l.inputs) {
            auto it = shapes.find(id);
            if (it == shapes.end()) break;
            in.push_back(it->second);
        }
        if (in.size() != l.inputs.size()) continue;  // upstream already reported
        if (auto s = detail::layer_out_shape(l, in, l.inputs, diags)) shapes[l.id] = *s;
    }

    const auto& out = g.layers.back();
    if (head == HeadRule::any) return diags;
    if (sinks.front() != out.id) {
        diags.push_back({out.id, "output-order", "the output layer must be last in the layer list"});
    } else {
        if (out.kind != LayerKind::softmax) {
            diags.push_back({out.id, "output-kind", "the output layer must be a softmax, got " + to_string(out.kind)});
        }
        auto it = shapes.find(out.id);
        const FeatureShape want{g.input_h, g.input_w, g.num_classes};
        if (it != shapes.end() && !(it->second == want)) {
            diags.push_back({out.id, "output-shape",
                             "output is " + std::to_string(it->second.h) + "x" + std::to_string(it->second.w) + "x" +
                                 std::to_string(it->second.c) + ", expected " + std::to_string(want.h) + "x" +
                                 std::to_string(want.w) + "x" + std::to_string(want.c)});
        }
    }
    return diags;
}

/// Per-layer output shapes (plus "input"). Throws ShapeError carrying the
/// first diagnostic if the graph is invalid.
inline std::map<std::string, FeatureShape> infer_shapes(const GraphSpec& g, HeadRule head = HeadRule::segmentation) {
    const auto diags = validate(g, head);
    if (!diags.empty()) throw ShapeError("invalid graph '" + g.name + "': " + diags.front().message);
    std::map<std::string, FeatureShape> shapes{{kInputId, {g.input_h, g.input_w, g.input_c}}};
    std::vector<Diagnostic> sink;
    for (const auto& l : g.layers) {
        std::vector<FeatureShape> in;
        for (const auto& id : l.inputs) in.push_back(shapes.at(id));
        shapes[l.id] = *detail::layer_out_shape(l, in, l.inputs, sink);
    }
    return shapes;
}

// ---------------------------------------------------------------------------
// Structural properties of the architecture family

struct StructuralProperties {
    std::size_t condensers = 0;
    std::size_t depthwise = 0;
    std::size_t pointwise = 0;
    std::size_t refine_edges = 0;
    std::size_t encoder_scales = 0;
    std::size_t max_conv_stride = 0;

    bool heterogeneous() const { return condensers >= 1 && depthwise >= 1 && pointwise >= 1; }
    bool selective_refinement() const { return refine_edges < encoder_scales; }
    bool large_stride() const { return max_conv_stride >= 4; }
};

/// Encoder scales are the distinct spatial sizes of the input and of every
/// layer preceding the first upsample/fuse_refine layer.
inline StructuralProperties structural_properties(const GraphSpec& g) {
    const auto shapes = infer_shapes(g);
    StructuralProperties s;
    std::set<std::pair<std::size_t, std::size_t>> scales{{g.input_h, g.input_w}};
    bool decoder = false;
    for (const auto& l : g.layers) {
        switch (l.kind) {
            case LayerKind::condenser: ++s.condensers; break;
            case LayerKind::depthwise: ++s.depthwise; break;
            case LayerKind::pointwise: ++s.pointwise; break;
            case LayerKind::fuse_refine: ++s.refine_edges; break;
            default: break;
        }
        if (l.kind == LayerKind::conv || l.kind == LayerKind::depthwise) {
            s.max_conv_stride = std::max(s.max_conv_stride, l.conv().stride);
        }
        if (l.kind == LayerKind::fuse_refine || l.kind == LayerKind::upsample) decoder = true;
        if (!decoder) {
            const auto& fs = shapes.at(l.id);
            scales.insert({fs.h, fs.w});
        }
    }
    s.encoder_scales = scales.size();
    return s;
}

// ---------------------------------------------------------------------------
// JSON config format

namespace detail {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

inline void reject_unknown(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw FormatError(where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; })) {
            throw FormatError(where + ": unknown field '" + it.key() + "'");
        }
    }
}

inline std::size_t get_count(const Json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0) {
        throw FormatError(where + ": field '" + key + "' must be a positive integer");
    }
    return v.get<std::size_t>();
}

inline Padding get_padding(const Json& obj, const std::string& where) {
    if (!obj.contains("padding")) return Padding::same;
    const auto& v = obj.at("padding");
    if (v == "same") return Padding::same;
    if (v == "valid") return Padding::valid;
    throw FormatError(where + ": padding must be \"same\" or \"valid\"");
}

inline LayerParams parse_params(LayerKind kind, const Json& p, const std::string& where) {
    switch (kind) {
        case LayerKind::conv:
            reject_unknown(p, {"kernel", "stride", "padding", "in_channels", "out_channels"}, where);
            return ConvParams{get_count(p, "kernel", where), get_count(p, "stride", where), get_padding(p, where),
                              get_count(p, "in_channels", where), get_count(p, "out_channels", where), 1};
        case LayerKind::depthwise: {
            reject_unknown(p, {"kernel", "stride", "padding", "channels"}, where);
            const std::size_t c = get_count(p, "channels", where);
            return ConvParams{get_count(p, "kernel", where), get_count(p, "stride", where), get_padding(p, where), c, c,
                              c};
        }
        case LayerKind::pointwise:
            reject_unknown(p, {"in_channels", "out_channels"}, where);
            return ConvParams{1, 1, Padding::same, get_count(p, "in_channels", where),
                              get_count(p, "out_channels", where), 1};
        case LayerKind::condenser:
            reject_unknown(p, {"channels", "reduction", "embed_channels", "embed_kernel"}, where);
            return CondenserParams{get_count(p, "channels", where), get_count(p, "reduction", where),
                                   get_count(p, "embed_channels", where),
                                   p.contains("embed_kernel") ? get_count(p, "embed_kernel", where) : 3};
        case LayerKind::maxpool:
            reject_unknown(p, {"kernel", "stride"}, where);
            return PoolParams{get_count(p, "kernel", where), get_count(p, "stride", where)};
        case LayerKind::upsample:
            reject_unknown(p, {"height", "width"}, where);
            return UpsampleParams{get_count(p, "height", where), get_count(p, "width", where)};
        default:
            reject_unknown(p, {}, where);
            return std::monostate{};
    }
}

inline OrderedJson dump_params(const LayerSpec& l) {
    OrderedJson p = OrderedJson::object();
    auto pad = [](Padding x) { return x == Padding::same ? "same" : "valid"; };
    switch (l.kind) {
        case LayerKind::conv: {
            const auto& c = l.conv();
            p["kernel"] = c.kernel;
            p["stride"] = c.stride;
            p["padding"] = pad(c.padding);
            p["in_channels"] = c.in_channels;
            p["out_channels"] = c.out_channels;
            break;
        }
        case LayerKind::depthwise: {
            const auto& c = l.conv();
            p["kernel"] = c.kernel;
            p["stride"] = c.stride;
            p["padding"] = pad(c.padding);
            p["channels"] = c.in_channels;
            break;
        }
        case LayerKind::pointwise:
            p["in_channels"] = l.conv().in_channels;
            p["out_channels"] = l.conv().out_channels;
            break;
        case LayerKind::condenser: {
            const auto& c = l.condenser();
            p["channels"] = c.channels;
            p["reduction"] = c.reduction;
            p["embed_channels"] = c.embed_channels;
            p["embed_kernel"] = c.embed_kernel;
            break;
        }
        case LayerKind::maxpool:
            p["kernel"] = l.pool().kernel;
            p["stride"] = l.pool().stride;
            break;
        case LayerKind::upsample:
            p["height"] = l.upsample().height;
            p["width"] = l.upsample().width;
            break;
        default:
            break;
    }
    return p;
}

}  // namespace detail

/// Parses the JSON graph config. Unknown fields are rejected.
inline GraphSpec graph_from_json(const nlohmann::json& j) {
    using detail::get_count;
    detail::reject_unknown(j, {"name", "input", "num_classes", "layers"}, "graph");
    GraphSpec g;
    if (!j.contains("name") || !j.at("name").is_string()) throw FormatError("graph: missing string field 'name'");
    g.name = j.at("name").get<std::string>();
    if (!j.contains("input")) throw FormatError("graph: missing field 'input'");
    const auto& in = j.at("input");
    detail::reject_unknown(in, {"h", "w", "c"}, "graph.input");
    g.input_h = get_count(in, "h", "graph.input");
    g.input_w = get_count(in, "w", "graph.input");
    g.input_c = get_count(in, "c", "graph.input");
    g.num_classes = get_count(j, "num_classes", "graph");
    if (!j.contains("layers") || !j.at("layers").is_array()) throw FormatError("graph: missing array field 'layers'");
    for (const auto& lj : j.at("layers")) {
        const std::string where = "layer " + (lj.contains("id") ? lj.at("id").dump() : std::to_string(g.layers.size()));
        detail::reject_unknown(lj, {"id", "kind", "inputs", "params"}, where);
        LayerSpec l;
        if (!lj.contains("id") || !lj.at("id").is_string()) throw FormatError(where + ": missing string field 'id'");
        l.id = lj.at("id").get<std::string>();
        if (!lj.contains("kind") || !lj.at("kind").is_string()) throw FormatError(where + ": missing field 'kind'");
        l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
        if (!lj.contains("inputs") || !lj.at("inputs").is_array()) throw FormatError(where + ": missing array 'inputs'");
        for (const auto& s : lj.at("inputs")) {
            if (!s.is_string()) throw FormatError(where + ": inputs must be strings");
            l.inputs.push_back(s.get<std::string>());
        }
        l.params = detail::parse_params(l.kind, lj.contains("params") ? lj.at("params") : nlohmann::json::object(),
                                        where);
        g.layers.push_back(std::move(l));
    }
    return g;
}

inline nlohmann::ordered_json graph_to_json(const GraphSpec& g) {
    nlohmann::ordered_json j;
    j["name"] = g.name;
    j["input"] = {{"h", g.input_h}, {"w", g.input_w}, {"c", g.input_c}};
    j["num_classes"] = g.num_classes;
    auto layers = nlohmann::ordered_json::array();
    for (const auto& l : g.layers) {
        nlohmann::ordered_json lj;
        lj["id"] = l.id;
        lj["kind"] = to_string(l.kind);
        lj["inputs"] = l.inputs;
        lj["params"] = detail::dump_params(l);
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    return j;
}

inline std::string graph_to_text(const GraphSpec& g) { return graph_to_json(g).dump(2) + "\n"; }

inline GraphSpec graph_from_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("graph config is not valid JSON: ") + e.what());
    }
    return graph_from_json(j);
}

inline bool operator==(const ConvParams& a, const ConvParams& b) {
    return a.kernel == b.kernel && a.stride == b.stride && a.padding == b.padding && a.in_channels == b.in_channels &&
           a.out_channels == b.out_channels && a.groups == b.groups;
}
inline bool operator==(const CondenserParams& a, const CondenserParams& b) {
    return a.channels == b.channels && a.reduction == b.reduction && a.embed_channels == b.embed_channels &&
           a.embed_kernel == b.embed_kernel;
}
inline bool operator==(const PoolParams& a, const PoolParams& b) { return a.kernel == b.kernel && a.stride == b.stride; }
inline bool operator==(const UpsampleParams& a, const UpsampleParams& b) {
    return a.height == b.height && a.width == b.width;
}
inline bool operator==(const LayerSpec& a, const LayerSpec& b) {
    return a.id == b.id && a.kind == b.kind && a.inputs == b.inputs && a.params == b.params;
}
inline bool operator==(const GraphSpec& a, const GraphSpec& b) {
    return a.name == b.name && a.input_h == b.input_h && a.input_w == b.input_w && a.input_c == b.input_c &&
           a.num_classes == b.num_classes && a.layers == b.layers;
}

}  // namespace attendseg
