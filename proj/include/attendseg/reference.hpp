#pragma once

// The multi-path refinement architecture family and its two reference
// configurations.
//
// Encoder: a large-stride stem conv, then stages of {strided 3x3 conv,
// depthwise+pointwise pairs interleaved with attention condensers}.
// Decoder: a pointwise projection of the deepest features, refined by
// fuse_refine only at the scales enabled in `refine_mask`, a pointwise
// classifier, an upsample back to the input size when needed, and softmax.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "attendseg/graph.hpp"

namespace attendseg {

struct StageKnobs {
    std::size_t stride = 2;
    std::size_t width = 16;
    std::size_t blocks = 1;      ///< depthwise+pointwise pairs
    std::size_t condensers = 1;  ///< interleaved after the pairs
    bool operator==(const StageKnobs&) const = default;
};

struct ArchKnobs {
    std::string name = "attendseg";
    std::size_t input_h = 64, input_w = 64, input_c = 3;
    std::size_t num_classes = 5;
    std::size_t stem_kernel = 5;
    std::size_t stem_stride = 4;
    std::size_t stem_width = 16;
    std::vector<StageKnobs> stages;
    double embed_ratio = 0.25;
    std::size_t condenser_reduction = 2;
    std::size_t decoder_width = 16;
    /// One flag per encoder scale except the deepest: [input, stem, stage 0, ...].
    std::vector<bool> refine_mask;
    bool operator==(const ArchKnobs&) const = default;
};

inline std::size_t embed_channels_for(std::size_t channels, double ratio) {
    const auto e = static_cast<std::size_t>(std::lround(static_cast<double>(channels) * ratio));
    return std::clamp<std::size_t>(e, 1, channels);
}

/// Realizes a knob assignment as a graph. Throws ShapeError when the knobs
/// are structurally inconsistent (e.g. wrong refine_mask length).
inline GraphSpec build_family_graph(const ArchKnobs& k) {
    if (k.stages.empty()) throw ShapeError("architecture needs at least one encoder stage");
    if (k.refine_mask.size() != k.stages.size() + 1) {
        throw ShapeError("refine_mask needs " + std::to_string(k.stages.size() + 1) + " entries, got " +
                         std::to_string(k.refine_mask.size()));
    }
    GraphSpec g;
    g.name = k.name;
    g.input_h = k.input_h;
    g.input_w = k.input_w;
    g.input_c = k.input_c;
    g.num_classes = k.num_classes;
    auto& L = g.layers;

    struct Feature {
        std::string id;
        std::size_t h, w, c;
    };
    std::vector<Feature> feats{{kInputId, k.input_h, k.input_w, k.input_c}};

    L.push_back(make_conv("stem", kInputId, k.stem_kernel, k.stem_stride, k.input_c, k.stem_width));
    L.push_back(make_relu("stem_relu", "stem"));
    std::size_t h = conv_out_extent(k.input_h, k.stem_kernel, k.stem_stride, Padding::same);
    std::size_t w = conv_out_extent(k.input_w, k.stem_kernel, k.stem_stride, Padding::same);
    std::size_t c = k.stem_width;
    std::string prev = "stem_relu";
    feats.push_back({prev, h, w, c});

    for (std::size_t s = 0; s < k.stages.size(); ++s) {
        const auto& st = k.stages[s];
        const std::string tag = "s" + std::to_string(s + 1);
        L.push_back(make_conv(tag + "_down", prev, 3, st.stride, c, st.width));
        L.push_back(make_relu(tag + "_down_relu", tag + "_down"));
        prev = tag + "_down_relu";
        h = conv_out_extent(h, 3, st.stride, Padding::same);
        w = conv_out_extent(w, 3, st.stride, Padding::same);
        c = st.width;
        const std::size_t red = std::min({k.condenser_reduction, h, w});
        for (std::size_t b = 0; b < std::max(st.blocks, st.condensers); ++b) {
            const std::string bt = tag + "_b" + std::to_string(b + 1);
            if (b < st.blocks) {
                L.push_back(make_depthwise(bt + "_dw", prev, 3, 1, c));
                L.push_back(make_pointwise(bt + "_pw", bt + "_dw", c, c));
                L.push_back(make_relu(bt + "_relu", bt + "_pw"));
                prev = bt + "_relu";
            }
            if (b < st.condensers) {
                L.push_back(make_condenser(bt + "_ac", prev,
                                           CondenserParams{c, red, embed_channels_for(c, k.embed_ratio), 3}));
                prev = bt + "_ac";
            }
        }
        feats.push_back({prev, h, w, c});
    }

    const std::size_t dw = k.decoder_width;
    L.push_back(make_pointwise("dec_in", prev, c, dw));
    prev = "dec_in";
    std::size_t dh = h, dwid = w;
    for (std::size_t j = feats.size() - 1; j-- > 0;) {
        if (!k.refine_mask[j]) continue;
        const auto& f = feats[j];
        const std::string tag = "ref" + std::to_string(j);
        L.push_back(make_pointwise(tag + "_proj", f.id, f.c, dw));
        L.push_back(make_fuse_refine(tag + "_fuse", prev, tag + "_proj"));
        L.push_back(make_relu(tag + "_relu", tag + "_fuse"));
        prev = tag + "_relu";
        if (j > 0) {
            L.push_back(make_depthwise(tag + "_dw", prev, 3, 1, dw));
            L.push_back(make_pointwise(tag + "_pw", tag + "_dw", dw, dw));
            L.push_back(make_relu(tag + "_pw_relu", tag + "_pw"));
            prev = tag + "_pw_relu";
        }
        dh = f.h;
        dwid = f.w;
    }
    L.push_back(make_pointwise("classifier", prev, dw, k.num_classes));
    prev = "classifier";
    if (dh != k.input_h || dwid != k.input_w) {
        L.push_back(make_upsample("logits_up", prev, k.input_h, k.input_w));
        prev = "logits_up";
    }
    L.push_back(make_softmax("probs", prev));
    return g;
}

/// Knobs of the full-size reference network: 512x512x3 input, 32 classes.
inline ArchKnobs attendseg_512_knobs() {
    ArchKnobs k;
    k.name = "attendseg-512";
    k.input_h = k.input_w = 512;
    k.num_classes = 32;
    k.stem_kernel = 5;
    k.stem_stride = 4;
    k.stem_width = 32;
    k.stages = {{2, 96, 2, 2}, {2, 192, 2, 2}, {2, 256, 3, 3}};
    k.embed_ratio = 0.25;
    k.condenser_reduction = 2;
    k.decoder_width = 64;
    k.refine_mask = {true, true, false, true};
    return k;
}

/// Knobs of the desk-scale network: 64x64x3 input, 5 classes.
inline ArchKnobs attendseg_mini_knobs() {
    ArchKnobs k;
    k.name = "attendseg-mini";
    k.input_h = k.input_w = 64;
    k.num_classes = 5;
    k.stem_kernel = 5;
    k.stem_stride = 4;
    k.stem_width = 16;
    k.stages = {{2, 32, 1, 2}, {2, 64, 2, 2}};
    k.embed_ratio = 0.25;
    k.condenser_reduction = 2;
    k.decoder_width = 16;
    k.refine_mask = {true, true, true};
    return k;
}

inline GraphSpec reference_config(const std::string& which) {
    if (which == "attendseg-512") return build_family_graph(attendseg_512_knobs());
    if (which == "attendseg-mini") return build_family_graph(attendseg_mini_knobs());
    throw FormatError("unknown reference config '" + which + "' (expected attendseg-512 or attendseg-mini)");
}

}  // namespace attendseg
