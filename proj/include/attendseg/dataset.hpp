#pragma once

// Samples, the synthetic shape-scene generator, binary PPM/PGM I/O and the
// on-disk dataset layout (img_%05d.ppm, lab_%05d.pgm, manifest.txt).

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "attendseg/error.hpp"
#include "attendseg/random.hpp"
#include "attendseg/serialize.hpp"
#include "attendseg/tensor.hpp"

namespace attendseg {

struct LabelMap {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> labels;

    std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
    bool operator==(const LabelMap&) const = default;
};

struct Sample {
    Tensor image;  ///< [H,W,3] in [0,1]
    LabelMap labels;
};

using Color = std::array<float, 3>;

/// Class colors: gray for background, then saturated hues.
inline Color class_color(std::size_t cls) {
    static const Color base[] = {{0.5f, 0.5f, 0.5f},   {0.85f, 0.2f, 0.2f}, {0.2f, 0.8f, 0.25f},
                                 {0.2f, 0.3f, 0.9f},   {0.9f, 0.85f, 0.2f}, {0.8f, 0.25f, 0.8f},
                                 {0.2f, 0.8f, 0.85f},  {0.95f, 0.55f, 0.1f}};
    if (cls < std::size(base)) return base[cls];
    // deterministic fallback for larger class counts
    const double h = std::fmod(static_cast<double>(cls) * 0.618033988749895, 1.0);
    return {static_cast<float>(0.5 + 0.45 * std::cos(2 * std::numbers::pi * h)),
            static_cast<float>(0.5 + 0.45 * std::cos(2 * std::numbers::pi * (h + 1.0 / 3))),
            static_cast<float>(0.5 + 0.45 * std::cos(2 * std::numbers::pi * (h + 2.0 / 3)))};
}

inline std::vector<Color> default_palette(std::size_t classes) {
    std::vector<Color> p;
    for (std::size_t c = 0; c < classes; ++c) p.push_back(class_color(c));
    return p;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline Sample synth_scene(std::size_t h, std::size_t w, std::size_t classes, Rng& rng) {
    Sample s{Tensor(Shape{h, w, 3}), LabelMap{h, w, std::vector<std::uint8_t>(h * w, 0)}};
    const double side = static_cast<double>(std::min(h, w));

    // textured background: gray base, oriented stripes, pixel noise
    const double gray = rng.uniform(0.35, 0.6);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double freq = rng.uniform(0.1, 0.5);
    const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double stripe = 0.08 * std::sin(freq * (ca * x + sa * y) + phase);
            for (std::size_t c = 0; c < 3; ++c) {
                s.image[(y * w + x) * 3 + c] = static_cast<float>(gray + stripe + rng.uniform(-0.04, 0.04));
            }
        }
    }

    const std::size_t shapes = 1 + rng.below(4);
    for (std::size_t k = 0; k < shapes; ++k) {
        const auto cls = static_cast<std::uint8_t>(1 + rng.below(classes - 1));
        const std::uint64_t type = rng.below(3);
        Color col = class_color(cls);
        for (auto& v : col) v = static_cast<float>(v + rng.uniform(-0.06, 0.06));
        const double cx = rng.uniform(0.15, 0.85) * static_cast<double>(w);
        const double cy = rng.uniform(0.15, 0.85) * static_cast<double>(h);

        double rw = 0, rh = 0, radius = 0;
        std::array<std::array<double, 2>, 3> tri{};
        if (type == 0) {
            rw = rng.uniform(0.08, 0.2) * side;
            rh = rng.uniform(0.08, 0.2) * side;
        } else if (type == 1) {
            radius = rng.uniform(0.08, 0.2) * side;
        } else {
            radius = rng.uniform(0.12, 0.25) * side;
            const double theta = rng.uniform(0.0, 2 * std::numbers::pi);
            for (int v = 0; v < 3; ++v) {
                const double a = theta + v * 2 * std::numbers::pi / 3 + rng.uniform(-0.3, 0.3);
                tri[v] = {cx + radius * std::cos(a), cy + radius * std::sin(a)};
            }
        }
        auto edge = [](const std::array<double, 2>& a, const std::array<double, 2>& b, double px, double py) {
            return (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
        };
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                bool inside = false;
                if (type == 0) {
                    inside = std::fabs(px - cx) <= rw && std::fabs(py - cy) <= rh;
                } else if (type == 1) {
                    inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= radius * radius;
                } else {
                    const double e0 = edge(tri[0], tri[1], px, py);
                    const double e1 = edge(tri[1], tri[2], px, py);
                    const double e2 = edge(tri[2], tri[0], px, py);
                    inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
                }
                if (!inside) continue;
                s.labels.labels[y * w + x] = cls;
                for (std::size_t c = 0; c < 3; ++c) {
                    s.image[(y * w + x) * 3 + c] = static_cast<float>(col[c] + rng.uniform(-0.04, 0.04));
                }
            }
        }
    }
    for (auto& v : s.image.data()) v = std::clamp(v, 0.0f, 1.0f);
    return s;
}

}  // namespace detail

/// Deterministic scenes of colored rectangles, circles and triangles on a
/// striped, noisy background. Shape color encodes its class; background is
/// class 0. Sample i depends only on (seed, i, h, w, classes).
inline std::vector<Sample> synth_dataset(std::size_t n, std::size_t h, std::size_t w, std::size_t classes,
                                         std::uint64_t seed) {
    if (classes < 2 || classes > 255) throw FormatError("synth_dataset: classes must be in [2, 255]");
    if (h < 4 || w < 4) throw FormatError("synth_dataset: images must be at least 4x4");
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(detail::splitmix64(seed ^ detail::splitmix64(i + 1)));
        out.push_back(detail::synth_scene(h, w, classes, rng));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6) / PGM (P5), maxval 255

namespace detail {

struct Netpbm {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> payload;
};

inline Netpbm read_netpbm(const std::string& path, const char* magic, std::size_t channels) {
    const auto bytes = read_file_bytes(path);
    std::size_t pos = 0;
    auto skip_space = [&] {
        for (;;) {
            while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                return;
            }
        }
    };
    auto number = [&](const char* what) {
        skip_space();
        std::size_t v = 0;
        const std::size_t start = pos;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1u << 24) throw FormatError(path + ": " + what + " too large");
            ++pos;
        }
        if (pos == start) throw FormatError(path + ": malformed header (" + what + ")");
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
        throw FormatError(path + ": wrong magic, expected " + magic);
    }
    pos = 2;
    Netpbm img;
    img.width = number("width");
    img.height = number("height");
    const std::size_t maxval = number("maxval");
    if (maxval != 255) throw FormatError(path + ": maxval " + std::to_string(maxval) + " unsupported (expected 255)");
    if (img.width == 0 || img.height == 0) throw FormatError(path + ": zero image dimension");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError(path + ": malformed header");
    ++pos;
    const std::size_t need = img.width * img.height * channels;
    if (bytes.size() - pos < need) {
        throw FormatError(path + ": truncated payload (" + std::to_string(bytes.size() - pos) + " of " +
                          std::to_string(need) + " bytes)");
    }
    img.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                       bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return img;
}

inline void write_netpbm(const std::string& path, const char* magic, std::size_t w, std::size_t h,
                         const std::vector<std::uint8_t>& payload) {
    std::string header = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), payload.begin(), payload.end());
    write_file_bytes(path, out);
}

inline std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace detail

/// [H,W,3] tensor with values scaled to [0,1].
inline Tensor load_image_ppm(const std::string& path) {
    const auto img = detail::read_netpbm(path, "P6", 3);
    Tensor t(Shape{img.height, img.width, 3});
    for (std::size_t i = 0; i < img.payload.size(); ++i) t[i] = static_cast<float>(img.payload[i]) / 255.0f;
    return t;
}

inline void write_image_ppm(const Tensor& image, const std::string& path) {
    if (image.shape().rank() != 3 || image.dim(2) != 3) {
        throw ShapeError("write_image_ppm: expected [H,W,3], got " + image.shape().str());
    }
    std::vector<std::uint8_t> payload(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) payload[i] = detail::to_byte(image[i]);
    detail::write_netpbm(path, "P6", image.dim(1), image.dim(0), payload);
}

/// Raw class ids. With num_classes > 0, a value >= num_classes is an error
/// naming the pixel index.
inline LabelMap load_labels_pgm(const std::string& path, std::size_t num_classes = 0) {
    const auto img = detail::read_netpbm(path, "P5", 1);
    LabelMap m{img.height, img.width, img.payload};
    if (num_classes > 0) {
        for (std::size_t i = 0; i < m.labels.size(); ++i) {
            if (m.labels[i] >= num_classes) {
                throw FormatError(path + ": pixel " + std::to_string(i) + " (row " + std::to_string(i / m.width) +
                                  ", col " + std::to_string(i % m.width) + ") has label " +
                                  std::to_string(m.labels[i]) + " >= num_classes " + std::to_string(num_classes));
            }
        }
    }
    return m;
}

inline void write_labels_pgm(const LabelMap& m, const std::string& path) {
    detail::write_netpbm(path, "P5", m.width, m.height, m.labels);
}

/// Blends the palette color of each predicted class at 50% over the image.
inline void write_overlay_ppm(const Tensor& image, const LabelMap& argmax, const std::vector<Color>& palette,
                              const std::string& path) {
    if (image.shape().rank() != 3 || image.dim(2) != 3 || image.dim(0) != argmax.height ||
        image.dim(1) != argmax.width) {
        throw ShapeError("write_overlay_ppm: image " + image.shape().str() + " does not match label map " +
                         std::to_string(argmax.height) + "x" + std::to_string(argmax.width));
    }
    std::vector<std::uint8_t> payload(image.size());
    for (std::size_t p = 0; p < argmax.labels.size(); ++p) {
        const std::size_t cls = argmax.labels[p];
        if (cls >= palette.size()) throw FormatError("write_overlay_ppm: class " + std::to_string(cls) + " has no palette entry");
        for (std::size_t c = 0; c < 3; ++c) {
            payload[p * 3 + c] = detail::to_byte(0.5f * image[p * 3 + c] + 0.5f * palette[cls][c]);
        }
    }
    detail::write_netpbm(path, "P6", argmax.width, argmax.height, payload);
}

// ---------------------------------------------------------------------------
// Dataset directories

struct DatasetManifest {
    std::size_t count = 0, height = 0, width = 0, classes = 0;
    std::uint64_t seed = 0;
    bool operator==(const DatasetManifest&) const = default;
};

inline std::string dataset_file(const std::string& dir, const char* prefix, std::size_t i, const char* ext) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%05zu.%s", prefix, i, ext);
    return (std::filesystem::path(dir) / name).string();
}

inline void write_dataset(const std::string& dir, const std::vector<Sample>& samples, const DatasetManifest& meta) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        write_image_ppm(samples[i].image, dataset_file(dir, "img", i, "ppm"));
        write_labels_pgm(samples[i].labels, dataset_file(dir, "lab", i, "pgm"));
    }
    std::ofstream m(std::filesystem::path(dir) / "manifest.txt", std::ios::trunc);
    m << "count " << meta.count << "\nheight " << meta.height << "\nwidth " << meta.width << "\nclasses "
      << meta.classes << "\nseed " << meta.seed << "\n";
    if (!m) throw FormatError(dir + "/manifest.txt: write failed");
}

inline DatasetManifest read_manifest(const std::string& dir) {
    const auto path = (std::filesystem::path(dir) / "manifest.txt").string();
    std::ifstream in(path);
    if (!in) throw FormatError(path + ": cannot open dataset manifest");
    std::map<std::string, std::uint64_t> kv;
    std::string key;
    std::uint64_t value;
    while (in >> key >> value) kv[key] = value;
    DatasetManifest m;
    for (const char* k : {"count", "height", "width", "classes", "seed"}) {
        if (!kv.count(k)) throw FormatError(path + ": missing key '" + std::string(k) + "'");
    }
    m.count = kv["count"];
    m.height = kv["height"];
    m.width = kv["width"];
    m.classes = kv["classes"];
    m.seed = kv["seed"];
    return m;
}

struct Dataset {
    DatasetManifest manifest;
    std::vector<Sample> samples;
};

inline Dataset read_dataset(const std::string& dir) {
    Dataset d;
    d.manifest = read_manifest(dir);
    for (std::size_t i = 0; i < d.manifest.count; ++i) {
        Sample s;
        s.image = load_image_ppm(dataset_file(dir, "img", i, "ppm"));
        s.labels = load_labels_pgm(dataset_file(dir, "lab", i, "pgm"), d.manifest.classes);
        if (s.image.dim(0) != d.manifest.height || s.image.dim(1) != d.manifest.width ||
            s.labels.height != d.manifest.height || s.labels.width != d.manifest.width) {
            throw FormatError(dataset_file(dir, "img", i, "ppm") + ": dimensions disagree with manifest");
        }
        d.samples.push_back(std::move(s));
    }
    return d;
}

}  // namespace attendseg
