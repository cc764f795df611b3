#pragma once

// Binary model format ("ASEG", version 1). All integers little-endian.
//
//   "ASEG" | u32 version | u32 len | graph JSON text (len bytes)
//   repeated tensor records:
//     u16 name_len | name | u8 dtype (0=f32, 1=q8) | u8 rank | u32 dims[rank]
//     q8 only: f32 scale | i8 zero_point
//     payload: f32 little-endian values, or one byte per q8 value
//   u32 CRC-32 (zlib polynomial) of every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "attendseg/error.hpp"
#include "attendseg/model.hpp"

namespace attendseg {

inline constexpr char kModelMagic[4] = {'A', 'S', 'E', 'G'};
inline constexpr std::uint32_t kModelVersion = 1;

enum class DType : std::uint8_t { f32 = 0, q8 = 1 };

/// Byte accounting of an encoded model file.
struct ModelFileStats {
    std::uint64_t total_bytes = 0;
    std::uint64_t graph_bytes = 0;
    std::uint64_t record_header_bytes = 0;  ///< names, dtype, rank, dims, scale/zero-point
    std::uint64_t f32_payload_bytes = 0;
    std::uint64_t q8_payload_bytes = 0;
    std::size_t tensors = 0;
};

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t>& buffer() { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& buf, std::size_t end, std::string source)
        : buf_(buf), end_(end), source_(std::move(source)) {}

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == end_; }

    std::uint8_t u8() { return take(1)[0]; }
    std::uint16_t u16() {
        const auto* p = take(2);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32() {
        const auto* p = take(4);
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        const auto* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    const std::uint8_t* take(std::size_t n) {
        if (n > end_ - pos_) {
            throw FormatError(source_ + ": truncated model file (need " + std::to_string(n) + " bytes at offset " +
                              std::to_string(pos_) + ")");
        }
        const auto* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }

private:
    const std::vector<std::uint8_t>& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
    std::string source_;
};

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = ::crc32(crc, p, chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

inline void write_record_header(ByteWriter& w, const std::string& name, DType dtype, const Shape& shape) {
    if (name.size() > 0xFFFF) throw FormatError("tensor name too long: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(dtype));
    w.u8(static_cast<std::uint8_t>(shape.rank()));
    for (std::size_t d : shape.dims()) w.u32(static_cast<std::uint32_t>(d));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_model(const Model& m) {
    check_model(m);
    detail::ByteWriter w;
    w.bytes(kModelMagic, 4);
    w.u32(kModelVersion);
    const std::string text = graph_to_text(m.graph);
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.bytes(text.data(), text.size());
    for (const auto& [name, shape] : model_param_shapes(m.graph)) {
        if (auto q = m.qweights.find(name); q != m.qweights.end()) {
            detail::write_record_header(w, name, DType::q8, shape);
            w.f32(q->second.scale);
            w.u8(static_cast<std::uint8_t>(q->second.zero_point));
            w.bytes(q->second.payload.data(), q->second.payload.size());
        } else {
            const Tensor& t = m.weights.at(name);
            detail::write_record_header(w, name, DType::f32, shape);
            for (float v : t.data()) w.f32(v);
        }
    }
    w.u32(detail::crc32_of(w.buffer().data(), w.buffer().size()));
    return std::move(w.buffer());
}

namespace detail {

inline Model decode_impl(const std::vector<std::uint8_t>& bytes, const std::string& source, ModelFileStats* stats) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0) {
        throw FormatError(source + ": bad magic, expected \"ASEG\"");
    }
    if (bytes.size() < 16) throw FormatError(source + ": truncated model file");
    const std::size_t body = bytes.size() - 4;
    ByteReader tail(bytes, bytes.size(), source);
    tail.take(body);
    const std::uint32_t stored_crc = tail.u32();

    ByteReader r(bytes, body, source);
    r.take(4);
    const std::uint32_t version = r.u32();
    if (version != kModelVersion) {
        throw FormatError(source + ": unsupported format version " + std::to_string(version) + " (expected " +
                          std::to_string(kModelVersion) + ")");
    }
    const std::uint32_t text_len = r.u32();
    const std::string text = r.str(text_len);
    if (detail::crc32_of(bytes.data(), body) != stored_crc) throw FormatError(source + ": CRC mismatch");

    ModelFileStats st;
    st.total_bytes = bytes.size();
    st.graph_bytes = text_len;
    Model m;
    m.graph = graph_from_text(text);
    bool any_q8 = false;
    while (!r.done()) {
        const std::size_t start = r.pos();
        const std::uint16_t name_len = r.u16();
        const std::string name = r.str(name_len);
        const std::uint8_t dtype = r.u8();
        const std::uint8_t rank = r.u8();
        if (rank < 1 || rank > 4) throw FormatError(source + ": tensor '" + name + "' has invalid rank");
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) d = r.u32();
        Shape shape(dims);
        ++st.tensors;
        if (dtype == static_cast<std::uint8_t>(DType::f32)) {
            st.record_header_bytes += r.pos() - start;
            Tensor t(shape);
            for (auto& v : t.data()) v = r.f32();
            st.f32_payload_bytes += shape.numel() * 4;
            if (!m.weights.emplace(name, std::move(t)).second) throw FormatError(source + ": duplicate tensor " + name);
        } else if (dtype == static_cast<std::uint8_t>(DType::q8)) {
            QTensor q;
            q.shape = shape;
            q.scale = r.f32();
            q.zero_point = static_cast<std::int8_t>(r.u8());
            st.record_header_bytes += r.pos() - start;
            const auto* p = r.take(shape.numel());
            q.payload.assign(reinterpret_cast<const std::int8_t*>(p), reinterpret_cast<const std::int8_t*>(p) + shape.numel());
            st.q8_payload_bytes += shape.numel();
            if (!m.qweights.emplace(name, std::move(q)).second) throw FormatError(source + ": duplicate tensor " + name);
            any_q8 = true;
        } else {
            throw FormatError(source + ": tensor '" + name + "' has unknown dtype code " + std::to_string(dtype));
        }
    }
    m.precision = any_q8 ? Precision::q8 : Precision::f32;
    try {
        check_model(m);
    } catch (const ShapeError& e) {
        throw FormatError(source + ": " + e.what());
    }
    if (stats) *stats = st;
    return m;
}

}  // namespace detail

inline Model decode_model(const std::vector<std::uint8_t>& bytes, const std::string& source = "model") {
    return detail::decode_impl(bytes, source, nullptr);
}

inline ModelFileStats inspect_model_bytes(const std::vector<std::uint8_t>& bytes, const std::string& source = "model") {
    ModelFileStats st;
    detail::decode_impl(bytes, source, &st);
    return st;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open for reading");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(path + ": write failed");
}

inline void save_model(const Model& m, const std::string& path) { write_file_bytes(path, encode_model(m)); }

inline Model load_model(const std::string& path) { return decode_model(read_file_bytes(path), path); }

}  // namespace attendseg
