#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "ocn/errors.hpp"
#include "ocn/tensor.hpp"

// Little-endian primitives for the on-disk formats.

namespace ocn::io {

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_i64(std::ostream& os, int64_t v) {
    const uint64_t u = static_cast<uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_u64(std::ostream& os, uint64_t v) { put_i64(os, static_cast<int64_t>(v)); }

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<uint64_t>(v)); }

inline void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void put_tensor(std::ostream& os, const Tensor& t) {
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_i64(os, t.dim(i));
    for (int64_t i = 0; i < t.numel(); ++i) put_f64(os, t[i]);
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

inline int64_t get_i64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return static_cast<int64_t>(v);
}

inline uint64_t get_u64(std::istream& is) { return static_cast<uint64_t>(get_i64(is)); }

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline std::string get_str(std::istream& is) {
    const uint32_t len = get_u32(is);
    if (len > 4096) throw IoError("corrupt string length in binary stream");
    std::string s(len, '\0');
    is.read(s.data(), len);
    return s;
}

inline Tensor get_tensor(std::istream& is) {
    const uint32_t rank = get_u32(is);
    if (rank > 8) throw IoError("corrupt tensor rank in binary stream");
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(get_i64(is));
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = get_f64(is);
    return t;
}

} // namespace ocn::io
