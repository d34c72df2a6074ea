#pragma once

// Little-endian primitives for the TLCK/TLIM binary containers.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>

#include "tracelens/common.hpp"

namespace tracelens::bin {

inline void put_bytes(std::ostream& out, const void* data, size_t len) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    if (!out) fail("io", "short write to binary stream");
}

inline void put_u8(std::ostream& out, uint8_t v) { put_bytes(out, &v, 1); }

inline void put_u32(std::ostream& out, uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(out, buf, 4);
}

inline void put_u64(std::ostream& out, uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(out, buf, 8);
}

inline void put_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline void get_bytes(std::istream& in, void* data, size_t len) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
    if (static_cast<size_t>(in.gcount()) != len) fail("io", "unexpected end of binary stream");
}

inline uint8_t get_u8(std::istream& in) {
    uint8_t v;
    get_bytes(in, &v, 1);
    return v;
}

inline uint32_t get_u32(std::istream& in) {
    unsigned char buf[4];
    get_bytes(in, buf, 4);
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
}

inline uint64_t get_u64(std::istream& in) {
    unsigned char buf[8];
    get_bytes(in, buf, 8);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
}

inline float get_f32(std::istream& in) {
    uint32_t bits = get_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void put_f32_array(std::ostream& out, std::span<const double> values) {
    for (double v : values) put_f32(out, static_cast<float>(v));
}

inline void get_f32_array(std::istream& in, std::span<double> values) {
    for (double& v : values) v = static_cast<double>(get_f32(in));
}

}  // namespace tracelens::bin
