#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "mtfnet/common.hpp"

namespace mtfnet {

struct ArchiveError : Error {
    explicit ArchiveError(const std::string& what) : Error("archive: " + what) {}
};

/// Little-endian primitives for the on-disk formats. Values are assembled
/// byte by byte so the files are identical across hosts.
namespace binio {

inline void write_bytes(std::ostream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void write_u8(std::ostream& out, std::uint8_t v) { write_bytes(out, &v, 1); }

inline void write_u16(std::ostream& out, std::uint16_t v) {
    const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
    write_bytes(out, b, 2);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    write_bytes(out, b, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    write_bytes(out, b, 8);
}

inline void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

inline void write_lpstr(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    write_bytes(out, s.data(), s.size());
}

inline void read_bytes(std::istream& in, void* data, std::size_t n, const char* what) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw ArchiveError(std::string("truncated while reading ") + what);
}

inline std::uint8_t read_u8(std::istream& in, const char* what = "u8") {
    std::uint8_t v;
    read_bytes(in, &v, 1, what);
    return v;
}

inline std::uint16_t read_u16(std::istream& in, const char* what = "u16") {
    std::uint8_t b[2];
    read_bytes(in, b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& in, const char* what = "u32") {
    std::uint8_t b[4];
    read_bytes(in, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t read_u64(std::istream& in, const char* what = "u64") {
    std::uint8_t b[8];
    read_bytes(in, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline float read_f32(std::istream& in, const char* what = "f32") {
    const std::uint32_t bits = read_u32(in, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline std::string read_lpstr(std::istream& in, const char* what = "string") {
    const std::uint32_t len = read_u32(in, what);
    if (len > (1u << 24)) throw ArchiveError(std::string("implausible string length in ") + what);
    std::string s(len, '\0');
    if (len > 0) read_bytes(in, s.data(), len, what);
    return s;
}

inline void expect_magic(std::istream& in, const char magic[4], const char* format) {
    char got[4];
    read_bytes(in, got, 4, "magic");
    if (std::memcmp(got, magic, 4) != 0)
        throw ArchiveError(std::string("bad magic for ") + format);
}

inline void expect_version(std::istream& in, std::uint16_t expected, const char* format) {
    const std::uint16_t v = read_u16(in, "version");
    if (v != expected)
        throw ArchiveError(std::string("unsupported ") + format + " version " +
                           std::to_string(v));
}

}  // namespace binio
}  // namespace mtfnet
