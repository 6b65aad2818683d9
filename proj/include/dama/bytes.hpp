#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dama/errors.hpp"

namespace dama::detail {

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& buf, float f) {
    std::uint32_t v = 0;
    std::memcpy(&v, &f, 4);
    put_u32(buf, v);
}

struct ByteReader {
    const std::uint8_t* data;
    std::size_t len;
    std::size_t pos = 0;

    std::uint32_t u32(const char* what) {
        if (pos + 4 > len) throw FormatError(std::string("unexpected end of file reading ") + what, pos);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }

    float f32(const char* what) {
        std::uint32_t v = u32(what);
        float f = 0;
        std::memcpy(&f, &v, 4);
        return f;
    }

    std::string bytes(std::size_t n, const char* what) {
        if (pos + n > len) throw FormatError(std::string("unexpected end of file reading ") + what, pos);
        std::string s(reinterpret_cast<const char*>(data + pos), n);
        pos += n;
        return s;
    }
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::uint8_t> buf(size);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (!in) throw std::runtime_error("read failed: " + path);
    return buf;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace dama::detail
