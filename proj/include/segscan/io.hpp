#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "segscan/errors.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// TNSR binary tensor format: magic "TNSR1", u32 little-endian rank,
// rank x u32 little-endian extents, row-major 32-bit little-endian floats.

namespace detail {

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("truncated TNSR header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32_le(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32_le(os, bits);
}

inline float read_f32_le(std::istream& is) {
    const std::uint32_t bits = read_u32_le(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

template <class T>
void save_tnsr(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("TNSR1", 5);
    detail::write_u32_le(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i)
        detail::write_u32_le(os, static_cast<std::uint32_t>(t.dim(i)));
    for (std::size_t i = 0; i < t.numel(); ++i)
        detail::write_f32_le(os, static_cast<float>(t[i]));
    if (!os) throw IoError("write failed: " + path);
}

template <class T = float>
Tensor<T> load_tnsr(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, "TNSR1", 5) != 0)
        throw IoError("bad TNSR magic in " + path);
    const std::uint32_t rank = detail::read_u32_le(is);
    if (rank > 8) throw IoError("implausible TNSR rank in " + path);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = detail::read_u32_le(is);
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        t[i] = static_cast<T>(detail::read_f32_le(is));
        if (!is) throw IoError("truncated TNSR data in " + path);
    }
    return t;
}

// Binary PGM (P5, maxval 255). Images store intensities scaled to 0-255;
// label masks store class indices directly as pixel values.

inline void save_pgm(const std::string& path, const std::vector<unsigned char>& pixels,
                     std::size_t width, std::size_t height) {
    if (pixels.size() != width * height) throw IoError("PGM pixel count mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "P5\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()),
             static_cast<std::streamsize>(pixels.size()));
    if (!os) throw IoError("write failed: " + path);
}

inline std::vector<unsigned char> load_pgm(const std::string& path, std::size_t& width,
                                           std::size_t& height) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw IoError("not a binary PGM (P5): " + path);
    auto next_token = [&is, &path]() {
        std::string tok;
        while (true) {
            if (!(is >> tok)) throw IoError("truncated PGM header in " + path);
            if (tok[0] == '#') {
                std::string rest;
                std::getline(is, rest);
                continue;
            }
            return tok;
        }
    };
    width = std::stoul(next_token());
    height = std::stoul(next_token());
    const unsigned long maxval = std::stoul(next_token());
    if (maxval != 255) throw IoError("PGM maxval must be 255: " + path);
    is.get();  // single whitespace after maxval
    std::vector<unsigned char> pixels(width * height);
    is.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!is) throw IoError("truncated PGM data in " + path);
    return pixels;
}

// Convert an H x W map with values in [0,1] to PGM grey levels.
template <class T>
std::vector<unsigned char> to_grey255(const Tensor<T>& map) {
    std::vector<unsigned char> px(map.numel());
    for (std::size_t i = 0; i < map.numel(); ++i) {
        const T v = clip_scalar(map[i], T(0), T(1));
        px[i] = static_cast<unsigned char>(v * T(255) + T(0.5));
    }
    return px;
}

}  // namespace segscan
