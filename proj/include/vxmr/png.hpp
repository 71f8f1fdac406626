#pragma once

// Minimal dependency-free PNG writer for 8-bit grayscale images.
// Output uses uncompressed ("stored") deflate blocks, which every
// PNG reader accepts; image data is written verbatim.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "vxmr/error.hpp"

namespace vxmr {

namespace detail {

inline std::uint32_t crc32_update(std::uint32_t crc, const std::uint8_t* data,
                                  std::size_t n) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    for (std::size_t i = 0; i < n; ++i)
        crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc;
}

inline std::uint32_t adler32(const std::uint8_t* data, std::size_t n) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& data) {
    put_u32_be(out, std::uint32_t(data.size()));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    std::uint32_t crc = crc32_update(0xFFFFFFFFu, out.data() + type_at,
                                     4 + data.size()) ^ 0xFFFFFFFFu;
    put_u32_be(out, crc);
}

// zlib stream holding the payload in stored deflate blocks
inline std::vector<std::uint8_t> zlib_stored(const std::vector<std::uint8_t>& raw) {
    std::vector<std::uint8_t> z;
    z.reserve(raw.size() + raw.size() / 65535 * 5 + 16);
    z.push_back(0x78);  // 32K window, deflate
    z.push_back(0x01);  // no preset dictionary, fastest-compression flag
    std::size_t pos = 0;
    do {
        const std::size_t len = std::min<std::size_t>(65535, raw.size() - pos);
        const bool final = pos + len == raw.size();
        z.push_back(final ? 1 : 0);  // BFINAL, BTYPE=00 (stored)
        z.push_back(std::uint8_t(len & 0xFF));
        z.push_back(std::uint8_t(len >> 8));
        z.push_back(std::uint8_t(~len & 0xFF));
        z.push_back(std::uint8_t((~len >> 8) & 0xFF));
        z.insert(z.end(), raw.begin() + std::ptrdiff_t(pos),
                 raw.begin() + std::ptrdiff_t(pos + len));
        pos += len;
    } while (pos < raw.size());
    put_u32_be(z, adler32(raw.data(), raw.size()));
    return z;
}

}  // namespace detail

// Writes an 8-bit grayscale PNG; `pixels` is row-major, top row first.
inline void write_png_gray8(const std::filesystem::path& path,
                            const std::vector<std::uint8_t>& pixels, int width,
                            int height) {
    if (width < 1 || height < 1)
        throw_config("png: image dimensions must be positive");
    if (pixels.size() != std::size_t(width) * std::size_t(height))
        throw_config("png: pixel count does not match dimensions");

    // scanlines, each prefixed with filter type 0 (none)
    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(height) * (std::size_t(width) + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const auto* row = pixels.data() + std::size_t(y) * width;
        raw.insert(raw.end(), row, row + width);
    }

    std::vector<std::uint8_t> out;
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    out.insert(out.end(), sig, sig + 8);

    std::vector<std::uint8_t> ihdr;
    detail::put_u32_be(ihdr, std::uint32_t(width));
    detail::put_u32_be(ihdr, std::uint32_t(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // color type: grayscale
    ihdr.push_back(0);  // compression: deflate
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    detail::put_chunk(out, "IHDR", ihdr);
    detail::put_chunk(out, "IDAT", detail::zlib_stored(raw));
    detail::put_chunk(out, "IEND", {});

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw_io("png: cannot open '" + path.string() + "' for writing");
    os.write(reinterpret_cast<const char*>(out.data()),
             std::streamsize(out.size()));
    if (!os) throw_io("png: write failed for '" + path.string() + "'");
}

// Maps values through a window/level display transform to 8-bit gray:
// [level - window/2, level + window/2] -> [0, 255], clamped outside.
inline std::vector<std::uint8_t> window_to_gray8(const float* values,
                                                 std::int64_t n, double window,
                                                 double level) {
    if (window <= 0) throw_config("png: display window must be positive");
    const double lo = level - window / 2.0;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double t = (double(values[i]) - lo) / window;
        t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
        out[std::size_t(i)] = std::uint8_t(t * 255.0 + 0.5);
    }
    return out;
}

}  // namespace vxmr
