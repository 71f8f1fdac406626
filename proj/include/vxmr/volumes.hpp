#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vxmr/error.hpp"
#include "vxmr/tensor.hpp"

namespace vxmr {

enum class ValueSpace : std::uint32_t { HU = 0, Normalized = 1 };
enum class DomainTag { XArtifact, YClean, Unlabeled };

inline const char* to_string(DomainTag t) {
    switch (t) {
        case DomainTag::XArtifact: return "X_ARTIFACT";
        case DomainTag::YClean: return "Y_CLEAN";
        case DomainTag::Unlabeled: return "UNLABELED";
    }
    return "UNLABELED";
}

inline DomainTag domain_tag_from_string(const std::string& s) {
    if (s == "X_ARTIFACT") return DomainTag::XArtifact;
    if (s == "Y_CLEAN") return DomainTag::YClean;
    if (s == "UNLABELED") return DomainTag::Unlabeled;
    throw_data("unknown domain tag: " + s);
}

constexpr double kHuMin = -1024.0;   // raw acquisition floor
constexpr double kHuMax = 4000.0;    // raw acquisition ceiling
constexpr double kHuWindow = 1000.0; // [-1000, 1000] maps to [-1, 1]

/// A 3D intensity grid, the unit of translation and evaluation. Immutable by
/// convention after construction; operations return new volumes.
struct Volume {
    Tensor voxels;  // {S, H, W}, float32
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    ValueSpace value_space = ValueSpace::HU;
    std::string volume_id;
    DomainTag domain_tag = DomainTag::Unlabeled;

    int slices() const { return voxels.dim(0); }
    int height() const { return voxels.dim(1); }
    int width() const { return voxels.dim(2); }

    float at(int z, int y, int x) const { return voxels.at3(z, y, x); }
    float& at(int z, int y, int x) { return voxels.at3(z, y, x); }

    void validate() const {
        if (voxels.ndim() != 3) throw_data("volume '" + volume_id + "': voxels must be rank 3");
        if (slices() < 1 || height() < 1 || width() < 1)
            throw_data("volume '" + volume_id + "': every dimension must be >= 1");
        for (double s : spacing_mm)
            if (!(s > 0.0)) throw_data("volume '" + volume_id + "': spacing must be positive");
        const double lo = value_space == ValueSpace::HU ? kHuMin : -1.0;
        const double hi = value_space == ValueSpace::HU ? kHuMax : 1.0;
        for (std::int64_t i = 0; i < voxels.numel(); ++i) {
            float v = voxels[i];
            if (!std::isfinite(v))
                throw_data("volume '" + volume_id + "': non-finite voxel at flat index " + std::to_string(i));
            if (v < lo || v > hi)
                throw_data("volume '" + volume_id + "': voxel " + std::to_string(i) + " = " +
                           std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                           std::to_string(hi) + "]");
        }
    }
};

/// N spatially contiguous normalized slices; one training or inference sample.
struct SubvolumeWindow {
    Tensor slices;  // {N, H, W}
    int start_index = 0;
    int n_slices = 0;
};

inline bool is_supported_window_count(int n) {
    return n == 1 || n == 3 || n == 5 || n == 7 || n == 9 || n == 11 || n == 13;
}

/// Clamp to [-1000, 1000] HU and scale into [-1, 1]. Values beyond the window
/// (dense metal, calcifications) saturate rather than rescale the window.
inline Volume normalize_hu(const Volume& vol) {
    if (vol.value_space != ValueSpace::HU)
        throw_data("normalize_hu: volume '" + vol.volume_id + "' is not in HU");
    Volume out = vol;
    for (std::int64_t i = 0; i < out.voxels.numel(); ++i) {
        float v = out.voxels[i];
        if (!std::isfinite(v))
            throw_data("normalize_hu: non-finite voxel at flat index " + std::to_string(i) +
                       " in volume '" + vol.volume_id + "'");
        v = std::clamp(v, -static_cast<float>(kHuWindow), static_cast<float>(kHuWindow));
        out.voxels[i] = v / static_cast<float>(kHuWindow);
    }
    out.value_space = ValueSpace::Normalized;
    return out;
}

inline Volume denormalize(const Volume& vol) {
    if (vol.value_space != ValueSpace::Normalized)
        throw_data("denormalize: volume '" + vol.volume_id + "' is not normalized");
    Volume out = vol;
    for (std::int64_t i = 0; i < out.voxels.numel(); ++i) {
        float v = out.voxels[i];
        if (!std::isfinite(v) || v < -1.0f - 1e-6f || v > 1.0f + 1e-6f)
            throw_data("denormalize: voxel " + std::to_string(i) + " = " + std::to_string(v) +
                       " outside [-1, 1] in volume '" + vol.volume_id + "'");
        out.voxels[i] = std::clamp(v, -1.0f, 1.0f) * static_cast<float>(kHuWindow);
    }
    out.value_space = ValueSpace::HU;
    return out;
}

/// Materialized windows at start indices 0, stride, 2*stride, ..., <= S-N.
/// Copies, not views: downstream mutation cannot alias the source volume.
inline std::vector<SubvolumeWindow> extract_windows(const Volume& vol, int n, int stride) {
    if (!is_supported_window_count(n))
        throw_data("extract_windows: n_slices must be one of {1,3,5,7,9,11,13}, got " +
                   std::to_string(n));
    if (stride < 1) throw_data("extract_windows: stride must be >= 1");
    const int s = vol.slices();
    if (s < n)
        throw_data("extract_windows: volume '" + vol.volume_id + "' has " + std::to_string(s) +
                   " slices but at least " + std::to_string(n) + " are required");
    const int h = vol.height(), w = vol.width();
    std::vector<SubvolumeWindow> out;
    for (int start = 0; start + n <= s; start += stride) {
        SubvolumeWindow win;
        win.start_index = start;
        win.n_slices = n;
        win.slices = Tensor({n, h, w});
        std::memcpy(win.slices.ptr(), vol.voxels.ptr() + vol.voxels.off3(start, 0, 0),
                    sizeof(float) * static_cast<std::size_t>(n) * h * w);
        out.push_back(std::move(win));
    }
    return out;
}

// ---------------------------------------------------------------------------
// On-disk format: magic "VXMR", little-endian throughout.
//   u32 version, u32 S,H,W, f64 spacing[3], u32 value_space,
//   string volume_id, string domain_tag, then S*H*W float32 payload
//   (slice-major: z, then y, then x). Strings are u32 length + bytes.
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::uint32_t kVolumeFormatVersion = 1;

inline void put_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32le(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw_data(std::string("corrupt volume file: truncated ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64le(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64le(std::istream& is, const char* what) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw_data(std::string("corrupt volume file: truncated ") + what);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
    put_u32le(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const char* what) {
    std::uint32_t n = get_u32le(is, what);
    if (n > (1u << 20)) throw_data(std::string("corrupt volume file: implausible string length in ") + what);
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw_data(std::string("corrupt volume file: truncated ") + what);
    return s;
}

static_assert(std::endian::native == std::endian::little,
              "float payload I/O assumes a little-endian host");

}  // namespace detail

inline void save_volume(const Volume& vol, const std::filesystem::path& path) {
    vol.validate();
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw_io("save_volume: cannot open " + tmp.string());
        os.write("VXMR", 4);
        detail::put_u32le(os, detail::kVolumeFormatVersion);
        detail::put_u32le(os, static_cast<std::uint32_t>(vol.slices()));
        detail::put_u32le(os, static_cast<std::uint32_t>(vol.height()));
        detail::put_u32le(os, static_cast<std::uint32_t>(vol.width()));
        for (double s : vol.spacing_mm) detail::put_f64le(os, s);
        detail::put_u32le(os, static_cast<std::uint32_t>(vol.value_space));
        detail::put_string(os, vol.volume_id);
        detail::put_string(os, to_string(vol.domain_tag));
        os.write(reinterpret_cast<const char*>(vol.voxels.ptr()),
                 static_cast<std::streamsize>(sizeof(float) * vol.voxels.data.size()));
        if (!os) throw_io("save_volume: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Volume load_volume(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw_io("load_volume: cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "VXMR", 4) != 0)
        throw_data("corrupt volume file (bad magic): " + path.string());
    std::uint32_t version = detail::get_u32le(is, "version");
    if (version != detail::kVolumeFormatVersion)
        throw_data("unsupported volume format version " + std::to_string(version) + " in " +
                   path.string() + " (expected " + std::to_string(detail::kVolumeFormatVersion) + ")");
    Volume vol;
    int s = static_cast<int>(detail::get_u32le(is, "shape"));
    int h = static_cast<int>(detail::get_u32le(is, "shape"));
    int w = static_cast<int>(detail::get_u32le(is, "shape"));
    for (double& sp : vol.spacing_mm) sp = detail::get_f64le(is, "spacing");
    std::uint32_t vs = detail::get_u32le(is, "value_space");
    if (vs > 1) throw_data("corrupt volume file (value_space code): " + path.string());
    vol.value_space = static_cast<ValueSpace>(vs);
    vol.volume_id = detail::get_string(is, "volume_id");
    vol.domain_tag = domain_tag_from_string(detail::get_string(is, "domain_tag"));
    if (s < 1 || h < 1 || w < 1 || static_cast<std::int64_t>(s) * h * w > (std::int64_t(1) << 31))
        throw_data("corrupt volume file (shape): " + path.string());
    vol.voxels = Tensor({s, h, w});
    const std::streamsize payload = static_cast<std::streamsize>(sizeof(float) * vol.voxels.data.size());
    if (!is.read(reinterpret_cast<char*>(vol.voxels.ptr()), payload))
        throw_data("corrupt volume file (payload shorter than header promises): " + path.string());
    if (is.peek() != std::char_traits<char>::eof())
        throw_data("corrupt volume file (trailing bytes after payload): " + path.string());
    return vol;
}

}  // namespace vxmr
