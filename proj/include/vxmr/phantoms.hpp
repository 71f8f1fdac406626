#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "vxmr/error.hpp"
#include "vxmr/rng.hpp"
#include "vxmr/volumes.hpp"

namespace vxmr {

enum class ArchPosition { BackLeft, SideLeft, Front, SideRight, BackRight };

inline const char* to_string(ArchPosition p) {
    switch (p) {
        case ArchPosition::BackLeft: return "BACK_LEFT";
        case ArchPosition::SideLeft: return "SIDE_LEFT";
        case ArchPosition::Front: return "FRONT";
        case ArchPosition::SideRight: return "SIDE_RIGHT";
        case ArchPosition::BackRight: return "BACK_RIGHT";
    }
    return "?";
}

inline bool is_back(ArchPosition p) {
    return p == ArchPosition::BackLeft || p == ArchPosition::BackRight;
}
inline bool is_side(ArchPosition p) {
    return p == ArchPosition::SideLeft || p == ArchPosition::SideRight;
}

struct PhantomJitter {
    double geometry_frac = 0.03;    // relative jitter on ellipse axes and radii
    double tooth_angle_deg = 0.8;   // angular jitter of tooth placement on the arch
    double tooth_hu_range = 40.0;   // +- around tooth_hu, per tooth
    double tissue_hu_range = 15.0;  // +- smooth texture inside soft tissue
};

struct PhantomSpec {
    std::uint64_t seed = 0;
    int n_slices = 16;
    int height = 128;
    int width = 128;
    int n_teeth = 14;
    double tissue_hu = 40.0;
    double bone_hu = 900.0;
    double tooth_hu = 1400.0;
    double air_hu = -1000.0;
    PhantomJitter jitter;

    void validate() const {
        if (!(air_hu < tissue_hu && tissue_hu < bone_hu && bone_hu < tooth_hu))
            throw_config("phantom spec: require air_hu < tissue_hu < bone_hu < tooth_hu");
        if (height < 64 || width < 64)
            throw_config("phantom spec: image too small to place all teeth (min 64x64), got " +
                         std::to_string(height) + "x" + std::to_string(width));
        if (n_slices < 4) throw_config("phantom spec: need at least 4 slices");
        if (n_teeth < 10 || n_teeth > 20)
            throw_config("phantom spec: n_teeth must be in [10, 20]");
        if (tooth_hu - jitter.tooth_hu_range <= bone_hu)
            throw_config("phantom spec: tooth_hu jitter range must stay above bone_hu");
        if (air_hu < kHuMin || tooth_hu + jitter.tooth_hu_range > kHuMax)
            throw_config("phantom spec: HU targets must stay inside the raw acquisition range");
    }
};

struct ToothRegion {
    int tooth_id = 0;  // ids follow the arch from the patient's back-left to back-right
    ArchPosition arch_position = ArchPosition::Front;
    std::vector<std::int64_t> voxels;  // flat indices into the volume
};

struct ToothIndexMap {
    std::array<int, 3> volume_shape{0, 0, 0};
    std::vector<ToothRegion> tooth_regions;
};

namespace detail {

/// Low-frequency field: a small sum of random plane-wave sinusoids. Smooth by
/// construction; amplitude is normalized so |field| <= 1 everywhere.
class SmoothField3 {
public:
    SmoothField3(Rng& rng, int n_modes, double max_cycles) {
        modes_.resize(n_modes);
        double total = 0.0;
        for (auto& m : modes_) {
            m.fx = rng.uniform(-max_cycles, max_cycles);
            m.fy = rng.uniform(-max_cycles, max_cycles);
            m.fz = rng.uniform(-max_cycles, max_cycles);
            m.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            m.amp = rng.uniform(0.5, 1.0);
            total += m.amp;
        }
        for (auto& m : modes_) m.amp /= total;
    }

    /// u,v,w are coordinates normalized to [0,1] along x,y,z.
    double operator()(double u, double v, double w) const {
        double s = 0.0;
        for (const auto& m : modes_)
            s += m.amp * std::sin(2.0 * std::numbers::pi * (m.fx * u + m.fy * v + m.fz * w) + m.phase);
        return s;
    }

private:
    struct Mode {
        double fx, fy, fz, phase, amp;
    };
    std::vector<Mode> modes_;
};

struct ToothPlacement {
    double cx, cy;        // in-plane center at the central tooth slice
    double drift_x, drift_y;  // total lateral drift across the tooth's z-extent
    double zc, rz;        // ellipsoid center and half-extent along z
    double radius;        // in-plane radius at zc
    double hu;
    ArchPosition position;
};

}  // namespace detail

/// Renders a stack of head-like cross sections: elliptical soft tissue over an
/// air background, a U-shaped mandible arc plus a vertebra-like blob in bone,
/// and n_teeth high-density tooth ellipsoids arranged along the dental arch
/// over a contiguous range of slices. Pure function of the spec.
inline std::pair<Volume, ToothIndexMap> generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const int S = spec.n_slices, H = spec.height, W = spec.width;
    const double g = spec.jitter.geometry_frac;

    Rng geo(stream_seed(spec.seed, "phantom.geometry"));
    Rng tooth_rng(stream_seed(spec.seed, "phantom.teeth"));
    Rng tex_rng(stream_seed(spec.seed, "phantom.texture"));

    // Head ellipse. The face (and the dental arch) points toward -y.
    const double cx = W * (0.5 + geo.uniform(-0.01, 0.01));
    const double cy = H * (0.5 + geo.uniform(-0.01, 0.01));
    const double head_a = 0.40 * W * (1.0 + geo.uniform(-g, g));
    const double head_b = 0.44 * H * (1.0 + geo.uniform(-g, g));

    // Vertebra-like bone blob toward the back.
    const double vert_cy = cy + 0.27 * H * (1.0 + geo.uniform(-g, g));
    const double vert_a = 0.080 * W * (1.0 + geo.uniform(-g, g));
    const double vert_b = 0.070 * H * (1.0 + geo.uniform(-g, g));

    // Dental arch: circle segment of radius R around a point forward of center.
    const double arch_cy = cy - 0.10 * H;
    const double arch_r = 0.25 * W * (1.0 + geo.uniform(-g, g));
    const double band_in = arch_r - 0.040 * W;   // mandible band, radial extent
    const double band_out = arch_r + 0.030 * W;

    // Teeth span a contiguous subrange of slices; the mandible a slightly
    // larger one.
    const int z_lo = std::max(1, static_cast<int>(std::lround(S * 0.20)));
    const int z_hi = std::min(S - 2, static_cast<int>(std::lround(S * 0.80)) - 1);
    const int jaw_lo = std::max(0, z_lo - 2);
    const int jaw_hi = std::min(S - 1, z_hi + 2);

    // Arch-position classes are assigned by nominal index so jitter can never
    // change the class census.
    const int n = spec.n_teeth;
    const int n_back = std::max(2, static_cast<int>(std::lround(n * 3.0 / 14.0)));
    const int n_side = std::max(2, static_cast<int>(std::lround(n * 2.0 / 14.0)));
    const int n_front = n - 2 * n_back - 2 * n_side;
    if (n_front < 2) throw_config("phantom spec: n_teeth leaves fewer than 2 front teeth");

    std::vector<detail::ToothPlacement> teeth(n);
    const double deg = std::numbers::pi / 180.0;
    for (int i = 0; i < n; ++i) {
        auto& t = teeth[i];
        const double theta_nom = -100.0 + 200.0 * i / (n - 1);
        const double theta = (theta_nom + tooth_rng.uniform(-spec.jitter.tooth_angle_deg,
                                                            spec.jitter.tooth_angle_deg)) * deg;
        t.cx = cx + arch_r * std::sin(theta);
        t.cy = arch_cy - arch_r * std::cos(theta);
        t.drift_x = tooth_rng.uniform(-0.3, 0.3);
        t.drift_y = tooth_rng.uniform(-0.3, 0.3);
        t.zc = 0.5 * (z_lo + z_hi) + tooth_rng.uniform(-0.3, 0.3);
        t.rz = 0.5 * (z_hi - z_lo) + 0.49;
        t.radius = (W / 128.0) * tooth_rng.uniform(2.0, 2.3);
        t.hu = spec.tooth_hu + tooth_rng.uniform(-spec.jitter.tooth_hu_range,
                                                 spec.jitter.tooth_hu_range);
        if (i < n_back) t.position = ArchPosition::BackLeft;
        else if (i < n_back + n_side) t.position = ArchPosition::SideLeft;
        else if (i < n_back + n_side + n_front) t.position = ArchPosition::Front;
        else if (i < n_back + 2 * n_side + n_front) t.position = ArchPosition::SideRight;
        else t.position = ArchPosition::BackRight;
    }

    detail::SmoothField3 texture(tex_rng, 5, 3.0);

    Volume vol;
    vol.voxels = Tensor({S, H, W});
    vol.value_space = ValueSpace::HU;
    vol.volume_id = "phantom_" + std::to_string(spec.seed);
    vol.domain_tag = DomainTag::Unlabeled;

    ToothIndexMap map;
    map.volume_shape = {S, H, W};
    map.tooth_regions.resize(n);
    for (int i = 0; i < n; ++i) {
        map.tooth_regions[i].tooth_id = i;
        map.tooth_regions[i].arch_position = teeth[i].position;
    }

    for (int z = 0; z < S; ++z) {
        // Head cross-section breathes smoothly along z (roughly ellipsoidal).
        const double tz = 2.0 * (z + 0.5) / S - 1.0;
        const double head_scale = 0.92 + 0.08 * std::sqrt(std::max(0.0, 1.0 - tz * tz));
        const double az = head_a * head_scale, bz = head_b * head_scale;
        const bool jaw_slice = z >= jaw_lo && z <= jaw_hi;
        const double jaw_mod = jaw_slice
            ? 1.0 + 0.02 * std::sin(std::numbers::pi * (z - jaw_lo + 1) / (jaw_hi - jaw_lo + 2))
            : 1.0;

        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double dx = x - cx, dy = y - cy;
                double value = spec.air_hu;
                const bool inside_head = (dx * dx) / (az * az) + (dy * dy) / (bz * bz) <= 1.0;
                if (inside_head) {
                    value = spec.tissue_hu +
                            spec.jitter.tissue_hu_range *
                                texture(double(x) / W, double(y) / H, double(z) / S);
                    const double vx = x - cx, vy = y - vert_cy;
                    if ((vx * vx) / (vert_a * vert_a) + (vy * vy) / (vert_b * vert_b) <= 1.0)
                        value = spec.bone_hu;
                    if (jaw_slice) {
                        const double ax = x - cx, ay = y - arch_cy;
                        const double rad = std::hypot(ax, ay);
                        const double ang = std::atan2(ax, -ay) / deg;  // 0 = straight ahead
                        if (rad >= band_in * jaw_mod && rad <= band_out * jaw_mod &&
                            std::abs(ang) <= 105.0)
                            value = spec.bone_hu;
                    }
                    int owner = -1;
                    if (z >= z_lo && z <= z_hi) {
                        for (int i = 0; i < n && owner < 0; ++i) {
                            const auto& t = teeth[i];
                            const double u = (z - t.zc) / t.rz;
                            if (std::abs(u) > 1.0) continue;
                            const double r_here = t.radius * std::sqrt(1.0 - u * u);
                            const double tcx = t.cx + t.drift_x * u;
                            const double tcy = t.cy + t.drift_y * u;
                            if (std::hypot(x - tcx, y - tcy) <= r_here) owner = i;
                        }
                    }
                    if (owner >= 0) {
                        value = teeth[owner].hu;
                        map.tooth_regions[owner].voxels.push_back(vol.voxels.off3(z, y, x));
                    }
                }
                vol.voxels.at3(z, y, x) =
                    static_cast<float>(std::clamp(value, kHuMin, kHuMax));
            }
        }
    }

    for (const auto& r : map.tooth_regions)
        if (r.voxels.empty())
            throw_numeric("phantom generation produced an empty region for tooth " +
                          std::to_string(r.tooth_id));
    return {std::move(vol), std::move(map)};
}

/// Population diversity: a smooth random warp (nearest-neighbour resampling of
/// a low-frequency displacement field, sub-voxel amplitude) plus smooth
/// intensity jitter restricted to soft tissue. Bone and tooth voxel values are
/// carried over exactly, so the tooth count is preserved.
inline Volume perturb_phantom(const Volume& vol, std::uint64_t seed) {
    vol.validate();
    if (vol.value_space != ValueSpace::HU) throw_data("perturb_phantom: expects an HU volume");
    const int S = vol.slices(), H = vol.height(), W = vol.width();

    Rng warp_rng(stream_seed(seed, "perturb.warp"));
    Rng int_rng(stream_seed(seed, "perturb.intensity"));
    detail::SmoothField3 ux(warp_rng, 3, 1.5), uy(warp_rng, 3, 1.5), uz(warp_rng, 3, 1.5);
    detail::SmoothField3 shade(int_rng, 4, 2.0);

    const double amp_xy = 0.008 * std::min(H, W);  // ~1 voxel at 128
    const double amp_z = 0.3;

    Volume out = vol;
    out.volume_id = vol.volume_id + "_p" + std::to_string(seed);
    for (int z = 0; z < S; ++z) {
        const double w = double(z) / S;
        for (int y = 0; y < H; ++y) {
            const double v = double(y) / H;
            for (int x = 0; x < W; ++x) {
                const double u = double(x) / W;
                const int sx = std::clamp(static_cast<int>(std::lround(x + amp_xy * ux(u, v, w))), 0, W - 1);
                const int sy = std::clamp(static_cast<int>(std::lround(y + amp_xy * uy(u, v, w))), 0, H - 1);
                const int sz = std::clamp(static_cast<int>(std::lround(z + amp_z * uz(u, v, w))), 0, S - 1);
                float val = vol.at(sz, sy, sx);
                if (val > -500.0f && val < 800.0f)  // soft tissue only
                    val += static_cast<float>(30.0 * shade(u, v, w));
                out.at(z, y, x) = std::clamp(val, static_cast<float>(kHuMin),
                                             static_cast<float>(kHuMax));
            }
        }
    }
    return out;
}

}  // namespace vxmr
