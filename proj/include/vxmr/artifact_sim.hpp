#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "vxmr/error.hpp"
#include "vxmr/phantoms.hpp"
#include "vxmr/rng.hpp"
#include "vxmr/volumes.hpp"

namespace vxmr {

// HU <-> linear attenuation. Only relative contrast matters downstream, so the
// water coefficient is a fixed convention rather than a tunable.
constexpr double kMuWater = 0.02;  // 1/mm

inline double hu_to_mu(double hu) { return std::max(0.0, kMuWater * (1.0 + hu / 1000.0)); }
inline double mu_to_hu(double mu) { return (mu / kMuWater - 1.0) * 1000.0; }

struct ProjectionGeometry {
    int n_angles = 180;       // uniform over [0, pi)
    int n_detectors = 0;      // 0 = derive as ceil(1.5 * image width)
    double detector_spacing = 1.0;  // in pixel units

    ProjectionGeometry resolved_for_width(int w) const {
        ProjectionGeometry g = *this;
        if (g.n_detectors == 0) g.n_detectors = static_cast<int>(std::ceil(1.5 * w));
        g.validate(w);
        return g;
    }

    void validate(int image_width) const {
        if (n_angles < 16) throw_config("projection geometry: n_angles must be >= 16");
        if (n_detectors < image_width)
            throw_config("projection geometry: n_detectors (" + std::to_string(n_detectors) +
                         ") must cover the image width (" + std::to_string(image_width) + ")");
        if (!(detector_spacing > 0.0))
            throw_config("projection geometry: detector_spacing must be positive");
    }

    bool operator==(const ProjectionGeometry&) const = default;
};

struct Sinogram {
    TensorT<double> data;  // {n_angles, n_detectors}
    ProjectionGeometry geometry;

    double& at(int a, int d) { return data.data[static_cast<std::size_t>(a) * geometry.n_detectors + d]; }
    double at(int a, int d) const { return data.data[static_cast<std::size_t>(a) * geometry.n_detectors + d]; }
};

struct MetalLabel {
    TensorT<std::uint8_t> mask;  // {S, H, W}, 1 under metal
    int m = 0;
    std::vector<int> tooth_ids;  // selection order; first m teeth of the protocol
};

struct PhysicsParams {
    double metal_hu = 3000.0;
    double photon_count_i0 = 2e4;
    double beam_hardening_coeff = 0.0;
    bool enable_noise = true;
    std::uint64_t noise_seed = 0;

    void validate() const {
        if (!(photon_count_i0 > 0.0)) throw_config("physics: photon_count_i0 must be > 0");
        if (beam_hardening_coeff < 0.0)
            throw_config("physics: beam_hardening_coeff must be >= 0");
        if (metal_hu <= 0.0) throw_config("physics: metal_hu must be positive");
    }
};

// ---------------------------------------------------------------------------
// Metal tooth selection. The ordered protocol makes labels nested: the label
// for m fillings is always the first m entries of the same 8-tooth selection.
// ---------------------------------------------------------------------------

namespace detail {

inline std::array<double, 3> region_centroid(const ToothRegion& r, const std::array<int, 3>& shape) {
    double z = 0, y = 0, x = 0;
    for (auto i : r.voxels) {
        const int hw = shape[1] * shape[2];
        z += double(i / hw);
        y += double((i % hw) / shape[2]);
        x += double(i % shape[2]);
    }
    const double n = double(r.voxels.size());
    return {z / n, y / n, x / n};
}

inline int take_random(std::vector<int>& pool, Rng& rng) {
    const int k = rng.uniform_int(0, static_cast<int>(pool.size()) - 1);
    const int id = pool[k];
    pool.erase(pool.begin() + k);
    return id;
}

inline int take_nearest(std::vector<int>& pool, const std::array<double, 3>& to,
                        const ToothIndexMap& map) {
    int best = -1;
    double best_d = 0.0;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < pool.size(); ++k) {
        const auto c = region_centroid(map.tooth_regions[pool[k]], map.volume_shape);
        const double d = std::hypot(c[0] - to[0], std::hypot(c[1] - to[1], c[2] - to[2]));
        if (best < 0 || d < best_d || (d == best_d && pool[k] < best)) {
            best = pool[k];
            best_d = d;
            best_k = k;
        }
    }
    pool.erase(pool.begin() + best_k);
    return best;
}

}  // namespace detail

/// Ordered selection of teeth to receive metal fillings. The first two are
/// random back teeth, the next two the back teeth closest to those, then two
/// front teeth, then two side teeth. A label for m is the first m of the 8.
inline MetalLabel select_metal_teeth(const ToothIndexMap& map, int m, std::uint64_t seed) {
    if (m < 1 || m > 8) throw_config("metal selection: m must be in [1, 8]");
    std::vector<int> back, front, side;
    for (const auto& r : map.tooth_regions) {
        if (is_back(r.arch_position)) back.push_back(r.tooth_id);
        else if (is_side(r.arch_position)) side.push_back(r.tooth_id);
        else front.push_back(r.tooth_id);
    }
    if (back.size() < 4) throw_config("metal selection: need at least 4 back teeth");
    if (front.size() < 2) throw_config("metal selection: need at least 2 front teeth");
    if (side.size() < 2) throw_config("metal selection: need at least 2 side teeth");

    Rng rng(stream_seed(seed, "metal.select"));
    std::vector<int> chosen;
    const int t1 = detail::take_random(back, rng);
    const int t2 = detail::take_random(back, rng);
    const auto c1 = detail::region_centroid(map.tooth_regions[t1], map.volume_shape);
    const auto c2 = detail::region_centroid(map.tooth_regions[t2], map.volume_shape);
    chosen = {t1, t2, detail::take_nearest(back, c1, map), detail::take_nearest(back, c2, map),
              detail::take_random(front, rng), detail::take_random(front, rng),
              detail::take_random(side, rng), detail::take_random(side, rng)};

    MetalLabel label;
    label.m = m;
    label.tooth_ids.assign(chosen.begin(), chosen.begin() + m);
    label.mask = TensorT<std::uint8_t>(
        {map.volume_shape[0], map.volume_shape[1], map.volume_shape[2]}, 0);
    for (int id : label.tooth_ids)
        for (auto i : map.tooth_regions[id].voxels) label.mask[i] = 1;
    return label;
}

// ---------------------------------------------------------------------------
// Parallel-beam forward projection: ray-driven line integrals with bilinear
// sampling at half-pixel steps. Linear in the input image by construction.
// ---------------------------------------------------------------------------

/// `slice` is an H*W row-major attenuation image (pixel spacing 1).
inline Sinogram forward_project(const std::vector<double>& slice, int h, int w,
                                const ProjectionGeometry& geometry) {
    if (static_cast<std::size_t>(h) * w != slice.size())
        throw_data("forward_project: slice buffer does not match " + std::to_string(h) + "x" +
                   std::to_string(w));
    const ProjectionGeometry geom = geometry.resolved_for_width(w);

    Sinogram sino;
    sino.geometry = geom;
    sino.data = TensorT<double>({geom.n_angles, geom.n_detectors}, 0.0);

    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const double half_diag = 0.5 * std::hypot(double(h), double(w)) + 1.0;
    const double step = 0.5;
    const int n_steps = static_cast<int>(std::floor(2.0 * half_diag / step)) + 1;

    for (int a = 0; a < geom.n_angles; ++a) {
        const double theta = std::numbers::pi * a / geom.n_angles;
        const double dirx = std::cos(theta), diry = std::sin(theta);
        const double nx = -diry, ny = dirx;  // detector axis
        for (int d = 0; d < geom.n_detectors; ++d) {
            const double s = (d - (geom.n_detectors - 1) / 2.0) * geom.detector_spacing;
            double acc = 0.0;
            for (int k = 0; k < n_steps; ++k) {
                const double t = -half_diag + k * step;
                const double px = cx + s * nx + t * dirx;
                const double py = cy + s * ny + t * diry;
                const int x0 = static_cast<int>(std::floor(px));
                const int y0 = static_cast<int>(std::floor(py));
                if (x0 < 0 || y0 < 0 || x0 + 1 >= w || y0 + 1 >= h) continue;
                const double fx = px - x0, fy = py - y0;
                const double v00 = slice[std::size_t(y0) * w + x0];
                const double v01 = slice[std::size_t(y0) * w + x0 + 1];
                const double v10 = slice[std::size_t(y0 + 1) * w + x0];
                const double v11 = slice[std::size_t(y0 + 1) * w + x0 + 1];
                acc += (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
            }
            sino.at(a, d) = acc * step;
        }
    }
    return sino;
}

// ---------------------------------------------------------------------------
// Sinogram corruption: beam hardening as a quadratic penalty on the metal
// path, photon starvation as Poisson counts floored at one photon.
// ---------------------------------------------------------------------------

inline Sinogram corrupt_sinogram(const Sinogram& clean, const Sinogram& metal_only,
                                 const PhysicsParams& params) {
    params.validate();
    if (!(clean.geometry == metal_only.geometry))
        throw_data("corrupt_sinogram: geometry mismatch between clean and metal sinograms");
    const int A = clean.geometry.n_angles, D = clean.geometry.n_detectors;

    Sinogram out;
    out.geometry = clean.geometry;
    out.data = TensorT<double>({A, D}, 0.0);
    const double log_i0 = std::log(params.photon_count_i0);

    for (int a = 0; a < A; ++a) {
        for (int d = 0; d < D; ++d) {
            const double p_clean = clean.at(a, d);
            const double p_metal = metal_only.at(a, d);
            if (p_clean < -1e-9 || p_metal < -1e-9)
                throw_data("corrupt_sinogram: negative line integral at angle " +
                           std::to_string(a) + ", detector " + std::to_string(d));
            double p = p_clean + p_metal + params.beam_hardening_coeff * p_metal * p_metal;
            if (params.enable_noise) {
                // Per-ray substream: rays untouched by metal stay bit-identical
                // across different metal configurations under the same seed.
                Rng ray(stream_seed(params.noise_seed, "ray", std::uint64_t(a), std::uint64_t(d)));
                const double lambda = params.photon_count_i0 * std::exp(-p);
                const double count = std::max<double>(1.0, double(ray.poisson(lambda)));
                p = log_i0 - std::log(count);
            }
            out.at(a, d) = p;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Filtered back projection with a frequency-domain Ram-Lak ramp.
// ---------------------------------------------------------------------------

namespace detail {

/// In-place iterative radix-2 complex FFT (inverse if `invert`).
inline void fft_pow2(std::vector<std::complex<double>>& a, bool invert) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw_numeric("fft: length must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * std::numbers::pi / double(len) * (invert ? 1.0 : -1.0);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (invert)
        for (auto& x : a) x /= double(n);
}

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

}  // namespace detail

inline std::vector<double> fbp_reconstruct(const Sinogram& sino, int out_h, int out_w) {
    const int A = sino.geometry.n_angles, D = sino.geometry.n_detectors;
    const double spacing = sino.geometry.detector_spacing;
    if (out_h < 1 || out_w < 1) throw_config("fbp: output size must be positive");
    if (std::max(out_h, out_w) > D * spacing)
        throw_config("fbp: requested output exceeds the detector field of view");
    for (double v : sino.data.data)
        if (!std::isfinite(v)) throw_data("fbp: sinogram contains non-finite values");

    const std::size_t nfft = detail::next_pow2(static_cast<std::size_t>(2) * D);
    // Ram-Lak as the DFT of the band-limited spatial ramp kernel rather than a
    // bare |nu| sampling: the latter zeroes the DC bin and biases the mean of
    // the reconstruction (cupping).
    std::vector<double> ramp(nfft);
    {
        std::vector<std::complex<double>> kernel(nfft, 0.0);
        const double s2 = spacing * spacing;
        kernel[0] = 1.0 / (4.0 * s2);
        for (std::size_t n = 1; n < nfft / 2; n += 2) {
            const double v = -1.0 / (std::numbers::pi * std::numbers::pi * double(n) * double(n) * s2);
            kernel[n] = v;
            kernel[nfft - n] = v;
        }
        detail::fft_pow2(kernel, false);
        for (std::size_t k = 0; k < nfft; ++k) ramp[k] = spacing * kernel[k].real();
    }

    std::vector<double> filtered(static_cast<std::size_t>(A) * D);
    std::vector<std::complex<double>> row(nfft);
    for (int a = 0; a < A; ++a) {
        std::fill(row.begin(), row.end(), std::complex<double>(0.0, 0.0));
        for (int d = 0; d < D; ++d) row[d] = sino.at(a, d);
        detail::fft_pow2(row, false);
        for (std::size_t k = 0; k < nfft; ++k) row[k] *= ramp[k];
        detail::fft_pow2(row, true);
        for (int d = 0; d < D; ++d) filtered[std::size_t(a) * D + d] = row[d].real();
    }

    std::vector<double> image(static_cast<std::size_t>(out_h) * out_w, 0.0);
    const double cx = (out_w - 1) / 2.0, cy = (out_h - 1) / 2.0;
    const double dcenter = (D - 1) / 2.0;
    const double weight = std::numbers::pi / double(A);
    for (int a = 0; a < A; ++a) {
        const double theta = std::numbers::pi * a / A;
        const double nx = -std::sin(theta), ny = std::cos(theta);
        const double* frow = &filtered[std::size_t(a) * D];
        for (int y = 0; y < out_h; ++y) {
            const double py = y - cy;
            for (int x = 0; x < out_w; ++x) {
                const double px = x - cx;
                const double s = px * nx + py * ny;
                const double dpos = s / spacing + dcenter;
                const int d0 = static_cast<int>(std::floor(dpos));
                if (d0 < 0 || d0 + 1 >= D) continue;
                const double f = dpos - d0;
                image[std::size_t(y) * out_w + x] +=
                    weight * ((1.0 - f) * frow[d0] + f * frow[d0 + 1]);
            }
        }
    }
    return image;
}

// ---------------------------------------------------------------------------
// Whole-volume artifact simulation.
// ---------------------------------------------------------------------------

/// Per slice: insert metal under the mask, project, corrupt, reconstruct, and
/// remap to HU. Slices without metal take the same projection/reconstruction
/// path so the whole output shares reconstruction characteristics.
inline Volume simulate_artifacts(const Volume& clean, const MetalLabel& label,
                                 const ProjectionGeometry& geometry, const PhysicsParams& params) {
    clean.validate();
    params.validate();
    if (clean.value_space != ValueSpace::HU)
        throw_data("simulate_artifacts: expects an HU volume");
    if (label.mask.shape != clean.voxels.shape)
        throw_data("simulate_artifacts: metal mask shape does not match the volume");
    const int S = clean.slices(), H = clean.height(), W = clean.width();
    const ProjectionGeometry geom = geometry.resolved_for_width(W);
    const double mu_metal = hu_to_mu(params.metal_hu);

    Volume out = clean;
    out.volume_id = clean.volume_id + "_m" + std::to_string(label.m);
    out.domain_tag = DomainTag::XArtifact;

    std::vector<double> mu_slice(static_cast<std::size_t>(H) * W);
    std::vector<double> mu_diff(static_cast<std::size_t>(H) * W);
    for (int z = 0; z < S; ++z) {
        bool any_metal = false;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::size_t i = std::size_t(y) * W + x;
                const double mu = hu_to_mu(clean.at(z, y, x));
                mu_slice[i] = mu;
                const bool metal = label.mask.at3(z, y, x) != 0;
                mu_diff[i] = metal ? mu_metal - mu : 0.0;
                any_metal = any_metal || metal;
            }

        Sinogram p_clean = forward_project(mu_slice, H, W, geom);
        Sinogram p_metal;
        if (any_metal) {
            p_metal = forward_project(mu_diff, H, W, geom);
        } else {
            p_metal.geometry = p_clean.geometry;
            p_metal.data = TensorT<double>({geom.n_angles, geom.n_detectors}, 0.0);
        }

        PhysicsParams slice_params = params;
        slice_params.noise_seed = stream_seed(params.noise_seed, "slice", std::uint64_t(z));
        Sinogram corrupted = corrupt_sinogram(p_clean, p_metal, slice_params);

        std::vector<double> recon = fbp_reconstruct(corrupted, H, W);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                out.at(z, y, x) = static_cast<float>(
                    std::clamp(mu_to_hu(recon[std::size_t(y) * W + x]), kHuMin, kHuMax));
    }
    return out;
}

}  // namespace vxmr
