#pragma once

// Quantitative image-quality evaluation: RMSE (HU), per-slice windowed
// SSIM, the SSIM improvement rate, grouped median summaries, and figure
// export (grayscale PNG slices plus scatter CSVs).
//
// All comparisons happen in a fixed display window of [-1000, 1000] HU:
// volumes stored in HU are clamped to that window, normalized volumes
// ([-1, 1]) are scaled onto it. The two storage spaces are therefore
// interchangeable for every metric in this header.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vxmr/error.hpp"
#include "vxmr/png.hpp"
#include "vxmr/volumes.hpp"

namespace vxmr {

namespace detail {

// value -> display HU in [-1000, 1000]
inline double display_hu(float v, ValueSpace space) {
    double x = double(v);
    if (space == ValueSpace::Normalized) {
        x = std::clamp(x, -1.0, 1.0) * 1000.0;
    } else {
        x = std::clamp(x, -1000.0, 1000.0);
    }
    return x;
}

inline void require_same_shape(const Volume& a, const Volume& b,
                               const char* what) {
    if (a.voxels.shape != b.voxels.shape)
        throw_data(std::string(what) + ": volume shapes differ (" +
                   a.voxels.shape_str() + " vs " + b.voxels.shape_str() + ")");
}

inline void require_mask_shape(const Volume& a, const Tensor* exclude,
                               const char* what) {
    if (exclude != nullptr && exclude->shape != a.voxels.shape)
        throw_data(std::string(what) + ": mask shape differs from volume shape");
}

inline std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(size));
    const double c = (size - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = (i - c) / sigma;
        k[std::size_t(i)] = std::exp(-0.5 * d * d);
        sum += k[std::size_t(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// separable valid-mode convolution: rows then columns
inline std::vector<double> conv_valid(const std::vector<double>& img, int h,
                                      int w, const std::vector<double>& k) {
    const int ks = int(k.size());
    const int wo = w - ks + 1;
    const int ho = h - ks + 1;
    std::vector<double> tmp(std::size_t(h) * std::size_t(wo));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wo; ++x) {
            double acc = 0.0;
            const double* src = img.data() + std::size_t(y) * w + x;
            for (int i = 0; i < ks; ++i) acc += k[std::size_t(i)] * src[i];
            tmp[std::size_t(y) * wo + x] = acc;
        }
    std::vector<double> out(std::size_t(ho) * std::size_t(wo));
    for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (int i = 0; i < ks; ++i)
                acc += k[std::size_t(i)] * tmp[std::size_t(y + i) * wo + x];
            out[std::size_t(y) * wo + x] = acc;
        }
    return out;
}

}  // namespace detail

// Root mean square error in HU over the display window. Voxels where
// `exclude` is nonzero are left out of the mean.
inline double rmse(const Volume& reference, const Volume& test,
                   const Tensor* exclude = nullptr) {
    detail::require_same_shape(reference, test, "rmse");
    detail::require_mask_shape(reference, exclude, "rmse");
    double acc = 0.0;
    std::int64_t count = 0;
    const std::int64_t n = reference.voxels.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        if (exclude != nullptr && (*exclude)[i] > 0.5f) continue;
        const double d =
            detail::display_hu(reference.voxels[i], reference.value_space) -
            detail::display_hu(test.voxels[i], test.value_space);
        acc += d * d;
        ++count;
    }
    if (count == 0) throw_data("rmse: mask excludes every voxel");
    return std::sqrt(acc / double(count));
}

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;

    void validate() const {
        if (window < 3 || window % 2 == 0)
            throw_config("ssim: window must be odd and >= 3");
        if (sigma <= 0) throw_config("ssim: sigma must be positive");
        if (k1 <= 0 || k2 <= 0)
            throw_config("ssim: stabilization constants must be positive");
    }
};

// Mean structural similarity: local Gaussian-weighted SSIM over every
// fully-contained window of each slice, slice means averaged over the
// volume. Both volumes are mapped onto the display range first, so the
// result lives in [-1, 1] with 1 for identical inputs. A window is
// skipped when `exclude` is nonzero at its center.
inline double ssim(const Volume& reference, const Volume& test,
                   const SsimParams& params = {},
                   const Tensor* exclude = nullptr) {
    params.validate();
    detail::require_same_shape(reference, test, "ssim");
    detail::require_mask_shape(reference, exclude, "ssim");
    const int s = reference.slices();
    const int h = reference.height();
    const int w = reference.width();
    if (h < params.window || w < params.window)
        throw_data("ssim: slice smaller than the comparison window");

    const auto kernel = detail::gaussian_kernel(params.window, params.sigma);
    const double c1 = params.k1 * params.k1;  // display dynamic range is 1
    const double c2 = params.k2 * params.k2;
    const int half = params.window / 2;
    const int wo = w - params.window + 1;
    const int ho = h - params.window + 1;

    const std::size_t plane = std::size_t(h) * std::size_t(w);
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);

    double slice_sum = 0.0;
    int slice_count = 0;
    for (int z = 0; z < s; ++z) {
        const float* pr = reference.voxels.ptr() + std::size_t(z) * plane;
        const float* pt = test.voxels.ptr() + std::size_t(z) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            const double a =
                (detail::display_hu(pr[i], reference.value_space) + 1000.0) /
                2000.0;
            const double b =
                (detail::display_hu(pt[i], test.value_space) + 1000.0) / 2000.0;
            x[i] = a;
            y[i] = b;
            xx[i] = a * a;
            yy[i] = b * b;
            xy[i] = a * b;
        }
        const auto mx = detail::conv_valid(x, h, w, kernel);
        const auto my = detail::conv_valid(y, h, w, kernel);
        const auto exx = detail::conv_valid(xx, h, w, kernel);
        const auto eyy = detail::conv_valid(yy, h, w, kernel);
        const auto exy = detail::conv_valid(xy, h, w, kernel);

        double acc = 0.0;
        std::int64_t count = 0;
        for (int cy = 0; cy < ho; ++cy)
            for (int cx = 0; cx < wo; ++cx) {
                if (exclude != nullptr &&
                    exclude->at3(z, cy + half, cx + half) > 0.5f)
                    continue;
                const std::size_t at = std::size_t(cy) * wo + cx;
                const double ux = mx[at];
                const double uy = my[at];
                const double vx = exx[at] - ux * ux;
                const double vy = eyy[at] - uy * uy;
                const double cov = exy[at] - ux * uy;
                const double val = ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) /
                                   ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                acc += std::clamp(val, -1.0, 1.0);
                ++count;
            }
        if (count > 0) {
            slice_sum += acc / double(count);
            ++slice_count;
        }
    }
    if (slice_count == 0) throw_data("ssim: mask excludes every window");
    return slice_sum / double(slice_count);
}

// Relative SSIM gain in percent: (corrected - original) / original * 100.
inline double improvement_rate(double ssim_corrected, double ssim_original) {
    if (!(ssim_original > 0.0))
        throw_data("improvement_rate: baseline ssim must be positive");
    return (ssim_corrected - ssim_original) / ssim_original * 100.0;
}

// Median with the even-count convention: mean of the two central values.
inline double median(std::vector<double> values) {
    if (values.empty()) throw_data("median: empty value set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2]
                      : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct MetricsRow {
    std::string volume_id;
    int m = 0;               // number of metal objects in the volume
    std::string method;      // "original" or a correction label
    double rmse_hu = 0.0;
    double ssim = 0.0;
    double r_s = 0.0;        // percent improvement over the original
    double rmse_hu_masked = 0.0;
    double ssim_masked = 0.0;
    double r_s_masked = 0.0;
};

struct AggregateRow {
    int m = 0;
    std::string method;
    int count = 0;
    double rmse_hu = 0.0;    // medians of the matching metric rows
    double ssim = 0.0;
    double r_s = 0.0;
    double rmse_hu_masked = 0.0;
    double ssim_masked = 0.0;
    double r_s_masked = 0.0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;
    std::vector<AggregateRow> aggregates;  // one per (m, method) group
};

// Groups rows by (m, method) and reduces every metric to its median.
inline MetricsReport aggregate(std::vector<MetricsRow> rows) {
    if (rows.empty()) throw_data("aggregate: no metric rows");
    std::map<std::pair<int, std::string>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < rows.size(); ++i)
        groups[{rows[i].m, rows[i].method}].push_back(i);

    MetricsReport report;
    report.rows = std::move(rows);
    for (const auto& [key, members] : groups) {
        AggregateRow agg;
        agg.m = key.first;
        agg.method = key.second;
        agg.count = int(members.size());
        auto med = [&](double MetricsRow::* field) {
            std::vector<double> v;
            v.reserve(members.size());
            for (std::size_t i : members) v.push_back(report.rows[i].*field);
            return median(std::move(v));
        };
        agg.rmse_hu = med(&MetricsRow::rmse_hu);
        agg.ssim = med(&MetricsRow::ssim);
        agg.r_s = med(&MetricsRow::r_s);
        agg.rmse_hu_masked = med(&MetricsRow::rmse_hu_masked);
        agg.ssim_masked = med(&MetricsRow::ssim_masked);
        agg.r_s_masked = med(&MetricsRow::r_s_masked);
        report.aggregates.push_back(std::move(agg));
    }
    return report;
}

// Checks that every non-original row's improvement rate matches its own
// ssim against the "original" row of the same volume.
inline void validate_report(const MetricsReport& report) {
    std::map<std::string, const MetricsRow*> originals;
    for (const auto& row : report.rows)
        if (row.method == "original") originals[row.volume_id] = &row;
    for (const auto& row : report.rows) {
        if (row.method == "original") continue;
        auto it = originals.find(row.volume_id);
        if (it == originals.end())
            throw_data("metrics report: volume '" + row.volume_id +
                       "' has no original row");
        const MetricsRow& base = *it->second;
        if (std::abs(row.r_s - improvement_rate(row.ssim, base.ssim)) > 1e-9 ||
            std::abs(row.r_s_masked -
                     improvement_rate(row.ssim_masked, base.ssim_masked)) > 1e-9)
            throw_data("metrics report: improvement rate of volume '" +
                       row.volume_id + "' is inconsistent with its ssim");
    }
}

// Evaluates one volume: the uncorrected input and a corrected result
// against the shared clean reference. `metal_exclude` nonzero marks
// voxels dropped from the masked metric variants.
struct EvaluatedVolume {
    MetricsRow original;
    MetricsRow corrected;
};

inline EvaluatedVolume evaluate_pair(const std::string& volume_id, int m,
                                     const std::string& method,
                                     const Volume& reference,
                                     const Volume& original,
                                     const Volume& corrected,
                                     const Tensor* metal_exclude = nullptr,
                                     const SsimParams& params = {}) {
    EvaluatedVolume ev;
    ev.original.volume_id = volume_id;
    ev.original.m = m;
    ev.original.method = "original";
    ev.original.rmse_hu = rmse(reference, original);
    ev.original.ssim = ssim(reference, original, params);
    ev.original.rmse_hu_masked = rmse(reference, original, metal_exclude);
    ev.original.ssim_masked = ssim(reference, original, params, metal_exclude);

    ev.corrected.volume_id = volume_id;
    ev.corrected.m = m;
    ev.corrected.method = method;
    ev.corrected.rmse_hu = rmse(reference, corrected);
    ev.corrected.ssim = ssim(reference, corrected, params);
    ev.corrected.rmse_hu_masked = rmse(reference, corrected, metal_exclude);
    ev.corrected.ssim_masked = ssim(reference, corrected, params, metal_exclude);
    ev.corrected.r_s = improvement_rate(ev.corrected.ssim, ev.original.ssim);
    ev.corrected.r_s_masked =
        improvement_rate(ev.corrected.ssim_masked, ev.original.ssim_masked);
    return ev;
}

namespace detail {

inline std::string format_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::ofstream open_text(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw_io("cannot open '" + path.string() + "' for writing");
    return os;
}

}  // namespace detail

// Column order: volume_id,m,method,rmse_hu,ssim,r_s,
//               rmse_hu_masked,ssim_masked,r_s_masked
inline void write_rows_csv(const MetricsReport& report,
                           const std::filesystem::path& path) {
    auto os = detail::open_text(path);
    os << "volume_id,m,method,rmse_hu,ssim,r_s,rmse_hu_masked,ssim_masked,"
          "r_s_masked\n";
    for (const auto& r : report.rows)
        os << r.volume_id << ',' << r.m << ',' << r.method << ','
           << detail::format_g(r.rmse_hu) << ',' << detail::format_g(r.ssim)
           << ',' << detail::format_g(r.r_s) << ','
           << detail::format_g(r.rmse_hu_masked) << ','
           << detail::format_g(r.ssim_masked) << ','
           << detail::format_g(r.r_s_masked) << '\n';
    if (!os) throw_io("write failed for '" + path.string() + "'");
}

// Column order: m,method,count,rmse_hu,ssim,r_s,
//               rmse_hu_masked,ssim_masked,r_s_masked  (all medians)
inline void write_aggregates_csv(const MetricsReport& report,
                                 const std::filesystem::path& path) {
    auto os = detail::open_text(path);
    os << "m,method,count,rmse_hu,ssim,r_s,rmse_hu_masked,ssim_masked,"
          "r_s_masked\n";
    for (const auto& a : report.aggregates)
        os << a.m << ',' << a.method << ',' << a.count << ','
           << detail::format_g(a.rmse_hu) << ',' << detail::format_g(a.ssim)
           << ',' << detail::format_g(a.r_s) << ','
           << detail::format_g(a.rmse_hu_masked) << ','
           << detail::format_g(a.ssim_masked) << ','
           << detail::format_g(a.r_s_masked) << '\n';
    if (!os) throw_io("write failed for '" + path.string() + "'");
}

// One row per volume, pairing the original and corrected metrics for
// scatter plots. Column order:
// volume_id,m,method,rmse_original,rmse_corrected,ssim_original,ssim_corrected
inline void write_scatter_csv(const std::vector<EvaluatedVolume>& evaluated,
                              const std::filesystem::path& path) {
    auto os = detail::open_text(path);
    os << "volume_id,m,method,rmse_original,rmse_corrected,ssim_original,"
          "ssim_corrected\n";
    for (const auto& ev : evaluated)
        os << ev.original.volume_id << ',' << ev.original.m << ','
           << ev.corrected.method << ','
           << detail::format_g(ev.original.rmse_hu) << ','
           << detail::format_g(ev.corrected.rmse_hu) << ','
           << detail::format_g(ev.original.ssim) << ','
           << detail::format_g(ev.corrected.ssim) << '\n';
    if (!os) throw_io("write failed for '" + path.string() + "'");
}

struct FigureInputs {
    std::string volume_id;
    const Volume* reference = nullptr;
    const Volume* original = nullptr;
    const Volume* corrected = nullptr;
};

// Writes per-slice grayscale PNGs (reference / original / corrected at a
// 2000-HU window, absolute-difference maps at a 500-HU window) plus the
// scatter CSV. Empty `slice_indices` selects each volume's middle slice.
// Returns the paths written.
inline std::vector<std::filesystem::path> emit_figures(
    const std::vector<EvaluatedVolume>& evaluated,
    const std::vector<FigureInputs>& pairs,
    const std::vector<int>& slice_indices,
    const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    std::vector<std::filesystem::path> written;

    const int img_window = 2000, img_level = 0;    // full display range
    const int diff_window = 500, diff_level = 250;  // |difference| in [0, 500]

    for (const auto& p : pairs) {
        if (p.reference == nullptr || p.original == nullptr ||
            p.corrected == nullptr)
            throw_config("emit_figures: every volume pointer must be set");
        detail::require_same_shape(*p.reference, *p.original, "emit_figures");
        detail::require_same_shape(*p.reference, *p.corrected, "emit_figures");
        const int s = p.reference->slices();
        const int h = p.reference->height();
        const int w = p.reference->width();
        const std::size_t plane = std::size_t(h) * std::size_t(w);

        std::vector<int> indices = slice_indices;
        if (indices.empty()) indices.push_back(s / 2);
        for (int idx : indices) {
            if (idx < 0 || idx >= s)
                throw_config("emit_figures: slice index out of range for '" +
                             p.volume_id + "'");
            auto hu_plane = [&](const Volume& v) {
                std::vector<float> out(plane);
                const float* src = v.voxels.ptr() + std::size_t(idx) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    out[i] = float(detail::display_hu(src[i], v.value_space));
                return out;
            };
            const auto ref_hu = hu_plane(*p.reference);
            const auto orig_hu = hu_plane(*p.original);
            const auto corr_hu = hu_plane(*p.corrected);

            auto emit = [&](const std::string& kind,
                            const std::vector<float>& values, int window,
                            int level) {
                char name[256];
                std::snprintf(name, sizeof(name), "%s_slice%03d_%s_w%d_l%d.png",
                              p.volume_id.c_str(), idx, kind.c_str(), window,
                              level);
                const auto path = out_dir / name;
                write_png_gray8(path,
                                window_to_gray8(values.data(),
                                                std::int64_t(values.size()),
                                                double(window), double(level)),
                                w, h);
                written.push_back(path);
            };
            auto abs_diff = [&](const std::vector<float>& a,
                                const std::vector<float>& b) {
                std::vector<float> d(plane);
                for (std::size_t i = 0; i < plane; ++i)
                    d[i] = std::abs(a[i] - b[i]);
                return d;
            };
            emit("reference", ref_hu, img_window, img_level);
            emit("original", orig_hu, img_window, img_level);
            emit("corrected", corr_hu, img_window, img_level);
            emit("diff_original", abs_diff(orig_hu, ref_hu), diff_window,
                 diff_level);
            emit("diff_corrected", abs_diff(corr_hu, ref_hu), diff_window,
                 diff_level);
        }
    }

    const auto scatter = out_dir / "scatter.csv";
    write_scatter_csv(evaluated, scatter);
    written.push_back(scatter);
    return written;
}

}  // namespace vxmr
