#pragma once

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vxmr/dataset.hpp"
#include "vxmr/nets.hpp"
#include "vxmr/volumes.hpp"

// Whole-volume inference. A trained window-to-window generator is swept
// through the slice stack; in the sequential mode each window's input carries
// the previously translated slices forward, so only one new original slice
// enters per step.

namespace vxmr {

enum class TranslateMode { Single, Sequential };
enum class TranslateDirection { TopDown, BottomUp };

inline std::string to_string(TranslateMode m) {
    return m == TranslateMode::Single ? "SINGLE" : "SEQUENTIAL";
}
inline std::string to_string(TranslateDirection d) {
    return d == TranslateDirection::TopDown ? "TOP_DOWN" : "BOTTOM_UP";
}

inline TranslateMode translate_mode_from_string(const std::string& s) {
    if (s == "SINGLE") return TranslateMode::Single;
    if (s == "SEQUENTIAL") return TranslateMode::Sequential;
    throw_config("unknown translate mode '" + s + "'");
}

inline TranslateDirection direction_from_string(const std::string& s) {
    if (s == "TOP_DOWN") return TranslateDirection::TopDown;
    if (s == "BOTTOM_UP") return TranslateDirection::BottomUp;
    throw_config("unknown translate direction '" + s + "'");
}

struct TranslateConfig {
    int n_window_slices = 3;
    TranslateMode mode = TranslateMode::Sequential;
    TranslateDirection direction = TranslateDirection::TopDown;

    void validate() const {
        if (!is_supported_window_count(n_window_slices))
            throw_config("translate: window slice count must be odd and in [1, 13]");
    }
};

/// Sweeps `gen` over the slice stack and returns the translated stack.
///
/// Window schedule, for either direction: the first window covers the N
/// starting slices and all N of its outputs are committed; every later window
/// advances one slice and commits only the newly entered slice. Sequential
/// mode reads each window from the working (already translated) copy; single
/// mode reads from the original volume. Either way S - N + 1 windows run.
/// Windows are always in ascending slice order — direction only selects the
/// traversal end.
template <class Fn>
Tensor translate_slices(const Tensor& slices, const TranslateConfig& cfg, Fn&& gen) {
    cfg.validate();
    if (slices.ndim() != 3) throw_data("translate: expected a {S,H,W} stack");
    const int s = slices.dim(0), h = slices.dim(1), w = slices.dim(2);
    const int n = cfg.n_window_slices;
    if (s < n)
        throw_data("translate: stack has " + std::to_string(s) + " slices, window needs " +
                   std::to_string(n));

    const bool top_down = cfg.direction == TranslateDirection::TopDown;
    const std::int64_t plane = std::int64_t(h) * w;

    Tensor work = slices;   // sequential-mode input feedback
    Tensor out = slices;    // committed results
    const Tensor& source = cfg.mode == TranslateMode::Sequential ? work : slices;

    const int steps = s - n + 1;
    for (int k = 0; k < steps; ++k) {
        const int lo = top_down ? k : s - n - k;
        Tensor window({n, h, w});
        std::memcpy(window.ptr(), source.ptr() + std::int64_t(lo) * plane,
                    std::size_t(n) * plane * sizeof(float));
        Tensor result = gen(window);
        if (result.shape != window.shape)
            throw_data("translate: generator changed the window shape");

        const int commit_lo = k == 0 ? 0 : (top_down ? n - 1 : 0);
        const int commit_hi = k == 0 ? n - 1 : (top_down ? n - 1 : 0);
        for (int c = commit_lo; c <= commit_hi; ++c) {
            std::memcpy(out.ptr() + std::int64_t(lo + c) * plane,
                        result.ptr() + std::int64_t(c) * plane,
                        std::size_t(plane) * sizeof(float));
            if (cfg.mode == TranslateMode::Sequential)
                std::memcpy(work.ptr() + std::int64_t(lo + c) * plane,
                            result.ptr() + std::int64_t(c) * plane,
                            std::size_t(plane) * sizeof(float));
        }
    }
    return out;
}

/// Whole-volume wrapper over a trained generator.
inline Volume translate_volume(const Generator& g, const Volume& vol,
                               const TranslateConfig& cfg) {
    cfg.validate();
    if (g.config.n_channels != cfg.n_window_slices)
        throw_config("translate: generator expects " + std::to_string(g.config.n_channels) +
                     " slices per window, config says " + std::to_string(cfg.n_window_slices));
    if (vol.value_space != ValueSpace::Normalized)
        throw_data("translate: volume '" + vol.volume_id + "' must be normalized");
    vol.validate();

    Volume out = vol;
    out.voxels = translate_slices(vol.voxels, cfg,
                                  [&](const Tensor& window) { return run_generator(g, window); });
    out.domain_tag = DomainTag::Unlabeled;
    return out;
}

/// Translates every artifact-domain volume in the manifest and persists the
/// results (normalized value space, original file names) under out_dir, plus
/// a per-volume wall-clock CSV.
inline std::vector<Volume> translate_batch(const Generator& g, const DatasetManifest& manifest,
                                           const std::filesystem::path& base_dir,
                                           const TranslateConfig& cfg,
                                           const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    const auto csv_path = out_dir / "translate_timing.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw_io("translate: cannot open '" + csv_path.string() + "'");
    csv << "volume_id,seconds\n";

    std::vector<Volume> results;
    for (const auto& entry : manifest.entries) {
        if (entry.domain != DomainTag::XArtifact) continue;
        Volume vol = load_volume(base_dir / entry.path);
        if (vol.value_space == ValueSpace::HU) vol = normalize_hu(vol);

        const auto t0 = std::chrono::steady_clock::now();
        Volume corrected = translate_volume(g, vol, cfg);
        const auto t1 = std::chrono::steady_clock::now();
        const double seconds = std::chrono::duration<double>(t1 - t0).count();

        const auto out_path = out_dir / std::filesystem::path(entry.path).filename();
        save_volume(corrected, out_path);
        char row[256];
        std::snprintf(row, sizeof(row), "%s,%.6f", corrected.volume_id.c_str(), seconds);
        csv << row << "\n";
        results.push_back(std::move(corrected));
    }
    if (!csv) throw_io("translate: timing log write failed");
    return results;
}

}  // namespace vxmr
