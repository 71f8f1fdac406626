#pragma once

// Pipeline orchestration behind the command-line entry points:
// build-data -> train -> translate -> evaluate, plus the one-shot
// reproduce-all chain. Every command is deterministic for a given
// config and is safe to re-run: outputs are rewritten identically,
// and training resumes from the newest compatible checkpoint.

#include <deque>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vxmr/config.hpp"
#include "vxmr/metrics.hpp"

namespace vxmr {

namespace detail {

inline void log_line(std::ostream* log, const std::string& msg) {
    if (log != nullptr) *log << msg << "\n" << std::flush;
}

struct CheckpointInfo {
    std::uint64_t config_hash = 0;
    std::int64_t step = 0;
};

// Reads just the header so resume can rank candidates without loading
// network weights.
inline std::optional<CheckpointInfo> peek_checkpoint(
    const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return std::nullopt;
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) return std::nullopt;
    if (get_u32(is) != kCheckpointVersion) return std::nullopt;
    CheckpointInfo info;
    info.config_hash = get_u64(is);
    info.step = std::int64_t(get_u64(is));
    if (!is) return std::nullopt;
    return info;
}

// Newest checkpoint in `dir` written under exactly this configuration.
inline std::optional<std::filesystem::path> find_resume_checkpoint(
    const std::filesystem::path& dir, const TrainConfig& cfg) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) return std::nullopt;
    const std::uint64_t want = cfg.config_hash();
    std::optional<fs::path> best;
    std::int64_t best_step = -1;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".vxck")
            continue;
        const auto info = peek_checkpoint(entry.path());
        if (!info || info->config_hash != want) continue;
        if (info->step > best_step ||
            (info->step == best_step && entry.path() > *best)) {
            best = entry.path();
            best_step = info->step;
        }
    }
    return best;
}

}  // namespace detail

// Builds the unpaired training corpus and the paired test set under
// <output_root>/data, then proves the splits share no phantom.
inline std::pair<DatasetManifest, DatasetManifest> cmd_build_data(
    const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    detail::log_line(log, "build-data: writing corpus to '" +
                              cfg.data_dir().string() + "'");
    DatasetManifest train = build_training_corpus(cfg.dataset);
    DatasetManifest test = build_paired_testset(cfg.dataset);
    check_no_leakage(train, test);
    detail::log_line(log,
                     "build-data: " + std::to_string(train.entries.size()) +
                         " training volumes, " +
                         std::to_string(test.entries.size()) + " test volumes");
    return {std::move(train), std::move(test)};
}

// Trains (or finishes training) the configured model and returns the
// final checkpoint path. An interrupted run picks up from the newest
// checkpoint whose configuration hash matches; incompatible leftovers
// are ignored.
inline std::filesystem::path cmd_train(const ExperimentConfig& cfg,
                                       std::ostream* log = nullptr,
                                       const StepCallback& on_step = {}) {
    const auto manifest = load_manifest(cfg.data_dir() / "train_manifest.txt");
    const auto corpus = load_corpus(manifest, cfg.data_dir());
    const auto resume = detail::find_resume_checkpoint(cfg.train_dir(), cfg.train);
    if (resume)
        detail::log_line(log, "train: resuming from '" + resume->string() + "'");
    detail::log_line(
        log, "train: " + to_string(cfg.train.variant) + ", " +
                 std::to_string(cfg.train.total_steps()) + " steps, batch " +
                 std::to_string(cfg.train.batch_size));
    TrainState st = train(cfg.train, corpus, cfg.train_dir(), resume, on_step);
    detail::log_line(log, "train: finished at step " + std::to_string(st.step));
    return cfg.train_dir() / "final.vxck";
}

// Translates every artifact-domain volume of the paired test set with
// the checkpoint's artifact-removal generator; writes volumes and the
// timing log under <output_root>/translated.
inline std::vector<Volume> cmd_translate(
    const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
    std::ostream* log = nullptr) {
    const TrainState st = load_checkpoint(checkpoint, cfg.train);
    const auto manifest = load_manifest(cfg.data_dir() / "test_manifest.txt");
    detail::log_line(log, "translate: " + to_string(cfg.translate.mode) + " " +
                              to_string(cfg.translate.direction) + ", N=" +
                              std::to_string(cfg.translate.n_window_slices));
    auto out = translate_batch(st.g_y, manifest, cfg.data_dir(), cfg.translate,
                               cfg.translated_dir());
    detail::log_line(log, "translate: wrote " + std::to_string(out.size()) +
                              " volumes to '" + cfg.translated_dir().string() +
                              "'");
    return out;
}

struct EvaluateResult {
    MetricsReport report;
    std::vector<EvaluatedVolume> evaluated;
    std::vector<std::string> omissions;  // test entries without a translation
};

// Scores every paired test volume (original and corrected against the
// clean reference, masked and unmasked), writes the row/aggregate/
// scatter CSVs plus an omissions list, and optionally exports figures.
// Missing corrected volumes are recorded and skipped, not fatal.
inline EvaluateResult cmd_evaluate(const ExperimentConfig& cfg,
                                   const std::filesystem::path& results_dir,
                                   std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    const auto manifest = load_manifest(cfg.data_dir() / "test_manifest.txt");
    fs::create_directories(cfg.metrics_dir());

    const std::string method = to_string(cfg.train.variant);
    EvaluateResult result;
    std::deque<Volume> keep_alive;  // stable addresses for figure export
    std::vector<FigureInputs> figures;
    std::map<std::string, Volume> clean_cache;

    for (const auto& entry : manifest.entries) {
        if (entry.domain != DomainTag::XArtifact) continue;
        const std::string stem = fs::path(entry.path).stem().string();
        const auto corrected_path = results_dir / fs::path(entry.path).filename();
        if (!fs::exists(corrected_path)) {
            result.omissions.push_back(entry.path);
            continue;
        }
        if (entry.clean_path.empty())
            throw_data("evaluate: test entry '" + entry.path +
                       "' has no clean reference");

        auto clean_it = clean_cache.find(entry.clean_path);
        if (clean_it == clean_cache.end())
            clean_it = clean_cache
                           .emplace(entry.clean_path,
                                    load_volume(cfg.data_dir() / entry.clean_path))
                           .first;

        const Volume& reference = clean_it->second;  // map nodes are stable
        keep_alive.push_back(load_volume(cfg.data_dir() / entry.path));
        const Volume& original = keep_alive.back();
        keep_alive.push_back(load_volume(corrected_path));
        const Volume& corrected = keep_alive.back();

        // the simulation label marks the metal voxels excluded by the
        // masked metric variants; it is reproducible from the recorded
        // seeds
        PhantomSpec spec = cfg.dataset.phantom;
        spec.seed = entry.phantom_seed;
        spec.n_slices = entry.n_slices;
        auto [phantom, tooth_map] = generate_phantom(spec);
        (void)phantom;
        const MetalLabel label =
            select_metal_teeth(tooth_map, entry.m, entry.label_seed);
        Tensor exclude(label.mask.shape, 0.0f);
        for (std::int64_t i = 0; i < exclude.numel(); ++i)
            exclude[i] = label.mask[i] != 0 ? 1.0f : 0.0f;

        result.evaluated.push_back(evaluate_pair(
            stem, entry.m, method, reference, original, corrected, &exclude));

        FigureInputs fig;
        fig.volume_id = stem;
        fig.reference = &reference;
        fig.original = &original;
        fig.corrected = &corrected;
        figures.push_back(fig);
        detail::log_line(log, "evaluate: " + stem + " ssim " +
                                  detail::format_g(result.evaluated.back().original.ssim) +
                                  " -> " +
                                  detail::format_g(result.evaluated.back().corrected.ssim));
    }

    {
        auto os = detail::open_text(cfg.metrics_dir() / "omissions.txt");
        for (const auto& path : result.omissions) os << path << "\n";
    }
    if (!result.omissions.empty())
        detail::log_line(log, "evaluate: " +
                                  std::to_string(result.omissions.size()) +
                                  " test volumes had no translation (see "
                                  "omissions.txt)");
    if (result.evaluated.empty())
        throw_data("evaluate: no test volume has a translated counterpart in '" +
                   results_dir.string() + "'");

    std::vector<MetricsRow> rows;
    for (const auto& ev : result.evaluated) {
        rows.push_back(ev.original);
        rows.push_back(ev.corrected);
    }
    result.report = aggregate(std::move(rows));
    validate_report(result.report);
    write_rows_csv(result.report, cfg.metrics_dir() / "rows.csv");
    write_aggregates_csv(result.report, cfg.metrics_dir() / "aggregates.csv");
    write_scatter_csv(result.evaluated, cfg.metrics_dir() / "scatter.csv");
    if (cfg.metrics.emit_figures)
        emit_figures(result.evaluated, figures, cfg.metrics.figure_slices,
                     cfg.metrics_dir() / "figures");
    detail::log_line(log, "evaluate: wrote metrics for " +
                              std::to_string(result.evaluated.size()) +
                              " volumes to '" + cfg.metrics_dir().string() + "'");
    return result;
}

// Headline numbers of an evaluation run, as used by the experiment
// summary: medians over the corrected rows (and the m <= 4 subset the
// trend claims are stated on).
struct ExperimentSummary {
    double median_r_s = 0.0;            // all corrected volumes
    double median_ssim_original = 0.0;  // m <= 4 subset
    double median_ssim_corrected = 0.0;
    double median_rmse_original = 0.0;
    double median_rmse_corrected = 0.0;
    int n_volumes = 0;
    int n_volumes_m_le_4 = 0;
};

inline ExperimentSummary summarize(const EvaluateResult& result) {
    ExperimentSummary s;
    std::vector<double> rs, so, sc, ro, rc;
    for (const auto& ev : result.evaluated) {
        rs.push_back(ev.corrected.r_s);
        if (ev.corrected.m <= 4) {
            so.push_back(ev.original.ssim);
            sc.push_back(ev.corrected.ssim);
            ro.push_back(ev.original.rmse_hu);
            rc.push_back(ev.corrected.rmse_hu);
        }
    }
    s.n_volumes = int(rs.size());
    s.n_volumes_m_le_4 = int(so.size());
    s.median_r_s = median(rs);
    if (!so.empty()) {
        s.median_ssim_original = median(so);
        s.median_ssim_corrected = median(sc);
        s.median_rmse_original = median(ro);
        s.median_rmse_corrected = median(rc);
    }
    return s;
}

inline void write_summary(const ExperimentSummary& s,
                          const std::filesystem::path& path) {
    auto os = detail::open_text(path);
    os << "volumes_evaluated=" << s.n_volumes << "\n"
       << "volumes_m_le_4=" << s.n_volumes_m_le_4 << "\n"
       << "median_r_s_percent=" << detail::format_g(s.median_r_s) << "\n"
       << "median_ssim_original_m_le_4="
       << detail::format_g(s.median_ssim_original) << "\n"
       << "median_ssim_corrected_m_le_4="
       << detail::format_g(s.median_ssim_corrected) << "\n"
       << "median_rmse_original_m_le_4="
       << detail::format_g(s.median_rmse_original) << "\n"
       << "median_rmse_corrected_m_le_4="
       << detail::format_g(s.median_rmse_corrected) << "\n";
    if (!os) throw_io("write failed for '" + path.string() + "'");
}

// The full chain: build-data -> train -> translate -> evaluate, plus a
// summary file under the output root.
inline EvaluateResult cmd_reproduce_all(const ExperimentConfig& cfg,
                                        std::ostream* log = nullptr,
                                        const StepCallback& on_step = {}) {
    cmd_build_data(cfg, log);
    const auto checkpoint = cmd_train(cfg, log, on_step);
    cmd_translate(cfg, checkpoint, log);
    EvaluateResult result = cmd_evaluate(cfg, cfg.translated_dir(), log);
    const ExperimentSummary summary = summarize(result);
    write_summary(summary, cfg.output_root / "summary.txt");
    detail::log_line(
        log, "reproduce-all: median R_s " + detail::format_g(summary.median_r_s) +
                 "%, median ssim (m<=4) " +
                 detail::format_g(summary.median_ssim_original) + " -> " +
                 detail::format_g(summary.median_ssim_corrected));
    return result;
}

}  // namespace vxmr
