#pragma once

// Experiment configuration: a strict INI-style key/value format parsed
// against an explicit schema. Unknown sections, unknown keys, duplicate
// keys, and malformed values are all configuration errors — a config
// file that parses is fully understood.
//
// Every stochastic stage receives a named substream of the single
// global seed, so one integer reproduces the entire pipeline.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vxmr/dataset.hpp"
#include "vxmr/error.hpp"
#include "vxmr/rng.hpp"
#include "vxmr/training.hpp"
#include "vxmr/translate.hpp"

namespace vxmr {

struct MetricsOptions {
    bool emit_figures = true;
    std::vector<int> figure_slices;  // empty = each volume's middle slice
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_root = "runs/out";
    DatasetConfig dataset;
    TrainConfig train;
    TranslateConfig translate;
    MetricsOptions metrics;

    std::filesystem::path data_dir() const { return output_root / "data"; }
    std::filesystem::path train_dir() const { return output_root / "train"; }
    std::filesystem::path translated_dir() const {
        return output_root / "translated";
    }
    std::filesystem::path metrics_dir() const { return output_root / "metrics"; }

    // Derives per-stage seeds from the global seed and checks every
    // section. Call after all overrides are applied.
    void finalize() {
        dataset.out_dir = data_dir();
        dataset.seed = seed;
        train.seed = stream_seed(seed, "training");
        train.encoder.init_seed = stream_seed(seed, "encoder");
        translate.n_window_slices = train.n_window_slices;
        dataset.validate();
        train.validate();
        translate.validate();
    }
};

namespace detail {

struct IniFile {
    // section -> key -> value, plus source line numbers for messages
    std::map<std::string, std::map<std::string, std::string>> sections;
};

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline IniFile parse_ini(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw_io("config: cannot open '" + path.string() + "'");
    IniFile ini;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        const std::string at = " (line " + std::to_string(lineno) + ")";
        if (line.front() == '[') {
            if (line.back() != ']')
                throw_config("config: unterminated section header" + at);
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) throw_config("config: empty section name" + at);
            ini.sections[section];  // a section may be present but empty
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw_config("config: expected key = value" + at);
        if (section.empty())
            throw_config("config: key before any [section]" + at);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw_config("config: empty key" + at);
        auto [it, inserted] = ini.sections[section].emplace(key, value);
        (void)it;
        if (!inserted)
            throw_config("config: duplicate key '" + section + "." + key + "'" +
                         at);
    }
    return ini;
}

// Schema application: every consumed key is crossed off; leftovers are
// unknown keys and rejected wholesale.
class SchemaReader {
public:
    explicit SchemaReader(IniFile ini) : ini_(std::move(ini)) {}

    bool has(const std::string& section, const std::string& key) const {
        auto s = ini_.sections.find(section);
        return s != ini_.sections.end() && s->second.count(key) > 0;
    }

    std::string take(const std::string& section, const std::string& key) {
        auto& sec = ini_.sections.at(section);
        auto it = sec.find(key);
        std::string v = it->second;
        sec.erase(it);
        return v;
    }

    void mark_section(const std::string& section) {
        known_sections_.push_back(section);
    }

    void finish() const {
        for (const auto& [section, keys] : ini_.sections) {
            bool known = false;
            for (const auto& s : known_sections_) known = known || s == section;
            if (!known)
                throw_config("config: unknown section [" + section + "]");
            if (!keys.empty())
                throw_config("config: unknown key '" + section + "." +
                             keys.begin()->first + "'");
        }
    }

private:
    IniFile ini_;
    std::vector<std::string> known_sections_;
};

inline std::int64_t to_int(const std::string& v, const std::string& where) {
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw_config("config: '" + where + "' expects an integer, got '" + v +
                     "'");
    return out;
}

inline std::uint64_t to_u64(const std::string& v, const std::string& where) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw_config("config: '" + where +
                     "' expects a non-negative integer, got '" + v + "'");
    return out;
}

inline double to_double(const std::string& v, const std::string& where) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw_config("config: '" + where + "' expects a number, got '" + v +
                     "'");
    }
}

inline bool to_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw_config("config: '" + where + "' expects true/false, got '" + v + "'");
}

inline std::vector<int> to_int_list(const std::string& v,
                                    const std::string& where) {
    std::vector<int> out;
    std::string cur;
    auto flush = [&] {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(int(to_int(cur, where)));
        cur.clear();
    };
    for (char c : v) {
        if (c == ',')
            flush();
        else
            cur += c;
    }
    flush();
    return out;
}

}  // namespace detail

inline ExperimentConfig load_experiment_config(
    const std::filesystem::path& path) {
    detail::SchemaReader r(detail::parse_ini(path));
    ExperimentConfig cfg;

    auto geti = [&](const std::string& s, const std::string& k, auto& field) {
        if (r.has(s, k))
            field = static_cast<std::decay_t<decltype(field)>>(
                detail::to_int(r.take(s, k), s + "." + k));
    };
    auto getd = [&](const std::string& s, const std::string& k, double& field) {
        if (r.has(s, k)) field = detail::to_double(r.take(s, k), s + "." + k);
    };
    auto getb = [&](const std::string& s, const std::string& k, bool& field) {
        if (r.has(s, k)) field = detail::to_bool(r.take(s, k), s + "." + k);
    };

    r.mark_section("experiment");
    if (r.has("experiment", "seed"))
        cfg.seed = detail::to_u64(r.take("experiment", "seed"), "experiment.seed");
    if (r.has("experiment", "output_root"))
        cfg.output_root = r.take("experiment", "output_root");
    if (r.has("experiment", "variant"))
        cfg.train.variant = variant_from_string(r.take("experiment", "variant"));

    r.mark_section("phantom");
    geti("phantom", "height", cfg.dataset.phantom.height);
    geti("phantom", "width", cfg.dataset.phantom.width);
    geti("phantom", "n_teeth", cfg.dataset.phantom.n_teeth);
    getd("phantom", "tissue_hu", cfg.dataset.phantom.tissue_hu);
    getd("phantom", "bone_hu", cfg.dataset.phantom.bone_hu);
    getd("phantom", "tooth_hu", cfg.dataset.phantom.tooth_hu);
    getd("phantom", "air_hu", cfg.dataset.phantom.air_hu);

    r.mark_section("physics");
    getd("physics", "metal_hu", cfg.dataset.physics.metal_hu);
    getd("physics", "photon_count_i0", cfg.dataset.physics.photon_count_i0);
    getd("physics", "beam_hardening_coeff",
         cfg.dataset.physics.beam_hardening_coeff);
    getb("physics", "enable_noise", cfg.dataset.physics.enable_noise);

    r.mark_section("geometry");
    geti("geometry", "n_angles", cfg.dataset.geometry.n_angles);
    geti("geometry", "n_detectors", cfg.dataset.geometry.n_detectors);
    getd("geometry", "detector_spacing", cfg.dataset.geometry.detector_spacing);

    r.mark_section("dataset");
    geti("dataset", "n_clean", cfg.dataset.n_clean);
    geti("dataset", "n_artifact", cfg.dataset.n_artifact);
    geti("dataset", "n_test_phantoms", cfg.dataset.n_test_phantoms);
    geti("dataset", "min_slices", cfg.dataset.min_slices);
    geti("dataset", "max_slices", cfg.dataset.max_slices);

    r.mark_section("train");
    geti("train", "n_window_slices", cfg.train.n_window_slices);
    geti("train", "batch_size", cfg.train.batch_size);
    geti("train", "epochs", cfg.train.epochs);
    geti("train", "steps_per_epoch", cfg.train.steps_per_epoch);
    geti("train", "checkpoint_interval", cfg.train.checkpoint_interval);

    r.mark_section("optimizer");
    getd("optimizer", "learning_rate", cfg.train.optimizer.learning_rate);
    getd("optimizer", "beta1", cfg.train.optimizer.beta1);
    getd("optimizer", "beta2", cfg.train.optimizer.beta2);
    getd("optimizer", "epsilon", cfg.train.optimizer.epsilon);
    getb("optimizer", "linear_decay", cfg.train.optimizer.linear_decay);

    r.mark_section("weights");
    getd("weights", "lambda_cyc", cfg.train.weights.lambda_cyc);
    getd("weights", "lambda_int", cfg.train.weights.lambda_int);
    getd("weights", "lambda_fea", cfg.train.weights.lambda_fea);
    getd("weights", "lambda_id", cfg.train.weights.lambda_id);

    r.mark_section("generator");
    geti("generator", "depth", cfg.train.generator.depth);
    geti("generator", "base_width", cfg.train.generator.base_width);

    r.mark_section("discriminator");
    geti("discriminator", "n_blocks", cfg.train.discriminator.n_blocks);
    geti("discriminator", "base_width", cfg.train.discriminator.base_width);

    r.mark_section("encoder");
    if (r.has("encoder", "widths"))
        cfg.train.encoder.widths =
            detail::to_int_list(r.take("encoder", "widths"), "encoder.widths");
    geti("encoder", "feature_layer", cfg.train.encoder.feature_layer);

    r.mark_section("translate");
    if (r.has("translate", "mode"))
        cfg.translate.mode = translate_mode_from_string(r.take("translate", "mode"));
    if (r.has("translate", "direction"))
        cfg.translate.direction =
            direction_from_string(r.take("translate", "direction"));

    r.mark_section("metrics");
    getb("metrics", "emit_figures", cfg.metrics.emit_figures);
    if (r.has("metrics", "figure_slices"))
        cfg.metrics.figure_slices = detail::to_int_list(
            r.take("metrics", "figure_slices"), "metrics.figure_slices");

    r.finish();
    cfg.finalize();
    return cfg;
}

}  // namespace vxmr
