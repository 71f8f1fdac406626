#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vxmr/artifact_sim.hpp"
#include "vxmr/error.hpp"
#include "vxmr/phantoms.hpp"
#include "vxmr/rng.hpp"
#include "vxmr/volumes.hpp"

namespace vxmr {

enum class Split { Train, Test };

inline const char* to_string(Split s) { return s == Split::Train ? "TRAIN" : "TEST"; }

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    DomainTag domain = DomainTag::Unlabeled;
    std::string phantom_id;
    int m = 0;  // 0 for clean volumes
    int n_slices = 0, height = 0, width = 0;
    std::uint64_t phantom_seed = 0;
    std::uint64_t perturb_seed = 0;  // clean training volumes only
    std::uint64_t label_seed = 0;    // m >= 1 only
    bool has_physics = false;        // m >= 1 only
    PhysicsParams physics;
    ProjectionGeometry geometry;
    std::string clean_path;  // paired TEST artifact entries: the reference volume
};

struct DatasetManifest {
    Split split = Split::Train;
    std::vector<ManifestEntry> entries;
};

struct DatasetConfig {
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
    int n_clean = 24;
    int n_artifact = 16;
    int n_test_phantoms = 6;
    int min_slices = 8;
    int max_slices = 24;
    PhantomSpec phantom;  // seed and n_slices are overridden per volume
    ProjectionGeometry geometry;
    PhysicsParams physics;  // noise_seed is overridden per volume

    void validate() const {
        if (n_clean < 1 || n_artifact < 1) throw_config("dataset: need at least one volume per domain");
        if (n_test_phantoms < 1) throw_config("dataset: n_test_phantoms must be >= 1");
        if (min_slices < 4 || max_slices < min_slices)
            throw_config("dataset: slice range must satisfy 4 <= min <= max");
        physics.validate();
    }
};

// ---------------------------------------------------------------------------
// Manifest text format: one record per line, space-separated key=value tokens.
//   vxmr_manifest_version=1
//   split=TRAIN
//   entry path=... domain=... phantom_id=... ...
// Values never contain spaces (paths are generated, not user-supplied).
// ---------------------------------------------------------------------------

namespace detail {

constexpr int kManifestVersion = 1;

inline void append_kv(std::string& line, const std::string& key, const std::string& value) {
    if (value.find_first_of(" \t\n=") != std::string::npos)
        throw_data("manifest: value for '" + key + "' contains forbidden characters: " + value);
    line += ' ';
    line += key;
    line += '=';
    line += value;
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& key) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw_data("manifest: bad integer for '" + key + "': " + s);
    return v;
}

inline double parse_f64(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw_data("manifest: bad real for '" + key + "': " + s);
    }
}

inline std::string f64_str(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace detail

inline void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw_io("save_manifest: cannot open " + path.string());
    os << "vxmr_manifest_version=" << detail::kManifestVersion << "\n";
    os << "split=" << to_string(manifest.split) << "\n";
    for (const auto& e : manifest.entries) {
        std::string line = "entry";
        detail::append_kv(line, "path", e.path);
        detail::append_kv(line, "domain", to_string(e.domain));
        detail::append_kv(line, "phantom_id", e.phantom_id);
        detail::append_kv(line, "m", std::to_string(e.m));
        detail::append_kv(line, "n_slices", std::to_string(e.n_slices));
        detail::append_kv(line, "height", std::to_string(e.height));
        detail::append_kv(line, "width", std::to_string(e.width));
        detail::append_kv(line, "phantom_seed", std::to_string(e.phantom_seed));
        if (e.domain == DomainTag::YClean && e.perturb_seed)
            detail::append_kv(line, "perturb_seed", std::to_string(e.perturb_seed));
        if (e.m >= 1) {
            if (!e.has_physics)
                throw_data("manifest: artifact entry without physics: " + e.path);
            detail::append_kv(line, "label_seed", std::to_string(e.label_seed));
            detail::append_kv(line, "noise_seed", std::to_string(e.physics.noise_seed));
            detail::append_kv(line, "metal_hu", detail::f64_str(e.physics.metal_hu));
            detail::append_kv(line, "photon_count_i0", detail::f64_str(e.physics.photon_count_i0));
            detail::append_kv(line, "beam_hardening_coeff",
                              detail::f64_str(e.physics.beam_hardening_coeff));
            detail::append_kv(line, "noise", e.physics.enable_noise ? "1" : "0");
            detail::append_kv(line, "n_angles", std::to_string(e.geometry.n_angles));
            detail::append_kv(line, "n_detectors", std::to_string(e.geometry.n_detectors));
            detail::append_kv(line, "detector_spacing", detail::f64_str(e.geometry.detector_spacing));
        }
        if (!e.clean_path.empty()) detail::append_kv(line, "clean_path", e.clean_path);
        os << line << "\n";
    }
    if (!os) throw_io("save_manifest: write failed for " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw_io("load_manifest: cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line.rfind("vxmr_manifest_version=", 0) != 0)
        throw_data("manifest: missing version header in " + path.string());
    const auto version = detail::parse_u64(line.substr(22), "version");
    if (version != detail::kManifestVersion)
        throw_data("manifest: unsupported version " + std::to_string(version) + " in " +
                   path.string());
    if (!std::getline(is, line) || line.rfind("split=", 0) != 0)
        throw_data("manifest: missing split line in " + path.string());
    DatasetManifest manifest;
    const std::string split = line.substr(6);
    if (split == "TRAIN") manifest.split = Split::Train;
    else if (split == "TEST") manifest.split = Split::Test;
    else throw_data("manifest: unknown split '" + split + "'");

    int lineno = 2;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream tokens(line);
        std::string tok;
        tokens >> tok;
        if (tok != "entry")
            throw_data("manifest: line " + std::to_string(lineno) + " is not an entry record");
        std::map<std::string, std::string> kv;
        while (tokens >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos)
                throw_data("manifest: malformed token '" + tok + "' on line " +
                           std::to_string(lineno));
            if (!kv.emplace(tok.substr(0, eq), tok.substr(eq + 1)).second)
                throw_data("manifest: duplicate key '" + tok.substr(0, eq) + "' on line " +
                           std::to_string(lineno));
        }
        auto take = [&](const std::string& key) {
            auto it = kv.find(key);
            if (it == kv.end())
                throw_data("manifest: missing key '" + key + "' on line " + std::to_string(lineno));
            std::string v = it->second;
            kv.erase(it);
            return v;
        };
        auto take_opt = [&](const std::string& key, const std::string& fallback) {
            auto it = kv.find(key);
            if (it == kv.end()) return fallback;
            std::string v = it->second;
            kv.erase(it);
            return v;
        };

        ManifestEntry e;
        e.path = take("path");
        e.domain = domain_tag_from_string(take("domain"));
        e.phantom_id = take("phantom_id");
        e.m = static_cast<int>(detail::parse_u64(take("m"), "m"));
        e.n_slices = static_cast<int>(detail::parse_u64(take("n_slices"), "n_slices"));
        e.height = static_cast<int>(detail::parse_u64(take("height"), "height"));
        e.width = static_cast<int>(detail::parse_u64(take("width"), "width"));
        e.phantom_seed = detail::parse_u64(take("phantom_seed"), "phantom_seed");
        e.perturb_seed = detail::parse_u64(take_opt("perturb_seed", "0"), "perturb_seed");
        if (e.m >= 1) {
            e.has_physics = true;
            e.label_seed = detail::parse_u64(take("label_seed"), "label_seed");
            e.physics.noise_seed = detail::parse_u64(take("noise_seed"), "noise_seed");
            e.physics.metal_hu = detail::parse_f64(take("metal_hu"), "metal_hu");
            e.physics.photon_count_i0 =
                detail::parse_f64(take("photon_count_i0"), "photon_count_i0");
            e.physics.beam_hardening_coeff =
                detail::parse_f64(take("beam_hardening_coeff"), "beam_hardening_coeff");
            e.physics.enable_noise = take("noise") == "1";
            e.geometry.n_angles = static_cast<int>(detail::parse_u64(take("n_angles"), "n_angles"));
            e.geometry.n_detectors =
                static_cast<int>(detail::parse_u64(take("n_detectors"), "n_detectors"));
            e.geometry.detector_spacing =
                detail::parse_f64(take("detector_spacing"), "detector_spacing");
        }
        e.clean_path = take_opt("clean_path", "");
        if (!kv.empty())
            throw_data("manifest: unknown key '" + kv.begin()->first + "' on line " +
                       std::to_string(lineno));
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

inline std::set<std::string> phantom_ids(const DatasetManifest& m) {
    std::set<std::string> ids;
    for (const auto& e : m.entries) ids.insert(e.phantom_id);
    return ids;
}

/// Throws if any phantom id appears in both manifests (train/test leakage).
inline void check_no_leakage(const DatasetManifest& train, const DatasetManifest& test) {
    const auto train_ids = phantom_ids(train);
    for (const auto& id : phantom_ids(test))
        if (train_ids.count(id))
            throw_data("dataset leakage: phantom id '" + id + "' appears in both splits");
}

// ---------------------------------------------------------------------------
// Corpus builders. Volume counts, shapes, seeds and physics all flow from the
// config; rebuilding with an identical config reproduces every byte.
// ---------------------------------------------------------------------------

namespace detail {

inline int pick_slice_count(const DatasetConfig& cfg, const char* stream, std::uint64_t index) {
    Rng rng(stream_seed(cfg.seed, stream, index));
    return rng.uniform_int(cfg.min_slices, cfg.max_slices);
}

inline std::string zero_pad(int v, int width) {
    std::string s = std::to_string(v);
    while (int(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace detail

inline DatasetManifest build_training_corpus(const DatasetConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir / "train");

    DatasetManifest manifest;
    manifest.split = Split::Train;

    for (int i = 0; i < cfg.n_clean; ++i) {
        PhantomSpec spec = cfg.phantom;
        spec.seed = stream_seed(cfg.seed, "phantom.train.y", std::uint64_t(i));
        spec.n_slices = detail::pick_slice_count(cfg, "slices.train.y", std::uint64_t(i));
        auto [vol, map] = generate_phantom(spec);
        const std::uint64_t perturb_seed = stream_seed(cfg.seed, "perturb.train.y", std::uint64_t(i));
        Volume out = perturb_phantom(vol, perturb_seed);
        out.volume_id = "train_y_" + detail::zero_pad(i, 3);
        out.domain_tag = DomainTag::YClean;

        ManifestEntry e;
        e.path = "train/clean_" + detail::zero_pad(i, 3) + ".vxmr";
        e.domain = DomainTag::YClean;
        e.phantom_id = out.volume_id;
        e.m = 0;
        e.n_slices = out.slices();
        e.height = out.height();
        e.width = out.width();
        e.phantom_seed = spec.seed;
        e.perturb_seed = perturb_seed;
        save_volume(out, cfg.out_dir / e.path);
        manifest.entries.push_back(std::move(e));
    }

    for (int j = 0; j < cfg.n_artifact; ++j) {
        PhantomSpec spec = cfg.phantom;
        spec.seed = stream_seed(cfg.seed, "phantom.train.x", std::uint64_t(j));
        spec.n_slices = detail::pick_slice_count(cfg, "slices.train.x", std::uint64_t(j));
        auto [vol, map] = generate_phantom(spec);

        Rng mrng(stream_seed(cfg.seed, "metal.count.train.x", std::uint64_t(j)));
        const int m = mrng.uniform_int(1, 8);
        const std::uint64_t label_seed = stream_seed(cfg.seed, "label.train.x", std::uint64_t(j));
        MetalLabel label = select_metal_teeth(map, m, label_seed);

        PhysicsParams physics = cfg.physics;
        physics.noise_seed = stream_seed(cfg.seed, "noise.train.x", std::uint64_t(j));
        Volume sim = simulate_artifacts(vol, label, cfg.geometry, physics);
        sim.volume_id = "train_x_" + detail::zero_pad(j, 3);
        sim.domain_tag = DomainTag::XArtifact;

        ManifestEntry e;
        e.path = "train/artifact_" + detail::zero_pad(j, 3) + ".vxmr";
        e.domain = DomainTag::XArtifact;
        e.phantom_id = sim.volume_id;
        e.m = m;
        e.n_slices = sim.slices();
        e.height = sim.height();
        e.width = sim.width();
        e.phantom_seed = spec.seed;
        e.label_seed = label_seed;
        e.has_physics = true;
        e.physics = physics;
        e.geometry = cfg.geometry.resolved_for_width(sim.width());
        save_volume(sim, cfg.out_dir / e.path);
        manifest.entries.push_back(std::move(e));
    }

    save_manifest(manifest, cfg.out_dir / "train_manifest.txt");
    return manifest;
}

inline DatasetManifest build_paired_testset(const DatasetConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir / "test");

    DatasetManifest manifest;
    manifest.split = Split::Test;

    for (int k = 0; k < cfg.n_test_phantoms; ++k) {
        PhantomSpec spec = cfg.phantom;
        spec.seed = stream_seed(cfg.seed, "phantom.test", std::uint64_t(k));
        spec.n_slices = detail::pick_slice_count(cfg, "slices.test", std::uint64_t(k));
        auto [clean, map] = generate_phantom(spec);
        clean.volume_id = "test_" + detail::zero_pad(k, 3);
        clean.domain_tag = DomainTag::YClean;

        ManifestEntry ce;
        ce.path = "test/clean_" + detail::zero_pad(k, 3) + ".vxmr";
        ce.domain = DomainTag::YClean;
        ce.phantom_id = clean.volume_id;
        ce.m = 0;
        ce.n_slices = clean.slices();
        ce.height = clean.height();
        ce.width = clean.width();
        ce.phantom_seed = spec.seed;
        save_volume(clean, cfg.out_dir / ce.path);

        // One label seed and one noise seed per phantom: the m = 1..8 variants
        // differ only by the nested metal sets, so severity trends are not
        // confounded by reseeded noise.
        const std::uint64_t label_seed = stream_seed(cfg.seed, "label.test", std::uint64_t(k));
        PhysicsParams physics = cfg.physics;
        physics.noise_seed = stream_seed(cfg.seed, "noise.test", std::uint64_t(k));

        for (int m = 1; m <= 8; ++m) {
            MetalLabel label = select_metal_teeth(map, m, label_seed);
            Volume sim = simulate_artifacts(clean, label, cfg.geometry, physics);
            sim.volume_id = clean.volume_id + "_m" + std::to_string(m);
            sim.domain_tag = DomainTag::XArtifact;

            ManifestEntry e;
            e.path = "test/artifact_" + detail::zero_pad(k, 3) + "_m" + std::to_string(m) + ".vxmr";
            e.domain = DomainTag::XArtifact;
            e.phantom_id = clean.volume_id;
            e.m = m;
            e.n_slices = sim.slices();
            e.height = sim.height();
            e.width = sim.width();
            e.phantom_seed = spec.seed;
            e.label_seed = label_seed;
            e.has_physics = true;
            e.physics = physics;
            e.geometry = cfg.geometry.resolved_for_width(sim.width());
            e.clean_path = ce.path;
            save_volume(sim, cfg.out_dir / e.path);
            manifest.entries.push_back(std::move(e));
        }
        manifest.entries.push_back(std::move(ce));
    }

    save_manifest(manifest, cfg.out_dir / "test_manifest.txt");
    return manifest;
}

// ---------------------------------------------------------------------------
// Training-side loading and sampling.
// ---------------------------------------------------------------------------

/// Training corpus resident in memory, already normalized to [-1, 1].
struct LoadedCorpus {
    std::vector<Volume> x;  // artifact domain
    std::vector<Volume> y;  // clean domain
};

inline LoadedCorpus load_corpus(const DatasetManifest& manifest,
                                const std::filesystem::path& base_dir) {
    if (manifest.split != Split::Train)
        throw_data("load_corpus: expected a TRAIN manifest");
    LoadedCorpus corpus;
    for (const auto& e : manifest.entries) {
        Volume v = load_volume(base_dir / e.path);
        Volume n = normalize_hu(v);
        if (e.domain == DomainTag::XArtifact) corpus.x.push_back(std::move(n));
        else if (e.domain == DomainTag::YClean) corpus.y.push_back(std::move(n));
        else throw_data("load_corpus: unlabeled entry " + e.path);
    }
    if (corpus.x.empty() || corpus.y.empty())
        throw_data("load_corpus: a training domain is empty");
    return corpus;
}

/// Draw batch_size windows from each domain, independently (unpaired).
inline std::pair<std::vector<SubvolumeWindow>, std::vector<SubvolumeWindow>>
sample_unpaired_batch(const LoadedCorpus& corpus, int n_window_slices, int batch_size, Rng& rng) {
    if (!is_supported_window_count(n_window_slices))
        throw_config("sample: window slice count must be odd and in [1, 13]");
    if (batch_size < 1) throw_config("sample: batch_size must be >= 1");
    if (corpus.x.empty() || corpus.y.empty()) throw_data("sample: empty domain");

    auto draw = [&](const std::vector<Volume>& domain) {
        std::vector<SubvolumeWindow> windows;
        for (int b = 0; b < batch_size; ++b) {
            const Volume& v = domain[rng.uniform_int(0, int(domain.size()) - 1)];
            if (v.slices() < n_window_slices)
                throw_data("sample: volume '" + v.volume_id + "' has fewer than " +
                           std::to_string(n_window_slices) + " slices");
            const int start = rng.uniform_int(0, v.slices() - n_window_slices);
            SubvolumeWindow w;
            w.start_index = start;
            w.n_slices = n_window_slices;
            w.slices = Tensor({n_window_slices, v.height(), v.width()});
            std::memcpy(w.slices.ptr(), v.voxels.ptr() + v.voxels.off3(start, 0, 0),
                        sizeof(float) * w.slices.data.size());
            windows.push_back(std::move(w));
        }
        return windows;
    };
    auto bx = draw(corpus.x);
    auto by = draw(corpus.y);
    return {std::move(bx), std::move(by)};
}

}  // namespace vxmr
