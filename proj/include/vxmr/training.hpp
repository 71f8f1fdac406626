#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vxmr/dataset.hpp"
#include "vxmr/losses.hpp"
#include "vxmr/nets.hpp"

// Adversarial training loop: alternating discriminator and generator updates
// with Adam, deterministic per-step batch sampling, CSV loss logging, and
// atomic resumable checkpoints.

namespace vxmr {

struct OptimizerConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    bool linear_decay = false;  // ramp the step size linearly to zero over the run

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw_config("optimizer: learning_rate must be finite and >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw_config("optimizer: moment decays must lie in [0, 1)");
        if (!(epsilon > 0.0)) throw_config("optimizer: epsilon must be > 0");
    }
};

struct TrainConfig {
    ObjectiveVariant variant = ObjectiveVariant::PROPOSED;
    int n_window_slices = 3;  // N: channels fed to every network
    int batch_size = 2;
    int epochs = 1;
    int steps_per_epoch = 100;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    LossWeights weights;
    int checkpoint_interval = 0;  // steps between snapshots; 0 = final only
    GeneratorConfig generator;        // n_channels is overridden with N
    DiscriminatorConfig discriminator;
    FeatureEncoderConfig encoder;

    void validate() const {
        if (!is_supported_window_count(n_window_slices))
            throw_config("train: window slice count must be odd and in [1, 13]");
        if (batch_size < 1) throw_config("train: batch_size must be >= 1");
        if (epochs < 1) throw_config("train: epochs must be >= 1");
        if (steps_per_epoch < 1) throw_config("train: steps_per_epoch must be >= 1");
        if (checkpoint_interval < 0) throw_config("train: checkpoint_interval must be >= 0");
        optimizer.validate();
        weights.validate();
    }

    std::int64_t total_steps() const {
        return std::int64_t(epochs) * steps_per_epoch;
    }

    GeneratorConfig resolved_generator() const {
        GeneratorConfig g = generator;
        g.n_channels = n_window_slices;
        return g;
    }
    DiscriminatorConfig resolved_discriminator() const {
        DiscriminatorConfig d = discriminator;
        d.n_channels = n_window_slices;
        return d;
    }
    FeatureEncoderConfig resolved_encoder() const {
        FeatureEncoderConfig f = encoder;
        f.n_channels = n_window_slices;
        return f;
    }

    /// Everything a checkpoint must agree on to resume bit-compatibly:
    /// architectures, objective, weights, optimizer, sampling seed and batch
    /// size. Run length and checkpoint cadence are deliberately excluded so
    /// a resumed run can be extended.
    std::uint64_t config_hash() const {
        std::uint64_t h = detail::hash_str(kFnvOffset, "train-v1");
        h = detail::hash_i64(h, int(variant));
        h = detail::hash_i64(h, n_window_slices);
        h = detail::hash_i64(h, batch_size);
        h = detail::hash_i64(h, std::int64_t(seed));
        auto mix_f64 = [&h](double v) {
            h = fnv1a(h, &v, sizeof(v));
        };
        mix_f64(optimizer.learning_rate);
        mix_f64(optimizer.beta1);
        mix_f64(optimizer.beta2);
        mix_f64(optimizer.epsilon);
        h = detail::hash_i64(h, optimizer.linear_decay ? 1 : 0);
        mix_f64(weights.lambda_cyc);
        mix_f64(weights.lambda_int);
        mix_f64(weights.lambda_fea);
        mix_f64(weights.lambda_id);
        h = detail::hash_i64(h, std::int64_t(resolved_generator().config_hash()));
        h = detail::hash_i64(h, std::int64_t(resolved_discriminator().config_hash()));
        h = detail::hash_i64(h, std::int64_t(resolved_encoder().config_hash()));
        return h;
    }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m, v;  // parallel to the parameter tensors
    std::int64_t t = 0;        // completed updates
};

inline AdamState adam_init(const ParamSet& params) {
    AdamState s;
    for (const auto& p : params.vars) {
        s.m.emplace_back(p->value.shape);
        s.v.emplace_back(p->value.shape);
    }
    return s;
}

/// One Adam update over every tensor in the set. A parameter whose gradient
/// was never touched this phase contributes zero gradient (its moments still
/// decay, as usual for Adam).
inline void adam_step(ParamSet& params, AdamState& s, const OptimizerConfig& opt,
                      double lr_scale = 1.0) {
    if (s.m.size() != params.vars.size()) throw_data("adam: state/parameter mismatch");
    ++s.t;
    const double lr = opt.learning_rate * lr_scale;
    const double b1 = opt.beta1, b2 = opt.beta2;
    const double bc1 = 1.0 - std::pow(b1, double(s.t));
    const double bc2 = 1.0 - std::pow(b2, double(s.t));
    for (std::size_t k = 0; k < params.vars.size(); ++k) {
        auto& p = params.vars[k]->value;
        const bool has_grad = params.vars[k]->grad.shape == p.shape;
        const Tensor* g = has_grad ? &params.vars[k]->grad : nullptr;
        auto& m = s.m[k];
        auto& v = s.v[k];
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double gi = g ? double((*g)[i]) : 0.0;
            const double mi = b1 * double(m[i]) + (1.0 - b1) * gi;
            const double vi = b2 * double(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = float(mi);
            v[i] = float(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            p[i] = float(double(p[i]) - lr * mhat / (std::sqrt(vhat) + opt.epsilon));
        }
    }
}

// ---------------------------------------------------------------------------
// Training state
// ---------------------------------------------------------------------------

struct TrainState {
    TrainConfig config;
    Generator g_x, g_y;
    Discriminator d_x, d_y;
    FeatureEncoder encoder;
    AdamState opt_gx, opt_gy, opt_dx, opt_dy;
    std::int64_t step = 0;  // completed train steps
};

inline TrainState make_train_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState st;
    st.config = cfg;
    st.g_x = make_generator<float>(cfg.resolved_generator(), stream_seed(cfg.seed, "init.gx"));
    st.g_y = make_generator<float>(cfg.resolved_generator(), stream_seed(cfg.seed, "init.gy"));
    st.d_x =
        make_discriminator<float>(cfg.resolved_discriminator(), stream_seed(cfg.seed, "init.dx"));
    st.d_y =
        make_discriminator<float>(cfg.resolved_discriminator(), stream_seed(cfg.seed, "init.dy"));
    st.encoder = make_feature_encoder<float>(cfg.resolved_encoder());
    st.opt_gx = adam_init(st.g_x.params);
    st.opt_gy = adam_init(st.g_y.params);
    st.opt_dx = adam_init(st.d_x.params);
    st.opt_dy = adam_init(st.d_y.params);
    return st;
}

namespace detail {

inline Batch<float> to_batch(const std::vector<Tensor>& windows) {
    Batch<float> b;
    b.reserve(windows.size());
    for (const auto& w : windows) b.push_back(ad::constant(w));
    return b;
}

inline void check_params_finite(const ParamSet& p, const char* who, std::int64_t step) {
    if (!p.all_finite())
        throw_numeric(std::string("train: non-finite parameters in ") + who + " after step " +
                      std::to_string(step));
}

[[noreturn]] inline void abort_non_finite(std::int64_t step, const LossReport& r) {
    throw_numeric("train: non-finite loss at step " + std::to_string(step) +
                  " (adv_xy=" + std::to_string(r.adv_xy) + " adv_yx=" + std::to_string(r.adv_yx) +
                  " cyc=" + std::to_string(r.cyc) + " int=" + std::to_string(r.intensity) +
                  " fea=" + std::to_string(r.fea) + " id=" + std::to_string(r.id) +
                  " total=" + std::to_string(r.total) + ")");
}

}  // namespace detail

/// Current learning-rate scale for a given absolute step.
inline double lr_scale_at(const TrainConfig& cfg, std::int64_t step) {
    if (!cfg.optimizer.linear_decay) return 1.0;
    const double frac = double(step) / double(cfg.total_steps());
    return std::max(0.0, 1.0 - frac);
}

/// Discriminator phase: one Adam update for D_X and D_Y against the current
/// generators' outputs (detached, so no gradient reaches the generators).
inline double discriminator_phase(TrainState& st, const std::vector<Tensor>& batch_x,
                                  const std::vector<Tensor>& batch_y) {
    auto bx = detail::to_batch(batch_x);
    auto by = detail::to_batch(batch_y);
    Batch<float> fake_y, fake_x;
    for (const auto& x : bx)
        fake_y.push_back(ad::detach(generator_forward(st.g_y, x)));
    for (const auto& y : by)
        fake_x.push_back(ad::detach(generator_forward(st.g_x, y)));

    st.d_x.params.zero_grads();
    st.d_y.params.zero_grads();
    auto loss = ad::add(discriminator_loss(st.d_y, by, fake_y),
                        discriminator_loss(st.d_x, bx, fake_x));
    if (!std::isfinite(double(loss->value[0]))) {
        LossReport r;
        r.total = double(loss->value[0]);
        detail::abort_non_finite(st.step, r);
    }
    ad::backward(loss);
    const double scale = lr_scale_at(st.config, st.step);
    adam_step(st.d_x.params, st.opt_dx, st.config.optimizer, scale);
    adam_step(st.d_y.params, st.opt_dy, st.config.optimizer, scale);
    detail::check_params_finite(st.d_x.params, "D_X", st.step);
    detail::check_params_finite(st.d_y.params, "D_Y", st.step);
    return double(loss->value[0]);
}

/// Generator phase: one Adam update for G_X and G_Y under the configured
/// objective variant. Gradients that reach discriminator parameters are
/// discarded (zeroed) afterward.
inline LossReport generator_phase(TrainState& st, const std::vector<Tensor>& batch_x,
                                  const std::vector<Tensor>& batch_y) {
    auto bx = detail::to_batch(batch_x);
    auto by = detail::to_batch(batch_y);
    st.g_x.params.zero_grads();
    st.g_y.params.zero_grads();
    auto og = generator_objective(st.config.variant, st.config.weights, st.g_x, st.g_y, st.d_x,
                                  st.d_y, st.encoder, bx, by);
    if (!std::isfinite(og.report.total)) detail::abort_non_finite(st.step, og.report);
    ad::backward(og.total);
    const double scale = lr_scale_at(st.config, st.step);
    adam_step(st.g_x.params, st.opt_gx, st.config.optimizer, scale);
    adam_step(st.g_y.params, st.opt_gy, st.config.optimizer, scale);
    st.d_x.params.zero_grads();  // stray adversarial gradient, not used
    st.d_y.params.zero_grads();
    detail::check_params_finite(st.g_x.params, "G_X", st.step);
    detail::check_params_finite(st.g_y.params, "G_Y", st.step);
    return og.report;
}

/// One full training step: discriminator update, then generator update.
inline LossReport train_step(TrainState& st, const std::vector<Tensor>& batch_x,
                             const std::vector<Tensor>& batch_y) {
    if (batch_x.empty() || batch_y.empty()) throw_data("train: empty batch");
    discriminator_phase(st, batch_x, batch_y);
    LossReport report = generator_phase(st, batch_x, batch_y);
    ++st.step;
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, config hash, step, encoder seed, four
// parameter groups, four optimizer states. The frozen encoder is stored as
// its seed only and reconstructed on load.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[4] = {'V', 'X', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, std::uint32_t(v & 0xffffffffu));
    put_u32(os, std::uint32_t(v >> 32));
}

inline std::uint64_t get_u64(std::istream& is) {
    const std::uint64_t lo = get_u32(is);
    const std::uint64_t hi = get_u32(is);
    return lo | (hi << 32);
}

inline void save_adam(std::ostream& os, const AdamState& s) {
    put_u64(os, std::uint64_t(s.t));
    put_u32(os, std::uint32_t(s.m.size()));
    for (std::size_t k = 0; k < s.m.size(); ++k) {
        os.write(reinterpret_cast<const char*>(s.m[k].ptr()),
                 std::streamsize(s.m[k].numel() * 4));
        os.write(reinterpret_cast<const char*>(s.v[k].ptr()),
                 std::streamsize(s.v[k].numel() * 4));
    }
}

inline void load_adam(std::istream& is, AdamState& s) {
    s.t = std::int64_t(get_u64(is));
    if (get_u32(is) != s.m.size()) throw_data("checkpoint: optimizer tensor count mismatch");
    for (std::size_t k = 0; k < s.m.size(); ++k) {
        is.read(reinterpret_cast<char*>(s.m[k].ptr()), std::streamsize(s.m[k].numel() * 4));
        is.read(reinterpret_cast<char*>(s.v[k].ptr()), std::streamsize(s.v[k].numel() * 4));
        if (!is) throw_data("checkpoint: truncated optimizer state");
    }
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& st) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw_io("checkpoint: cannot open '" + tmp + "' for writing");
        os.write(detail::kCheckpointMagic, 4);
        detail::put_u32(os, detail::kCheckpointVersion);
        detail::put_u64(os, st.config.config_hash());
        detail::put_u64(os, std::uint64_t(st.step));
        detail::put_u64(os, st.encoder.config.init_seed);
        save_param_group(os, st.g_x.params);
        save_param_group(os, st.g_y.params);
        save_param_group(os, st.d_x.params);
        save_param_group(os, st.d_y.params);
        detail::save_adam(os, st.opt_gx);
        detail::save_adam(os, st.opt_gy);
        detail::save_adam(os, st.opt_dx);
        detail::save_adam(os, st.opt_dy);
        if (!os) throw_io("checkpoint: write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw_io("checkpoint: cannot move '" + tmp + "' into place: " + ec.message());
}

inline TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw_io("checkpoint: cannot open '" + path.string() + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
        throw_data("checkpoint: bad magic in '" + path.string() + "'");
    if (detail::get_u32(is) != detail::kCheckpointVersion)
        throw_data("checkpoint: unsupported version in '" + path.string() + "'");
    const std::uint64_t stored_hash = detail::get_u64(is);
    if (stored_hash != cfg.config_hash())
        throw_config("checkpoint: config hash mismatch — the checkpoint was written under a "
                     "different architecture, objective, or optimizer configuration");

    TrainState st = make_train_state(cfg);
    st.step = std::int64_t(detail::get_u64(is));
    const std::uint64_t enc_seed = detail::get_u64(is);
    if (enc_seed != cfg.resolved_encoder().init_seed)
        throw_config("checkpoint: feature encoder seed mismatch");
    load_param_group(is, st.g_x.params);
    load_param_group(is, st.g_y.params);
    load_param_group(is, st.d_x.params);
    load_param_group(is, st.d_y.params);
    detail::load_adam(is, st.opt_gx);
    detail::load_adam(is, st.opt_gy);
    detail::load_adam(is, st.opt_dx);
    detail::load_adam(is, st.opt_dy);
    if (is.peek() != std::char_traits<char>::eof())
        throw_data("checkpoint: trailing bytes in '" + path.string() + "'");
    return st;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// CSV header for the loss log; one row per completed step.
inline const char* loss_csv_header() {
    return "step,variant,adv_xy,adv_yx,cyc,int,fea,id,total";
}

inline std::string loss_csv_row(std::int64_t step, ObjectiveVariant variant,
                                const LossReport& r) {
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%lld,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                  static_cast<long long>(step), to_string(variant).c_str(), r.adv_xy, r.adv_yx,
                  r.cyc, r.intensity, r.fea, r.id, r.total);
    return std::string(buf);
}

using StepCallback = std::function<void(std::int64_t step, const LossReport&)>;

/// Runs the configured number of steps, sampling a fresh unpaired batch per
/// step from a per-step substream (so resumed runs see the very same batch
/// sequence). Writes interval checkpoints, a final checkpoint, and the loss
/// CSV under out_dir. Returns the final state.
inline TrainState train(const TrainConfig& cfg, const LoadedCorpus& corpus,
                        const std::filesystem::path& out_dir,
                        const std::optional<std::filesystem::path>& resume_from = {},
                        const StepCallback& on_step = {}) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    TrainState st = resume_from ? load_checkpoint(*resume_from, cfg) : make_train_state(cfg);
    const std::int64_t total = cfg.total_steps();
    if (st.step > total)
        throw_config("train: checkpoint is already past the configured step count");

    const auto csv_path = out_dir / "train_log.csv";
    const bool fresh_log = !resume_from || !std::filesystem::exists(csv_path);
    std::ofstream csv(csv_path, fresh_log ? std::ios::trunc : std::ios::app);
    if (!csv) throw_io("train: cannot open '" + csv_path.string() + "'");
    if (fresh_log) csv << loss_csv_header() << "\n";

    while (st.step < total) {
        Rng rng(stream_seed(cfg.seed, "sample", std::uint64_t(st.step)));
        auto [wx, wy] = sample_unpaired_batch(corpus, cfg.n_window_slices, cfg.batch_size, rng);
        std::vector<Tensor> bx, by;
        for (auto& w : wx) bx.push_back(std::move(w.slices));
        for (auto& w : wy) by.push_back(std::move(w.slices));

        const LossReport report = train_step(st, bx, by);
        csv << loss_csv_row(st.step, cfg.variant, report) << "\n";
        if (!csv) throw_io("train: loss log write failed");
        csv.flush();
        if (on_step) on_step(st.step, report);

        if (cfg.checkpoint_interval > 0 && st.step % cfg.checkpoint_interval == 0 &&
            st.step < total) {
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_%06lld.vxck",
                          static_cast<long long>(st.step));
            save_checkpoint(out_dir / name, st);
        }
    }
    save_checkpoint(out_dir / "final.vxck", st);
    return st;
}

}  // namespace vxmr
