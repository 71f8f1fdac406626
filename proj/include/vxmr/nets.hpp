#pragma once

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "vxmr/autodiff.hpp"
#include "vxmr/error.hpp"
#include "vxmr/rng.hpp"
#include "vxmr/tensor.hpp"

// Parametric function approximators for N-channel slice stacks: two identical
// encoder-decoder generators with skip connections, two identical
// convolutional discriminators, and a frozen seeded feature encoder.

namespace vxmr {

// ---------------------------------------------------------------------------
// Named parameter container
// ---------------------------------------------------------------------------

template <class T>
struct ParamSetT {
    std::vector<std::string> names;
    std::vector<ad::VarT<T>> vars;

    ad::VarT<T> add(const std::string& name, std::vector<int> shape, bool trainable) {
        for (const auto& n : names)
            if (n == name) throw_data("params: duplicate name '" + name + "'");
        auto v = ad::leaf(TensorT<T>(std::move(shape)), trainable);
        names.push_back(name);
        vars.push_back(v);
        return v;
    }

    ad::VarT<T> find(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return vars[i];
        throw_data("params: no tensor named '" + name + "'");
    }

    std::int64_t total_parameters() const {
        std::int64_t n = 0;
        for (const auto& v : vars) n += v->value.numel();
        return n;
    }

    bool all_finite() const {
        for (const auto& v : vars)
            if (!v->value.all_finite()) return false;
        return true;
    }

    void zero_grads() const {
        for (const auto& v : vars) v->grad = TensorT<T>();
    }
};

using ParamSet = ParamSetT<float>;

namespace detail {

/// He-style init: weights from N(0, sqrt(2/fan_in)), each tensor drawn from
/// its own named substream so layouts can evolve without reshuffling others.
template <class T>
void init_conv_weight(const ad::VarT<T>& v, std::uint64_t seed, const std::string& name) {
    const auto& s = v->value.shape;
    const double fan_in = double(s[1]) * s[2] * s[3];
    Rng rng(stream_seed(seed, name));
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (std::int64_t i = 0; i < v->value.numel(); ++i)
        v->value[i] = T(rng.normal(0.0, std_dev));
}

template <class T>
void init_linear_weight(const ad::VarT<T>& v, std::uint64_t seed, const std::string& name) {
    const double fan_in = double(v->value.dim(1));
    Rng rng(stream_seed(seed, name));
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (std::int64_t i = 0; i < v->value.numel(); ++i)
        v->value[i] = T(rng.normal(0.0, std_dev));
}

template <class T>
void fill(const ad::VarT<T>& v, T value) {
    for (std::int64_t i = 0; i < v->value.numel(); ++i) v->value[i] = value;
}

template <class T>
void init_random_bias(const ad::VarT<T>& v, std::uint64_t seed, const std::string& name) {
    Rng rng(stream_seed(seed, name));
    for (std::int64_t i = 0; i < v->value.numel(); ++i)
        v->value[i] = T(rng.uniform(-0.1, 0.1));
}

inline std::uint64_t hash_str(std::uint64_t h, const std::string& s) {
    return fnv1a(h, s.data(), s.size());
}

inline std::uint64_t hash_i64(std::uint64_t h, std::int64_t v) {
    return fnv1a(h, &v, sizeof(v));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Generator: encoder-decoder with skip connections.
// Resolution levels 0..depth-1 at widths base_width << level; stride-2
// downsampling between levels, nearest-neighbour 2x upsampling back, with the
// encoder activation concatenated at each level. Bounded tanh output keeps
// values in the normalized [-1, 1] space.
// ---------------------------------------------------------------------------

struct GeneratorConfig {
    int n_channels = 3;   // slices per window, in == out
    int depth = 3;        // resolution levels
    int base_width = 16;  // channels at full resolution

    void validate() const {
        if (n_channels < 1) throw_config("generator: n_channels must be >= 1");
        if (depth < 2 || depth > 5) throw_config("generator: depth must be in [2, 5]");
        if (base_width < 1 || base_width > 256)
            throw_config("generator: base_width must be in [1, 256]");
    }

    int spatial_divisor() const { return 1 << (depth - 1); }

    std::uint64_t config_hash() const {
        std::uint64_t h = detail::hash_str(kFnvOffset, "generator");
        h = detail::hash_i64(h, n_channels);
        h = detail::hash_i64(h, depth);
        h = detail::hash_i64(h, base_width);
        return h;
    }
};

template <class T>
struct GeneratorT {
    GeneratorConfig config;
    ParamSetT<T> params;
};

using Generator = GeneratorT<float>;

template <class T>
GeneratorT<T> make_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    GeneratorT<T> g;
    g.config = cfg;
    auto& p = g.params;
    const int N = cfg.n_channels, B = cfg.base_width, D = cfg.depth;

    auto add_block = [&](const std::string& stem, int c_in, int c_out, bool with_norm) {
        auto w = p.add(stem + ".w", {c_out, c_in, 3, 3}, true);
        detail::init_conv_weight(w, seed, stem + ".w");
        detail::fill(p.add(stem + ".b", {c_out}, true), T(0));
        if (with_norm) {
            detail::fill(p.add(stem + ".gamma", {c_out}, true), T(1));
            detail::fill(p.add(stem + ".beta", {c_out}, true), T(0));
        }
    };

    add_block("enc0", N, B, true);
    for (int l = 1; l < D; ++l) add_block("down" + std::to_string(l), B << (l - 1), B << l, true);
    add_block("mid", B << (D - 1), B << (D - 1), true);
    for (int l = D - 1; l >= 1; --l) {
        // upsampled deep channels plus the skip connection from the encoder
        const int c_in = (B << l) + (B << (l - 1));
        add_block("up" + std::to_string(l), c_in, B << (l - 1), true);
    }
    auto w = p.add("out.w", {N, B, 3, 3}, true);
    detail::init_conv_weight(w, seed, "out.w");
    detail::fill(p.add("out.b", {N}, true), T(0));
    return g;
}

template <class T>
ad::VarT<T> generator_forward(const GeneratorT<T>& g, const ad::VarT<T>& x) {
    const auto& cfg = g.config;
    if (x->value.ndim() != 3 || x->value.dim(0) != cfg.n_channels)
        throw_data("generator: expected {" + std::to_string(cfg.n_channels) +
                   ",H,W} input, got " + x->value.shape_str());
    const int div = cfg.spatial_divisor();
    if (x->value.dim(1) % div != 0 || x->value.dim(2) % div != 0)
        throw_data("generator: spatial dims must be divisible by " + std::to_string(div));

    const auto& p = g.params;
    auto block = [&](const std::string& stem, const ad::VarT<T>& in, int stride) {
        auto h = ad::conv2d(in, p.find(stem + ".w"), p.find(stem + ".b"), stride, 1);
        h = ad::instance_norm(h, p.find(stem + ".gamma"), p.find(stem + ".beta"), T(1e-5));
        return ad::leaky_relu(h, T(0.2));
    };

    std::vector<ad::VarT<T>> skips;
    auto h = block("enc0", x, 1);
    skips.push_back(h);
    for (int l = 1; l < cfg.depth; ++l) {
        h = block("down" + std::to_string(l), h, 2);
        if (l < cfg.depth - 1) skips.push_back(h);
    }
    h = block("mid", h, 1);
    for (int l = cfg.depth - 1; l >= 1; --l) {
        h = ad::upsample_nearest2x(h);
        h = ad::concat_channels(h, skips[std::size_t(l - 1)]);
        h = block("up" + std::to_string(l), h, 1);
    }
    h = ad::conv2d(h, p.find("out.w"), p.find("out.b"), 1, 1);
    return ad::tanh_op(h);
}

/// Inference convenience: plain tensors in and out, no gradient graph kept.
template <class T>
TensorT<T> run_generator(const GeneratorT<T>& g, const TensorT<T>& window) {
    auto out = generator_forward(g, ad::constant(window));
    return out->value;
}

// ---------------------------------------------------------------------------
// Discriminator: stride-2 conv blocks, global average pooling, linear head,
// sigmoid squashing to a single probability per window.
// ---------------------------------------------------------------------------

struct DiscriminatorConfig {
    int n_channels = 3;
    int n_blocks = 4;
    int base_width = 16;

    void validate() const {
        if (n_channels < 1) throw_config("discriminator: n_channels must be >= 1");
        if (n_blocks < 1 || n_blocks > 6)
            throw_config("discriminator: n_blocks must be in [1, 6]");
        if (base_width < 1 || base_width > 256)
            throw_config("discriminator: base_width must be in [1, 256]");
    }

    std::uint64_t config_hash() const {
        std::uint64_t h = detail::hash_str(kFnvOffset, "discriminator");
        h = detail::hash_i64(h, n_channels);
        h = detail::hash_i64(h, n_blocks);
        h = detail::hash_i64(h, base_width);
        return h;
    }
};

template <class T>
struct DiscriminatorT {
    DiscriminatorConfig config;
    ParamSetT<T> params;
};

using Discriminator = DiscriminatorT<float>;

template <class T>
DiscriminatorT<T> make_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DiscriminatorT<T> d;
    d.config = cfg;
    auto& p = d.params;
    int c_in = cfg.n_channels;
    for (int k = 0; k < cfg.n_blocks; ++k) {
        const int c_out = cfg.base_width << k;
        const std::string stem = "block" + std::to_string(k);
        auto w = p.add(stem + ".w", {c_out, c_in, 3, 3}, true);
        detail::init_conv_weight(w, seed, stem + ".w");
        detail::fill(p.add(stem + ".b", {c_out}, true), T(0));
        if (k > 0) {  // normalizing the raw input block would discard intensity scale
            detail::fill(p.add(stem + ".gamma", {c_out}, true), T(1));
            detail::fill(p.add(stem + ".beta", {c_out}, true), T(0));
        }
        c_in = c_out;
    }
    auto hw = p.add("head.w", {1, c_in}, true);
    detail::init_linear_weight(hw, seed, "head.w");
    detail::fill(p.add("head.b", {1}, true), T(0));
    return d;
}

template <class T>
ad::VarT<T> discriminator_forward(const DiscriminatorT<T>& d, const ad::VarT<T>& x) {
    const auto& cfg = d.config;
    if (x->value.ndim() != 3 || x->value.dim(0) != cfg.n_channels)
        throw_data("discriminator: expected {" + std::to_string(cfg.n_channels) +
                   ",H,W} input, got " + x->value.shape_str());
    const int min_side = 1 << cfg.n_blocks;
    if (x->value.dim(1) < min_side || x->value.dim(2) < min_side)
        throw_data("discriminator: input smaller than the receptive pyramid");

    const auto& p = d.params;
    auto h = x;
    for (int k = 0; k < cfg.n_blocks; ++k) {
        const std::string stem = "block" + std::to_string(k);
        h = ad::conv2d(h, p.find(stem + ".w"), p.find(stem + ".b"), 2, 1);
        if (k > 0)
            h = ad::instance_norm(h, p.find(stem + ".gamma"), p.find(stem + ".beta"), T(1e-5));
        h = ad::leaky_relu(h, T(0.2));
    }
    h = ad::global_avg_pool(h);
    h = ad::linear(h, p.find("head.w"), p.find("head.b"));
    return ad::sigmoid_op(h);  // shape {1}, strictly inside (0, 1)
}

// ---------------------------------------------------------------------------
// Feature encoder: a frozen convolutional stack with seeded random weights.
// Used purely as a fixed nonlinear feature space for comparing residuals;
// it accepts any real-valued window, not only normalized ones.
// ---------------------------------------------------------------------------

struct FeatureEncoderConfig {
    int n_channels = 3;
    std::vector<int> widths = {16, 32, 64};
    int feature_layer = 3;  // 1-based; features taken after this conv+activation
    std::uint64_t init_seed = 0;

    void validate() const {
        if (n_channels < 1) throw_config("encoder: n_channels must be >= 1");
        if (widths.empty() || widths.size() > 6) throw_config("encoder: 1..6 layers");
        for (int w : widths)
            if (w < 1 || w > 256) throw_config("encoder: widths must be in [1, 256]");
        if (feature_layer < 1 || feature_layer > int(widths.size()))
            throw_config("encoder: feature_layer out of range");
    }

    std::uint64_t config_hash() const {
        std::uint64_t h = detail::hash_str(kFnvOffset, "encoder");
        h = detail::hash_i64(h, n_channels);
        for (int w : widths) h = detail::hash_i64(h, w);
        h = detail::hash_i64(h, feature_layer);
        h = detail::hash_i64(h, std::int64_t(init_seed));
        return h;
    }
};

template <class T>
struct FeatureEncoderT {
    FeatureEncoderConfig config;
    ParamSetT<T> params;  // every tensor frozen (needs_grad = false)
};

using FeatureEncoder = FeatureEncoderT<float>;

template <class T>
FeatureEncoderT<T> make_feature_encoder(const FeatureEncoderConfig& cfg) {
    cfg.validate();
    FeatureEncoderT<T> f;
    f.config = cfg;
    auto& p = f.params;
    int c_in = cfg.n_channels;
    for (std::size_t k = 0; k < cfg.widths.size(); ++k) {
        const int c_out = cfg.widths[k];
        const std::string stem = "layer" + std::to_string(k);
        auto w = p.add(stem + ".w", {c_out, c_in, 3, 3}, false);
        detail::init_conv_weight(w, cfg.init_seed, stem + ".w");
        auto b = p.add(stem + ".b", {c_out}, false);
        detail::init_random_bias(b, cfg.init_seed, stem + ".b");
        c_in = c_out;
    }
    return f;
}

template <class T>
ad::VarT<T> feature_encode(const FeatureEncoderT<T>& f, const ad::VarT<T>& x) {
    const auto& cfg = f.config;
    if (x->value.ndim() != 3 || x->value.dim(0) != cfg.n_channels)
        throw_data("encoder: expected {" + std::to_string(cfg.n_channels) + ",H,W} input, got " +
                   x->value.shape_str());
    const auto& p = f.params;
    auto h = x;
    for (int k = 0; k < cfg.feature_layer; ++k) {
        const std::string stem = "layer" + std::to_string(k);
        const int stride = k == 0 ? 1 : 2;
        h = ad::conv2d(h, p.find(stem + ".w"), p.find(stem + ".b"), stride, 1);
        h = ad::leaky_relu(h, T(0.2));
    }
    return h;
}

// ---------------------------------------------------------------------------
// Serialization: named-tensor groups, float32 payloads, little-endian.
// The checkpoint container in the training layer frames these groups.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw_data("params: truncated stream");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

inline void put_name(std::ostream& os, const std::string& s) {
    if (s.size() > 4096) throw_data("params: name too long");
    put_u32(os, std::uint32_t(s.size()));
    os.write(s.data(), std::streamsize(s.size()));
}

inline std::string get_name(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    if (n > 4096) throw_data("params: corrupt name length");
    std::string s(n, '\0');
    is.read(s.data(), std::streamsize(n));
    if (!is) throw_data("params: truncated stream");
    return s;
}

}  // namespace detail

inline void save_param_group(std::ostream& os, const ParamSet& p) {
    static_assert(sizeof(float) == 4);
    detail::put_u32(os, std::uint32_t(p.names.size()));
    for (std::size_t i = 0; i < p.names.size(); ++i) {
        detail::put_name(os, p.names[i]);
        const auto& t = p.vars[i]->value;
        detail::put_u32(os, std::uint32_t(t.ndim()));
        for (int d = 0; d < t.ndim(); ++d) detail::put_u32(os, std::uint32_t(t.dim(d)));
        os.write(reinterpret_cast<const char*>(t.ptr()),
                 std::streamsize(t.numel() * std::int64_t(sizeof(float))));
    }
    if (!os) throw_io("params: write failed");
}

/// Loads values into an existing container; names, order, and shapes must
/// match exactly, so the target's architecture is the schema.
inline void load_param_group(std::istream& is, ParamSet& p) {
    const std::uint32_t count = detail::get_u32(is);
    if (count != p.names.size())
        throw_data("params: expected " + std::to_string(p.names.size()) + " tensors, stream has " +
                   std::to_string(count));
    for (std::size_t i = 0; i < p.names.size(); ++i) {
        const std::string name = detail::get_name(is);
        if (name != p.names[i])
            throw_data("params: tensor '" + name + "' where '" + p.names[i] + "' expected");
        const std::uint32_t nd = detail::get_u32(is);
        auto& t = p.vars[i]->value;
        if (int(nd) != t.ndim()) throw_data("params: rank mismatch for '" + name + "'");
        for (int d = 0; d < t.ndim(); ++d)
            if (detail::get_u32(is) != std::uint32_t(t.dim(d)))
                throw_data("params: shape mismatch for '" + name + "'");
        is.read(reinterpret_cast<char*>(t.ptr()),
                std::streamsize(t.numel() * std::int64_t(sizeof(float))));
        if (!is) throw_data("params: truncated stream");
        if (!t.all_finite()) throw_data("params: non-finite values in '" + name + "'");
    }
}

}  // namespace vxmr
