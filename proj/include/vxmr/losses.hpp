#pragma once

#include <string>
#include <vector>

#include "vxmr/autodiff.hpp"
#include "vxmr/error.hpp"
#include "vxmr/nets.hpp"

// Training objectives for the unpaired volume-to-volume translator: log-form
// adversarial terms, cycle consistency, direct intensity preservation, a
// residual feature-space penalty, and the identity-mapping baseline term.

namespace vxmr {

enum class ObjectiveVariant { CGAN, CGAN_ID, PROPOSED };

inline std::string to_string(ObjectiveVariant v) {
    switch (v) {
        case ObjectiveVariant::CGAN: return "CGAN";
        case ObjectiveVariant::CGAN_ID: return "CGAN_ID";
        case ObjectiveVariant::PROPOSED: return "PROPOSED";
    }
    throw_config("unknown objective variant");
}

inline ObjectiveVariant variant_from_string(const std::string& s) {
    if (s == "CGAN") return ObjectiveVariant::CGAN;
    if (s == "CGAN_ID") return ObjectiveVariant::CGAN_ID;
    if (s == "PROPOSED") return ObjectiveVariant::PROPOSED;
    throw_config("unknown objective variant '" + s + "'");
}

struct LossWeights {
    double lambda_cyc = 10.0;
    double lambda_int = 25.0;
    double lambda_fea = 1.0;
    double lambda_id = 5.0;  // identity-baseline variant only

    void validate() const {
        for (double v : {lambda_cyc, lambda_int, lambda_fea, lambda_id})
            if (!std::isfinite(v) || v < 0.0)
                throw_config("loss weights must be finite and non-negative");
    }
};

struct LossReport {
    double adv_xy = 0.0;  // translation toward the clean domain
    double adv_yx = 0.0;  // translation toward the artifact domain
    double cyc = 0.0;
    double intensity = 0.0;
    double fea = 0.0;
    double id = 0.0;
    double total = 0.0;
};

template <class T>
using Batch = std::vector<ad::VarT<T>>;

constexpr double kProbClampEps = 1e-7;

// ---------------------------------------------------------------------------
// Core graph builders: small, separately testable pieces the named losses
// are assembled from.
// ---------------------------------------------------------------------------

/// Mean of a batch of scalar nodes.
template <class T>
ad::VarT<T> batch_mean(const Batch<T>& items) {
    if (items.empty()) throw_data("loss: empty batch");
    auto acc = items[0];
    for (std::size_t i = 1; i < items.size(); ++i) acc = ad::add(acc, items[i]);
    return ad::scale(acc, T(1) / T(items.size()));
}

/// Per-voxel mean absolute difference of one window pair.
template <class T>
ad::VarT<T> mean_abs_diff(const ad::VarT<T>& a, const ad::VarT<T>& b) {
    return ad::mean_all(ad::abs_op(ad::sub(a, b)));
}

/// Squared-L2 difference normalized by element count, for one pair.
template <class T>
ad::VarT<T> mean_sq_diff(const ad::VarT<T>& a, const ad::VarT<T>& b) {
    return ad::mean_all(ad::square(ad::sub(a, b)));
}

/// Batch-averaged per-voxel L1 between paired windows.
template <class T>
ad::VarT<T> l1_pair_mean(const Batch<T>& a, const Batch<T>& b) {
    if (a.size() != b.size()) throw_data("loss: paired batches differ in size");
    if (a.empty()) throw_data("loss: empty batch");
    Batch<T> per;
    per.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) per.push_back(mean_abs_diff(a[i], b[i]));
    return batch_mean(per);
}

/// Log-form adversarial value: mean log p over real probabilities plus mean
/// log (1 - p) over fake probabilities, each clamped away from {0, 1}.
/// This is the value the discriminator drives up and the joint objective logs.
template <class T>
ad::VarT<T> adversarial_value(const Batch<T>& p_real, const Batch<T>& p_fake) {
    if (p_real.empty() || p_fake.empty()) throw_data("loss: empty batch");
    Batch<T> reals, fakes;
    reals.reserve(p_real.size());
    fakes.reserve(p_fake.size());
    for (const auto& p : p_real)
        reals.push_back(ad::log_op(ad::clamp_probability(p, T(kProbClampEps))));
    for (const auto& p : p_fake)
        fakes.push_back(ad::log_op(ad::clamp_probability(ad::one_minus(p), T(kProbClampEps))));
    return ad::add(batch_mean(reals), batch_mean(fakes));
}

/// Non-saturating generator term: -mean log D(fake). Minimizing it pushes
/// D(fake) up with usable gradients even when D is confident.
template <class T>
ad::VarT<T> generator_fool_term(const Batch<T>& p_fake) {
    if (p_fake.empty()) throw_data("loss: empty batch");
    Batch<T> terms;
    terms.reserve(p_fake.size());
    for (const auto& p : p_fake)
        terms.push_back(ad::log_op(ad::clamp_probability(p, T(kProbClampEps))));
    return ad::scale(batch_mean(terms), T(-1));
}

// ---------------------------------------------------------------------------
// Named losses over networks
// ---------------------------------------------------------------------------

template <class T>
ad::VarT<T> adversarial_loss(const DiscriminatorT<T>& d, const GeneratorT<T>& g,
                             const Batch<T>& batch_src, const Batch<T>& batch_tgt) {
    if (batch_src.empty() || batch_tgt.empty()) throw_data("loss: empty batch");
    Batch<T> p_real, p_fake;
    for (const auto& t : batch_tgt) p_real.push_back(discriminator_forward(d, t));
    for (const auto& s : batch_src)
        p_fake.push_back(discriminator_forward(d, generator_forward(g, s)));
    return adversarial_value(p_real, p_fake);
}

template <class T>
ad::VarT<T> cycle_loss(const GeneratorT<T>& g_x, const GeneratorT<T>& g_y,
                       const Batch<T>& batch_x, const Batch<T>& batch_y) {
    if (batch_x.empty() || batch_y.empty()) throw_data("loss: empty batch");
    Batch<T> cycled_x, cycled_y;
    for (const auto& x : batch_x)
        cycled_x.push_back(generator_forward(g_x, generator_forward(g_y, x)));
    for (const auto& y : batch_y)
        cycled_y.push_back(generator_forward(g_y, generator_forward(g_x, y)));
    return ad::add(l1_pair_mean(cycled_x, batch_x), l1_pair_mean(cycled_y, batch_y));
}

template <class T>
ad::VarT<T> intensity_loss(const GeneratorT<T>& g_x, const GeneratorT<T>& g_y,
                           const Batch<T>& batch_x, const Batch<T>& batch_y) {
    if (batch_x.empty() || batch_y.empty()) throw_data("loss: empty batch");
    Batch<T> fake_y, fake_x;
    for (const auto& x : batch_x) fake_y.push_back(generator_forward(g_y, x));
    for (const auto& y : batch_y) fake_x.push_back(generator_forward(g_x, y));
    return ad::add(l1_pair_mean(fake_y, batch_x), l1_pair_mean(fake_x, batch_y));
}

/// Identity-mapping baseline: each generator applied to its own target domain
/// should change nothing.
template <class T>
ad::VarT<T> identity_loss(const GeneratorT<T>& g_x, const GeneratorT<T>& g_y,
                          const Batch<T>& batch_x, const Batch<T>& batch_y) {
    if (batch_x.empty() || batch_y.empty()) throw_data("loss: empty batch");
    Batch<T> y_through, x_through;
    for (const auto& y : batch_y) y_through.push_back(generator_forward(g_y, y));
    for (const auto& x : batch_x) x_through.push_back(generator_forward(g_x, x));
    return ad::add(l1_pair_mean(y_through, batch_y), l1_pair_mean(x_through, batch_x));
}

/// Residual feature penalty, two terms per matched (x, y) pair:
///   || f(x - G_Y(x)) - f(G_X(y) - y) ||^2
/// + || f(G_X(y) - G_Y(G_X(y))) - f(G_X(G_Y(x)) - G_Y(x)) ||^2
/// with the squared L2 normalized by feature element count.
template <class T>
ad::VarT<T> feature_loss(const FeatureEncoderT<T>& f, const GeneratorT<T>& g_x,
                         const GeneratorT<T>& g_y, const Batch<T>& batch_x,
                         const Batch<T>& batch_y) {
    if (batch_x.empty() || batch_y.empty()) throw_data("loss: empty batch");
    if (batch_x.size() != batch_y.size())
        throw_data("feature loss needs equally sized batches to pair residuals");
    Batch<T> terms;
    for (std::size_t i = 0; i < batch_x.size(); ++i) {
        const auto& x = batch_x[i];
        const auto& y = batch_y[i];
        auto fake_y = generator_forward(g_y, x);
        auto fake_x = generator_forward(g_x, y);
        auto cyc_x = generator_forward(g_x, fake_y);
        auto cyc_y = generator_forward(g_y, fake_x);
        auto t1 = mean_sq_diff(feature_encode(f, ad::sub(x, fake_y)),
                               feature_encode(f, ad::sub(fake_x, y)));
        auto t2 = mean_sq_diff(feature_encode(f, ad::sub(fake_x, cyc_y)),
                               feature_encode(f, ad::sub(cyc_x, fake_y)));
        terms.push_back(ad::add(t1, t2));
    }
    return batch_mean(terms);
}

// ---------------------------------------------------------------------------
// Full objective
// ---------------------------------------------------------------------------

/// Pure arithmetic shared by both objective builders and the report check.
inline double combine_total(ObjectiveVariant variant, const LossWeights& w, double adv_sum,
                            double cyc, double intensity, double fea, double id) {
    double total = adv_sum + w.lambda_cyc * cyc;
    if (variant == ObjectiveVariant::PROPOSED)
        total += w.lambda_int * intensity + w.lambda_fea * fea;
    if (variant == ObjectiveVariant::CGAN_ID) total += w.lambda_id * id;
    return total;
}

template <class T>
struct ObjectiveGraph {
    ad::VarT<T> total;  // scalar root for backward passes
    ad::VarT<T> adv_xy, adv_yx, cyc, intensity, fea, id;  // null when not built
    LossReport report;
};

namespace detail {

/// Shared forward translations for one (batch_x, batch_y) pair.
template <class T>
struct TranslationGraph {
    Batch<T> fake_y, fake_x;  // G_Y(x), G_X(y)
    Batch<T> cyc_x, cyc_y;    // G_X(G_Y(x)), G_Y(G_X(y))
};

template <class T>
TranslationGraph<T> run_translations(const GeneratorT<T>& g_x, const GeneratorT<T>& g_y,
                                     const Batch<T>& batch_x, const Batch<T>& batch_y) {
    TranslationGraph<T> tg;
    for (const auto& x : batch_x) {
        tg.fake_y.push_back(generator_forward(g_y, x));
        tg.cyc_x.push_back(generator_forward(g_x, tg.fake_y.back()));
    }
    for (const auto& y : batch_y) {
        tg.fake_x.push_back(generator_forward(g_x, y));
        tg.cyc_y.push_back(generator_forward(g_y, tg.fake_x.back()));
    }
    return tg;
}

/// Builds the variant-dependent regularizers. Zero-weighted or
/// variant-excluded terms are never built, so the degenerate-weights graph is
/// literally the plain-variant graph.
template <class T>
void build_regularizers(ObjectiveVariant variant, const LossWeights& w,
                        const GeneratorT<T>& g_x, const GeneratorT<T>& g_y,
                        const FeatureEncoderT<T>& f, const Batch<T>& batch_x,
                        const Batch<T>& batch_y, const TranslationGraph<T>& tg,
                        ad::VarT<T>& intensity, ad::VarT<T>& fea, ad::VarT<T>& id) {
    if (variant == ObjectiveVariant::PROPOSED && w.lambda_int > 0.0)
        intensity =
            ad::add(l1_pair_mean(tg.fake_y, batch_x), l1_pair_mean(tg.fake_x, batch_y));
    if (variant == ObjectiveVariant::PROPOSED && w.lambda_fea > 0.0) {
        if (batch_x.size() != batch_y.size())
            throw_data("feature loss needs equally sized batches to pair residuals");
        Batch<T> terms;
        for (std::size_t i = 0; i < batch_x.size(); ++i) {
            auto t1 = mean_sq_diff(feature_encode(f, ad::sub(batch_x[i], tg.fake_y[i])),
                                   feature_encode(f, ad::sub(tg.fake_x[i], batch_y[i])));
            auto t2 = mean_sq_diff(feature_encode(f, ad::sub(tg.fake_x[i], tg.cyc_y[i])),
                                   feature_encode(f, ad::sub(tg.cyc_x[i], tg.fake_y[i])));
            terms.push_back(ad::add(t1, t2));
        }
        fea = batch_mean(terms);
    }
    if (variant == ObjectiveVariant::CGAN_ID && w.lambda_id > 0.0) {
        Batch<T> y_through, x_through;
        for (const auto& y : batch_y) y_through.push_back(generator_forward(g_y, y));
        for (const auto& x : batch_x) x_through.push_back(generator_forward(g_x, x));
        id = ad::add(l1_pair_mean(y_through, batch_y), l1_pair_mean(x_through, batch_x));
    }
}

/// Assembles the weighted total and report from already-built component
/// nodes.
template <class T>
ObjectiveGraph<T> assemble(ObjectiveVariant variant, const LossWeights& w,
                           ad::VarT<T> adv_xy, ad::VarT<T> adv_yx, ad::VarT<T> cyc,
                           ad::VarT<T> intensity, ad::VarT<T> fea, ad::VarT<T> id) {
    ObjectiveGraph<T> og;
    og.adv_xy = adv_xy;
    og.adv_yx = adv_yx;
    og.cyc = cyc;
    og.intensity = intensity;
    og.fea = fea;
    og.id = id;
    auto total = ad::add(ad::add(adv_xy, adv_yx), ad::scale(cyc, T(w.lambda_cyc)));
    if (intensity) total = ad::add(total, ad::scale(intensity, T(w.lambda_int)));
    if (fea) total = ad::add(total, ad::scale(fea, T(w.lambda_fea)));
    if (id) total = ad::add(total, ad::scale(id, T(w.lambda_id)));
    og.total = total;

    og.report.adv_xy = double(adv_xy->value[0]);
    og.report.adv_yx = double(adv_yx->value[0]);
    og.report.cyc = double(cyc->value[0]);
    og.report.intensity = intensity ? double(intensity->value[0]) : 0.0;
    og.report.fea = fea ? double(fea->value[0]) : 0.0;
    og.report.id = id ? double(id->value[0]) : 0.0;
    og.report.total = double(total->value[0]);
    return og;
}

}  // namespace detail

/// Joint objective value (Eq.-style log adversarial terms): what training
/// logs and what the degenerate-weight equivalence is stated over.
template <class T>
ObjectiveGraph<T> full_objective(ObjectiveVariant variant, const LossWeights& w,
                                 const GeneratorT<T>& g_x, const GeneratorT<T>& g_y,
                                 const DiscriminatorT<T>& d_x, const DiscriminatorT<T>& d_y,
                                 const FeatureEncoderT<T>& f, const Batch<T>& batch_x,
                                 const Batch<T>& batch_y) {
    w.validate();
    if (batch_x.empty() || batch_y.empty()) throw_data("loss: empty batch");
    auto tg = detail::run_translations(g_x, g_y, batch_x, batch_y);

    Batch<T> p_real_y, p_fake_y, p_real_x, p_fake_x;
    for (const auto& y : batch_y) p_real_y.push_back(discriminator_forward(d_y, y));
    for (const auto& fy : tg.fake_y) p_fake_y.push_back(discriminator_forward(d_y, fy));
    for (const auto& x : batch_x) p_real_x.push_back(discriminator_forward(d_x, x));
    for (const auto& fx : tg.fake_x) p_fake_x.push_back(discriminator_forward(d_x, fx));
    auto adv_xy = adversarial_value(p_real_y, p_fake_y);
    auto adv_yx = adversarial_value(p_real_x, p_fake_x);

    auto cyc = ad::add(l1_pair_mean(tg.cyc_x, batch_x), l1_pair_mean(tg.cyc_y, batch_y));

    ad::VarT<T> intensity, fea, id;
    detail::build_regularizers(variant, w, g_x, g_y, f, batch_x, batch_y, tg, intensity, fea,
                               id);
    return detail::assemble(variant, w, adv_xy, adv_yx, cyc, intensity, fea, id);
}

/// Generator-phase objective: adversarial terms replaced by the
/// non-saturating fool terms, everything else as in the joint objective.
/// Discriminator outputs participate in the graph, so callers must discard
/// any gradient that reaches discriminator parameters.
template <class T>
ObjectiveGraph<T> generator_objective(ObjectiveVariant variant, const LossWeights& w,
                                      const GeneratorT<T>& g_x, const GeneratorT<T>& g_y,
                                      const DiscriminatorT<T>& d_x,
                                      const DiscriminatorT<T>& d_y,
                                      const FeatureEncoderT<T>& f, const Batch<T>& batch_x,
                                      const Batch<T>& batch_y) {
    w.validate();
    if (batch_x.empty() || batch_y.empty()) throw_data("loss: empty batch");
    auto tg = detail::run_translations(g_x, g_y, batch_x, batch_y);

    Batch<T> p_fake_y, p_fake_x;
    for (const auto& fy : tg.fake_y) p_fake_y.push_back(discriminator_forward(d_y, fy));
    for (const auto& fx : tg.fake_x) p_fake_x.push_back(discriminator_forward(d_x, fx));
    auto adv_xy = generator_fool_term(p_fake_y);
    auto adv_yx = generator_fool_term(p_fake_x);

    auto cyc = ad::add(l1_pair_mean(tg.cyc_x, batch_x), l1_pair_mean(tg.cyc_y, batch_y));

    ad::VarT<T> intensity, fea, id;
    detail::build_regularizers(variant, w, g_x, g_y, f, batch_x, batch_y, tg, intensity, fea,
                               id);
    return detail::assemble(variant, w, adv_xy, adv_yx, cyc, intensity, fea, id);
}

/// Discriminator-phase loss for one domain: the negated adversarial value,
/// evaluated on real windows and already-generated (detached) fakes.
template <class T>
ad::VarT<T> discriminator_loss(const DiscriminatorT<T>& d, const Batch<T>& reals,
                               const Batch<T>& fakes) {
    if (reals.empty() || fakes.empty()) throw_data("loss: empty batch");
    Batch<T> p_real, p_fake;
    for (const auto& r : reals) p_real.push_back(discriminator_forward(d, r));
    for (const auto& fk : fakes) p_fake.push_back(discriminator_forward(d, fk));
    return ad::scale(adversarial_value(p_real, p_fake), T(-1));
}

}  // namespace vxmr
