#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "vxmr/error.hpp"
#include "vxmr/tensor.hpp"

// Reverse-mode automatic differentiation on a dynamically built graph.
// Scalar-templated: float for training throughput, double for the
// finite-difference gradient oracles in the test suite.

namespace vxmr::ad {

template <class T>
struct NodeT;

template <class T>
using VarT = std::shared_ptr<NodeT<T>>;

template <class T>
struct NodeT {
    TensorT<T> value;
    TensorT<T> grad;  // allocated on first accumulation
    bool needs_grad = false;
    std::vector<VarT<T>> parents;
    std::function<void(NodeT<T>&)> backprop;  // reads this->grad, accumulates into parents

    TensorT<T>& ensure_grad() {
        if (grad.shape != value.shape) grad = TensorT<T>(value.shape, T(0));
        return grad;
    }
};

template <class T>
VarT<T> leaf(TensorT<T> value, bool needs_grad) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(value);
    n->needs_grad = needs_grad;
    return n;
}

template <class T>
VarT<T> constant(TensorT<T> value) {
    return leaf(std::move(value), false);
}

namespace detail {

template <class T>
VarT<T> make_node(TensorT<T> value, std::vector<VarT<T>> parents,
                  std::function<void(NodeT<T>&)> backprop) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->needs_grad) n->needs_grad = true;
    if (n->needs_grad) n->backprop = std::move(backprop);
    return n;
}

template <class T>
void require_same_shape(const VarT<T>& a, const VarT<T>& b, const char* op) {
    if (a->value.shape != b->value.shape)
        throw_data(std::string(op) + ": shape mismatch " + a->value.shape_str() + " vs " +
                   b->value.shape_str());
}

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapRM = Eigen::Map<const MatRM<T>>;

}  // namespace detail

/// Breaks gradient flow: same value, fresh leaf.
template <class T>
VarT<T> detach(const VarT<T>& a) {
    return leaf(a->value, false);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
    detail::require_same_shape(a, b, "add");
    TensorT<T> out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
    return detail::make_node<T>(std::move(out), {a, b}, [](NodeT<T>& self) {
        for (int k = 0; k < 2; ++k) {
            auto& p = self.parents[k];
            if (!p->needs_grad) continue;
            auto& g = p->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
    });
}

template <class T>
VarT<T> sub(const VarT<T>& a, const VarT<T>& b) {
    detail::require_same_shape(a, b, "sub");
    TensorT<T> out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
    return detail::make_node<T>(std::move(out), {a, b}, [](NodeT<T>& self) {
        if (self.parents[0]->needs_grad) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->needs_grad) {
            auto& g = self.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <class T>
VarT<T> scale(const VarT<T>& a, T c) {
    TensorT<T> out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * c;
    return detail::make_node<T>(std::move(out), {a}, [c](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += c * self.grad[i];
    });
}

template <class T>
VarT<T> one_minus(const VarT<T>& a) {
    TensorT<T> out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) - a->value[i];
    return detail::make_node<T>(std::move(out), {a}, [](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    });
}

template <class T>
VarT<T> abs_op(const VarT<T>& a) {
    TensorT<T> out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(a->value[i]);
    return detail::make_node<T>(std::move(out), {a}, [](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& x = self.parents[0]->value;
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const T s = x[i] > T(0) ? T(1) : (x[i] < T(0) ? T(-1) : T(0));
            g[i] += s * self.grad[i];
        }
    });
}

template <class T>
VarT<T> square(const VarT<T>& a) {
    TensorT<T> out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * a->value[i];
    return detail::make_node<T>(std::move(out), {a}, [](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& x = self.parents[0]->value;
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += T(2) * x[i] * self.grad[i];
    });
}

template <class T>
VarT<T> log_op(const VarT<T>& a) {
    TensorT<T> out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        if (!(a->value[i] > T(0)))
            throw_numeric("log: non-positive input " + std::to_string(double(a->value[i])));
        out[i] = std::log(a->value[i]);
    }
    return detail::make_node<T>(std::move(out), {a}, [](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& x = self.parents[0]->value;
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / x[i];
    });
}

/// Clamp into [eps, 1-eps]; gradient is identity on the interior, 0 outside.
template <class T>
VarT<T> clamp_probability(const VarT<T>& a, T eps) {
    TensorT<T> out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = std::min(T(1) - eps, std::max(eps, a->value[i]));
    return detail::make_node<T>(std::move(out), {a}, [eps](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& x = self.parents[0]->value;
        for (std::int64_t i = 0; i < g.numel(); ++i)
            if (x[i] > eps && x[i] < T(1) - eps) g[i] += self.grad[i];
    });
}

template <class T>
VarT<T> leaky_relu(const VarT<T>& a, T slope) {
    TensorT<T> out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = a->value[i] > T(0) ? a->value[i] : slope * a->value[i];
    return detail::make_node<T>(std::move(out), {a}, [slope](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& x = self.parents[0]->value;
        for (std::int64_t i = 0; i < g.numel(); ++i)
            g[i] += (x[i] > T(0) ? T(1) : slope) * self.grad[i];
    });
}

template <class T>
VarT<T> tanh_op(const VarT<T>& a) {
    TensorT<T> out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a->value[i]);
    return detail::make_node<T>(std::move(out), {a}, [](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& y = self.value;
        for (std::int64_t i = 0; i < g.numel(); ++i)
            g[i] += (T(1) - y[i] * y[i]) * self.grad[i];
    });
}

template <class T>
VarT<T> sigmoid_op(const VarT<T>& a) {
    TensorT<T> out(a->value.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = T(1) / (T(1) + std::exp(-a->value[i]));
    return detail::make_node<T>(std::move(out), {a}, [](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& y = self.value;
        for (std::int64_t i = 0; i < g.numel(); ++i)
            g[i] += y[i] * (T(1) - y[i]) * self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

template <class T>
VarT<T> mean_all(const VarT<T>& a) {
    const std::int64_t n = a->value.numel();
    if (n == 0) throw_data("mean_all: empty tensor");
    T acc = T(0);
    for (std::int64_t i = 0; i < n; ++i) acc += a->value[i];
    TensorT<T> out({1});
    out[0] = acc / T(n);
    return detail::make_node<T>(std::move(out), {a}, [n](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const T w = self.grad[0] / T(n);
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += w;
    });
}

/// {C1,H,W} ++ {C2,H,W} -> {C1+C2,H,W}
template <class T>
VarT<T> concat_channels(const VarT<T>& a, const VarT<T>& b) {
    if (a->value.ndim() != 3 || b->value.ndim() != 3 || a->value.dim(1) != b->value.dim(1) ||
        a->value.dim(2) != b->value.dim(2))
        throw_data("concat_channels: incompatible shapes " + a->value.shape_str() + " and " +
                   b->value.shape_str());
    const int c1 = a->value.dim(0), c2 = b->value.dim(0);
    const int h = a->value.dim(1), w = a->value.dim(2);
    TensorT<T> out({c1 + c2, h, w});
    std::copy(a->value.data.begin(), a->value.data.end(), out.data.begin());
    std::copy(b->value.data.begin(), b->value.data.end(),
              out.data.begin() + a->value.data.size());
    return detail::make_node<T>(std::move(out), {a, b}, [](NodeT<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const std::int64_t na = pa->value.numel();
        if (pa->needs_grad) {
            auto& g = pa->ensure_grad();
            for (std::int64_t i = 0; i < na; ++i) g[i] += self.grad[i];
        }
        if (pb->needs_grad) {
            auto& g = pb->ensure_grad();
            for (std::int64_t i = 0; i < pb->value.numel(); ++i) g[i] += self.grad[na + i];
        }
    });
}

/// {C,H,W} -> {C,2H,2W}, nearest neighbour.
template <class T>
VarT<T> upsample_nearest2x(const VarT<T>& a) {
    if (a->value.ndim() != 3) throw_data("upsample: expects {C,H,W}");
    const int c = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2);
    TensorT<T> out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x)
                out.at3(ch, y, x) = a->value.at3(ch, y / 2, x / 2);
    return detail::make_node<T>(std::move(out), {a}, [c, h, w](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y)
                for (int x = 0; x < 2 * w; ++x)
                    g.at3(ch, y / 2, x / 2) += self.grad.at3(ch, y, x);
    });
}

/// {C,H,W} -> {C}: spatial mean per channel.
template <class T>
VarT<T> global_avg_pool(const VarT<T>& a) {
    if (a->value.ndim() != 3) throw_data("global_avg_pool: expects {C,H,W}");
    const int c = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2);
    TensorT<T> out({c}, T(0));
    for (int ch = 0; ch < c; ++ch) {
        T acc = T(0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) acc += a->value.at3(ch, y, x);
        out[ch] = acc / T(h * w);
    }
    return detail::make_node<T>(std::move(out), {a}, [c, h, w](NodeT<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            const T piece = self.grad[ch] / T(h * w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) g.at3(ch, y, x) += piece;
        }
    });
}

/// x {C} with weight {K,C} and bias {K} -> {K}.
template <class T>
VarT<T> linear(const VarT<T>& x, const VarT<T>& weight, const VarT<T>& bias) {
    if (x->value.ndim() != 1 || weight->value.ndim() != 2 || bias->value.ndim() != 1)
        throw_data("linear: expects x{C}, weight{K,C}, bias{K}");
    const int c = x->value.dim(0), k = weight->value.dim(0);
    if (weight->value.dim(1) != c || bias->value.dim(0) != k)
        throw_data("linear: dimension mismatch");
    TensorT<T> out({k});
    for (int i = 0; i < k; ++i) {
        T acc = bias->value[i];
        for (int j = 0; j < c; ++j) acc += weight->value[std::size_t(i) * c + j] * x->value[j];
        out[i] = acc;
    }
    return detail::make_node<T>(std::move(out), {x, weight, bias}, [c, k](NodeT<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        if (px->needs_grad) {
            auto& g = px->ensure_grad();
            for (int j = 0; j < c; ++j) {
                T acc = T(0);
                for (int i = 0; i < k; ++i)
                    acc += pw->value[std::size_t(i) * c + j] * self.grad[i];
                g[j] += acc;
            }
        }
        if (pw->needs_grad) {
            auto& g = pw->ensure_grad();
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < c; ++j)
                    g[std::size_t(i) * c + j] += self.grad[i] * px->value[j];
        }
        if (pb->needs_grad) {
            auto& g = pb->ensure_grad();
            for (int i = 0; i < k; ++i) g[i] += self.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// conv2d: im2col + GEMM. The column matrix is rebuilt in the backward pass
// instead of being cached — memory stays bounded by activations.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void im2col(const TensorT<T>& x, int kh, int kw, int stride, int pad, int out_h, int out_w,
            std::vector<T>& col) {
    const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t L = std::size_t(out_h) * out_w;
    col.assign(std::size_t(c_in) * kh * kw * L, T(0));
    for (int ci = 0; ci < c_in; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = col.data() + ((std::size_t(ci) * kh + ky) * kw + kx) * L;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const T* src = x.ptr() + (std::size_t(ci) * h + iy) * w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) dst[std::size_t(oy) * out_w + ox] = src[ix];
                    }
                }
            }
}

template <class T>
void col2im_accumulate(const std::vector<T>& col, int c_in, int h, int w, int kh, int kw,
                       int stride, int pad, int out_h, int out_w, TensorT<T>& dx) {
    const std::size_t L = std::size_t(out_h) * out_w;
    for (int ci = 0; ci < c_in; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const T* src = col.data() + ((std::size_t(ci) * kh + ky) * kw + kx) * L;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = dx.ptr() + (std::size_t(ci) * h + iy) * w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += src[std::size_t(oy) * out_w + ox];
                    }
                }
            }
}

}  // namespace detail

/// x {C_in,H,W}, weight {C_out,C_in,kh,kw}, bias {C_out} -> {C_out,H',W'}.
template <class T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& weight, const VarT<T>& bias, int stride,
               int pad) {
    if (x->value.ndim() != 3 || weight->value.ndim() != 4 || bias->value.ndim() != 1)
        throw_data("conv2d: expects x{C,H,W}, weight{O,C,kh,kw}, bias{O}");
    const int c_in = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    const int c_out = weight->value.dim(0), kh = weight->value.dim(2), kw = weight->value.dim(3);
    if (weight->value.dim(1) != c_in)
        throw_data("conv2d: input has " + std::to_string(c_in) + " channels, weight expects " +
                   std::to_string(weight->value.dim(1)));
    if (bias->value.dim(0) != c_out) throw_data("conv2d: bias/weight mismatch");
    if (stride < 1) throw_data("conv2d: stride must be >= 1");
    const int out_h = (h + 2 * pad - kh) / stride + 1;
    const int out_w = (w + 2 * pad - kw) / stride + 1;
    if (out_h < 1 || out_w < 1) throw_data("conv2d: kernel larger than padded input");

    const std::size_t K = std::size_t(c_in) * kh * kw;
    const std::size_t L = std::size_t(out_h) * out_w;
    std::vector<T> col;
    detail::im2col(x->value, kh, kw, stride, pad, out_h, out_w, col);

    TensorT<T> out({c_out, out_h, out_w});
    {
        detail::CMapRM<T> wm(weight->value.ptr(), c_out, K);
        detail::CMapRM<T> cm(col.data(), K, L);
        detail::MapRM<T> om(out.ptr(), c_out, L);
        om.noalias() = wm * cm;
        for (int co = 0; co < c_out; ++co) om.row(co).array() += bias->value[co];
    }

    const auto geometry = [=](NodeT<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        detail::CMapRM<T> gm(self.grad.ptr(), c_out, L);
        if (pw->needs_grad || pb->needs_grad) {
            if (pb->needs_grad) {
                // fixed-order summation: Eigen's vectorized reduction order
                // depends on buffer alignment, which would break bitwise
                // run-to-run determinism
                auto& gb = pb->ensure_grad();
                for (int co = 0; co < c_out; ++co) {
                    const T* row = self.grad.ptr() + std::size_t(co) * L;
                    T acc = T(0);
                    for (std::size_t i = 0; i < L; ++i) acc += row[i];
                    gb[co] += acc;
                }
            }
            if (pw->needs_grad) {
                std::vector<T> col_b;
                detail::im2col(px->value, kh, kw, stride, pad, out_h, out_w, col_b);
                detail::CMapRM<T> cm(col_b.data(), K, L);
                auto& gw = pw->ensure_grad();
                detail::MapRM<T> gwm(gw.ptr(), c_out, K);
                gwm.noalias() += gm * cm.transpose();
            }
        }
        if (px->needs_grad) {
            std::vector<T> dcol(K * L);
            detail::CMapRM<T> wm(pw->value.ptr(), c_out, K);
            detail::MapRM<T> dcm(dcol.data(), K, L);
            dcm.noalias() = wm.transpose() * gm;
            auto& gx = px->ensure_grad();
            detail::col2im_accumulate(dcol, c_in, h, w, kh, kw, stride, pad, out_h, out_w, gx);
        }
    };
    return detail::make_node<T>(std::move(out), {x, weight, bias}, geometry);
}

/// Per-channel normalization over the spatial extent, with affine parameters
/// gamma {C} and beta {C}.
template <class T>
VarT<T> instance_norm(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta, T eps) {
    if (x->value.ndim() != 3) throw_data("instance_norm: expects {C,H,W}");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    if (gamma->value.dim(0) != c || beta->value.dim(0) != c)
        throw_data("instance_norm: affine parameter size mismatch");
    const std::int64_t m = std::int64_t(h) * w;

    TensorT<T> out({c, h, w});
    std::vector<T> mean(c), inv_std(c);
    for (int ch = 0; ch < c; ++ch) {
        const T* xs = x->value.ptr() + std::size_t(ch) * m;
        T mu = T(0);
        for (std::int64_t i = 0; i < m; ++i) mu += xs[i];
        mu /= T(m);
        T var = T(0);
        for (std::int64_t i = 0; i < m; ++i) var += (xs[i] - mu) * (xs[i] - mu);
        var /= T(m);
        mean[ch] = mu;
        inv_std[ch] = T(1) / std::sqrt(var + eps);
        T* os = out.ptr() + std::size_t(ch) * m;
        const T g = gamma->value[ch], b = beta->value[ch];
        for (std::int64_t i = 0; i < m; ++i) os[i] = (xs[i] - mu) * inv_std[ch] * g + b;
    }

    auto backward = [c, m, mean, inv_std](NodeT<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        for (int ch = 0; ch < c; ++ch) {
            const T* xs = px->value.ptr() + std::size_t(ch) * m;
            const T* gy = self.grad.ptr() + std::size_t(ch) * m;
            const T mu = mean[ch], is = inv_std[ch];
            const T g = pg->value[ch];
            T sum_gy = T(0), sum_gy_xhat = T(0);
            for (std::int64_t i = 0; i < m; ++i) {
                sum_gy += gy[i];
                sum_gy_xhat += gy[i] * (xs[i] - mu) * is;
            }
            if (pg->needs_grad) pg->ensure_grad()[ch] += sum_gy_xhat;
            if (pb->needs_grad) pb->ensure_grad()[ch] += sum_gy;
            if (px->needs_grad) {
                T* gx = px->ensure_grad().ptr() + std::size_t(ch) * m;
                const T inv_m = T(1) / T(m);
                for (std::int64_t i = 0; i < m; ++i) {
                    const T xhat = (xs[i] - mu) * is;
                    gx[i] += g * is * (gy[i] - inv_m * sum_gy - xhat * inv_m * sum_gy_xhat);
                }
            }
        }
    };
    return detail::make_node<T>(std::move(out), {x, gamma, beta}, backward);
}

// ---------------------------------------------------------------------------
// Backward driver
// ---------------------------------------------------------------------------

template <class T>
void backward(const VarT<T>& root) {
    if (root->value.numel() != 1) throw_data("backward: root must be a scalar");
    if (!root->needs_grad)
        throw_data("backward: root does not depend on any differentiable leaf");

    // Topological order by DFS (iterative; graphs can be thousands of nodes).
    std::vector<NodeT<T>*> order;
    std::unordered_set<NodeT<T>*> visited;
    std::vector<std::pair<NodeT<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            NodeT<T>* p = node->parents[idx++].get();
            if (p->needs_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<T>* node = *it;
        if (node->backprop && node->grad.shape == node->value.shape) node->backprop(*node);
    }
}

template <class T>
void zero_grad(const VarT<T>& v) {
    v->grad = TensorT<T>();
}

}  // namespace vxmr::ad
