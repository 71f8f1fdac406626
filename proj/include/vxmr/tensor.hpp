#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "vxmr/error.hpp"

namespace vxmr {

/// Dense row-major tensor. The last axis is contiguous; a {S,H,W} volume is
/// slice-major and a {B,C,H,W} activation is channel-major per sample.
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
    }
    TensorT(std::vector<int> s, T fill) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw_data("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // flat offsets for the common ranks
    std::int64_t off3(int a, int b, int c) const {
        return (static_cast<std::int64_t>(a) * shape[1] + b) * shape[2] + c;
    }
    std::int64_t off4(int a, int b, int c, int d) const {
        return ((static_cast<std::int64_t>(a) * shape[1] + b) * static_cast<std::int64_t>(shape[2]) + c) *
                   shape[3] +
               d;
    }
    T& at3(int a, int b, int c) { return data[static_cast<std::size_t>(off3(a, b, c))]; }
    const T& at3(int a, int b, int c) const { return data[static_cast<std::size_t>(off3(a, b, c))]; }
    T& at4(int a, int b, int c, int d) { return data[static_cast<std::size_t>(off4(a, b, c, d))]; }
    const T& at4(int a, int b, int c, int d) const {
        return data[static_cast<std::size_t>(off4(a, b, c, d))];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "{";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "}";
    }
};

using Tensor = TensorT<float>;

template <class T, class U>
TensorT<T> tensor_cast(const TensorT<U>& src) {
    TensorT<T> out(src.shape);
    for (std::int64_t i = 0; i < src.numel(); ++i) out[i] = static_cast<T>(src[i]);
    return out;
}

}  // namespace vxmr
