#pragma once

#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "ser/errors.hpp"

namespace ser {

using i64 = std::int64_t;

// Dense row-major N-d array. f32 is the training dtype, f64 the
// gradient-check dtype; everything numeric is templated on the scalar.
template <typename T>
struct TensorT {
    std::vector<i64> shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(std::vector<i64> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(checked_numel(shape)), T(0));
    }

    TensorT(std::vector<i64> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (checked_numel(shape) != static_cast<i64>(data.size())) {
            throw DimensionError("tensor data length does not match shape product");
        }
    }

    static TensorT zeros(std::vector<i64> s) { return TensorT(std::move(s)); }

    static TensorT full(std::vector<i64> s, T value) {
        TensorT t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    i64 numel() const { return static_cast<i64>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    i64 extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](i64 i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](i64 i) const { return data[static_cast<std::size_t>(i)]; }

    T& at2(i64 i, i64 j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    const T& at2(i64 i, i64 j) const { return data[static_cast<std::size_t>(i * shape[1] + j)]; }

    T& at3(i64 i, i64 j, i64 k) {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    const T& at3(i64 i, i64 j, i64 k) const {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    T& at4(i64 n, i64 c, i64 h, i64 w) {
        return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    const T& at4(i64 n, i64 c, i64 h, i64 w) const {
        return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    static i64 checked_numel(const std::vector<i64>& s) {
        i64 n = 1;
        for (i64 e : s) {
            if (e <= 0) {
                throw DimensionError("tensor extents must be positive");
            }
            n *= e;
        }
        return n;
    }
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
bool all_finite(const TensorT<T>& t);

// Throws NumericError naming `what` when any stored scalar is NaN/Inf.
template <typename T>
void validate_finite(const TensorT<T>& t, const std::string& what);

// Binary tensor file: magic "ATNT", u8 dtype (0=f32, 1=f64), u8 rank,
// little-endian u32 extents, then raw little-endian scalars.
template <typename T>
void save_tensor(const std::filesystem::path& path, const TensorT<T>& t);

template <typename T>
TensorT<T> load_tensor(const std::filesystem::path& path);

}  // namespace ser
