#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "voxnas/errors.hpp"

namespace voxnas {

// Dense 5-axis array in row-major (n, c, d, h, w) order. This is the only
// tensor rank in the library; vectors are stored as (1, k, 1, 1, 1).
struct Shape5 {
    int64_t n = 0, c = 0, d = 0, h = 0, w = 0;

    int64_t numel() const { return n * c * d * h * w; }
    int64_t spatial() const { return d * h * w; }

    bool operator==(const Shape5&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << d << "," << h << "," << w << ")";
        return os.str();
    }
};

template <typename T>
struct Tensor5 {
    Shape5 shape;
    std::vector<T> data;

    Tensor5() = default;
    explicit Tensor5(Shape5 s, T fill = T(0)) : shape(s) {
        if (s.n < 0 || s.c < 0 || s.d < 0 || s.h < 0 || s.w < 0)
            throw ShapeError("negative tensor extent " + s.str());
        data.assign(static_cast<size_t>(s.numel()), fill);
    }

    bool empty() const { return data.empty(); }
    int64_t numel() const { return shape.numel(); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    int64_t index(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const {
        return (((n * shape.c + c) * shape.d + d) * shape.h + h) * shape.w + w;
    }
    T& at(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) { return data[static_cast<size_t>(index(n, c, d, h, w))]; }
    const T& at(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const {
        return data[static_cast<size_t>(index(n, c, d, h, w))];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    void zero_() { fill(T(0)); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor5<U> cast() const {
        Tensor5<U> out(shape);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

inline void require_shape(const Shape5& got, const Shape5& want, const char* where) {
    if (!(got == want))
        throw ShapeError(std::string(where) + ": expected " + want.str() + ", got " + got.str());
}

// Per-axis spatial triple (depth, height, width) used for strides, dilations
// and pad amounts.
struct Axes3 {
    int64_t d = 1, h = 1, w = 1;
    bool operator==(const Axes3&) const = default;
    int64_t product() const { return d * h * w; }
};

}  // namespace voxnas
