#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "textpix/error.hpp"
#include "textpix/rng.hpp"

namespace textpix {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_size(const Shape& shape) {
    std::int64_t n = 1;
    for (const auto e : shape) n *= e;
    return n;
}

inline std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

/// Dense row-major tensor over float or double scalars.
///
/// Tensors are plain values: copying copies the buffer and every operation
/// below allocates fresh storage for its result. The default-constructed
/// tensor is empty and acts as the "not materialized" sentinel. Exported
/// operations reject non-finite results, so NaN/Inf cannot propagate
/// silently through numeric code built on top of this type.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor holds float or double scalars");

public:
    Tensor() = default;

    Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
        validate_extents();
        if (!std::isfinite(static_cast<double>(fill))) {
            throw NumericError("tensor fill value is not finite");
        }
        data_.assign(static_cast<std::size_t>(shape_size(shape_)), fill);
    }

    Tensor(Shape shape, std::vector<T> buffer)
        : shape_(std::move(shape)), data_(std::move(buffer)) {
        validate_extents();
        if (static_cast<std::int64_t>(data_.size()) != shape_size(shape_)) {
            throw ShapeError("buffer of length " + std::to_string(data_.size()) +
                             " does not fill shape " + shape_to_string(shape_));
        }
        ensure_finite("construct");
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }

    const Shape& shape() const noexcept { return shape_; }
    std::int64_t rank() const noexcept { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const noexcept { return data_.empty(); }

    std::int64_t extent(std::int64_t axis) const {
        if (axis < 0 || axis >= rank()) {
            throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_to_string(shape_));
        }
        return shape_[static_cast<std::size_t>(axis)];
    }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    template <typename... Is>
    T& operator()(Is... is) {
        return data_[static_cast<std::size_t>(flat_index({static_cast<std::int64_t>(is)...}))];
    }

    template <typename... Is>
    const T& operator()(Is... is) const {
        return data_[static_cast<std::size_t>(flat_index({static_cast<std::int64_t>(is)...}))];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Same buffer reinterpreted under a new shape of equal size.
    Tensor reshaped(Shape new_shape) const {
        if (shape_size(new_shape) != size()) {
            throw ShapeError("cannot reshape " + shape_to_string(shape_) + " into " +
                             shape_to_string(new_shape));
        }
        Tensor out;
        out.shape_ = std::move(new_shape);
        out.data_ = data_;
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> buf(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) buf[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(buf));
    }

    bool all_finite() const {
        for (const T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    void ensure_finite(const char* op) const {
        if (!all_finite()) {
            throw NumericError(std::string(op) + " produced a non-finite value");
        }
    }

private:
    void validate_extents() const {
        if (shape_.empty()) {
            throw ShapeError("tensor shape must have at least one extent");
        }
        for (const auto e : shape_) {
            if (e <= 0) {
                throw ShapeError("tensor extents must be positive, got " +
                                 shape_to_string(shape_));
            }
        }
    }

    std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
        if (static_cast<std::int64_t>(idx.size()) != rank()) {
            throw ShapeError("expected " + std::to_string(rank()) + " indices for shape " +
                             shape_to_string(shape_));
        }
        std::int64_t flat = 0;
        std::size_t axis = 0;
        for (const auto i : idx) {
            const auto e = shape_[axis];
            if (i < 0 || i >= e) {
                throw ShapeError("index " + std::to_string(i) + " out of bounds for axis " +
                                 std::to_string(axis) + " of shape " + shape_to_string(shape_));
            }
            flat = flat * e + i;
            ++axis;
        }
        return flat;
    }

    Shape shape_;
    std::vector<T> data_;
};

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
    }
}

}  // namespace detail

/// Standard matrix product of a [m,k] by b [k,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul expects rank-2 operands, got " + shape_to_string(a.shape()) +
                         " and " + shape_to_string(b.shape()));
    }
    const std::int64_t m = a.extent(0), k = a.extent(1);
    const std::int64_t k2 = b.extent(0), n = b.extent(1);
    if (k != k2) {
        throw ShapeError("matmul inner extents differ: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
    }
    Tensor<T> out({m, n}, T{0});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            const T* brow = pb + p * n;
            T* orow = po + i * n;
            for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    out.ensure_finite("matmul");
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out(a.shape(), T{0});
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    out.ensure_finite("add");
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<T> out(a.shape(), T{0});
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    out.ensure_finite("sub");
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out(a.shape(), T{0});
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    out.ensure_finite("mul");
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Tensor<T> out(a.shape(), T{0});
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
    out.ensure_finite("scale");
    return out;
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& a, F&& fn) {
    Tensor<T> out(a.shape(), T{0});
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
    out.ensure_finite("map");
    return out;
}

/// Plain sequential accumulation; exact match for a naive loop by design.
template <typename T>
T sum(const Tensor<T>& a) {
    T acc{0};
    for (std::int64_t i = 0; i < a.size(); ++i) acc += a[i];
    if (!std::isfinite(static_cast<double>(acc))) throw NumericError("sum overflowed");
    return acc;
}

template <typename T>
T mean(const Tensor<T>& a) {
    return sum(a) / static_cast<T>(a.size());
}

template <typename T>
T max_value(const Tensor<T>& a) {
    T best = a[0];
    for (std::int64_t i = 1; i < a.size(); ++i) best = std::max(best, a[i]);
    return best;
}

/// Index of the first maximal element.
template <typename T>
std::int64_t argmax(const Tensor<T>& a) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < a.size(); ++i) {
        if (a[i] > a[best]) best = i;
    }
    return best;
}

namespace detail {

template <typename T>
struct AxisSpan {
    std::int64_t outer, n, inner;
    Shape out_shape;
};

template <typename T>
AxisSpan<T> axis_span(const Tensor<T>& a, std::int64_t axis) {
    if (axis < 0 || axis >= a.rank()) {
        throw ShapeError("reduce axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(a.shape()));
    }
    AxisSpan<T> s{1, a.extent(axis), 1, {}};
    for (std::int64_t i = 0; i < axis; ++i) s.outer *= a.extent(i);
    for (std::int64_t i = axis + 1; i < a.rank(); ++i) s.inner *= a.extent(i);
    for (std::int64_t i = 0; i < a.rank(); ++i) {
        if (i != axis) s.out_shape.push_back(a.extent(i));
    }
    if (s.out_shape.empty()) s.out_shape.push_back(1);
    return s;
}

}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::int64_t axis) {
    const auto s = detail::axis_span(a, axis);
    Tensor<T> out(s.out_shape, T{0});
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t k = 0; k < s.n; ++k) {
            const T* row = a.data() + (o * s.n + k) * s.inner;
            T* dst = out.data() + o * s.inner;
            for (std::int64_t i = 0; i < s.inner; ++i) dst[i] += row[i];
        }
    }
    out.ensure_finite("sum");
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::int64_t axis) {
    auto out = sum(a, axis);
    const T inv = T{1} / static_cast<T>(a.extent(axis));
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= inv;
    return out;
}

template <typename T>
Tensor<T> max_value(const Tensor<T>& a, std::int64_t axis) {
    const auto s = detail::axis_span(a, axis);
    Tensor<T> out(s.out_shape, T{0});
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t i = 0; i < s.inner; ++i) {
            T best = a.data()[(o * s.n) * s.inner + i];
            for (std::int64_t k = 1; k < s.n; ++k) {
                best = std::max(best, a.data()[(o * s.n + k) * s.inner + i]);
            }
            out.data()[o * s.inner + i] = best;
        }
    }
    return out;
}

template <typename T>
std::vector<std::int64_t> argmax(const Tensor<T>& a, std::int64_t axis) {
    const auto s = detail::axis_span(a, axis);
    std::vector<std::int64_t> out(static_cast<std::size_t>(s.outer * s.inner), 0);
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t i = 0; i < s.inner; ++i) {
            std::int64_t best = 0;
            T best_v = a.data()[(o * s.n) * s.inner + i];
            for (std::int64_t k = 1; k < s.n; ++k) {
                const T v = a.data()[(o * s.n + k) * s.inner + i];
                if (v > best_v) {
                    best_v = v;
                    best = k;
                }
            }
            out[static_cast<std::size_t>(o * s.inner + i)] = best;
        }
    }
    return out;
}

/// Uniform fill over [lo, hi); deterministic given seed, shape and call order.
template <typename T>
Tensor<T> random_uniform(Rng& rng, Shape shape, T lo, T hi) {
    if (!(lo <= hi)) throw ConfigError("uniform range requires lo <= hi");
    Tensor<T> out(std::move(shape), T{0});
    for (std::int64_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<T>(rng.next_uniform(static_cast<double>(lo), static_cast<double>(hi)));
    }
    return out;
}

/// Normal fill with standard deviation 1/sqrt(fan_in).
template <typename T>
Tensor<T> random_scaled_normal(Rng& rng, Shape shape, std::int64_t fan_in) {
    if (fan_in <= 0) throw ConfigError("scaled-normal fan_in must be positive");
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<T> out(std::move(shape), T{0});
    for (std::int64_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<T>(std_dev * rng.next_normal());
    }
    return out;
}

}  // namespace textpix
