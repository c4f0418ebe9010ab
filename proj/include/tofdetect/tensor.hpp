#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tofdetect/error.hpp"

namespace tofd {

/// (batch, channel, depth, height, width)
using Shape5 = std::array<int, 5>;

inline std::size_t shape_size(const Shape5& s) noexcept {
    std::size_t n = 1;
    for (int v : s) n *= static_cast<std::size_t>(v);
    return n;
}

std::string shape_string(const Shape5& s);

/// Dense 5-axis tensor, width-fastest. T is float (training) or double
/// (gradient verification).
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape5 shape, T fill = T(0)) : shape_(shape), data_(shape_size(shape), fill) { check(); }
    Tensor(Shape5 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        check();
        if (data_.size() != shape_size(shape_))
            fail(ErrorKind::ShapeMismatch, "tensor data length does not match shape " + shape_string(shape_));
    }

    const Shape5& shape() const noexcept { return shape_; }
    int n() const noexcept { return shape_[0]; }
    int c() const noexcept { return shape_[1]; }
    int d() const noexcept { return shape_[2]; }
    int h() const noexcept { return shape_[3]; }
    int w() const noexcept { return shape_[4]; }
    std::size_t spatial() const noexcept {
        return static_cast<std::size_t>(shape_[2]) * shape_[3] * shape_[4];
    }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t offset(int b, int ch, int z, int y, int x) const noexcept {
        return (((static_cast<std::size_t>(b) * shape_[1] + ch) * shape_[2] + z) * shape_[3] + y) * shape_[4] + x;
    }
    T& at(int b, int ch, int z, int y, int x) { return data_[offset(b, ch, z, y, x)]; }
    const T& at(int b, int ch, int z, int y, int x) const { return data_[offset(b, ch, z, y, x)]; }

    /// Pointer to the (b, ch) spatial block.
    T* plane(int b, int ch) noexcept { return data_.data() + (static_cast<std::size_t>(b) * shape_[1] + ch) * spatial(); }
    const T* plane(int b, int ch) const noexcept {
        return data_.data() + (static_cast<std::size_t>(b) * shape_[1] + ch) * spatial();
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    bool all_finite() const;

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor&) const = default;

private:
    void check() const {
        for (int v : shape_)
            if (v < 1) fail(ErrorKind::ShapeMismatch, "tensor dims must be >= 1, got " + shape_string(shape_));
    }

    Shape5 shape_{1, 1, 1, 1, 1};
    std::vector<T> data_ = std::vector<T>(1, T(0));
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace tofd
