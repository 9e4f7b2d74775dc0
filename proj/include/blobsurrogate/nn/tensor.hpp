#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace blobsurrogate::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of rank <= 5, laid out (batch, channels, z, y, x).
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{});
    Tensor(Shape shape, std::vector<T> data);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    void fill(T value);
    /// Same data under a new shape of equal size.
    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

}  // namespace blobsurrogate::nn
