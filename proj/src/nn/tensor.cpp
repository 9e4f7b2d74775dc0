#include "blobsurrogate/nn/tensor.hpp"

#include "blobsurrogate/error.hpp"

#include <algorithm>
#include <cmath>

namespace blobsurrogate::nn {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    if (shape_.size() > 5) throw ShapeMismatch("tensor rank above 5: " + shape_string(shape_));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.size() > 5) throw ShapeMismatch("tensor rank above 5: " + shape_string(shape_));
    if (data_.size() != shape_size(shape_)) {
        throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_string(shape_));
    }
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace blobsurrogate::nn
