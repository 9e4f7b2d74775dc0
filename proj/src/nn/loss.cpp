#include "blobsurrogate/nn/loss.hpp"

#include "blobsurrogate/error.hpp"

#include <algorithm>
#include <cmath>

namespace blobsurrogate::nn {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& pred, const Tensor<T>& target, const char* what) {
    if (pred.shape() != target.shape()) {
        throw ShapeMismatch(std::string(what) + ": prediction " + shape_string(pred.shape()) +
                            " vs target " + shape_string(target.shape()));
    }
}

}  // namespace

template <typename T>
LossResult<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target, double smoothing) {
    require_same_shape(pred, target, "dice_loss");
    if (!(smoothing > 0.0)) throw InvalidArgument("dice smoothing must be positive");
    double inter = 0.0;
    double pp = 0.0;
    double tt = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i];
        const double t = target[i];
        inter += p * t;
        pp += p * p;
        tt += t * t;
    }
    const double num = 2.0 * inter + smoothing;
    const double den = pp + tt + smoothing;
    LossResult<T> r;
    r.value = 1.0 - num / den;
    r.grad = Tensor<T>(pred.shape());
    const double inv = 1.0 / (den * den);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i];
        const double t = target[i];
        r.grad[i] = static_cast<T>(-(2.0 * t * den - num * 2.0 * p) * inv);
    }
    return r;
}

template <typename T>
LossResult<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred, target, "bce_loss");
    if (pred.empty()) throw InvalidArgument("bce_loss of an empty batch");
    const double n = static_cast<double>(pred.size());
    double sum = 0.0;
    LossResult<T> r;
    r.grad = Tensor<T>(pred.shape());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double raw = pred[i];
        const double p = std::clamp(raw, kBceClip, 1.0 - kBceClip);
        const double t = target[i];
        sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        const bool clipped = raw < kBceClip || raw > 1.0 - kBceClip;
        r.grad[i] = clipped ? T(0) : static_cast<T>((p - t) / (p * (1.0 - p)) / n);
    }
    r.value = sum / n;
    return r;
}

template LossResult<float> dice_loss(const Tensor<float>&, const Tensor<float>&, double);
template LossResult<double> dice_loss(const Tensor<double>&, const Tensor<double>&, double);
template LossResult<float> bce_loss(const Tensor<float>&, const Tensor<float>&);
template LossResult<double> bce_loss(const Tensor<double>&, const Tensor<double>&);

}  // namespace blobsurrogate::nn
