#pragma once

#include "blobsurrogate/nn/tensor.hpp"

namespace blobsurrogate::nn {

template <typename T>
struct LossResult {
    double value = 0.0;
    /// d(loss)/d(pred), same shape as pred.
    Tensor<T> grad;
};

inline constexpr double kDiceSmoothing = 1.0;
inline constexpr double kBceClip = 1e-7;

/// 1 - (2 sum(p t) + s) / (sum(p^2) + sum(t^2) + s) over the whole tensor.
template <typename T>
LossResult<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target,
                        double smoothing = kDiceSmoothing);

/// Mean binary cross-entropy with predictions clipped to [1e-7, 1 - 1e-7].
/// Inside the clip the gradient is exact; outside it is zero.
template <typename T>
LossResult<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target);

}  // namespace blobsurrogate::nn
