#pragma once

#include "blobsurrogate/nn/network.hpp"

#include <cstddef>
#include <vector>

namespace blobsurrogate::nn {

template <typename T>
struct AdamState {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t step = 0;
    /// One moment tensor per parameter tensor, created on the first step.
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;

    explicit AdamState(double lr = 0.001) : learning_rate(lr) {}
};

/// One bias-corrected Adam update of `params` in place.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
               AdamState<T>& state);

/// Network convenience: parameters are ordered weights0, bias0, weights1, ...
template <typename T>
void adam_step(Network<T>& net, const Gradients<T>& grads, AdamState<T>& state);

}  // namespace blobsurrogate::nn
