#pragma once

#include "blobsurrogate/nn/tensor.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace blobsurrogate::nn {

enum class Activation : std::uint32_t { None = 0, Relu = 1, Sigmoid = 2 };
enum class LayerKind : std::uint32_t { Conv3d = 0, Dense = 1 };

/// One layer of a sequential stack.
///
/// Conv3d: weights [out, in, k, k, k], zero "same" padding of k/2, optional
/// stride; input [N, in, D, H, W] gives [N, out, ceil(D/s), ceil(H/s), ceil(W/s)].
/// Cross-correlation, no kernel flip.
///
/// Dense: weights [out, in]; the input is flattened per batch element and
/// must hold exactly `in` features. Output [N, out].
template <typename T>
struct Layer {
    LayerKind kind = LayerKind::Conv3d;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    Activation activation = Activation::None;
    Tensor<T> weights;
    Tensor<T> bias;

    /// Zero-initialized conv layer; k must be odd.
    static Layer conv(std::size_t in, std::size_t out, std::size_t k, Activation act,
                      std::size_t stride = 1);
    static Layer dense(std::size_t in, std::size_t out, Activation act);

    std::size_t fan_in() const;
    std::size_t fan_out() const;
    Shape output_shape(const Shape& input) const;

    template <typename U>
    Layer<U> cast() const {
        return {kind, in_channels, out_channels, kernel, stride, activation,
                weights.template cast<U>(), bias.template cast<U>()};
    }
};

template <typename T>
using ConvLayer = Layer<T>;

template <typename T>
struct LayerGrad {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

/// Logistic function of the sigmoid activation, clamped strictly inside (0, 1).
template <typename T>
T sigmoid(T x);

/// Applies the layer (including activation).
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Layer<T>& layer);

/// Exact gradients of conv3d_forward. `upstream` is the gradient with respect
/// to the activated output; `output` is that output from the forward pass.
template <typename T>
LayerGrad<T> conv3d_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                             const Tensor<T>& output, const Layer<T>& layer);
/// Recomputes the forward output internally.
template <typename T>
LayerGrad<T> conv3d_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                             const Layer<T>& layer);

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Layer<T>& layer);
template <typename T>
LayerGrad<T> dense_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                            const Tensor<T>& output, const Layer<T>& layer);

template <typename T>
Tensor<T> layer_forward(const Tensor<T>& input, const Layer<T>& layer);
template <typename T>
LayerGrad<T> layer_backward(const Tensor<T>& upstream, const Tensor<T>& input,
                            const Tensor<T>& output, const Layer<T>& layer);

/// I.i.d. uniform on +-sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> glorot_uniform_init(Shape shape, std::size_t fan_in, std::size_t fan_out,
                              std::mt19937_64& rng);

template <typename T>
struct ForwardCache {
    /// activations[0] is the input, activations[i + 1] the output of layer i.
    std::vector<Tensor<T>> activations;
};

template <typename T>
struct Gradients {
    std::vector<Tensor<T>> weights;
    std::vector<Tensor<T>> bias;
    Tensor<T> input;
};

/// Plain sequential stack; backprop is hand-written per layer kind.
template <typename T>
class Network {
public:
    std::vector<Layer<T>> layers;

    Tensor<T> forward(const Tensor<T>& input) const;
    Tensor<T> forward(const Tensor<T>& input, ForwardCache<T>& cache) const;
    /// Forward pass without the final layer's activation.
    Tensor<T> forward_logits(const Tensor<T>& input) const;
    /// Parameter gradients for every layer; the input gradient is filled only
    /// when `input_grad` is set (training skips it).
    Gradients<T> backward(const ForwardCache<T>& cache, const Tensor<T>& output_grad,
                          bool input_grad = true) const;

    /// Glorot-uniform weights, zero biases.
    void initialize(std::uint64_t seed);
    std::size_t parameter_count() const;

    template <typename U>
    Network<U> cast() const {
        Network<U> out;
        for (const auto& l : layers) out.layers.push_back(l.template cast<U>());
        return out;
    }

    bool operator==(const Network& other) const;
};

}  // namespace blobsurrogate::nn
