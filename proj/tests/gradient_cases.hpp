#pragma once

// Gradient-check fixtures shared by the unit suite and the acceptance run.

#include "blobsurrogate/nn/gradcheck.hpp"
#include "blobsurrogate/nn/loss.hpp"
#include "blobsurrogate/nn/network.hpp"

#include <random>
#include <string>
#include <vector>

struct GradientCase {
    std::string name;
    blobsurrogate::nn::Network<double> net;
    blobsurrogate::nn::Tensor<double> input;
    blobsurrogate::nn::LossFn loss;
};

inline std::vector<GradientCase> gradient_cases() {
    using namespace blobsurrogate::nn;
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto fill = [&](Tensor<double>& t) {
        for (auto& x : t.data()) x = u(rng);
    };
    auto conv = [&](std::size_t in, std::size_t out, std::size_t k, Activation a, std::size_t s = 1) {
        auto l = Layer<double>::conv(in, out, k, a, s);
        fill(l.weights);
        fill(l.bias);
        return l;
    };
    auto dense = [&](std::size_t in, std::size_t out, Activation a) {
        auto l = Layer<double>::dense(in, out, a);
        fill(l.weights);
        fill(l.bias);
        return l;
    };
    auto input = [&](Shape s) {
        Tensor<double> t(std::move(s));
        fill(t);
        return t;
    };
    // Targets are drawn now so each loss closure is fixed.
    auto dice_on = [&](Shape s) {
        Tensor<double> t(std::move(s));
        for (auto& x : t.data()) x = unit(rng) < 0.3 ? unit(rng) : 0.0;
        return LossFn([t](const Tensor<double>& p) { return dice_loss(p, t); });
    };
    auto bce_on = [&](Shape s) {
        Tensor<double> t(std::move(s));
        for (auto& x : t.data()) x = unit(rng) < 0.5 ? 1.0 : 0.0;
        return LossFn([t](const Tensor<double>& p) { return bce_loss(p, t); });
    };
    // Plain sum of squares for layers without a bounded output.
    const LossFn half_sq = [](const Tensor<double>& p) {
        LossResult<double> r;
        r.grad = p;
        for (double x : p.data()) r.value += 0.5 * x * x;
        return r;
    };

    std::vector<GradientCase> cases;
    auto add = [&](std::string name, std::vector<Layer<double>> layers, Shape in, LossFn loss) {
        Network<double> net;
        net.layers = std::move(layers);
        cases.push_back({std::move(name), std::move(net), input(std::move(in)), std::move(loss)});
    };

    add("conv k3 sigmoid + dice", {conv(1, 1, 3, Activation::Sigmoid)}, {1, 1, 5, 5, 5}, dice_on({1, 1, 5, 5, 5}));
    add("conv k1 linear", {conv(2, 3, 1, Activation::None)}, {2, 2, 3, 4, 2}, half_sq);
    add("conv k3 relu", {conv(2, 2, 3, Activation::Relu)}, {1, 2, 4, 3, 5}, half_sq);
    add("conv k5 linear", {conv(1, 2, 5, Activation::None)}, {1, 1, 4, 6, 3}, half_sq);
    add("conv k3 stride 2", {conv(2, 3, 3, Activation::Relu, 2)}, {2, 2, 5, 4, 6}, half_sq);
    add("conv wide x", {conv(1, 2, 3, Activation::Relu), conv(2, 1, 3, Activation::Sigmoid)}, {1, 1, 3, 3, 70},
        dice_on({1, 1, 3, 3, 70}));
    add("cdcnn-like stack + dice",
        {conv(1, 3, 3, Activation::Relu), conv(3, 3, 3, Activation::Relu), conv(3, 1, 3, Activation::Sigmoid)},
        {1, 1, 6, 6, 6}, dice_on({1, 1, 6, 6, 6}));
    add("dense sigmoid + bce", {dense(8, 1, Activation::Sigmoid)}, {4, 8}, bce_on({4, 1}));
    add("dense relu", {dense(6, 4, Activation::Relu)}, {3, 2, 3}, half_sq);
    add("untrained 3-layer stack + bce",
        {conv(1, 2, 3, Activation::Relu, 2), conv(2, 4, 3, Activation::Relu, 2), dense(4 * 2 * 2 * 2, 1, Activation::Sigmoid)},
        {3, 1, 8, 8, 8}, bce_on({3, 1}));
    add("cropnet-like + bce",
        {conv(1, 2, 3, Activation::Relu, 2), conv(2, 3, 3, Activation::Relu, 2), conv(3, 4, 3, Activation::Relu, 2),
         dense(4, 1, Activation::Sigmoid)},
        {2, 1, 6, 7, 5}, bce_on({2, 1}));
    add("batch 3 conv + dice", {conv(2, 1, 3, Activation::Sigmoid)}, {3, 2, 3, 4, 4}, dice_on({3, 1, 3, 4, 4}));
    return cases;
}
