#include "blobsurrogate/nn/gradcheck.hpp"

#include "blobsurrogate/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace blobsurrogate::nn {

namespace {

using Pattern = std::vector<bool>;

// Sign pattern of every ReLU output; a change means the finite difference
// straddles a non-differentiable point.
Pattern relu_pattern(const Network<double>& net, const ForwardCache<double>& cache) {
    Pattern p;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (net.layers[i].activation != Activation::Relu) continue;
        for (double v : cache.activations[i + 1].data()) p.push_back(v > 0.0);
    }
    return p;
}

struct Probe {
    double loss;
    Pattern pattern;
};

Probe probe(const Network<double>& net, const Tensor<double>& input, const LossFn& loss) {
    ForwardCache<double> cache;
    const Tensor<double> out = net.forward(input, cache);
    return {loss(out).value, relu_pattern(net, cache)};
}

std::vector<std::size_t> subsample(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (k < n) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(k);
    }
    return idx;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

GradCheckReport check_gradients(const Network<double>& net, const Tensor<double>& input,
                                const LossFn& loss, const GradCheckOptions& options) {
    if (!(options.step > 0.0) || !(options.floor > 0.0)) {
        throw InvalidArgument("gradient check step and floor must be positive");
    }
    ForwardCache<double> cache;
    const Tensor<double> out = net.forward(input, cache);
    const LossResult<double> base = loss(out);
    if (base.grad.shape() != out.shape()) throw ShapeMismatch("loss gradient does not match output");
    const Gradients<double> grads = net.backward(cache, base.grad, options.include_input);
    const Pattern base_pattern = relu_pattern(net, cache);

    std::mt19937_64 rng(options.seed);
    GradCheckReport report;
    Network<double> work = net;
    Tensor<double> x = input;

    auto check_entry = [&](double& slot, double analytic) {
        const double saved = slot;
        slot = saved + options.step;
        const Probe plus = probe(work, x, loss);
        slot = saved - options.step;
        const Probe minus = probe(work, x, loss);
        slot = saved;
        if (plus.pattern != base_pattern || minus.pattern != base_pattern) {
            ++report.skipped;
            return;
        }
        const double numeric = (plus.loss - minus.loss) / (2.0 * options.step);
        const double err = relative_error(analytic * options.analytic_scale, numeric, options.floor);
        report.max_relative_error = std::max(report.max_relative_error, err);
        ++report.checked;
    };

    for (std::size_t l = 0; l < work.layers.size(); ++l) {
        auto& layer = work.layers[l];
        for (std::size_t i : subsample(layer.weights.size(), options.samples_per_tensor, rng)) {
            check_entry(layer.weights[i], grads.weights[l][i]);
        }
        for (std::size_t i : subsample(layer.bias.size(), options.samples_per_tensor, rng)) {
            check_entry(layer.bias[i], grads.bias[l][i]);
        }
    }
    if (options.include_input) {
        for (std::size_t i : subsample(x.size(), options.samples_per_tensor, rng)) {
            check_entry(x[i], grads.input[i]);
        }
    }
    return report;
}

}  // namespace blobsurrogate::nn
