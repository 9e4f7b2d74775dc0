#include "blobsurrogate/nn/adam.hpp"

#include "blobsurrogate/error.hpp"

#include <cmath>

namespace blobsurrogate::nn {

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
               AdamState<T>& state) {
    if (params.size() != grads.size()) throw ShapeMismatch("adam: parameter/gradient count differs");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i]->shape()) {
            throw ShapeMismatch("adam: gradient " + std::to_string(i) + " has shape " +
                                shape_string(grads[i]->shape()) + ", parameter has " +
                                shape_string(params[i]->shape()));
        }
    }
    if (state.m.empty()) {
        for (const auto* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    if (state.m.size() != params.size()) throw ShapeMismatch("adam: state was built for another model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].shape() != params[i]->shape()) {
            throw ShapeMismatch("adam: moment shape differs from parameter " + std::to_string(i));
        }
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        T* p = params[i]->ptr();
        const T* g = grads[i]->ptr();
        T* m = state.m[i].ptr();
        T* v = state.v[i].ptr();
        for (std::size_t j = 0; j < params[i]->size(); ++j) {
            const double gj = g[j];
            const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double update = state.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + state.epsilon);
            p[j] = static_cast<T>(p[j] - update);
        }
    }
}

template <typename T>
void adam_step(Network<T>& net, const Gradients<T>& grads, AdamState<T>& state) {
    if (grads.weights.size() != net.layers.size() || grads.bias.size() != net.layers.size()) {
        throw ShapeMismatch("adam: gradients do not match the network");
    }
    std::vector<Tensor<T>*> params;
    std::vector<const Tensor<T>*> gs;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        params.push_back(&net.layers[i].weights);
        params.push_back(&net.layers[i].bias);
        gs.push_back(&grads.weights[i]);
        gs.push_back(&grads.bias[i]);
    }
    adam_step(params, gs, state);
}

template void adam_step(const std::vector<Tensor<float>*>&, const std::vector<const Tensor<float>*>&,
                        AdamState<float>&);
template void adam_step(const std::vector<Tensor<double>*>&,
                        const std::vector<const Tensor<double>*>&, AdamState<double>&);
template void adam_step(Network<float>&, const Gradients<float>&, AdamState<float>&);
template void adam_step(Network<double>&, const Gradients<double>&, AdamState<double>&);

}  // namespace blobsurrogate::nn
