#pragma once

#include "blobsurrogate/nn/loss.hpp"
#include "blobsurrogate/nn/network.hpp"

#include <cstdint>
#include <functional>

namespace blobsurrogate::nn {

/// Maps the network output to a loss value and its gradient.
using LossFn = std::function<LossResult<double>(const Tensor<double>& output)>;

struct GradCheckOptions {
    std::size_t samples_per_tensor = 24;
    double step = 1e-5;
    /// Denominator floor of the relative error, so that gradients at the
    /// level of finite-difference noise do not dominate.
    double floor = 1e-5;
    bool include_input = true;
    std::uint64_t seed = 1;
    /// Multiplies the analytic gradients before comparison; anything other
    /// than 1 is only useful for testing the checker itself.
    double analytic_scale = 1.0;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    /// Entries skipped because the perturbation crossed a ReLU kink.
    std::size_t skipped = 0;
};

/// Central differences on a random subsample of every parameter tensor (and
/// optionally the input) against the analytic backward pass.
GradCheckReport check_gradients(const Network<double>& net, const Tensor<double>& input,
                                const LossFn& loss, const GradCheckOptions& options = {});

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

}  // namespace blobsurrogate::nn
