#include "blobsurrogate/nn/gradcheck.hpp"
#include "blobsurrogate/nn/loss.hpp"
#include "blobsurrogate/nn/network.hpp"

#include "gradient_cases.hpp"

#include <catch_amalgamated.hpp>

using namespace blobsurrogate::nn;

TEST_CASE("every gradient case passes central differences below 1e-6") {
    const auto cases = gradient_cases();
    REQUIRE(cases.size() >= 10);
    for (const auto& c : cases) {
        INFO(c.name);
        const auto report = check_gradients(c.net, c.input, c.loss);
        CHECK(report.checked > 0);
        CHECK(report.max_relative_error < 1e-6);
    }
}

TEST_CASE("the checker catches a corrupted gradient") {
    const auto cases = gradient_cases();
    GradCheckOptions opts;
    opts.analytic_scale = 1.01;
    const auto report = check_gradients(cases.front().net, cases.front().input, cases.front().loss, opts);
    CHECK(report.max_relative_error > 1e-3);
}

TEST_CASE("relative error uses the floor") {
    CHECK(relative_error(1.0, 1.0, 1e-5) == 0.0);
    CHECK(relative_error(2.0, 1.0, 1e-5) == 0.5);
    CHECK(relative_error(1e-9, 0.0, 1e-5) == Catch::Approx(1e-4));
}

TEST_CASE("loss gradients match finite differences directly") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    Tensor<double> p({3, 1, 2, 3, 2}), t({3, 1, 2, 3, 2});
    for (auto& x : p.data()) x = u(rng);
    for (auto& x : t.data()) x = u(rng) > 0.5 ? 1.0 : 0.0;
    for (int which = 0; which < 2; ++which) {
        auto f = [&](const Tensor<double>& q) { return which == 0 ? dice_loss(q, t) : bce_loss(q, t); };
        const auto analytic = f(p).grad;
        double worst = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            auto a = p, b = p;
            a[i] += 1e-5;
            b[i] -= 1e-5;
            const double num = (f(a).value - f(b).value) / 2e-5;
            worst = std::max(worst, relative_error(analytic[i], num, 1e-5));
        }
        CHECK(worst < 1e-6);
    }
}
