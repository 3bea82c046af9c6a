#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "hsml/ops.hpp"
#include "hsml/selftest.hpp"
#include "hsml/tensor.hpp"

namespace hsml::test {

using TD = Tensor<double>;
using Fn = std::function<TD(const std::vector<TD>&)>;

inline double max_abs(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return a.size() == b.size() ? m : INFINITY;
}

template <typename T>
double max_abs(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

/// Reduces any op output to a scalar with fixed random weights so that every
/// output element contributes to the checked gradient.
inline TD weighted_sum(const TD& out, std::uint64_t seed = 17) {
    std::mt19937_64 rng(seed);
    return sum(mul(out, random_tensor<double>(out.shape(), rng)));
}

/// Worst elementwise error between reverse-mode and central differences,
/// |g - g_fd| / max(|g|, |g_fd|, 1e-3): below 1e-4 means relative error
/// < 1e-4 or absolute error < 1e-7.
inline double gradcheck(const Fn& f, const std::vector<TD>& inputs, double h = 1e-5) {
    Tape<double> tape;
    std::vector<TD> watched;
    for (const auto& x : inputs) watched.push_back(tape.watch(x));
    tape.backward(f(watched));
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const TD g = tape.grad(watched[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            auto probe = [&](double delta) {
                std::vector<TD> xs = inputs;
                std::vector<double> v = xs[k].to_vector();
                v[i] += delta;
                xs[k] = TD(xs[k].shape(), v);
                return f(xs)[0];
            };
            const double fd = (probe(h) - probe(-h)) / (2.0 * h);
            const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-3});
            worst = std::max(worst, std::abs(fd - g[i]) / scale);
        }
    }
    return worst;
}

} // namespace hsml::test
