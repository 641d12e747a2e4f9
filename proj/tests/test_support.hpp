#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fcgl/rng.hpp"
#include "fcgl/tensor.hpp"

namespace fcgl::testing {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

/// Central finite differences of a scalar function of several tensors.
/// Returns one gradient tensor per input.
inline std::vector<Tensor> finite_difference(const std::function<double(const std::vector<Tensor>&)>& f,
                                             std::vector<Tensor> inputs, double h = 1e-5) {
    std::vector<Tensor> grads;
    for (size_t p = 0; p < inputs.size(); ++p) {
        Tensor g(inputs[p].shape());
        for (int64_t i = 0; i < inputs[p].size(); ++i) {
            const double original = inputs[p][i];
            inputs[p][i] = original + h;
            const double up = f(inputs);
            inputs[p][i] = original - h;
            const double down = f(inputs);
            inputs[p][i] = original;
            g[i] = (up - down) / (2.0 * h);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

/// |a-b| relative to max(|a|, |b|, 1): relative for large magnitudes,
/// absolute below 1 where finite differences dominate the error.
inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

inline double max_relative_error(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    double worst = 0.0;
    for (size_t p = 0; p < a.size(); ++p)
        for (int64_t i = 0; i < a[p].size(); ++i) worst = std::max(worst, relative_error(a[p][i], b[p][i]));
    return worst;
}

}  // namespace fcgl::testing
