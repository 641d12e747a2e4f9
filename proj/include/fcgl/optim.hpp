#pragma once

#include <functional>
#include <vector>

#include "fcgl/tensor.hpp"

namespace fcgl {

/// Adam moment accumulators for a fixed parameter set.
struct AdamState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_params(const std::vector<Tensor>& params);
};

/// One Adam update. Weight decay is added to the gradient as
/// grad + weight_decay * param before the moment updates.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               double weight_decay);

/// Limited-memory BFGS with Armijo backtracking on a single tensor.
/// value_and_grad fills grad (same shape as x) and returns the objective.
/// Returns the best objective seen; x holds the best iterate.
double lbfgs_minimize(const std::function<double(const Tensor&, Tensor&)>& value_and_grad, Tensor& x,
                      int max_iterations, double initial_step = 1.0, int history = 10);

}  // namespace fcgl
