#pragma once

#include <vector>

#include "fcgl/tensor.hpp"

namespace fcgl {

/// KL(p || q) for probability vectors. Entries of q are floored at 1e-12
/// before division; 0 * log(0/q) contributes zero.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

/// D[i][j] = Euclidean distance between row i of a and row j of b.
Tensor pairwise_euclidean(const Tensor& rows_a, const Tensor& rows_b);

}  // namespace fcgl
