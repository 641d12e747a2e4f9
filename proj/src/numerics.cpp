#include "fcgl/numerics.hpp"

#include <cmath>
#include <stdexcept>

namespace fcgl {

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
    double sum_p = 0.0, sum_q = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0) throw std::invalid_argument("kl_divergence: negative entry");
        sum_p += p[i];
        sum_q += q[i];
    }
    if (std::abs(sum_p - 1.0) > 1e-6 || std::abs(sum_q - 1.0) > 1e-6)
        throw std::invalid_argument("kl_divergence: inputs must sum to 1");
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        const double qi = q[i] < 1e-12 ? 1e-12 : q[i];
        kl += p[i] * std::log(p[i] / qi);
    }
    return kl;
}

Tensor pairwise_euclidean(const Tensor& rows_a, const Tensor& rows_b) {
    if (rows_a.rank() != 2 || rows_b.rank() != 2 || rows_a.dim(1) != rows_b.dim(1))
        throw std::invalid_argument("pairwise_euclidean: column counts must agree");
    const int n = rows_a.dim(0), m = rows_b.dim(0), d = rows_a.dim(1);
    Tensor dist({n, m});
    for (int i = 0; i < n; ++i) {
        const double* ai = rows_a.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < m; ++j) {
            const double* bj = rows_b.data() + static_cast<size_t>(j) * d;
            double acc = 0.0;
            for (int k = 0; k < d; ++k) {
                const double diff = ai[k] - bj[k];
                acc += diff * diff;
            }
            dist.at(i, j) = std::sqrt(acc);
        }
    }
    return dist;
}

}  // namespace fcgl
