#include "fcgl/metrics.hpp"

#include <stdexcept>

namespace fcgl {

std::pair<double, std::optional<double>> compute_metrics(const std::vector<std::vector<double>>& matrix) {
    const int tasks = static_cast<int>(matrix.size());
    if (tasks == 0) throw std::invalid_argument("compute_metrics: empty matrix");
    for (int i = 0; i < tasks; ++i)
        if (static_cast<int>(matrix[static_cast<size_t>(i)].size()) != i + 1)
            throw std::invalid_argument("compute_metrics: incomplete lower triangle at row " + std::to_string(i));
    double am = 0.0;
    for (double a : matrix.back()) am += a;
    am /= static_cast<double>(tasks);
    if (tasks == 1) return {am, std::nullopt};
    double fm = 0.0;
    for (int i = 0; i + 1 < tasks; ++i)
        fm += matrix[static_cast<size_t>(i)][static_cast<size_t>(i)] -
              matrix.back()[static_cast<size_t>(i)];
    fm /= static_cast<double>(tasks - 1);
    return {am, fm};
}

}  // namespace fcgl
