#pragma once

#include <optional>
#include <utility>
#include <vector>

namespace fcgl {

/// Lower-triangular accuracy tables A[i][j] (accuracy on task j after
/// finishing task i), one per client plus the sample-weighted combination.
struct AccuracyMatrix {
    int tasks = 0;
    std::vector<std::vector<std::vector<double>>> per_client;
    std::vector<std::vector<double>> combined;
};

/// (accuracy mean, forgetting mean) of a complete lower triangle. The
/// forgetting mean is absent for a single task.
std::pair<double, std::optional<double>> compute_metrics(const std::vector<std::vector<double>>& matrix);

}  // namespace fcgl
