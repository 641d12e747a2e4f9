#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fcgl/config.hpp"
#include "fcgl/metrics.hpp"
#include "json.hpp"

namespace fcgl {

/// JSON-lines sink: one record per protocol message or summary event.
struct RunLog {
    std::vector<std::string> lines;

    void add(const nlohmann::json& record) { lines.push_back(record.dump()); }
    void save(const std::string& path) const;
};

struct RoundPoint {
    int task = 0;    // 1-based
    int round = 0;   // 1-based
    double accuracy = 0.0;   // combined test accuracy over the tasks seen so far
};

struct MetricsReport {
    std::string method;
    std::string dataset;
    uint64_t seed = 0;
    double am = 0.0;
    std::optional<double> fm;
    std::vector<RoundPoint> curve;
    AccuracyMatrix matrix;
    std::vector<std::vector<int>> test_counts;   // [client][task]
    nlohmann::json config_echo;
};

/// Zero out / drop / demote the configured fractions of feature entries,
/// intra-task edges and train labels. Client participation is handled per
/// round inside run_experiment.
void apply_sparsity(std::vector<ClientDataset>& datasets, double feature_mask_rate, double edge_drop_rate,
                    double label_mask_rate, Rng rng);

/// Everything a run fixes before the first communication round. Identical
/// across methods for a given (config-minus-method, seed), which is what
/// makes method comparisons attributable to the method alone.
struct ExperimentSetup {
    Graph graph;
    std::vector<ClientDataset> datasets;
    GnnConfig model_config;
    GnnParams initial_params;
    EncodingNet encoding;
};

ExperimentSetup build_experiment(const ExperimentConfig& config, uint64_t seed);

/// Execute the full task -> round -> {clients, server} protocol for one
/// seed. Deterministic given (config, seed), including under workers > 1.
MetricsReport run_experiment(const ExperimentConfig& config, uint64_t seed, RunLog* log = nullptr);

/// Substream used for one client's local update; exposed so tests can
/// replay the exact training a run performed.
Rng client_round_stream(uint64_t seed, int client, int task_index, int round);

std::string results_csv(const std::vector<MetricsReport>& reports);
std::string summary_csv(const std::vector<MetricsReport>& reports);
void export_reports(const std::vector<MetricsReport>& reports, const std::string& out_dir);

std::string format_double(double v);

}  // namespace fcgl
