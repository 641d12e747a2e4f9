#pragma once

#include <optional>
#include <vector>

#include "fcgl/client.hpp"
#include "fcgl/encoding.hpp"
#include "fcgl/gnn.hpp"

namespace fcgl {

struct ClientUpdate {
    int client_id = 0;
    GnnParams params;
    int train_node_count = 0;   // aggregation weight, >= 1
    std::vector<PrototypeGradientPacket> packets;
    std::optional<EvolutionTrajectory> trajectory;
};

/// Sample-count weighted parameter average, summed in ascending client-id
/// order for bit reproducibility.
GnnParams aggregate(const std::vector<ClientUpdate>& updates);

/// Class recovery from the sign structure of a prototype gradient: the
/// cross-entropy bias gradient of the final layer is minimized at the true
/// class. Ties resolve to the lowest index.
int infer_class(const PrototypeGradientPacket& packet);

struct ReconConfig {
    enum class Optimizer { adam, lbfgs };
    int iterations = 300;
    Optimizer optimizer = Optimizer::adam;
    double tolerance = 1e-14;   // absolute early-exit threshold on the matching loss
    double adam_lr = 0.1;
    double lbfgs_step = 1.0;

    void validate() const;
};

struct ReconResult {
    Tensor pseudo_prototype;
    int inferred_class = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// Gradient-matching reconstruction: optimize a Gaussian-initialized vector
/// until its encoding gradients match the packet. Returns the best iterate.
/// A non-finite matching loss triggers one restart from a fresh draw.
ReconResult reconstruct(const PrototypeGradientPacket& packet, const EncodingNet& net, const ReconConfig& config,
                        Rng rng);

struct GlobalBufferRow {
    Tensor features;
    int label = 0;
    int client_id = 0;
    int task_index = 0;
};

struct GlobalBuffer {
    std::vector<GlobalBufferRow> rows;

    bool empty() const { return rows.empty(); }
    size_t size() const { return rows.size(); }
    Tensor feature_matrix() const;
    std::vector<int> labels() const;
};

/// Row-wise top-k of sigmoid(X X^T): neighbor index lists per buffer row.
/// Self-selection is allowed unless exclude_self is set; ties resolve to the
/// lower index; k is capped (with a warning) at the row count.
std::vector<std::vector<int>> buffer_knn(const GlobalBuffer& buffer, int k, bool exclude_self = false);

/// w[k][c] = q_k(c) / sum_j q_j(c); zero where the denominator vanishes.
std::vector<std::vector<double>> transfer_class_weights(const std::vector<EvolutionTrajectory>& trajectories,
                                                        int num_classes);

struct TransferResult {
    GnnParams params;
    std::vector<double> loss_curve;   // one entry per epoch
};

/// Trajectory-weighted distillation on the buffer graph: for each epoch the
/// global parameters descend the summed KL from the global predictions to
/// each frozen local teacher, each buffer row weighted by the owning
/// teacher's share of that row's class.
TransferResult knowledge_transfer(const GnnParams& global_params, const std::vector<GnnParams>& local_params,
                                  const std::vector<EvolutionTrajectory>& trajectories, const GlobalBuffer& buffer,
                                  const std::vector<std::vector<int>>& knn, int epochs, double lr);

}  // namespace fcgl
