#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "fcgl/autodiff.hpp"
#include "fcgl/partition.hpp"
#include "fcgl/rng.hpp"
#include "fcgl/tensor.hpp"

namespace fcgl {

enum class GnnVariant { gat, gcn };

struct GnnConfig {
    GnnVariant variant = GnnVariant::gat;
    int in_dim = 0;
    int hidden_dim = 64;
    int num_classes = 0;
    double dropout = 0.5;
    double leaky_relu_slope = 0.2;

    bool operator==(const GnnConfig&) const = default;
};

/// Model parameters: two message-passing layers plus a linear classifier
/// head mapping the hidden embedding to class logits. Tensor order is fixed
/// so flatten/unflatten round-trips exactly (aggregation relies on it).
struct GnnParams {
    GnnConfig config;
    std::vector<Tensor> tensors;

    static GnnParams init(const GnnConfig& config, Rng rng);
    std::vector<double> flatten() const;
    static GnnParams unflatten(const GnnConfig& config, const std::vector<double>& flat);
    int64_t parameter_count() const;
};

/// Message-passing structure prepared once per task graph: directed edges
/// including self-loops (deduplicated), plus the normalized adjacency when
/// the convolutional variant is in use.
struct ModelAdjacency {
    int num_nodes = 0;
    std::vector<int> src, dst;
    ad::SparseMatrix gcn_norm;
};

/// Undirected task edges -> both directions + self-loops.
ModelAdjacency prepare_adjacency(int num_nodes, const std::vector<std::pair<int, int>>& undirected_edges,
                                 GnnVariant variant);
/// Directed edges (src -> dst) + self-loops; used for the server buffer graph.
ModelAdjacency prepare_adjacency_directed(int num_nodes, const std::vector<std::pair<int, int>>& directed_edges,
                                          GnnVariant variant);
/// No edges at all: every node predicted in isolation (buffer replay).
ModelAdjacency identity_adjacency(int num_nodes, GnnVariant variant);

/// Per-node attention mass per layer, collected for diagnostics/tests.
struct GatIntrospection {
    std::vector<std::vector<double>> attention_row_sums;
};

struct ForwardResult {
    ad::Var hidden;   // post-activation output of the last message-passing layer
    ad::Var logits;   // classifier head output
};

/// Forward pass on a tape. Parameters enter as tape variables so callers
/// choose which of them receive gradients. Dropout is active only in
/// training mode and draws from the supplied stream.
ForwardResult gnn_forward(ad::Tape& tape, const GnnConfig& config, const std::vector<ad::Var>& params,
                          ad::Var features, const ModelAdjacency& adj, bool training, Rng* dropout_rng,
                          GatIntrospection* introspect = nullptr);

/// Convenience: eval-mode forward of concrete parameters on a fresh tape.
std::pair<Tensor, Tensor> gnn_eval(const GnnParams& params, const Tensor& features, const ModelAdjacency& adj,
                                   GatIntrospection* introspect = nullptr);

struct TrainHyper {
    double lr = 1e-2;
    double weight_decay = 5e-4;
    double dropout = 0.5;
    int epochs = 3;
};

/// Builds the training objective for one epoch on the given tape. The
/// parameter variables are leaves with gradients enabled.
using LossBuilder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&, Rng&)>;

/// Full-batch Adam for hyper.epochs epochs against the provided objective.
/// Returns the updated parameters and the final epoch's loss.
std::pair<GnnParams, double> train_epochs(GnnParams params, const LossBuilder& loss, const TrainHyper& hyper,
                                          Rng rng);

/// Mean softmax cross-entropy of the masked rows (see masked_cross_entropy).
ad::Var supervised_loss(ad::Tape& tape, ad::Var logits, const std::vector<int>& labels,
                        const std::vector<int>& rows);

/// Argmax accuracy over the masked rows of a task; ties resolve to the
/// lowest class index.
double evaluate(const GnnParams& params, const TaskView& task, const ModelAdjacency& adj,
                const std::vector<int>& rows);

}  // namespace fcgl
