#pragma once

#include <optional>
#include <vector>

#include "fcgl/encoding.hpp"
#include "fcgl/gnn.hpp"
#include "fcgl/partition.hpp"

namespace fcgl {

struct ClientHyper {
    double alpha = 0.5;       // local/global embedding blend
    double beta = 0.5;        // new-task vs replay loss blend
    double phi = 0.5;         // trajectory decay
    double epsilon = 0.1;     // coverage radius factor
    int buffer_per_class = 1;

    void validate() const;
};

/// Replayed experience: features and label only, never topology.
struct BufferEntry {
    Tensor features;
    int label = 0;
    int source_task = 0;
};

struct ExperienceBuffer {
    std::vector<BufferEntry> entries;

    bool empty() const { return entries.empty(); }
    size_t size() const { return entries.size(); }
    Tensor feature_matrix() const;
    std::vector<int> labels() const;
};

/// Decayed cumulative label distribution over the full class space.
struct EvolutionTrajectory {
    std::vector<double> cumulative;
    int last_task = -1;
};

/// Parts of the pipeline a method variant switches off.
struct MethodFlags {
    bool replay = true;            // experience selection + replay loss
    bool packets = true;           // prototype gradients + trajectories
    bool transfer = true;          // server-side refinement
    bool local_embeddings_only = false;   // coverage on local embeddings alone
    bool cumulative_trajectory = true;    // false clamps the decay to zero
};

struct LocalUpdateResult {
    GnnParams params;
    double final_loss = 0.0;
    int train_node_count = 0;
    std::vector<PrototypeGradientPacket> packets;        // round 1 only
    std::optional<EvolutionTrajectory> trajectory;       // round 1 only
    int experience_nodes_added = 0;                      // round R only
};

/// Blend of hidden embeddings from the local and global parameter sets,
/// both evaluated without dropout.
Tensor local_global_embeddings(const TaskView& task, const ModelAdjacency& adj, const GnnParams& local_params,
                               const GnnParams& global_params, double alpha);

/// Per-node coverage counts: for each training node, the number of
/// same-class training nodes (itself included) closer than epsilon times
/// the node's mean same-class distance. Nodes outside the training set get
/// zero. A zero radius (singleton class or collapsed embeddings) counts 1.
std::vector<int> coverage_counts(const Tensor& embeddings, const std::vector<int>& labels,
                                 const std::vector<int>& train_rows, double epsilon);

/// Training nodes of the given class with the highest coverage, ties broken
/// toward the lower node index. Returns at most per_class nodes and warns
/// when the class has fewer.
std::vector<int> top_coverage_nodes(const std::vector<int>& coverage, const std::vector<int>& labels,
                                    const std::vector<int>& train_rows, int cls, int per_class);

/// phi-decayed cumulative label distribution; the per-task distribution is
/// the L1-normalized train-label histogram over all total_classes slots.
EvolutionTrajectory update_trajectory(const std::optional<EvolutionTrajectory>& previous, const TaskView& task,
                                      double phi, int total_classes);

/// beta * L_new + (1-beta) * L_old; the replay term predicts each buffer
/// node in isolation (identity adjacency). With an empty buffer the result
/// is beta * L_new with no replay term.
ad::Var combined_loss(ad::Tape& tape, const GnnConfig& config, const std::vector<ad::Var>& params,
                      const TaskView& task, const ModelAdjacency& adj, const ExperienceBuffer& buffer, double beta,
                      bool training, Rng& rng);

/// One client of the protocol: owns its task sequence, parameters,
/// experience buffer and trajectory. Distinct clients never share state, so
/// local updates of different clients may run on parallel workers.
class Client {
public:
    Client(int id, ClientDataset dataset, GnnConfig model_config, const EncodingNet* encoding_net,
           ClientHyper hyper, TrainHyper train, MethodFlags flags);

    /// One communication round: adopt the global parameters, train E epochs
    /// on the combined objective, then (round 1) emit prototype packets and
    /// the refreshed trajectory, and (round R) extend the experience buffer
    /// with maximum-coverage nodes.
    LocalUpdateResult local_update(const GnnParams& global_params, int task_index, int round, int total_rounds,
                                   Rng round_rng);

    const ClientDataset& dataset() const { return dataset_; }
    const GnnParams& params() const { return params_; }
    const ExperienceBuffer& buffer() const { return buffer_; }
    const std::optional<EvolutionTrajectory>& trajectory() const { return trajectory_; }
    const ModelAdjacency& task_adjacency(int task_index) const;
    int id() const { return id_; }

    std::vector<PrototypeGradientPacket> encode_task_prototypes(int task_index) const;

private:
    int id_;
    ClientDataset dataset_;
    GnnConfig model_config_;
    const EncodingNet* encoding_net_;
    ClientHyper hyper_;
    TrainHyper train_;
    MethodFlags flags_;
    GnnParams params_;
    ExperienceBuffer buffer_;
    std::optional<EvolutionTrajectory> trajectory_;
    std::vector<ModelAdjacency> adjacency_;
};

}  // namespace fcgl
