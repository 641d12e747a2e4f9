#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fcgl/graph.hpp"

namespace fcgl {

struct CommunityAssignment {
    std::vector<int> community;   // dense ids, one per node
    int num_communities = 0;
    double modularity = 0.0;
};

/// One class-incremental task of one client: a self-contained subgraph over
/// the task's classes with stratified train/val/test masks.
struct TaskView {
    int task_index = 0;                       // 0-based
    std::vector<int> class_set;               // class ids, in the client's learning order
    std::vector<int> client_nodes;            // ids into the client subgraph (audit)
    Tensor features;                          // n_t x F, row i = task-local node i
    std::vector<int> labels;                  // task-local, -1 for unlabeled
    std::vector<std::pair<int, int>> edges;   // intra-task only, u < v, task-local ids
    std::vector<uint8_t> train_mask, val_mask, test_mask;
    std::map<int, int> cumulative_position;   // class id -> slot in the client's cumulative order

    int num_nodes() const { return static_cast<int>(labels.size()); }
    std::vector<int> mask_rows(const std::vector<uint8_t>& mask) const;
    std::vector<int> train_rows() const { return mask_rows(train_mask); }
    std::vector<int> val_rows() const { return mask_rows(val_mask); }
    std::vector<int> test_rows() const { return mask_rows(test_mask); }
};

struct ClientDataset {
    int client_id = 0;
    std::vector<TaskView> tasks;
    int total_classes = 0;   // c * M
};

/// Class selection order for task splitting: either the client's local label
/// frequencies (descending, ties by class id) or an explicit permutation.
struct ClassOrder {
    bool by_frequency = true;
    std::vector<int> explicit_order;   // used when by_frequency == false

    static ClassOrder frequency() { return ClassOrder{}; }
    static ClassOrder fixed(std::vector<int> order) { return ClassOrder{false, std::move(order)}; }
};

/// Greedy modularity optimization (node sweeps + community aggregation).
/// Node visit order is shuffled once per level from the seed; iteration
/// stops once a sweep gains less than 1e-7 modularity.
CommunityAssignment louvain(const Graph& g, uint64_t seed);

/// Modularity of an assignment, recomputed from scratch on the simple graph.
double modularity(const Graph& g, const std::vector<int>& community);

/// Communities sorted by size (descending, ties by id) and assigned greedily
/// to the currently smallest client. Returns K node sets partitioning the graph.
std::vector<std::vector<int>> assign_clients(const CommunityAssignment& assignment, const Graph& g, int clients);

/// Split a client subgraph into M class-incremental tasks of c classes each.
/// Surplus-class nodes are dropped; inter-task edges are dropped.
ClientDataset split_tasks(const Graph& client_graph, int classes_per_task, int num_tasks, const ClassOrder& order,
                          uint64_t seed, int client_id = 0);

/// Stratified per-class train/val/test masks. Within each class, labeled
/// nodes are shuffled by seed and cut at the ratio boundaries (floor for
/// train, then val, remainder test); every class with >= 3 labeled nodes
/// contributes at least one train node.
void split_train_val_test(TaskView& task, double train_ratio, double val_ratio, double test_ratio, uint64_t seed);

}  // namespace fcgl
