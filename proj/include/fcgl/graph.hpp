#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fcgl/tensor.hpp"

namespace fcgl {

/// Undirected attributed graph. Edges are stored once with u < v; no
/// self-loops are kept (models add them at propagation time). Label -1
/// marks an unlabeled node.
struct Graph {
    int num_nodes = 0;
    Tensor features;                          // N x F
    std::vector<int> labels;                  // length N, -1 allowed
    std::vector<std::pair<int, int>> edges;   // canonical u < v, unique

    int feature_dim() const { return features.rank() == 2 ? features.dim(1) : 0; }
    int num_classes() const;
    std::vector<int> degrees() const;
    void validate() const;
};

/// Stochastic-block-model generator settings. Features are per-class
/// Gaussians whose means sit class_mean_separation apart in expectation.
struct SbmSpec {
    std::vector<std::pair<int, int>> blocks;  // (node count, class label)
    double intra_block_edge_prob = 0.3;
    double inter_block_edge_prob = 0.01;
    int feature_dim = 16;
    double class_mean_separation = 1.0;
    double feature_noise_std = 0.5;
    uint64_t seed = 0;

    void validate() const;
};

Graph load_graph(const std::string& path);
void save_graph(const Graph& g, const std::string& path);

Graph generate_sbm(const SbmSpec& spec);

/// Subgraph induced by the given node set. Second result maps old node id
/// to new id (-1 when dropped).
std::pair<Graph, std::vector<int>> induced_subgraph(const Graph& g, const std::vector<int>& nodes);

/// Dense symmetric normalization D^-1/2 (A+I) D^-1/2.
Tensor normalized_adjacency(const Graph& g);

}  // namespace fcgl
