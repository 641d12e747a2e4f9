#include "fcgl/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "fcgl/rng.hpp"
#include "json.hpp"

namespace fcgl {

namespace {

std::string double_to_string(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

}  // namespace

int Graph::num_classes() const {
    int mx = -1;
    for (int l : labels) mx = std::max(mx, l);
    return mx + 1;
}

std::vector<int> Graph::degrees() const {
    std::vector<int> deg(static_cast<size_t>(num_nodes), 0);
    for (auto [u, v] : edges) {
        deg[static_cast<size_t>(u)]++;
        deg[static_cast<size_t>(v)]++;
    }
    return deg;
}

void Graph::validate() const {
    if (features.rank() != 2 || features.dim(0) != num_nodes)
        throw std::invalid_argument("graph: feature matrix must have one row per node");
    if (static_cast<int>(labels.size()) != num_nodes)
        throw std::invalid_argument("graph: one label per node required");
    for (int l : labels)
        if (l < -1) throw std::invalid_argument("graph: labels must be >= -1");
    std::set<std::pair<int, int>> seen;
    for (auto [u, v] : edges) {
        if (u < 0 || u >= num_nodes || v < 0 || v >= num_nodes)
            throw std::invalid_argument("graph: edge endpoint out of range");
        if (u >= v) throw std::invalid_argument("graph: edges must be stored with u < v");
        if (!seen.insert({u, v}).second) throw std::invalid_argument("graph: duplicate edge");
    }
    features.require_finite("graph features");
}

Graph load_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_graph: cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_graph: " + path + ": " + e.what());
    }
    if (!doc.is_object()) throw std::runtime_error("load_graph: top-level object expected");
    for (const char* key : {"num_nodes", "features", "labels", "edges"})
        if (!doc.contains(key)) throw std::runtime_error(std::string("load_graph: missing key '") + key + "'");

    Graph g;
    g.num_nodes = doc["num_nodes"].get<int>();
    if (g.num_nodes <= 0) throw std::runtime_error("load_graph: num_nodes must be positive");

    const auto& feats = doc["features"];
    if (!feats.is_array() || static_cast<int>(feats.size()) != g.num_nodes)
        throw std::runtime_error("load_graph: 'features' must hold one row per node");
    const int f_dim = feats.empty() ? 0 : static_cast<int>(feats[0].size());
    if (f_dim <= 0) throw std::runtime_error("load_graph: feature rows must be non-empty");
    g.features = Tensor({g.num_nodes, f_dim});
    for (int i = 0; i < g.num_nodes; ++i) {
        const auto& row = feats[static_cast<size_t>(i)];
        if (!row.is_array() || static_cast<int>(row.size()) != f_dim)
            throw std::runtime_error("load_graph: features[" + std::to_string(i) + "]: expected " +
                                     std::to_string(f_dim) + " values, got " + std::to_string(row.size()));
        for (int j = 0; j < f_dim; ++j) {
            const double v = row[static_cast<size_t>(j)].get<double>();
            if (!std::isfinite(v))
                throw std::runtime_error("load_graph: features[" + std::to_string(i) + "][" + std::to_string(j) +
                                         "] is not finite");
            g.features.at(i, j) = v;
        }
    }

    const auto& labels = doc["labels"];
    if (!labels.is_array() || static_cast<int>(labels.size()) != g.num_nodes)
        throw std::runtime_error("load_graph: 'labels' must hold one entry per node");
    g.labels.resize(static_cast<size_t>(g.num_nodes));
    for (int i = 0; i < g.num_nodes; ++i) {
        const int l = labels[static_cast<size_t>(i)].get<int>();
        if (l < -1) throw std::runtime_error("load_graph: labels[" + std::to_string(i) + "] must be >= -1");
        g.labels[static_cast<size_t>(i)] = l;
    }

    const auto& edges = doc["edges"];
    if (!edges.is_array()) throw std::runtime_error("load_graph: 'edges' must be an array");
    std::set<std::pair<int, int>> unique_edges;
    for (size_t e = 0; e < edges.size(); ++e) {
        const auto& pair = edges[e];
        if (!pair.is_array() || pair.size() != 2)
            throw std::runtime_error("load_graph: edges[" + std::to_string(e) + "]: expected [u,v]");
        int u = pair[0].get<int>();
        int v = pair[1].get<int>();
        if (u < 0 || u >= g.num_nodes || v < 0 || v >= g.num_nodes)
            throw std::runtime_error("load_graph: edges[" + std::to_string(e) + "]: endpoint out of range [0," +
                                     std::to_string(g.num_nodes) + ")");
        if (u == v) continue;  // self-loops are added at model time, never stored
        if (u > v) std::swap(u, v);
        unique_edges.insert({u, v});
    }
    g.edges.assign(unique_edges.begin(), unique_edges.end());
    g.validate();
    return g;
}

void save_graph(const Graph& g, const std::string& path) {
    g.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_graph: cannot open " + path + " for writing");
    out << "{\n\"num_nodes\": " << g.num_nodes << ",\n\"features\": [";
    for (int i = 0; i < g.num_nodes; ++i) {
        out << (i ? ",\n" : "\n") << "[";
        for (int j = 0; j < g.feature_dim(); ++j) out << (j ? "," : "") << double_to_string(g.features.at(i, j));
        out << "]";
    }
    out << "\n],\n\"labels\": [";
    for (int i = 0; i < g.num_nodes; ++i) out << (i ? "," : "") << g.labels[static_cast<size_t>(i)];
    out << "],\n\"edges\": [";
    for (size_t e = 0; e < g.edges.size(); ++e)
        out << (e ? "," : "") << "[" << g.edges[e].first << "," << g.edges[e].second << "]";
    out << "]\n}\n";
    if (!out) throw std::runtime_error("save_graph: write to " + path + " failed");
}

void SbmSpec::validate() const {
    if (blocks.size() < 2) throw std::invalid_argument("sbm: at least 2 blocks required");
    for (auto [count, label] : blocks) {
        if (count <= 0) throw std::invalid_argument("sbm: block node counts must be positive");
        if (label < 0) throw std::invalid_argument("sbm: block class labels must be nonnegative");
    }
    if (intra_block_edge_prob < 0.0 || intra_block_edge_prob > 1.0 || inter_block_edge_prob < 0.0 ||
        inter_block_edge_prob > 1.0)
        throw std::invalid_argument("sbm: edge probabilities must lie in [0,1]");
    if (feature_dim <= 0) throw std::invalid_argument("sbm: feature_dim must be positive");
    if (class_mean_separation <= 0.0) throw std::invalid_argument("sbm: class_mean_separation must be positive");
    if (feature_noise_std <= 0.0) throw std::invalid_argument("sbm: feature_noise_std must be positive");
}

Graph generate_sbm(const SbmSpec& spec) {
    spec.validate();
    Graph g;
    std::vector<int> block_of;
    for (size_t b = 0; b < spec.blocks.size(); ++b) {
        for (int i = 0; i < spec.blocks[b].first; ++i) {
            g.labels.push_back(spec.blocks[b].second);
            block_of.push_back(static_cast<int>(b));
        }
    }
    g.num_nodes = static_cast<int>(g.labels.size());

    Rng root(spec.seed);
    int max_label = 0;
    for (auto [count, label] : spec.blocks) max_label = std::max(max_label, label);

    // Class means share a common offset direction and sit pairwise
    // class_mean_separation apart: one axis per class (exact) while classes
    // fit into the feature dimensions, random unit directions (separation
    // in expectation) otherwise.
    std::vector<std::vector<double>> means(static_cast<size_t>(max_label) + 1,
                                           std::vector<double>(static_cast<size_t>(spec.feature_dim), 0.0));
    const double offset = spec.class_mean_separation / std::sqrt(static_cast<double>(spec.feature_dim));
    for (int c = 0; c <= max_label; ++c) {
        for (int j = 0; j < spec.feature_dim; ++j) means[static_cast<size_t>(c)][static_cast<size_t>(j)] = offset;
        if (max_label < spec.feature_dim) {
            means[static_cast<size_t>(c)][static_cast<size_t>(c)] +=
                spec.class_mean_separation / std::sqrt(2.0);
            continue;
        }
        Rng mr = root.child("class-mean", static_cast<uint64_t>(c));
        std::vector<double> direction(static_cast<size_t>(spec.feature_dim), 0.0);
        double norm = 0.0;
        for (int j = 0; j < spec.feature_dim; ++j) {
            direction[static_cast<size_t>(j)] = mr.normal();
            norm += direction[static_cast<size_t>(j)] * direction[static_cast<size_t>(j)];
        }
        norm = std::sqrt(std::max(norm, 1e-12));
        for (int j = 0; j < spec.feature_dim; ++j)
            means[static_cast<size_t>(c)][static_cast<size_t>(j)] +=
                direction[static_cast<size_t>(j)] * spec.class_mean_separation / norm;
    }

    g.features = Tensor({g.num_nodes, spec.feature_dim});
    Rng fr = root.child("features");
    for (int i = 0; i < g.num_nodes; ++i) {
        const auto& mean = means[static_cast<size_t>(g.labels[static_cast<size_t>(i)])];
        for (int j = 0; j < spec.feature_dim; ++j)
            g.features.at(i, j) = mean[static_cast<size_t>(j)] + fr.normal(0.0, spec.feature_noise_std);
    }

    Rng er = root.child("edges");
    for (int u = 0; u < g.num_nodes; ++u) {
        for (int v = u + 1; v < g.num_nodes; ++v) {
            const double p = block_of[static_cast<size_t>(u)] == block_of[static_cast<size_t>(v)]
                                 ? spec.intra_block_edge_prob
                                 : spec.inter_block_edge_prob;
            if (p > 0.0 && er.bernoulli(p)) g.edges.emplace_back(u, v);
        }
    }
    g.validate();
    return g;
}

std::pair<Graph, std::vector<int>> induced_subgraph(const Graph& g, const std::vector<int>& nodes) {
    std::vector<int> old_to_new(static_cast<size_t>(g.num_nodes), -1);
    std::vector<int> ordered = nodes;
    std::sort(ordered.begin(), ordered.end());
    ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());
    for (int n : ordered)
        if (n < 0 || n >= g.num_nodes) throw std::invalid_argument("induced_subgraph: node index out of range");
    Graph sub;
    sub.num_nodes = static_cast<int>(ordered.size());
    sub.features = Tensor({sub.num_nodes, g.feature_dim()});
    sub.labels.resize(static_cast<size_t>(sub.num_nodes));
    for (int i = 0; i < sub.num_nodes; ++i) {
        const int old = ordered[static_cast<size_t>(i)];
        old_to_new[static_cast<size_t>(old)] = i;
        sub.labels[static_cast<size_t>(i)] = g.labels[static_cast<size_t>(old)];
        for (int j = 0; j < g.feature_dim(); ++j) sub.features.at(i, j) = g.features.at(old, j);
    }
    for (auto [u, v] : g.edges) {
        const int nu = old_to_new[static_cast<size_t>(u)];
        const int nv = old_to_new[static_cast<size_t>(v)];
        if (nu >= 0 && nv >= 0) sub.edges.emplace_back(std::min(nu, nv), std::max(nu, nv));
    }
    std::sort(sub.edges.begin(), sub.edges.end());
    return {std::move(sub), std::move(old_to_new)};
}

Tensor normalized_adjacency(const Graph& g) {
    const int n = g.num_nodes;
    Tensor a({n, n});
    for (auto [u, v] : g.edges) {
        a.at(u, v) = 1.0;
        a.at(v, u) = 1.0;
    }
    for (int i = 0; i < n; ++i) a.at(i, i) = 1.0;
    std::vector<double> inv_sqrt_deg(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double deg = 0.0;
        for (int j = 0; j < n; ++j) deg += a.at(i, j);
        inv_sqrt_deg[static_cast<size_t>(i)] = 1.0 / std::sqrt(deg);
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            a.at(i, j) *= inv_sqrt_deg[static_cast<size_t>(i)] * inv_sqrt_deg[static_cast<size_t>(j)];
    return a;
}

}  // namespace fcgl
