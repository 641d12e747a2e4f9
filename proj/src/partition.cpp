#include "fcgl/partition.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "fcgl/rng.hpp"

namespace fcgl {

std::vector<int> TaskView::mask_rows(const std::vector<uint8_t>& mask) const {
    std::vector<int> rows;
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) rows.push_back(static_cast<int>(i));
    return rows;
}

namespace {

constexpr double kGainTolerance = 1e-7;

/// Weighted multigraph for the aggregation levels. Self weights count twice
/// toward a node's degree, matching the usual Louvain bookkeeping.
struct LevelGraph {
    int n = 0;
    std::vector<std::vector<std::pair<int, double>>> adj;   // neighbor, weight (no self entries)
    std::vector<double> self_weight;
    std::vector<double> degree;     // sum of incident weights + 2 * self
    double total_degree = 0.0;      // = 2m

    static LevelGraph from_graph(const Graph& g) {
        LevelGraph lg;
        lg.n = g.num_nodes;
        lg.adj.resize(static_cast<size_t>(lg.n));
        lg.self_weight.assign(static_cast<size_t>(lg.n), 0.0);
        for (auto [u, v] : g.edges) {
            lg.adj[static_cast<size_t>(u)].push_back({v, 1.0});
            lg.adj[static_cast<size_t>(v)].push_back({u, 1.0});
        }
        lg.finish();
        return lg;
    }

    void finish() {
        degree.assign(static_cast<size_t>(n), 0.0);
        total_degree = 0.0;
        for (int i = 0; i < n; ++i) {
            double d = 2.0 * self_weight[static_cast<size_t>(i)];
            for (auto [j, w] : adj[static_cast<size_t>(i)]) d += w;
            degree[static_cast<size_t>(i)] = d;
            total_degree += d;
        }
    }
};

double level_modularity(const LevelGraph& lg, const std::vector<int>& comm) {
    const double m2 = lg.total_degree;
    int nc = 0;
    for (int c : comm) nc = std::max(nc, c + 1);
    std::vector<double> in(static_cast<size_t>(nc), 0.0), tot(static_cast<size_t>(nc), 0.0);
    for (int i = 0; i < lg.n; ++i) {
        const int ci = comm[static_cast<size_t>(i)];
        tot[static_cast<size_t>(ci)] += lg.degree[static_cast<size_t>(i)];
        in[static_cast<size_t>(ci)] += 2.0 * lg.self_weight[static_cast<size_t>(i)];
        for (auto [j, w] : lg.adj[static_cast<size_t>(i)])
            if (comm[static_cast<size_t>(j)] == ci) in[static_cast<size_t>(ci)] += w;   // counts both directions
    }
    double q = 0.0;
    for (int c = 0; c < nc; ++c) {
        q += in[static_cast<size_t>(c)] / m2;
        const double frac = tot[static_cast<size_t>(c)] / m2;
        q -= frac * frac;
    }
    return q;
}

/// One sweep level: greedy node moves until the sweep gain drops below the
/// tolerance. Returns the (non-dense) community of each node.
std::vector<int> one_level(const LevelGraph& lg, Rng& rng, bool& moved_any) {
    std::vector<int> comm(static_cast<size_t>(lg.n));
    std::iota(comm.begin(), comm.end(), 0);
    std::vector<double> tot(lg.degree.begin(), lg.degree.end());
    const double m2 = lg.total_degree;

    std::vector<int> order(static_cast<size_t>(lg.n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    moved_any = false;
    double current_q = level_modularity(lg, comm);
    while (true) {
        for (int node : order) {
            const int old_c = comm[static_cast<size_t>(node)];
            // Links from node to each neighboring community.
            std::map<int, double> links;
            links[old_c] += 0.0;
            for (auto [j, w] : lg.adj[static_cast<size_t>(node)]) links[comm[static_cast<size_t>(j)]] += w;
            const double k = lg.degree[static_cast<size_t>(node)];
            tot[static_cast<size_t>(old_c)] -= k;
            int best_c = old_c;
            double best_gain = links[old_c] - tot[static_cast<size_t>(old_c)] * k / m2;
            for (const auto& [c, w] : links) {
                if (c == old_c) continue;
                const double gain = w - tot[static_cast<size_t>(c)] * k / m2;
                if (gain > best_gain + 1e-15 || (std::abs(gain - best_gain) <= 1e-15 && c < best_c)) {
                    best_gain = gain;
                    best_c = c;
                }
            }
            tot[static_cast<size_t>(best_c)] += k;
            if (best_c != old_c) {
                comm[static_cast<size_t>(node)] = best_c;
                moved_any = true;
            }
        }
        const double new_q = level_modularity(lg, comm);
        if (new_q - current_q < kGainTolerance) break;
        current_q = new_q;
    }
    return comm;
}

LevelGraph aggregate(const LevelGraph& lg, const std::vector<int>& dense_comm, int num_comms) {
    LevelGraph out;
    out.n = num_comms;
    out.adj.resize(static_cast<size_t>(num_comms));
    out.self_weight.assign(static_cast<size_t>(num_comms), 0.0);
    std::map<std::pair<int, int>, double> weights;
    for (int i = 0; i < lg.n; ++i) {
        const int ci = dense_comm[static_cast<size_t>(i)];
        out.self_weight[static_cast<size_t>(ci)] += lg.self_weight[static_cast<size_t>(i)];
        for (auto [j, w] : lg.adj[static_cast<size_t>(i)]) {
            const int cj = dense_comm[static_cast<size_t>(j)];
            if (ci == cj) {
                if (i < j) out.self_weight[static_cast<size_t>(ci)] += w;
            } else if (ci < cj) {
                weights[{ci, cj}] += w;
            }
        }
    }
    for (const auto& [key, w] : weights) {
        out.adj[static_cast<size_t>(key.first)].push_back({key.second, w});
        out.adj[static_cast<size_t>(key.second)].push_back({key.first, w});
    }
    out.finish();
    return out;
}

std::vector<int> densify(std::vector<int>& comm) {
    std::map<int, int> remap;
    for (int c : comm)
        if (!remap.count(c)) {
            const int next = static_cast<int>(remap.size());
            remap[c] = next;
        }
    for (int& c : comm) c = remap[c];
    std::vector<int> sizes(remap.size(), 0);
    for (int c : comm) sizes[static_cast<size_t>(c)]++;
    return sizes;
}

}  // namespace

double modularity(const Graph& g, const std::vector<int>& community) {
    if (g.edges.empty()) throw std::invalid_argument("modularity: undefined on an edgeless graph");
    const double m = static_cast<double>(g.edges.size());
    int nc = 0;
    for (int c : community) nc = std::max(nc, c + 1);
    std::vector<double> internal(static_cast<size_t>(nc), 0.0), deg_sum(static_cast<size_t>(nc), 0.0);
    const std::vector<int> deg = g.degrees();
    for (int i = 0; i < g.num_nodes; ++i)
        deg_sum[static_cast<size_t>(community[static_cast<size_t>(i)])] += deg[static_cast<size_t>(i)];
    for (auto [u, v] : g.edges)
        if (community[static_cast<size_t>(u)] == community[static_cast<size_t>(v)])
            internal[static_cast<size_t>(community[static_cast<size_t>(u)])] += 1.0;
    double q = 0.0;
    for (int c = 0; c < nc; ++c) {
        q += internal[static_cast<size_t>(c)] / m;
        const double frac = deg_sum[static_cast<size_t>(c)] / (2.0 * m);
        q -= frac * frac;
    }
    return q;
}

CommunityAssignment louvain(const Graph& g, uint64_t seed) {
    if (g.edges.empty()) throw std::invalid_argument("louvain: modularity is undefined on an edgeless graph");
    Rng rng(seed);
    LevelGraph level = LevelGraph::from_graph(g);
    std::vector<int> node_to_comm(static_cast<size_t>(g.num_nodes));
    std::iota(node_to_comm.begin(), node_to_comm.end(), 0);

    for (int depth = 0;; ++depth) {
        Rng level_rng = rng.child("level", static_cast<uint64_t>(depth));
        bool moved = false;
        std::vector<int> comm = one_level(level, level_rng, moved);
        if (!moved) break;
        std::vector<int> sizes = densify(comm);
        for (int& c : node_to_comm) c = comm[static_cast<size_t>(c)];
        if (static_cast<int>(sizes.size()) == level.n) break;   // no aggregation progress
        level = aggregate(level, comm, static_cast<int>(sizes.size()));
    }

    CommunityAssignment result;
    result.community = std::move(node_to_comm);
    // Canonical ids: communities numbered by their smallest member node.
    std::map<int, int> first_member;
    for (int i = 0; i < g.num_nodes; ++i)
        if (!first_member.count(result.community[static_cast<size_t>(i)]))
            first_member[result.community[static_cast<size_t>(i)]] = i;
    std::vector<std::pair<int, int>> order(first_member.size());
    size_t idx = 0;
    for (const auto& [c, node] : first_member) order[idx++] = {node, c};
    std::sort(order.begin(), order.end());
    std::map<int, int> remap;
    for (size_t i = 0; i < order.size(); ++i) remap[order[i].second] = static_cast<int>(i);
    for (int& c : result.community) c = remap[c];
    result.num_communities = static_cast<int>(remap.size());
    result.modularity = modularity(g, result.community);
    return result;
}

std::vector<std::vector<int>> assign_clients(const CommunityAssignment& assignment, const Graph& g, int clients) {
    if (clients <= 0) throw std::invalid_argument("assign_clients: client count must be positive");
    if (assignment.num_communities < clients)
        throw std::invalid_argument("assign_clients: only " + std::to_string(assignment.num_communities) +
                                    " communities for " + std::to_string(clients) +
                                    " clients; use fewer clients or a different partition seed");
    std::vector<std::vector<int>> members(static_cast<size_t>(assignment.num_communities));
    for (int i = 0; i < g.num_nodes; ++i)
        members[static_cast<size_t>(assignment.community[static_cast<size_t>(i)])].push_back(i);
    std::vector<int> order(members.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (members[static_cast<size_t>(a)].size() != members[static_cast<size_t>(b)].size())
            return members[static_cast<size_t>(a)].size() > members[static_cast<size_t>(b)].size();
        return a < b;
    });
    std::vector<std::vector<int>> result(static_cast<size_t>(clients));
    std::vector<size_t> load(static_cast<size_t>(clients), 0);
    for (int c : order) {
        size_t target = 0;
        for (size_t k = 1; k < load.size(); ++k)
            if (load[k] < load[target]) target = k;
        for (int node : members[static_cast<size_t>(c)]) result[target].push_back(node);
        load[target] += members[static_cast<size_t>(c)].size();
    }
    for (auto& set : result) std::sort(set.begin(), set.end());
    return result;
}

ClientDataset split_tasks(const Graph& client_graph, int classes_per_task, int num_tasks, const ClassOrder& order,
                          uint64_t /*seed*/, int client_id) {
    if (classes_per_task <= 0 || num_tasks <= 0)
        throw std::invalid_argument("split_tasks: classes per task and task count must be positive");
    const int needed = classes_per_task * num_tasks;

    std::map<int, int> label_counts;
    for (int l : client_graph.labels)
        if (l >= 0) label_counts[l]++;

    std::vector<int> selected;
    if (order.by_frequency) {
        std::vector<std::pair<int, int>> freq(label_counts.begin(), label_counts.end());
        std::sort(freq.begin(), freq.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        for (const auto& [label, count] : freq) selected.push_back(label);
    } else {
        for (int label : order.explicit_order)
            if (label_counts.count(label)) selected.push_back(label);
    }
    if (static_cast<int>(selected.size()) < needed)
        throw std::invalid_argument("split_tasks: client " + std::to_string(client_id) + " has only " +
                                    std::to_string(selected.size()) + " labeled classes, needs " +
                                    std::to_string(needed));
    selected.resize(static_cast<size_t>(needed));

    std::map<int, int> position;
    for (size_t i = 0; i < selected.size(); ++i) position[selected[static_cast<size_t>(i)]] = static_cast<int>(i);

    ClientDataset ds;
    ds.client_id = client_id;
    ds.total_classes = needed;
    for (int t = 0; t < num_tasks; ++t) {
        TaskView task;
        task.task_index = t;
        task.class_set.assign(selected.begin() + static_cast<long>(t) * classes_per_task,
                              selected.begin() + static_cast<long>(t + 1) * classes_per_task);
        std::map<int, bool> in_task;
        for (int c : task.class_set) {
            in_task[c] = true;
            task.cumulative_position[c] = position[c];
        }
        std::vector<int> node_map(static_cast<size_t>(client_graph.num_nodes), -1);
        for (int i = 0; i < client_graph.num_nodes; ++i) {
            const int l = client_graph.labels[static_cast<size_t>(i)];
            if (l >= 0 && in_task.count(l)) {
                node_map[static_cast<size_t>(i)] = static_cast<int>(task.client_nodes.size());
                task.client_nodes.push_back(i);
            }
        }
        const int n = static_cast<int>(task.client_nodes.size());
        task.features = Tensor({std::max(n, 1), client_graph.feature_dim()});
        task.labels.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            const int old = task.client_nodes[static_cast<size_t>(i)];
            task.labels[static_cast<size_t>(i)] = client_graph.labels[static_cast<size_t>(old)];
            for (int j = 0; j < client_graph.feature_dim(); ++j)
                task.features.at(i, j) = client_graph.features.at(old, j);
        }
        for (auto [u, v] : client_graph.edges) {
            const int nu = node_map[static_cast<size_t>(u)];
            const int nv = node_map[static_cast<size_t>(v)];
            if (nu >= 0 && nv >= 0) task.edges.emplace_back(std::min(nu, nv), std::max(nu, nv));
        }
        std::sort(task.edges.begin(), task.edges.end());
        task.train_mask.assign(static_cast<size_t>(n), 0);
        task.val_mask.assign(static_cast<size_t>(n), 0);
        task.test_mask.assign(static_cast<size_t>(n), 0);
        ds.tasks.push_back(std::move(task));
    }
    return ds;
}

void split_train_val_test(TaskView& task, double train_ratio, double val_ratio, double test_ratio, uint64_t seed) {
    if (train_ratio < 0.0 || val_ratio < 0.0 || test_ratio < 0.0)
        throw std::invalid_argument("split_train_val_test: ratios must be nonnegative");
    if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
        throw std::invalid_argument("split_train_val_test: ratios must sum to 1");
    const int n = task.num_nodes();
    task.train_mask.assign(static_cast<size_t>(n), 0);
    task.val_mask.assign(static_cast<size_t>(n), 0);
    task.test_mask.assign(static_cast<size_t>(n), 0);
    Rng rng(seed);
    for (int cls : task.class_set) {
        std::vector<int> members;
        for (int i = 0; i < n; ++i)
            if (task.labels[static_cast<size_t>(i)] == cls) members.push_back(i);
        if (members.empty())
            throw std::invalid_argument("split_train_val_test: class " + std::to_string(cls) +
                                        " has no labeled nodes");
        Rng cls_rng = rng.child("class", static_cast<uint64_t>(cls));
        cls_rng.shuffle(members);
        const int count = static_cast<int>(members.size());
        int n_train = static_cast<int>(std::floor(train_ratio * count));
        if (n_train == 0 && count >= 3) n_train = 1;
        int n_val = static_cast<int>(std::floor(val_ratio * count));
        if (n_train + n_val > count) n_val = count - n_train;
        for (int i = 0; i < count; ++i) {
            if (i < n_train)
                task.train_mask[static_cast<size_t>(members[static_cast<size_t>(i)])] = 1;
            else if (i < n_train + n_val)
                task.val_mask[static_cast<size_t>(members[static_cast<size_t>(i)])] = 1;
            else
                task.test_mask[static_cast<size_t>(members[static_cast<size_t>(i)])] = 1;
        }
    }
}

}  // namespace fcgl
