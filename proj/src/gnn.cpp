#include "fcgl/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "fcgl/optim.hpp"

namespace fcgl {

namespace {

Tensor glorot(int rows, int cols, Rng& rng) {
    Tensor t({rows, cols});
    const double bound = std::sqrt(6.0 / (rows + cols));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

Tensor glorot_vec(int n, Rng& rng) {
    Tensor t({n});
    const double bound = std::sqrt(6.0 / (n + 1));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

void check_config(const GnnConfig& c) {
    if (c.in_dim <= 0 || c.hidden_dim <= 0 || c.num_classes <= 0)
        throw std::invalid_argument("gnn: in_dim, hidden_dim and num_classes must be positive");
    if (c.dropout < 0.0 || c.dropout >= 1.0) throw std::invalid_argument("gnn: dropout must lie in [0,1)");
}

}  // namespace

GnnParams GnnParams::init(const GnnConfig& config, Rng rng) {
    check_config(config);
    GnnParams p;
    p.config = config;
    const int dims[3] = {config.in_dim, config.hidden_dim, config.hidden_dim};
    for (int layer = 0; layer < 2; ++layer) {
        Rng lr = rng.child("layer", static_cast<uint64_t>(layer));
        p.tensors.push_back(glorot(dims[layer], dims[layer + 1], lr));
        if (config.variant == GnnVariant::gat) {
            p.tensors.push_back(glorot_vec(dims[layer + 1], lr));   // attention, source half
            p.tensors.push_back(glorot_vec(dims[layer + 1], lr));   // attention, destination half
        }
        p.tensors.push_back(Tensor({dims[layer + 1]}));             // bias
    }
    Rng hr = rng.child("head");
    p.tensors.push_back(glorot(config.hidden_dim, config.num_classes, hr));
    p.tensors.push_back(Tensor({config.num_classes}));
    return p;
}

std::vector<double> GnnParams::flatten() const {
    std::vector<double> flat;
    for (const Tensor& t : tensors) flat.insert(flat.end(), t.raw().begin(), t.raw().end());
    return flat;
}

GnnParams GnnParams::unflatten(const GnnConfig& config, const std::vector<double>& flat) {
    GnnParams p = GnnParams::init(config, Rng(0));
    size_t offset = 0;
    for (Tensor& t : p.tensors) {
        if (offset + static_cast<size_t>(t.size()) > flat.size())
            throw std::invalid_argument("unflatten: vector too short for architecture");
        std::copy(flat.begin() + static_cast<long>(offset),
                  flat.begin() + static_cast<long>(offset) + t.size(), t.raw().begin());
        offset += static_cast<size_t>(t.size());
    }
    if (offset != flat.size()) throw std::invalid_argument("unflatten: vector too long for architecture");
    return p;
}

int64_t GnnParams::parameter_count() const {
    int64_t n = 0;
    for (const Tensor& t : tensors) n += t.size();
    return n;
}

namespace {

ModelAdjacency finalize_adjacency(int num_nodes, std::set<std::pair<int, int>>& directed, GnnVariant variant) {
    for (int i = 0; i < num_nodes; ++i) directed.insert({i, i});
    ModelAdjacency adj;
    adj.num_nodes = num_nodes;
    // directed holds (dst, src) so iteration comes out grouped by destination.
    for (auto [d, s] : directed) {
        adj.dst.push_back(d);
        adj.src.push_back(s);
    }
    if (variant == GnnVariant::gcn) {
        std::vector<double> deg(static_cast<size_t>(num_nodes), 0.0);
        for (int d : adj.dst) deg[static_cast<size_t>(d)] += 1.0;
        ad::SparseMatrix& m = adj.gcn_norm;
        m.rows = m.cols = num_nodes;
        m.row_ptr.assign(static_cast<size_t>(num_nodes) + 1, 0);
        for (int d : adj.dst) m.row_ptr[static_cast<size_t>(d) + 1]++;
        for (int i = 0; i < num_nodes; ++i) m.row_ptr[static_cast<size_t>(i) + 1] += m.row_ptr[static_cast<size_t>(i)];
        std::vector<int> cursor(m.row_ptr.begin(), m.row_ptr.end() - 1);
        m.col.resize(adj.dst.size());
        m.val.resize(adj.dst.size());
        for (size_t e = 0; e < adj.dst.size(); ++e) {
            const int d = adj.dst[e], s = adj.src[e];
            const int slot = cursor[static_cast<size_t>(d)]++;
            m.col[static_cast<size_t>(slot)] = s;
            m.val[static_cast<size_t>(slot)] =
                1.0 / std::sqrt(deg[static_cast<size_t>(d)] * deg[static_cast<size_t>(s)]);
        }
    }
    return adj;
}

}  // namespace

ModelAdjacency prepare_adjacency(int num_nodes, const std::vector<std::pair<int, int>>& undirected_edges,
                                 GnnVariant variant) {
    std::set<std::pair<int, int>> directed;
    for (auto [u, v] : undirected_edges) {
        directed.insert({u, v});
        directed.insert({v, u});
    }
    return finalize_adjacency(num_nodes, directed, variant);
}

ModelAdjacency prepare_adjacency_directed(int num_nodes, const std::vector<std::pair<int, int>>& directed_edges,
                                          GnnVariant variant) {
    std::set<std::pair<int, int>> directed;
    for (auto [s, d] : directed_edges) directed.insert({d, s});
    return finalize_adjacency(num_nodes, directed, variant);
}

ModelAdjacency identity_adjacency(int num_nodes, GnnVariant variant) {
    std::set<std::pair<int, int>> directed;
    return finalize_adjacency(num_nodes, directed, variant);
}

ForwardResult gnn_forward(ad::Tape& tape, const GnnConfig& config, const std::vector<ad::Var>& params,
                          ad::Var features, const ModelAdjacency& adj, bool training, Rng* dropout_rng,
                          GatIntrospection* introspect) {
    check_config(config);
    const size_t expected = config.variant == GnnVariant::gat ? 10 : 6;
    if (params.size() != expected) throw std::invalid_argument("gnn_forward: wrong parameter count for variant");
    if (tape.value(features).rank() != 2 || tape.value(features).dim(1) != config.in_dim)
        throw std::invalid_argument("gnn_forward: feature width does not match in_dim");
    if (tape.value(features).dim(0) != adj.num_nodes)
        throw std::invalid_argument("gnn_forward: adjacency/node count mismatch");
    Rng fallback(0);
    Rng& rng = dropout_rng ? *dropout_rng : fallback;
    if (training && config.dropout > 0.0 && !dropout_rng)
        throw std::invalid_argument("gnn_forward: training mode with dropout requires a random stream");

    ad::Var h = features;
    size_t p = 0;
    for (int layer = 0; layer < 2; ++layer) {
        h = ad::dropout(tape, h, config.dropout, rng, training);
        if (config.variant == GnnVariant::gat) {
            ad::Var w = params[p++];
            ad::Var a_src = params[p++];
            ad::Var a_dst = params[p++];
            ad::Var bias = params[p++];
            ad::Var wh = ad::matmul(tape, h, w);
            const int width = tape.value(wh).dim(1);
            ad::Var s = ad::reshape(tape, ad::matmul(tape, wh, ad::reshape(tape, a_src, {width, 1})),
                                    {adj.num_nodes});
            ad::Var d = ad::reshape(tape, ad::matmul(tape, wh, ad::reshape(tape, a_dst, {width, 1})),
                                    {adj.num_nodes});
            ad::Var e = ad::add(tape, ad::gather_rows(tape, s, adj.src), ad::gather_rows(tape, d, adj.dst));
            e = ad::leaky_relu(tape, e, config.leaky_relu_slope);
            ad::Var alpha = ad::segment_softmax(tape, e, adj.dst, adj.num_nodes);
            if (introspect) {
                std::vector<double> sums(static_cast<size_t>(adj.num_nodes), 0.0);
                const Tensor& av = tape.value(alpha);
                for (size_t k = 0; k < adj.dst.size(); ++k)
                    sums[static_cast<size_t>(adj.dst[k])] += av[static_cast<int64_t>(k)];
                introspect->attention_row_sums.push_back(std::move(sums));
            }
            ad::Var msg = ad::gather_rows(tape, wh, adj.src);
            ad::Var aggregated = ad::edge_aggregate(tape, alpha, msg, adj.dst, adj.num_nodes);
            h = ad::elu(tape, ad::add_rowvec(tape, aggregated, bias));
        } else {
            ad::Var w = params[p++];
            ad::Var bias = params[p++];
            ad::Var propagated = ad::spmm(tape, adj.gcn_norm, ad::matmul(tape, h, w));
            h = ad::relu(tape, ad::add_rowvec(tape, propagated, bias));
        }
    }
    ad::Var head_w = params[p++];
    ad::Var head_b = params[p++];
    ad::Var logits = ad::add_rowvec(tape, ad::matmul(tape, h, head_w), head_b);
    return ForwardResult{h, logits};
}

std::pair<Tensor, Tensor> gnn_eval(const GnnParams& params, const Tensor& features, const ModelAdjacency& adj,
                                   GatIntrospection* introspect) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor& t : params.tensors) vars.push_back(tape.constant(t));
    ad::Var x = tape.constant(features);
    ForwardResult r = gnn_forward(tape, params.config, vars, x, adj, false, nullptr, introspect);
    return {tape.value(r.hidden), tape.value(r.logits)};
}

std::pair<GnnParams, double> train_epochs(GnnParams params, const LossBuilder& loss, const TrainHyper& hyper,
                                          Rng rng) {
    if (hyper.lr < 0.0) throw std::invalid_argument("train_epochs: negative learning rate");
    if (hyper.epochs < 1) throw std::invalid_argument("train_epochs: at least one epoch required");
    AdamState state = AdamState::for_params(params.tensors);
    double last_loss = 0.0;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (const Tensor& t : params.tensors) vars.push_back(tape.leaf(t, true));
        Rng epoch_rng = rng.child("epoch", static_cast<uint64_t>(epoch));
        ad::Var objective = loss(tape, vars, epoch_rng);
        last_loss = tape.value(objective).item();
        if (!std::isfinite(last_loss)) throw std::runtime_error("train_epochs: non-finite training loss");
        if (hyper.lr == 0.0) continue;
        tape.backward(objective);
        std::vector<Tensor> grads;
        grads.reserve(vars.size());
        for (ad::Var v : vars) grads.push_back(tape.gradient(v));
        adam_step(params.tensors, grads, state, hyper.lr, hyper.weight_decay);
    }
    return {std::move(params), last_loss};
}

ad::Var supervised_loss(ad::Tape& tape, ad::Var logits, const std::vector<int>& labels,
                        const std::vector<int>& rows) {
    if (rows.empty()) throw std::invalid_argument("supervised_loss: empty node selection");
    return ad::masked_cross_entropy(tape, logits, labels, rows);
}

double evaluate(const GnnParams& params, const TaskView& task, const ModelAdjacency& adj,
                const std::vector<int>& rows) {
    if (rows.empty()) throw std::invalid_argument("evaluate: empty node selection");
    auto [hidden, logits] = gnn_eval(params, task.features, adj);
    (void)hidden;
    const int cols = logits.dim(1);
    int correct = 0;
    for (int r : rows) {
        const double* row = logits.data() + static_cast<size_t>(r) * cols;
        int best = 0;
        for (int j = 1; j < cols; ++j)
            if (row[j] > row[best]) best = j;
        if (best == task.labels[static_cast<size_t>(r)]) correct++;
    }
    return static_cast<double>(correct) / static_cast<double>(rows.size());
}

}  // namespace fcgl
