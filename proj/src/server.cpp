#include "fcgl/server.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "fcgl/optim.hpp"

namespace fcgl {

GnnParams aggregate(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw std::invalid_argument("aggregate: no client updates");
    std::vector<size_t> order(updates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return updates[a].client_id < updates[b].client_id; });
    double total = 0.0;
    for (const ClientUpdate& u : updates) {
        if (u.train_node_count < 1) throw std::invalid_argument("aggregate: train node count must be >= 1");
        if (!(u.params.config == updates.front().params.config))
            throw std::invalid_argument("aggregate: parameter architectures disagree");
        total += static_cast<double>(u.train_node_count);
    }
    GnnParams result = updates[order.front()].params;
    for (Tensor& t : result.tensors) scale_in_place(t, 0.0);
    for (size_t i : order) {
        const ClientUpdate& u = updates[i];
        const double w = static_cast<double>(u.train_node_count) / total;
        for (size_t t = 0; t < result.tensors.size(); ++t) {
            if (!result.tensors[t].same_shape(u.params.tensors[t]))
                throw std::invalid_argument("aggregate: parameter shape mismatch");
            const Tensor& src = u.params.tensors[t];
            Tensor& dst = result.tensors[t];
            for (int64_t k = 0; k < dst.size(); ++k) dst[k] += w * src[k];
        }
    }
    return result;
}

int infer_class(const PrototypeGradientPacket& packet) {
    if (packet.bias_grads.empty()) throw std::invalid_argument("infer_class: packet has no gradients");
    const Tensor& final_bias = packet.bias_grads.back();
    int best = 0;
    for (int64_t i = 1; i < final_bias.size(); ++i)
        if (final_bias[i] < final_bias[best]) best = static_cast<int>(i);
    return best;
}

void ReconConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("reconstruction: iteration budget must be >= 1");
    if (tolerance <= 0.0) throw std::invalid_argument("reconstruction: tolerance must be positive");
    if (adam_lr <= 0.0 || lbfgs_step <= 0.0) throw std::invalid_argument("reconstruction: step sizes must be positive");
}

namespace {

double matching_loss_and_grad(const PrototypeGradientPacket& packet, const EncodingNet& net, int cls,
                              const Tensor& x, Tensor* grad_out) {
    ad::Tape tape;
    ad::Var xv = tape.leaf(x, grad_out != nullptr);
    EncodingGradients grads = encoding_gradients(tape, net, xv, cls);
    ad::Var loss{-1};
    for (size_t l = 0; l < grads.weight_grads.size(); ++l) {
        ad::Var wt = ad::sum_squares(tape, ad::sub(tape, grads.weight_grads[l], tape.constant(packet.weight_grads[l])));
        ad::Var bt = ad::sum_squares(tape, ad::sub(tape, grads.bias_grads[l], tape.constant(packet.bias_grads[l])));
        ad::Var layer = ad::add(tape, wt, bt);
        loss = loss.valid() ? ad::add(tape, loss, layer) : layer;
    }
    const double value = tape.value(loss).item();
    if (grad_out) {
        tape.backward(loss);
        *grad_out = tape.gradient(xv);
    }
    return value;
}

}  // namespace

ReconResult reconstruct(const PrototypeGradientPacket& packet, const EncodingNet& net, const ReconConfig& config,
                        Rng rng) {
    config.validate();
    if (static_cast<int>(packet.weight_grads.size()) != net.num_layers())
        throw std::invalid_argument("reconstruct: packet layer count does not match the encoding network");
    const int cls = infer_class(packet);

    ReconResult result;
    result.inferred_class = cls;
    result.initial_loss = -1.0;
    double best_loss = 1e300;
    Tensor best_x;

    // The iteration budget is shared across restarts: a start that stalls
    // (the matching loss has local minima) hands its remaining budget to a
    // fresh Gaussian draw. Two non-finite starts are a hard failure.
    int used = 0;
    int non_finite_starts = 0;
    uint64_t start_index = 0;
    while (used < config.iterations) {
        Rng draw = rng.child("init", start_index++);
        Tensor x({net.in_dim});
        for (int64_t i = 0; i < x.size(); ++i) x[i] = draw.normal();

        const double start_loss = matching_loss_and_grad(packet, net, cls, x, nullptr);
        if (!std::isfinite(start_loss)) {
            if (++non_finite_starts >= 2)
                throw std::runtime_error("reconstruct: matching loss diverged twice from fresh initializations");
            continue;
        }
        if (result.initial_loss < 0.0) result.initial_loss = start_loss;
        if (start_loss < best_loss) {
            best_loss = start_loss;
            best_x = x;
        }

        if (config.optimizer == ReconConfig::Optimizer::adam) {
            std::vector<Tensor> params{x};
            AdamState state = AdamState::for_params(params);
            double stagnation_floor = start_loss;
            int stagnant = 0;
            bool diverged = false;
            while (used < config.iterations) {
                Tensor grad;
                const double loss = matching_loss_and_grad(packet, net, cls, params[0], &grad);
                used++;
                if (!std::isfinite(loss)) {
                    diverged = true;
                    break;
                }
                if (loss < best_loss) {
                    best_loss = loss;
                    best_x = params[0];
                }
                if (loss <= config.tolerance) break;
                if (loss < 0.99 * stagnation_floor) {
                    stagnation_floor = loss;
                    stagnant = 0;
                } else if (++stagnant >= 40) {
                    break;   // restart from a new draw
                }
                adam_step(params, {grad}, state, config.adam_lr, 0.0);
            }
            if (diverged && ++non_finite_starts >= 2)
                throw std::runtime_error("reconstruct: matching loss diverged twice from fresh initializations");
        } else {
            auto fn = [&](const Tensor& point, Tensor& grad) {
                return matching_loss_and_grad(packet, net, cls, point, &grad);
            };
            const double reached = lbfgs_minimize(fn, x, config.iterations - used, config.lbfgs_step);
            used = config.iterations;
            if (std::isfinite(reached) && reached < best_loss) {
                best_loss = reached;
                best_x = x;
            }
        }
        if (best_loss <= config.tolerance) break;
        if (best_loss <= 1e-4 * result.initial_loss) break;   // safely converged
    }
    result.pseudo_prototype = std::move(best_x);
    result.final_loss = best_loss;
    return result;
}

Tensor GlobalBuffer::feature_matrix() const {
    if (rows.empty()) throw std::logic_error("global buffer: empty");
    const int f = static_cast<int>(rows.front().features.size());
    Tensor m({static_cast<int>(rows.size()), f});
    for (size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < f; ++j) m.at(static_cast<int>(i), j) = rows[i].features[j];
    return m;
}

std::vector<int> GlobalBuffer::labels() const {
    std::vector<int> l;
    l.reserve(rows.size());
    for (const GlobalBufferRow& r : rows) l.push_back(r.label);
    return l;
}

std::vector<std::vector<int>> buffer_knn(const GlobalBuffer& buffer, int k, bool exclude_self) {
    if (buffer.empty()) throw std::invalid_argument("buffer_knn: buffer is empty");
    if (k < 1) throw std::invalid_argument("buffer_knn: k must be >= 1");
    const int n = static_cast<int>(buffer.size());
    const int limit = exclude_self ? n - 1 : n;
    if (k > limit) {
        std::cerr << "warning: knn k=" << k << " capped at " << limit << " buffer rows\n";
        k = std::max(limit, 1);
    }
    Tensor x = buffer.feature_matrix();
    Tensor gram = matmul(x, x, false, true);
    std::vector<std::vector<int>> neighbors(static_cast<size_t>(n));
    for (int u = 0; u < n; ++u) {
        std::vector<int> order;
        order.reserve(static_cast<size_t>(n));
        for (int v = 0; v < n; ++v)
            if (!(exclude_self && v == u)) order.push_back(v);
        auto score = [&](int v) { return 1.0 / (1.0 + std::exp(-gram.at(u, v))); };
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double sa = score(a), sb = score(b);
            if (sa != sb) return sa > sb;
            return a < b;
        });
        order.resize(static_cast<size_t>(std::min(k, static_cast<int>(order.size()))));
        std::sort(order.begin(), order.end());
        neighbors[static_cast<size_t>(u)] = std::move(order);
    }
    return neighbors;
}

std::vector<std::vector<double>> transfer_class_weights(const std::vector<EvolutionTrajectory>& trajectories,
                                                        int num_classes) {
    std::vector<std::vector<double>> w(trajectories.size(), std::vector<double>(static_cast<size_t>(num_classes), 0.0));
    for (int c = 0; c < num_classes; ++c) {
        double denom = 0.0;
        for (const EvolutionTrajectory& q : trajectories) {
            if (static_cast<int>(q.cumulative.size()) != num_classes)
                throw std::invalid_argument("transfer_class_weights: trajectory length mismatch");
            denom += q.cumulative[static_cast<size_t>(c)];
        }
        if (denom <= 0.0) continue;   // class unseen by every client: skipped
        for (size_t k = 0; k < trajectories.size(); ++k)
            w[k][static_cast<size_t>(c)] = trajectories[k].cumulative[static_cast<size_t>(c)] / denom;
    }
    return w;
}

TransferResult knowledge_transfer(const GnnParams& global_params, const std::vector<GnnParams>& local_params,
                                  const std::vector<EvolutionTrajectory>& trajectories, const GlobalBuffer& buffer,
                                  const std::vector<std::vector<int>>& knn, int epochs, double lr) {
    if (buffer.empty()) throw std::invalid_argument("knowledge_transfer: buffer is empty");
    if (local_params.size() != trajectories.size())
        throw std::invalid_argument("knowledge_transfer: locals and trajectories must align");
    if (epochs < 1) throw std::invalid_argument("knowledge_transfer: at least one epoch required");
    const int n = static_cast<int>(buffer.size());
    const int num_classes = global_params.config.num_classes;

    std::vector<std::pair<int, int>> directed;   // src -> dst: row u attends over its selected neighbors
    for (int u = 0; u < n; ++u)
        for (int v : knn[static_cast<size_t>(u)]) directed.emplace_back(v, u);
    ModelAdjacency adj = prepare_adjacency_directed(n, directed, global_params.config.variant);

    Tensor features = buffer.feature_matrix();
    const std::vector<int> labels = buffer.labels();
    const std::vector<std::vector<double>> weights = transfer_class_weights(trajectories, num_classes);

    // Frozen teachers: eval-mode class distributions per client, constant
    // throughout the transfer epochs.
    std::vector<Tensor> teacher_probs;
    std::vector<Tensor> row_weights;
    for (size_t k = 0; k < local_params.size(); ++k) {
        Tensor w({n});
        double mass = 0.0;
        for (int i = 0; i < n; ++i) {
            const int c = labels[static_cast<size_t>(i)];
            if (c >= 0 && c < num_classes) w[i] = weights[k][static_cast<size_t>(c)];
            mass += w[i];
        }
        if (mass <= 0.0) continue;   // this client contributes to no buffer row
        teacher_probs.push_back(ad::softmax_rows_value(gnn_eval(local_params[k], features, adj).second));
        row_weights.push_back(std::move(w));
    }

    TransferResult result;
    result.params = global_params;
    if (teacher_probs.empty()) return result;

    AdamState state = AdamState::for_params(result.params.tensors);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (const Tensor& t : result.params.tensors) vars.push_back(tape.leaf(t, true));
        ad::Var x = tape.constant(features);
        ForwardResult fw = gnn_forward(tape, result.params.config, vars, x, adj, false, nullptr);
        ad::Var loss{-1};
        for (size_t k = 0; k < teacher_probs.size(); ++k) {
            ad::Var term = ad::weighted_kl_to_teacher(tape, fw.logits, teacher_probs[k], row_weights[k]);
            loss = loss.valid() ? ad::add(tape, loss, term) : term;
        }
        result.loss_curve.push_back(tape.value(loss).item());
        tape.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(vars.size());
        for (ad::Var v : vars) grads.push_back(tape.gradient(v));
        adam_step(result.params.tensors, grads, state, lr, 0.0);
    }
    return result;
}

}  // namespace fcgl
