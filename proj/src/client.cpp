#include "fcgl/client.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "fcgl/numerics.hpp"

namespace fcgl {

void ClientHyper::validate() const {
    if (alpha < 0.0 || alpha > 1.0 || beta < 0.0 || beta > 1.0 || phi < 0.0 || phi > 1.0)
        throw std::invalid_argument("client hyper: alpha, beta and phi must lie in [0,1]");
    if (epsilon <= 0.0) throw std::invalid_argument("client hyper: epsilon must be positive");
    if (buffer_per_class < 1) throw std::invalid_argument("client hyper: buffer size must be >= 1");
}

Tensor ExperienceBuffer::feature_matrix() const {
    if (entries.empty()) throw std::logic_error("experience buffer: empty");
    const int f = static_cast<int>(entries.front().features.size());
    Tensor m({static_cast<int>(entries.size()), f});
    for (size_t i = 0; i < entries.size(); ++i)
        for (int j = 0; j < f; ++j) m.at(static_cast<int>(i), j) = entries[i].features[j];
    return m;
}

std::vector<int> ExperienceBuffer::labels() const {
    std::vector<int> l;
    l.reserve(entries.size());
    for (const BufferEntry& e : entries) l.push_back(e.label);
    return l;
}

Tensor local_global_embeddings(const TaskView& task, const ModelAdjacency& adj, const GnnParams& local_params,
                               const GnnParams& global_params, double alpha) {
    if (!(local_params.config == global_params.config))
        throw std::invalid_argument("local_global_embeddings: architecture mismatch");
    Tensor local = gnn_eval(local_params, task.features, adj).first;
    Tensor global = gnn_eval(global_params, task.features, adj).first;
    Tensor z = local;
    for (int64_t i = 0; i < z.size(); ++i) z[i] = alpha * local[i] + (1.0 - alpha) * global[i];
    return z;
}

std::vector<int> coverage_counts(const Tensor& embeddings, const std::vector<int>& labels,
                                 const std::vector<int>& train_rows, double epsilon) {
    if (epsilon <= 0.0) throw std::invalid_argument("coverage: epsilon must be positive");
    const int n = embeddings.rows();
    std::vector<int> counts(static_cast<size_t>(n), 0);
    const int width = embeddings.cols();
    auto distance = [&](int a, int b) {
        double acc = 0.0;
        const double* ra = embeddings.data() + static_cast<size_t>(a) * width;
        const double* rb = embeddings.data() + static_cast<size_t>(b) * width;
        for (int j = 0; j < width; ++j) {
            const double d = ra[j] - rb[j];
            acc += d * d;
        }
        return std::sqrt(acc);
    };
    for (int i : train_rows) {
        std::vector<int> same;
        for (int j : train_rows)
            if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) same.push_back(j);
        double mean_dist = 0.0;
        int others = 0;
        for (int j : same)
            if (j != i) {
                mean_dist += distance(i, j);
                others++;
            }
        if (others > 0) mean_dist /= static_cast<double>(others);
        const double radius = epsilon * mean_dist;
        if (radius <= 0.0) {
            counts[static_cast<size_t>(i)] = 1;   // singleton class or fully collapsed embeddings
            continue;
        }
        int c = 0;
        for (int j : same)
            if (distance(i, j) < radius) c++;
        counts[static_cast<size_t>(i)] = c;
    }
    return counts;
}

std::vector<int> top_coverage_nodes(const std::vector<int>& coverage, const std::vector<int>& labels,
                                    const std::vector<int>& train_rows, int cls, int per_class) {
    std::vector<int> members;
    for (int i : train_rows)
        if (labels[static_cast<size_t>(i)] == cls) members.push_back(i);
    std::sort(members.begin(), members.end(), [&](int a, int b) {
        if (coverage[static_cast<size_t>(a)] != coverage[static_cast<size_t>(b)])
            return coverage[static_cast<size_t>(a)] > coverage[static_cast<size_t>(b)];
        return a < b;
    });
    if (static_cast<int>(members.size()) < per_class)
        std::cerr << "warning: class " << cls << " has only " << members.size()
                  << " labeled train nodes for a buffer of " << per_class << " per class\n";
    if (static_cast<int>(members.size()) > per_class) members.resize(static_cast<size_t>(per_class));
    return members;
}

EvolutionTrajectory update_trajectory(const std::optional<EvolutionTrajectory>& previous, const TaskView& task,
                                      double phi, int total_classes) {
    if (phi < 0.0 || phi > 1.0) throw std::invalid_argument("update_trajectory: phi must lie in [0,1]");
    std::vector<double> p(static_cast<size_t>(total_classes), 0.0);
    double total = 0.0;
    for (int i : task.train_rows()) {
        const int l = task.labels[static_cast<size_t>(i)];
        if (l >= 0 && l < total_classes) {
            p[static_cast<size_t>(l)] += 1.0;
            total += 1.0;
        }
    }
    if (total > 0.0)
        for (double& x : p) x /= total;
    EvolutionTrajectory next;
    next.cumulative.assign(static_cast<size_t>(total_classes), 0.0);
    for (int c = 0; c < total_classes; ++c) {
        const double prev = previous ? previous->cumulative[static_cast<size_t>(c)] : 0.0;
        next.cumulative[static_cast<size_t>(c)] = phi * prev + p[static_cast<size_t>(c)];
    }
    next.last_task = task.task_index;
    return next;
}

ad::Var combined_loss(ad::Tape& tape, const GnnConfig& config, const std::vector<ad::Var>& params,
                      const TaskView& task, const ModelAdjacency& adj, const ExperienceBuffer& buffer, double beta,
                      bool training, Rng& rng) {
    Rng task_rng = rng.child("task-forward");
    ad::Var features = tape.constant(task.features);
    ForwardResult fw = gnn_forward(tape, config, params, features, adj, training, &task_rng);
    ad::Var new_loss = supervised_loss(tape, fw.logits, task.labels, task.train_rows());
    if (buffer.empty()) return ad::scale(tape, new_loss, beta);

    Rng replay_rng = rng.child("replay-forward");
    ModelAdjacency identity = identity_adjacency(static_cast<int>(buffer.size()), config.variant);
    ad::Var replay_features = tape.constant(buffer.feature_matrix());
    ForwardResult replay = gnn_forward(tape, config, params, replay_features, identity, training, &replay_rng);
    std::vector<int> all_rows(buffer.size());
    for (size_t i = 0; i < buffer.size(); ++i) all_rows[i] = static_cast<int>(i);
    ad::Var old_loss = supervised_loss(tape, replay.logits, buffer.labels(), all_rows);
    return ad::add(tape, ad::scale(tape, new_loss, beta), ad::scale(tape, old_loss, 1.0 - beta));
}

Client::Client(int id, ClientDataset dataset, GnnConfig model_config, const EncodingNet* encoding_net,
               ClientHyper hyper, TrainHyper train, MethodFlags flags)
    : id_(id),
      dataset_(std::move(dataset)),
      model_config_(model_config),
      encoding_net_(encoding_net),
      hyper_(hyper),
      train_(train),
      flags_(flags),
      params_(GnnParams::init(model_config, Rng(0))) {
    hyper_.validate();
    for (const TaskView& task : dataset_.tasks)
        adjacency_.push_back(prepare_adjacency(task.num_nodes(), task.edges, model_config_.variant));
}

const ModelAdjacency& Client::task_adjacency(int task_index) const {
    return adjacency_[static_cast<size_t>(task_index)];
}

std::vector<PrototypeGradientPacket> Client::encode_task_prototypes(int task_index) const {
    const TaskView& task = dataset_.tasks[static_cast<size_t>(task_index)];
    std::vector<PrototypeGradientPacket> packets;
    const std::vector<int> train = task.train_rows();
    for (int cls : task.class_set) {
        Tensor prototype({model_config_.in_dim});
        int count = 0;
        for (int i : train) {
            if (task.labels[static_cast<size_t>(i)] != cls) continue;
            for (int j = 0; j < model_config_.in_dim; ++j) prototype[j] += task.features.at(i, j);
            count++;
        }
        if (count == 0) continue;   // class absent from the train split: nothing to send
        scale_in_place(prototype, 1.0 / static_cast<double>(count));
        packets.push_back(encode_prototype(*encoding_net_, prototype, cls, id_, task_index));
    }
    return packets;
}

LocalUpdateResult Client::local_update(const GnnParams& global_params, int task_index, int round, int total_rounds,
                                       Rng round_rng) {
    if (task_index < 0 || task_index >= static_cast<int>(dataset_.tasks.size()))
        throw std::invalid_argument("local_update: task index out of range");
    if (round < 1 || round > total_rounds) throw std::invalid_argument("local_update: round out of range");
    const TaskView& task = dataset_.tasks[static_cast<size_t>(task_index)];
    const ModelAdjacency& adj = adjacency_[static_cast<size_t>(task_index)];

    params_ = global_params;   // adopt the freshly distributed global model
    const double beta = flags_.replay ? hyper_.beta : 1.0;
    const ExperienceBuffer empty;
    const ExperienceBuffer& replay_buffer = flags_.replay ? buffer_ : empty;
    LossBuilder builder = [&](ad::Tape& tape, const std::vector<ad::Var>& vars, Rng& epoch_rng) {
        return combined_loss(tape, model_config_, vars, task, adj, replay_buffer, beta, true, epoch_rng);
    };
    auto [trained, final_loss] = train_epochs(std::move(params_), builder, train_, round_rng.child("train"));
    params_ = std::move(trained);

    LocalUpdateResult result;
    result.params = params_;
    result.final_loss = final_loss;
    result.train_node_count = static_cast<int>(task.train_rows().size());

    if (round == total_rounds && flags_.replay) {
        const double alpha = flags_.local_embeddings_only ? 1.0 : hyper_.alpha;
        Tensor z = local_global_embeddings(task, adj, params_, global_params, alpha);
        std::vector<int> train = task.train_rows();
        std::vector<int> cover = coverage_counts(z, task.labels, train, hyper_.epsilon);
        for (int cls : task.class_set) {
            for (int node : top_coverage_nodes(cover, task.labels, train, cls, hyper_.buffer_per_class)) {
                BufferEntry entry;
                entry.features = Tensor({model_config_.in_dim});
                for (int j = 0; j < model_config_.in_dim; ++j) entry.features[j] = task.features.at(node, j);
                entry.label = task.labels[static_cast<size_t>(node)];
                entry.source_task = task_index;
                buffer_.entries.push_back(std::move(entry));
                result.experience_nodes_added++;
            }
        }
    }

    if (round == 1 && flags_.packets) {
        result.packets = encode_task_prototypes(task_index);
        // Catch up over tasks whose first round this client missed, so the
        // cumulative distribution always equals its closed form.
        const double phi = flags_.cumulative_trajectory ? hyper_.phi : 0.0;
        for (int past = trajectory_ ? trajectory_->last_task + 1 : 0; past <= task_index; ++past)
            trajectory_ =
                update_trajectory(trajectory_, dataset_.tasks[static_cast<size_t>(past)], phi, dataset_.total_classes);
        result.trajectory = trajectory_;
    }
    return result;
}

}  // namespace fcgl
