#include "fcgl/simulation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fcgl/partition.hpp"

namespace fcgl {

namespace {

std::string dataset_label(const std::string& dataset) {
    if (dataset == "sbm" || dataset == "sbm-preset") return dataset;
    return std::filesystem::path(dataset).stem().string();
}

/// Keep the total_classes most frequent labeled classes (ties by id) and
/// remap them onto [0, total_classes). Everything else maps to -1.
std::map<int, int> global_class_map(const Graph& g, int total_classes) {
    std::map<int, int> counts;
    for (int l : g.labels)
        if (l >= 0) counts[l]++;
    if (static_cast<int>(counts.size()) < total_classes)
        throw std::runtime_error("dataset provides " + std::to_string(counts.size()) + " labeled classes but " +
                                 std::to_string(total_classes) + " are required (classes_per_task * tasks)");
    std::vector<std::pair<int, int>> order(counts.begin(), counts.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::map<int, int> remap;
    for (int rank = 0; rank < total_classes; ++rank) remap[order[static_cast<size_t>(rank)].first] = rank;
    return remap;
}

uint64_t params_fingerprint(const GnnParams& p) {
    const std::vector<double> flat = p.flatten();
    return stable_hash(std::string_view(reinterpret_cast<const char*>(flat.data()), flat.size() * sizeof(double)));
}

}  // namespace

void RunLog::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("run log: cannot open " + path + " for writing");
    for (const std::string& line : lines) out << line << "\n";
}

Rng client_round_stream(uint64_t seed, int client, int task_index, int round) {
    return Rng(seed)
        .child("client", static_cast<uint64_t>(client))
        .child("task", static_cast<uint64_t>(task_index))
        .child("round", static_cast<uint64_t>(round));
}

void apply_sparsity(std::vector<ClientDataset>& datasets, double feature_mask_rate, double edge_drop_rate,
                    double label_mask_rate, Rng rng) {
    for (auto& ds : datasets) {
        for (TaskView& task : ds.tasks) {
            Rng task_rng = rng.child("client", static_cast<uint64_t>(ds.client_id))
                               .child("task", static_cast<uint64_t>(task.task_index));
            if (feature_mask_rate > 0.0) {
                const int64_t total = task.features.size();
                const int64_t masked = std::llround(feature_mask_rate * static_cast<double>(total));
                std::vector<int64_t> idx(static_cast<size_t>(total));
                for (int64_t i = 0; i < total; ++i) idx[static_cast<size_t>(i)] = i;
                Rng fr = task_rng.child("features");
                fr.shuffle(idx);
                for (int64_t i = 0; i < masked; ++i) task.features[idx[static_cast<size_t>(i)]] = 0.0;
            }
            if (edge_drop_rate > 0.0 && !task.edges.empty()) {
                const int64_t dropped = std::llround(edge_drop_rate * static_cast<double>(task.edges.size()));
                std::vector<size_t> idx(task.edges.size());
                for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
                Rng er = task_rng.child("edges");
                er.shuffle(idx);
                std::vector<std::pair<int, int>> kept;
                for (size_t i = static_cast<size_t>(dropped); i < idx.size(); ++i)
                    kept.push_back(task.edges[idx[i]]);
                std::sort(kept.begin(), kept.end());
                task.edges = std::move(kept);
            }
            if (label_mask_rate > 0.0) {
                std::vector<int> train = task.train_rows();
                const int64_t demoted = std::llround(label_mask_rate * static_cast<double>(train.size()));
                Rng lr = task_rng.child("labels");
                lr.shuffle(train);
                for (int64_t i = 0; i < demoted; ++i) {
                    const int node = train[static_cast<size_t>(i)];
                    task.train_mask[static_cast<size_t>(node)] = 0;
                    task.labels[static_cast<size_t>(node)] = -1;
                }
            }
        }
    }
}

ExperimentSetup build_experiment(const ExperimentConfig& config, uint64_t seed) {
    config.validate();
    Rng root(seed);

    ExperimentSetup setup;
    if (config.dataset == "sbm-preset") {
        // The preset is one fixed benchmark graph; runs vary in splits,
        // initialization and training randomness only.
        SbmSpec spec = sbm_preset(config.sbm_seed_set ? config.sbm.seed : 90210);
        setup.graph = generate_sbm(spec);
    } else if (config.dataset == "sbm") {
        SbmSpec spec = config.sbm;
        if (!config.sbm_seed_set) spec.seed = root.child("sbm").key();
        setup.graph = generate_sbm(spec);
    } else {
        setup.graph = load_graph(config.dataset);
    }
    const Graph& graph = setup.graph;

    const int total_classes = config.classes_per_task * config.tasks;
    const std::map<int, int> class_map = global_class_map(graph, total_classes);

    // Louvain partition into client subgraphs.
    const CommunityAssignment assignment = louvain(graph, root.child("louvain").key());
    const std::vector<std::vector<int>> client_nodes = assign_clients(assignment, graph, config.clients);

    // Class-incremental task sequences per client. Nodes of globally
    // discarded classes leave the client graphs entirely.
    for (int k = 0; k < config.clients; ++k) {
        std::vector<int> kept_nodes;
        for (int n : client_nodes[static_cast<size_t>(k)]) {
            const int l = graph.labels[static_cast<size_t>(n)];
            if (l >= 0 && class_map.count(l)) kept_nodes.push_back(n);
        }
        auto [sub, node_map] = induced_subgraph(graph, kept_nodes);
        (void)node_map;
        for (int& l : sub.labels) l = class_map.at(l);
        ClientDataset ds =
            split_tasks(sub, config.classes_per_task, config.tasks, ClassOrder::frequency(), seed, k);
        for (TaskView& task : ds.tasks)
            split_train_val_test(task, config.train_ratio, config.val_ratio, config.test_ratio,
                                 root.child("masks", static_cast<uint64_t>(k))
                                     .child("task", static_cast<uint64_t>(task.task_index))
                                     .key());
        setup.datasets.push_back(std::move(ds));
    }
    apply_sparsity(setup.datasets, config.feature_mask_rate, config.edge_drop_rate, config.label_mask_rate,
                   root.child("sparsity"));
    for (const ClientDataset& ds : setup.datasets)
        for (const TaskView& task : ds.tasks)
            if (task.train_rows().empty())
                throw std::runtime_error("client " + std::to_string(ds.client_id) + " task " +
                                         std::to_string(task.task_index + 1) + " has no train nodes left");

    setup.model_config.variant = config.variant;
    setup.model_config.in_dim = graph.feature_dim();
    setup.model_config.hidden_dim = config.hidden_dim;
    setup.model_config.num_classes = total_classes;
    setup.model_config.dropout = config.dropout;
    setup.initial_params = GnnParams::init(setup.model_config, root.child("model-init"));
    setup.encoding = EncodingNet::build(graph.feature_dim(), total_classes, root.child("encoding-net").key());
    return setup;
}

MetricsReport run_experiment(const ExperimentConfig& config, uint64_t seed, RunLog* log) {
    ExperimentSetup setup = build_experiment(config, seed);
    Rng root(seed);
    const GnnConfig& model_config = setup.model_config;
    const EncodingNet& encoding = setup.encoding;
    GnnParams global = setup.initial_params;

    const MethodFlags flags = method_flags(config.method);
    std::vector<Client> clients;
    clients.reserve(static_cast<size_t>(config.clients));
    for (int k = 0; k < config.clients; ++k)
        clients.emplace_back(k, setup.datasets[static_cast<size_t>(k)], model_config, &encoding,
                             config.client_hyper(), config.train_hyper(), flags);

    MetricsReport report;
    report.method = method_name(config.method);
    report.dataset = dataset_label(config.dataset);
    report.seed = seed;
    report.config_echo = config.to_json();
    report.test_counts.assign(static_cast<size_t>(config.clients), std::vector<int>(static_cast<size_t>(config.tasks), 0));
    for (int k = 0; k < config.clients; ++k)
        for (int t = 0; t < config.tasks; ++t)
            report.test_counts[static_cast<size_t>(k)][static_cast<size_t>(t)] =
                static_cast<int>(clients[static_cast<size_t>(k)].dataset().tasks[static_cast<size_t>(t)].test_rows().size());

    if (log) {
        log->add({{"type", "config"}, {"seed", seed}, {"config", report.config_echo}});
        log->add({{"type", "model_init"}, {"seed", seed}, {"fingerprint", params_fingerprint(global)}});
        for (int k = 0; k < config.clients; ++k) {
            nlohmann::json tasks = nlohmann::json::array();
            for (const TaskView& task : clients[static_cast<size_t>(k)].dataset().tasks)
                tasks.push_back({{"task", task.task_index + 1},
                                 {"classes", task.class_set},
                                 {"nodes", task.num_nodes()},
                                 {"edges", task.edges.size()},
                                 {"train", task.train_rows().size()},
                                 {"val", task.val_rows().size()},
                                 {"test", task.test_rows().size()}});
            log->add({{"type", "task_manifest"}, {"client", k}, {"tasks", tasks}});
        }
    }

    GlobalBuffer global_buffer;
    std::vector<std::optional<GnnParams>> latest_params(static_cast<size_t>(config.clients));
    std::vector<std::optional<EvolutionTrajectory>> latest_trajectory(static_cast<size_t>(config.clients));
    const ReconConfig recon = config.recon_config();

    // Combined test accuracy of the current local models over tasks 0..t.
    auto combined_accuracy = [&](int through_task) {
        double acc = 0.0;
        for (int j = 0; j <= through_task; ++j) {
            double weighted = 0.0, weight_total = 0.0;
            for (int k = 0; k < config.clients; ++k) {
                const Client& cl = clients[static_cast<size_t>(k)];
                const TaskView& task = cl.dataset().tasks[static_cast<size_t>(j)];
                const double w = static_cast<double>(report.test_counts[static_cast<size_t>(k)][static_cast<size_t>(j)]);
                if (w <= 0.0) continue;
                weighted += w * evaluate(cl.params(), task, cl.task_adjacency(j), task.test_rows());
                weight_total += w;
            }
            acc += weight_total > 0.0 ? weighted / weight_total : 0.0;
        }
        return acc / static_cast<double>(through_task + 1);
    };

    report.matrix.tasks = config.tasks;
    report.matrix.per_client.assign(static_cast<size_t>(config.clients), {});

    for (int t = 0; t < config.tasks; ++t) {
        for (int r = 1; r <= config.rounds; ++r) {
            // Participation draw; at least one client always participates.
            std::vector<int> participants;
            Rng part_rng = root.child("participation")
                               .child("task", static_cast<uint64_t>(t))
                               .child("round", static_cast<uint64_t>(r));
            for (int k = 0; k < config.clients; ++k)
                if (config.client_participation_rate >= 1.0 || part_rng.bernoulli(config.client_participation_rate))
                    participants.push_back(k);
            if (participants.empty())
                participants.push_back(static_cast<int>(part_rng.below(config.clients)));

            // Local updates; independent per client, so they may fan out.
            std::vector<std::optional<LocalUpdateResult>> results(static_cast<size_t>(config.clients));
            if (config.workers > 1 && participants.size() > 1) {
                std::vector<std::future<LocalUpdateResult>> futures;
                futures.reserve(participants.size());
                for (int k : participants)
                    futures.push_back(std::async(std::launch::async, [&, k] {
                        return clients[static_cast<size_t>(k)].local_update(global, t, r, config.rounds,
                                                                            client_round_stream(seed, k, t, r));
                    }));
                for (size_t i = 0; i < participants.size(); ++i)
                    results[static_cast<size_t>(participants[i])] = futures[i].get();
            } else {
                for (int k : participants)
                    results[static_cast<size_t>(k)] =
                        clients[static_cast<size_t>(k)].local_update(global, t, r, config.rounds,
                                                                     client_round_stream(seed, k, t, r));
            }

            // Server intake in ascending client order.
            std::vector<ClientUpdate> updates;
            for (int k : participants) {
                LocalUpdateResult& res = *results[static_cast<size_t>(k)];
                latest_params[static_cast<size_t>(k)] = res.params;
                if (res.trajectory) latest_trajectory[static_cast<size_t>(k)] = res.trajectory;
                if (log)
                    log->add({{"type", "local_update"},
                              {"task", t + 1},
                              {"round", r},
                              {"client", k},
                              {"loss", res.final_loss},
                              {"train_nodes", res.train_node_count},
                              {"packets", res.packets.size()},
                              {"trajectory", res.trajectory.has_value()},
                              {"experience_added", res.experience_nodes_added}});
                ClientUpdate u;
                u.client_id = k;
                u.params = std::move(res.params);
                u.train_node_count = res.train_node_count;
                u.packets = std::move(res.packets);
                u.trajectory = res.trajectory;
                updates.push_back(std::move(u));
            }

            // Pseudo-prototype reconstruction on first-round packets.
            for (const ClientUpdate& u : updates) {
                for (size_t p = 0; p < u.packets.size(); ++p) {
                    ReconResult rec = reconstruct(u.packets[p], encoding, recon,
                                                  root.child("recon")
                                                      .child("task", static_cast<uint64_t>(t))
                                                      .child("client", static_cast<uint64_t>(u.client_id))
                                                      .child("packet", static_cast<uint64_t>(p)));
                    global_buffer.rows.push_back(
                        {std::move(rec.pseudo_prototype), rec.inferred_class, u.client_id, t});
                    if (log)
                        log->add({{"type", "reconstruction"},
                                  {"task", t + 1},
                                  {"round", r},
                                  {"client", u.client_id},
                                  {"class", rec.inferred_class},
                                  {"initial_loss", rec.initial_loss},
                                  {"final_loss", rec.final_loss}});
                }
            }

            global = aggregate(updates);
            if (log) {
                nlohmann::json ids = nlohmann::json::array();
                for (const ClientUpdate& u : updates) ids.push_back(u.client_id);
                log->add({{"type", "aggregate"},
                          {"task", t + 1},
                          {"round", r},
                          {"clients", ids},
                          {"fingerprint", params_fingerprint(global)}});
            }

            if (flags.transfer && !global_buffer.empty()) {
                std::vector<GnnParams> teachers;
                std::vector<EvolutionTrajectory> trajectories;
                for (int k = 0; k < config.clients; ++k)
                    if (latest_params[static_cast<size_t>(k)] && latest_trajectory[static_cast<size_t>(k)]) {
                        teachers.push_back(*latest_params[static_cast<size_t>(k)]);
                        trajectories.push_back(*latest_trajectory[static_cast<size_t>(k)]);
                    }
                if (!teachers.empty()) {
                    const std::vector<std::vector<int>> knn = buffer_knn(global_buffer, config.knn_k);
                    TransferResult tr = knowledge_transfer(global, teachers, trajectories, global_buffer, knn,
                                                           config.global_epochs, config.transfer_lr);
                    global = std::move(tr.params);
                    if (log)
                        log->add({{"type", "transfer"},
                                  {"task", t + 1},
                                  {"round", r},
                                  {"buffer_rows", global_buffer.size()},
                                  {"teachers", teachers.size()},
                                  {"losses", tr.loss_curve}});
                }
            }

            const double acc = combined_accuracy(t);
            report.curve.push_back({t + 1, r, acc});
            if (log) log->add({{"type", "round_eval"}, {"task", t + 1}, {"round", r}, {"accuracy", acc}});
        }

        // Row t of every client's accuracy matrix: its local model after the
        // task's final local update, on the test split of every seen task.
        for (int k = 0; k < config.clients; ++k) {
            const Client& cl = clients[static_cast<size_t>(k)];
            std::vector<double> row;
            for (int j = 0; j <= t; ++j) {
                const TaskView& task = cl.dataset().tasks[static_cast<size_t>(j)];
                row.push_back(evaluate(cl.params(), task, cl.task_adjacency(j), task.test_rows()));
            }
            if (log)
                log->add({{"type", "task_eval"}, {"task", t + 1}, {"client", k}, {"accuracies", row}});
            report.matrix.per_client[static_cast<size_t>(k)].push_back(std::move(row));
        }
    }

    // Combined matrix: per-cell convex combination over clients weighted by
    // each client's test-node count of the evaluated task.
    report.matrix.combined.assign(static_cast<size_t>(config.tasks), {});
    for (int i = 0; i < config.tasks; ++i) {
        for (int j = 0; j <= i; ++j) {
            double weighted = 0.0, total = 0.0;
            for (int k = 0; k < config.clients; ++k) {
                const double w = static_cast<double>(report.test_counts[static_cast<size_t>(k)][static_cast<size_t>(j)]);
                weighted += w * report.matrix.per_client[static_cast<size_t>(k)][static_cast<size_t>(i)][static_cast<size_t>(j)];
                total += w;
            }
            report.matrix.combined[static_cast<size_t>(i)].push_back(total > 0.0 ? weighted / total : 0.0);
        }
    }
    auto [am, fm] = compute_metrics(report.matrix.combined);
    report.am = am;
    report.fm = fm;
    if (log) {
        nlohmann::json rec = {{"type", "metrics"}, {"seed", seed}, {"am", report.am}};
        if (report.fm) rec["fm"] = *report.fm;
        log->add(rec);
    }
    return report;
}

std::string format_double(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

std::string results_csv(const std::vector<MetricsReport>& reports) {
    std::ostringstream out;
    out << "method,dataset,seed,task,client,metric,value\n";
    for (const MetricsReport& r : reports) {
        const std::string prefix = r.method + "," + r.dataset + "," + std::to_string(r.seed) + ",";
        const int tasks = r.matrix.tasks;
        for (size_t k = 0; k < r.matrix.per_client.size(); ++k) {
            for (int j = 0; j < tasks; ++j) {
                out << prefix << (j + 1) << "," << k << ",final_accuracy,"
                    << format_double(r.matrix.per_client[k][static_cast<size_t>(tasks - 1)][static_cast<size_t>(j)])
                    << "\n";
                out << prefix << (j + 1) << "," << k << ",diag_accuracy,"
                    << format_double(r.matrix.per_client[k][static_cast<size_t>(j)][static_cast<size_t>(j)]) << "\n";
            }
        }
        for (int j = 0; j < tasks; ++j)
            out << prefix << (j + 1) << ",all,final_accuracy,"
                << format_double(r.matrix.combined[static_cast<size_t>(tasks - 1)][static_cast<size_t>(j)]) << "\n";
        out << prefix << tasks << ",all,am," << format_double(r.am) << "\n";
        if (r.fm) out << prefix << tasks << ",all,fm," << format_double(*r.fm) << "\n";
    }
    return out.str();
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& values) {
    if (values.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return {mean, std::sqrt(var)};
}

}  // namespace

std::string summary_csv(const std::vector<MetricsReport>& reports) {
    // Group by (method, dataset) preserving first-appearance order.
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const MetricsReport& r : reports) {
        const auto key = std::make_pair(r.method, r.dataset);
        if (!groups.count(key)) keys.push_back(key);
        groups[key].first.push_back(r.am);
        if (r.fm) groups[key].second.push_back(*r.fm);
    }
    std::ostringstream out;
    out << "method,dataset,runs,am_mean,am_std,fm_mean,fm_std\n";
    for (const auto& key : keys) {
        const auto& [ams, fms] = groups[key];
        const auto [am_mean, am_std] = mean_std(ams);
        out << key.first << "," << key.second << "," << ams.size() << "," << format_double(am_mean) << ","
            << format_double(am_std);
        if (fms.empty()) {
            out << ",,";
        } else {
            const auto [fm_mean, fm_std] = mean_std(fms);
            out << "," << format_double(fm_mean) << "," << format_double(fm_std);
        }
        out << "\n";
    }
    return out.str();
}

void export_reports(const std::vector<MetricsReport>& reports, const std::string& out_dir) {
    if (reports.empty()) throw std::invalid_argument("export_reports: nothing to export");
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    {
        std::ofstream out(dir / "results.csv");
        if (!out) throw std::runtime_error("export: cannot write results.csv under " + out_dir);
        out << results_csv(reports);
    }
    {
        std::ofstream out(dir / "summary.csv");
        if (!out) throw std::runtime_error("export: cannot write summary.csv under " + out_dir);
        out << summary_csv(reports);
    }
}

}  // namespace fcgl
