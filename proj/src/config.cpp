#include "fcgl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fcgl {

Method parse_method(const std::string& name) {
    if (name == "power") return Method::power;
    if (name == "fedavg_finetune") return Method::fedavg_finetune;
    if (name == "power_wo_lgf") return Method::power_wo_lgf;
    if (name == "power_wo_gec") return Method::power_wo_gec;
    if (name == "power_local_cm") return Method::power_local_cm;
    if (name == "power_noncumulative") return Method::power_noncumulative;
    throw std::invalid_argument("unknown method '" + name + "'");
}

std::string method_name(Method m) {
    switch (m) {
        case Method::power: return "power";
        case Method::fedavg_finetune: return "fedavg_finetune";
        case Method::power_wo_lgf: return "power_wo_lgf";
        case Method::power_wo_gec: return "power_wo_gec";
        case Method::power_local_cm: return "power_local_cm";
        case Method::power_noncumulative: return "power_noncumulative";
    }
    throw std::logic_error("unreachable");
}

MethodFlags method_flags(Method m) {
    MethodFlags f;
    switch (m) {
        case Method::power:
            break;
        case Method::fedavg_finetune:
            f.replay = false;
            f.packets = false;
            f.transfer = false;
            break;
        case Method::power_wo_lgf:
            f.replay = false;   // packets and transfer stay active
            break;
        case Method::power_wo_gec:
            f.packets = false;
            f.transfer = false;
            break;
        case Method::power_local_cm:
            f.local_embeddings_only = true;
            break;
        case Method::power_noncumulative:
            f.cumulative_trajectory = false;
            break;
    }
    return f;
}

std::vector<Method> all_methods() {
    return {Method::power,          Method::power_wo_lgf,      Method::power_wo_gec,
            Method::power_local_cm, Method::power_noncumulative, Method::fedavg_finetune};
}

void ExperimentConfig::validate() const {
    if (dataset.empty()) throw std::invalid_argument("config: dataset must be set");
    if (clients < 1) throw std::invalid_argument("config: at least one client required");
    if (tasks < 1 || classes_per_task < 1) throw std::invalid_argument("config: tasks and classes_per_task must be >= 1");
    if (rounds < 1) throw std::invalid_argument("config: at least one round per task required");
    if (local_epochs < 1 || global_epochs < 1)
        throw std::invalid_argument("config: epoch counts must be >= 1");
    if (hidden_dim < 1) throw std::invalid_argument("config: hidden_dim must be >= 1");
    if (lr < 0.0 || weight_decay < 0.0) throw std::invalid_argument("config: lr and weight_decay must be nonnegative");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("config: dropout must lie in [0,1)");
    client_hyper().validate();
    if (knn_k < 1) throw std::invalid_argument("config: knn_k must be >= 1");
    if (transfer_lr <= 0.0) throw std::invalid_argument("config: transfer_lr must be positive");
    recon_config().validate();
    if (train_ratio < 0.0 || val_ratio < 0.0 || test_ratio < 0.0 ||
        std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
        throw std::invalid_argument("config: split ratios must be nonnegative and sum to 1");
    for (double rate : {feature_mask_rate, edge_drop_rate, label_mask_rate})
        if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("config: sparsity rates must lie in [0,1]");
    if (client_participation_rate <= 0.0 || client_participation_rate > 1.0)
        throw std::invalid_argument("config: client_participation_rate must lie in (0,1]");
    if (seeds.empty()) throw std::invalid_argument("config: at least one seed required");
    if (workers < 1) throw std::invalid_argument("config: workers must be >= 1");
}

ClientHyper ExperimentConfig::client_hyper() const {
    ClientHyper h;
    h.alpha = alpha;
    h.beta = beta;
    h.phi = phi;
    h.epsilon = epsilon;
    h.buffer_per_class = buffer_per_class;
    return h;
}

TrainHyper ExperimentConfig::train_hyper() const {
    TrainHyper t;
    t.lr = lr;
    t.weight_decay = weight_decay;
    t.dropout = dropout;
    t.epochs = local_epochs;
    return t;
}

ReconConfig ExperimentConfig::recon_config() const {
    ReconConfig r;
    r.iterations = recon_iterations;
    r.optimizer = recon_optimizer;
    r.tolerance = recon_tolerance;
    r.adam_lr = recon_lr;
    return r;
}

namespace {

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) values.push_back(std::stoi(item));
    }
    return values;
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["dataset"] = dataset;
    j["clients"] = clients;
    j["tasks"] = tasks;
    j["classes_per_task"] = classes_per_task;
    j["rounds"] = rounds;
    j["local_epochs"] = local_epochs;
    j["global_epochs"] = global_epochs;
    j["method"] = method_name(method);
    j["gnn_variant"] = variant == GnnVariant::gat ? "gat" : "gcn";
    j["hidden_dim"] = hidden_dim;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["dropout"] = dropout;
    j["alpha"] = alpha;
    j["beta"] = beta;
    j["phi"] = phi;
    j["epsilon"] = epsilon;
    j["buffer_per_class"] = buffer_per_class;
    j["knn_k"] = knn_k;
    j["transfer_lr"] = transfer_lr;
    j["recon_iterations"] = recon_iterations;
    j["recon_optimizer"] = recon_optimizer == ReconConfig::Optimizer::adam ? "adam" : "lbfgs";
    j["recon_tolerance"] = recon_tolerance;
    j["recon_lr"] = recon_lr;
    j["train_ratio"] = train_ratio;
    j["val_ratio"] = val_ratio;
    j["test_ratio"] = test_ratio;
    j["feature_mask_rate"] = feature_mask_rate;
    j["edge_drop_rate"] = edge_drop_rate;
    j["label_mask_rate"] = label_mask_rate;
    j["client_participation_rate"] = client_participation_rate;
    j["seeds"] = seeds;
    j["workers"] = workers;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw std::invalid_argument("config: top-level object expected");
    static const std::set<std::string> known = {
        "dataset",        "clients",          "tasks",          "classes_per_task",
        "rounds",         "local_epochs",     "global_epochs",  "method",
        "gnn_variant",    "hidden_dim",       "lr",             "weight_decay",
        "dropout",        "alpha",            "beta",           "phi",
        "epsilon",        "buffer_per_class", "knn_k",          "transfer_lr",
        "recon_iterations", "recon_optimizer", "recon_tolerance", "recon_lr",
        "train_ratio",    "val_ratio",        "test_ratio",     "feature_mask_rate",
        "edge_drop_rate", "label_mask_rate",  "client_participation_rate",
        "seeds",          "workers",          "sbm_block_sizes", "sbm_block_classes",
        "sbm_intra_prob", "sbm_inter_prob",   "sbm_feature_dim", "sbm_separation",
        "sbm_noise_std",  "sbm_seed"};
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (!known.count(it.key())) throw std::invalid_argument("config: unknown key '" + it.key() + "'");

    ExperimentConfig c;
    auto get = [&](const char* key, auto& target) {
        if (doc.contains(key)) target = doc[key].get<std::decay_t<decltype(target)>>();
    };
    get("dataset", c.dataset);
    get("clients", c.clients);
    get("tasks", c.tasks);
    get("classes_per_task", c.classes_per_task);
    get("rounds", c.rounds);
    get("local_epochs", c.local_epochs);
    get("global_epochs", c.global_epochs);
    if (doc.contains("method")) c.method = parse_method(doc["method"].get<std::string>());
    if (doc.contains("gnn_variant")) {
        const std::string v = doc["gnn_variant"].get<std::string>();
        if (v == "gat")
            c.variant = GnnVariant::gat;
        else if (v == "gcn")
            c.variant = GnnVariant::gcn;
        else
            throw std::invalid_argument("config: gnn_variant must be 'gat' or 'gcn'");
    }
    get("hidden_dim", c.hidden_dim);
    get("lr", c.lr);
    get("weight_decay", c.weight_decay);
    get("dropout", c.dropout);
    get("alpha", c.alpha);
    get("beta", c.beta);
    get("phi", c.phi);
    get("epsilon", c.epsilon);
    get("buffer_per_class", c.buffer_per_class);
    get("knn_k", c.knn_k);
    get("transfer_lr", c.transfer_lr);
    get("recon_iterations", c.recon_iterations);
    if (doc.contains("recon_optimizer")) {
        const std::string v = doc["recon_optimizer"].get<std::string>();
        if (v == "adam")
            c.recon_optimizer = ReconConfig::Optimizer::adam;
        else if (v == "lbfgs")
            c.recon_optimizer = ReconConfig::Optimizer::lbfgs;
        else
            throw std::invalid_argument("config: recon_optimizer must be 'adam' or 'lbfgs'");
    }
    get("recon_tolerance", c.recon_tolerance);
    get("recon_lr", c.recon_lr);
    get("train_ratio", c.train_ratio);
    get("val_ratio", c.val_ratio);
    get("test_ratio", c.test_ratio);
    get("feature_mask_rate", c.feature_mask_rate);
    get("edge_drop_rate", c.edge_drop_rate);
    get("label_mask_rate", c.label_mask_rate);
    get("client_participation_rate", c.client_participation_rate);
    if (doc.contains("seeds")) c.seeds = doc["seeds"].get<std::vector<uint64_t>>();
    get("workers", c.workers);

    if (doc.contains("sbm_block_sizes") || doc.contains("sbm_block_classes")) {
        if (!doc.contains("sbm_block_sizes") || !doc.contains("sbm_block_classes"))
            throw std::invalid_argument("config: sbm_block_sizes and sbm_block_classes must be given together");
        const std::vector<int> sizes = parse_int_list(doc["sbm_block_sizes"].get<std::string>());
        const std::vector<int> classes = parse_int_list(doc["sbm_block_classes"].get<std::string>());
        if (sizes.size() != classes.size())
            throw std::invalid_argument("config: sbm block size/class lists must have equal length");
        c.sbm.blocks.clear();
        for (size_t i = 0; i < sizes.size(); ++i) c.sbm.blocks.emplace_back(sizes[i], classes[i]);
    }
    if (doc.contains("sbm_intra_prob")) c.sbm.intra_block_edge_prob = doc["sbm_intra_prob"].get<double>();
    if (doc.contains("sbm_inter_prob")) c.sbm.inter_block_edge_prob = doc["sbm_inter_prob"].get<double>();
    if (doc.contains("sbm_feature_dim")) c.sbm.feature_dim = doc["sbm_feature_dim"].get<int>();
    if (doc.contains("sbm_separation")) c.sbm.class_mean_separation = doc["sbm_separation"].get<double>();
    if (doc.contains("sbm_noise_std")) c.sbm.feature_noise_std = doc["sbm_noise_std"].get<double>();
    if (doc.contains("sbm_seed")) {
        c.sbm.seed = doc["sbm_seed"].get<uint64_t>();
        c.sbm_seed_set = true;
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config: " + path + ": " + e.what());
    }
    return from_json(doc);
}

SbmSpec sbm_preset(uint64_t seed) {
    SbmSpec spec;
    // Three size tiers per class rotation: clients end up with one block per
    // tier, so each sees all six classes with a different frequency order.
    const int sizes[6] = {52, 46, 40, 34, 28, 22};
    const int rotation[3][6] = {{0, 1, 2, 3, 4, 5}, {2, 3, 4, 5, 0, 1}, {4, 5, 0, 1, 2, 3}};
    for (int tier = 0; tier < 6; ++tier)
        for (int group = 0; group < 3; ++group)
            spec.blocks.emplace_back(sizes[tier], rotation[group][tier]);
    spec.intra_block_edge_prob = 0.6;
    spec.inter_block_edge_prob = 0.0;
    spec.feature_dim = 16;
    spec.class_mean_separation = 2.0;
    spec.feature_noise_std = 1.0;
    spec.seed = seed;
    return spec;
}

}  // namespace fcgl
