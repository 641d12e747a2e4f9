#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcgl/client.hpp"
#include "fcgl/gnn.hpp"
#include "fcgl/graph.hpp"
#include "fcgl/server.hpp"
#include "json.hpp"

namespace fcgl {

enum class Method {
    power,
    fedavg_finetune,
    power_wo_lgf,
    power_wo_gec,
    power_local_cm,
    power_noncumulative,
};

Method parse_method(const std::string& name);
std::string method_name(Method m);
MethodFlags method_flags(Method m);
std::vector<Method> all_methods();

struct ExperimentConfig {
    // Dataset: a JSON graph file path, "sbm-preset" for the built-in
    // synthetic benchmark, or "sbm" to use the sbm_* fields below.
    std::string dataset = "sbm-preset";
    SbmSpec sbm;
    bool sbm_seed_set = false;     // when false, the block-model seed derives from the run seed

    int clients = 3;
    int tasks = 3;
    int classes_per_task = 2;
    int rounds = 10;
    int local_epochs = 3;
    int global_epochs = 5;
    Method method = Method::power;

    GnnVariant variant = GnnVariant::gat;
    int hidden_dim = 64;
    double lr = 1e-2;
    double weight_decay = 5e-4;
    double dropout = 0.5;

    double alpha = 0.5;
    double beta = 0.3;
    double phi = 0.5;
    double epsilon = 0.1;
    int buffer_per_class = 1;
    int knn_k = 1;
    double transfer_lr = 2e-3;

    int recon_iterations = 300;
    ReconConfig::Optimizer recon_optimizer = ReconConfig::Optimizer::adam;
    double recon_tolerance = 1e-14;
    double recon_lr = 0.1;

    double train_ratio = 0.2;
    double val_ratio = 0.4;
    double test_ratio = 0.4;

    double feature_mask_rate = 0.0;
    double edge_drop_rate = 0.0;
    double label_mask_rate = 0.0;
    double client_participation_rate = 1.0;

    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
    int workers = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& doc);
    static ExperimentConfig from_file(const std::string& path);
    ClientHyper client_hyper() const;
    TrainHyper train_hyper() const;
    ReconConfig recon_config() const;
};

/// The built-in synthetic benchmark: 18 class-pure blocks over 6 classes
/// arranged so the three clients recover disjoint block sets with rotated
/// class frequencies, i.e. every client learns all classes but in a
/// different order and with different emphasis.
SbmSpec sbm_preset(uint64_t seed);

}  // namespace fcgl
