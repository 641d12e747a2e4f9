#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fcgl/config.hpp"
#include "fcgl/simulation.hpp"

namespace {

std::vector<fcgl::MetricsReport> run_seeds(const fcgl::ExperimentConfig& config, const std::string& out_dir,
                                           const std::string& tag) {
    std::vector<fcgl::MetricsReport> reports;
    for (uint64_t seed : config.seeds) {
        fcgl::RunLog log;
        fcgl::MetricsReport report = fcgl::run_experiment(config, seed, &log);
        std::filesystem::create_directories(out_dir);
        std::ostringstream name;
        name << "run_log_" << (tag.empty() ? report.method : tag + "_" + report.method) << "_" << seed << ".jsonl";
        log.save((std::filesystem::path(out_dir) / name.str()).string());
        std::cout << report.method << " dataset=" << report.dataset << " seed=" << seed
                  << " am=" << fcgl::format_double(report.am)
                  << " fm=" << (report.fm ? fcgl::format_double(*report.fm) : std::string("n/a")) << "\n";
        reports.push_back(std::move(report));
    }
    return reports;
}

std::vector<uint64_t> parse_seed_list(const std::string& text) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) seeds.push_back(std::stoull(item));
    return seeds;
}

void apply_param_override(fcgl::ExperimentConfig& config, const std::string& name, const std::string& value) {
    nlohmann::json doc = config.to_json();
    if (!doc.contains(name)) throw std::invalid_argument("sweep: unknown parameter '" + name + "'");
    if (doc[name].is_number_integer() || doc[name].is_number_unsigned())
        doc[name] = std::stoll(value);
    else if (doc[name].is_number_float())
        doc[name] = std::stod(value);
    else if (doc[name].is_string())
        doc[name] = value;
    else
        throw std::invalid_argument("sweep: parameter '" + name + "' cannot be swept");
    config = fcgl::ExperimentConfig::from_json(doc);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated continual graph learning simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::string method_override;
    int64_t seed_override = -1;

    CLI::App* run = app.add_subcommand("run", "Run one experiment over the configured seeds");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--seed", seed_override, "Replace the config's seed list with a single seed");
    run->add_option("--method", method_override, "Override the configured method");
    run->add_option("--out", out_dir, "Output directory");

    std::string sweep_param;
    std::string sweep_values;
    CLI::App* sweep = app.add_subcommand("sweep", "Re-run the experiment for each value of one parameter");
    sweep->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sweep->add_option("--param", sweep_param, "Config key to sweep")->required();
    sweep->add_option("--values", sweep_values, "Comma-separated values")->required();
    sweep->add_option("--seed", seed_override, "Replace the config's seed list with a single seed");
    sweep->add_option("--out", out_dir, "Output directory");

    CLI::App* ablate = app.add_subcommand("ablate", "Run every method variant on the same config");
    ablate->add_option("--config", config_path, "Experiment config (JSON)")->required();
    ablate->add_option("--seed", seed_override, "Replace the config's seed list with a single seed");
    ablate->add_option("--out", out_dir, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        fcgl::ExperimentConfig config = fcgl::ExperimentConfig::from_file(config_path);
        if (seed_override >= 0) config.seeds = {static_cast<uint64_t>(seed_override)};
        if (!method_override.empty()) config.method = fcgl::parse_method(method_override);

        if (run->parsed()) {
            std::vector<fcgl::MetricsReport> reports = run_seeds(config, out_dir, "");
            fcgl::export_reports(reports, out_dir);
        } else if (sweep->parsed()) {
            std::vector<fcgl::MetricsReport> all;
            std::stringstream ss(sweep_values);
            std::string value;
            while (std::getline(ss, value, ',')) {
                if (value.empty()) continue;
                fcgl::ExperimentConfig swept = config;
                if (sweep_param == "seeds")
                    swept.seeds = parse_seed_list(value);
                else
                    apply_param_override(swept, sweep_param, value);
                const std::string tag = sweep_param + "=" + value;
                const std::string sub_dir = (std::filesystem::path(out_dir) / tag).string();
                std::vector<fcgl::MetricsReport> reports = run_seeds(swept, sub_dir, "");
                fcgl::export_reports(reports, sub_dir);
                for (fcgl::MetricsReport& r : reports) {
                    r.method += "[" + tag + "]";
                    all.push_back(std::move(r));
                }
            }
            fcgl::export_reports(all, out_dir);
        } else if (ablate->parsed()) {
            std::vector<fcgl::MetricsReport> all;
            for (fcgl::Method m : fcgl::all_methods()) {
                fcgl::ExperimentConfig variant = config;
                variant.method = m;
                std::vector<fcgl::MetricsReport> reports = run_seeds(variant, out_dir, "ablate");
                for (fcgl::MetricsReport& r : reports) all.push_back(std::move(r));
            }
            fcgl::export_reports(all, out_dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
