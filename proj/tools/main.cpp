// Command-line pipeline driver. Talks to the engine exclusively through the
// shared-library C API; its own job is flag parsing and config assembly.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "regionembed.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string resolve_against(const fs::path& base, const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    if (path.is_absolute()) return p;
    return (base / path).lexically_normal().string();
}

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw CLI::ValidationError("--config", "cannot open config file: " + path);
    }
    json config;
    try {
        in >> config;
    } catch (const json::exception& e) {
        throw CLI::ValidationError("--config", path + ": " + e.what());
    }
    // Paths inside a config file are relative to the file's directory.
    const fs::path base = fs::path(path).parent_path();
    if (config.contains("data") && config["data"].is_object()) {
        for (auto& [key, value] : config["data"].items()) {
            if (value.is_string() && key != "adjacency_tolerance") {
                value = resolve_against(base, value.get<std::string>());
            }
        }
    }
    if (config.contains("out") && config["out"].is_string()) {
        config["out"] = resolve_against(base, config["out"].get<std::string>());
    }
    return config;
}

int status_to_exit_code(regionembed_status status) {
    switch (status) {
        case REGIONEMBED_OK: return 0;
        case REGIONEMBED_E_NUMERIC: return 2;
        default: return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-graph urban region embeddings: pipeline driver"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<int> dim, k, epochs, clusters, communities;
    std::optional<double> alpha;
    std::optional<std::string> variant, out_dir, grid;
    std::optional<int> trips_per_region, pois_per_region, poi_categories;
    std::optional<double> within_fraction, poi_signal, label_noise, checkin_noise;
    std::optional<double> hub_concentration, hub_fraction;
    bool swap_od = false, log1p = false;

    const char* subcommand_names[] = {"synth",        "build-graphs",    "train-kg",
                                      "train",        "embed",           "eval-cluster",
                                      "eval-popularity", "ablate",       "all"};
    const char* subcommand_help[] = {
        "generate a synthetic city with planted communities",
        "compute correlation matrices and kNN graphs",
        "build the POI knowledge graph and train its embeddings",
        "train region embeddings",
        "recompute embeddings from a checkpoint",
        "cluster embeddings and score them against labels",
        "predict check-in popularity from embeddings",
        "run every ablation variant and tabulate the metrics",
        "full pipeline: graphs, KG, training, evaluation"};

    for (size_t i = 0; i < std::size(subcommand_names); ++i) {
        CLI::App* sub = app.add_subcommand(subcommand_names[i], subcommand_help[i]);
        sub->add_option("-c,--config", config_path, "JSON config file");
        sub->add_option("--seed", seed, "root random seed");
        sub->add_option("--dim", dim, "embedding dimension (default 96)");
        sub->add_option("--k", k, "kNN graph degree (default 10)");
        sub->add_option("--alpha", alpha, "origin/destination blend for AC (default 0.5)");
        sub->add_option("--epochs", epochs, "training epochs");
        sub->add_option("--variant", variant,
                        "pipeline variant: HM, GN, SI, HM+GN, HM+SI, R2V-g, R2V-f, full");
        sub->add_flag("--swap-od", swap_od, "condition the OD losses on the other trip end");
        sub->add_flag("--log1p", log1p, "predict log1p of check-in volume");
        sub->add_option("--clusters", clusters, "k for k-means (default: label count)");
        sub->add_option("-o,--out", out_dir, "output directory");
        if (std::string(subcommand_names[i]) == "synth") {
            sub->add_option("--grid", grid, "grid size, e.g. 6x6");
            sub->add_option("--communities", communities, "number of planted communities");
            sub->add_option("--trips-per-region", trips_per_region, "trips sampled per region");
            sub->add_option("--pois-per-region", pois_per_region, "POIs per region");
            sub->add_option("--poi-categories", poi_categories, "POI category vocabulary size");
            sub->add_option("--within-fraction", within_fraction,
                            "fraction of trips staying inside the community");
            sub->add_option("--hub-concentration", hub_concentration,
                            "log-normal sigma of per-origin destination hubs");
            sub->add_option("--hub-fraction", hub_fraction,
                            "fraction of regions with hub mobility");
            sub->add_option("--poi-signal", poi_signal,
                            "probability a POI follows its community's categories");
            sub->add_option("--label-noise", label_noise,
                            "fraction of cells with re-rolled community labels");
            sub->add_option("--checkin-noise", checkin_noise,
                            "check-in noise relative to the community signal");
        }
    }

    CLI11_PARSE(app, argc, argv);
    const std::string subcommand = app.get_subcommands().front()->get_name();

    json config = json::object();
    try {
        if (!config_path.empty()) config = load_config_file(config_path);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    }

    auto ensure = [&](const char* key) -> json& {
        if (!config.contains(key) || !config[key].is_object()) config[key] = json::object();
        return config[key];
    };
    if (seed) config["seed"] = *seed;
    if (out_dir) config["out"] = *out_dir;
    if (variant) config["variant"] = *variant;
    if (dim) ensure("training")["dim"] = *dim;
    if (k) ensure("training")["k"] = *k;
    if (alpha) ensure("training")["alpha"] = *alpha;
    if (epochs) ensure("training")["epochs"] = *epochs;
    if (swap_od) ensure("training")["swap_od"] = true;
    if (log1p) ensure("eval")["log1p"] = true;
    if (clusters) ensure("eval")["clusters"] = *clusters;
    if (grid) ensure("synth")["grid"] = *grid;
    if (communities) ensure("synth")["communities"] = *communities;
    if (trips_per_region) ensure("synth")["trips_per_region"] = *trips_per_region;
    if (pois_per_region) ensure("synth")["pois_per_region"] = *pois_per_region;
    if (poi_categories) ensure("synth")["poi_categories"] = *poi_categories;
    if (within_fraction) ensure("synth")["within_fraction"] = *within_fraction;
    if (hub_concentration) ensure("synth")["hub_concentration"] = *hub_concentration;
    if (hub_fraction) ensure("synth")["hub_fraction"] = *hub_fraction;
    if (poi_signal) ensure("synth")["poi_signal"] = *poi_signal;
    if (label_noise) ensure("synth")["label_noise"] = *label_noise;
    if (checkin_noise) ensure("synth")["checkin_noise"] = *checkin_noise;

    regionembed_ctx* ctx = regionembed_open(config.dump().c_str());
    if (ctx == nullptr) {
        std::fprintf(stderr, "error: %s\n", regionembed_last_error());
        return 1;
    }
    char* report = nullptr;
    const regionembed_status status = regionembed_run(ctx, subcommand.c_str(), &report);
    if (status == REGIONEMBED_OK) {
        if (report != nullptr) std::printf("%s\n", report);
    } else {
        std::fprintf(stderr, "error: %s\n", regionembed_last_error());
    }
    regionembed_free(report);
    regionembed_close(ctx);
    return status_to_exit_code(status);
}
