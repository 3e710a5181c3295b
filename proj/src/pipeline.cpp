#include "regionembed/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "regionembed/csv.hpp"

namespace regionembed::pipeline {

namespace fs = std::filesystem;

json default_config() {
    return json{
        {"seed", 0},
        {"out", "out"},
        {"variant", "full"},
        {"data",
         {{"regions", ""},
          {"trips", ""},
          {"adjacency", ""},
          {"geojson", ""},
          {"pois", ""},
          {"checkins", ""},
          {"labels", ""},
          {"adjacency_tolerance", 1e-9}}},
        {"training",
         {{"epochs", 500},
          {"lr", 1e-3},
          {"dim", 96},
          {"k", 10},
          {"alpha", 0.5},
          {"gat_heads", 8},
          {"gat_layers", 1},
          {"fusion_heads", 4},
          {"ffn_hidden", 256},
          {"lambda_ac", 1.0},
          {"lambda_vc", 1.0},
          {"lambda_fc", 1.0},
          {"swap_od", false},
          {"vector_gate", false},
          {"cross_query", "stream"},
          {"leaky_slope", 0.2},
          {"early_stop_delta", 1e-6},
          {"early_stop_patience", 50},
          {"checkpoint_every", 0}}},
        {"kg",
         {{"dim", 32},
          {"margin", 1.0},
          {"epochs", 200},
          {"lr", 1e-2},
          {"negatives", 1},
          {"region_vectors", "mean_pool"}}},
        {"eval",
         {{"clusters", "auto"},
          {"restarts", 10},
          {"folds", 5},
          {"log1p", false},
          {"lambdas", json()}}},
        {"synth",
         {{"grid", "6x6"},
          {"communities", 4},
          {"trips_per_region", 12},
          {"pois_per_region", 12},
          {"poi_categories", 10},
          {"within_fraction", 0.8},
          {"hub_fraction", 1.0},
          {"hub_concentration", 2.0},
          {"poi_signal", 0.7},
          {"label_noise", 0.1},
          {"checkin_noise", 0.1}}},
    };
}

json merge_config(json base, const json& overrides) {
    if (!overrides.is_object() || !base.is_object()) return overrides;
    for (auto it = overrides.begin(); it != overrides.end(); ++it) {
        if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object()) {
            base[it.key()] = merge_config(base[it.key()], it.value());
        } else {
            base[it.key()] = it.value();
        }
    }
    return base;
}

TrainingConfig training_config_from_json(const json& config) {
    const json& t = config.at("training");
    TrainingConfig tc;
    tc.epochs = t.at("epochs").get<int>();
    tc.lr = t.at("lr").get<double>();
    tc.dim = t.at("dim").get<int>();
    tc.knn_k = t.at("k").get<int>();
    tc.alpha = t.at("alpha").get<double>();
    tc.gat_heads = t.at("gat_heads").get<int>();
    tc.gat_layers = t.at("gat_layers").get<int>();
    tc.fusion_heads = t.at("fusion_heads").get<int>();
    tc.ffn_hidden = t.at("ffn_hidden").get<int>();
    tc.lambda_ac = t.at("lambda_ac").get<double>();
    tc.lambda_vc = t.at("lambda_vc").get<double>();
    tc.lambda_fc = t.at("lambda_fc").get<double>();
    tc.swap_od = t.at("swap_od").get<bool>();
    tc.vector_gate = t.at("vector_gate").get<bool>();
    const std::string cross = t.at("cross_query").get<std::string>();
    if (cross == "global") {
        tc.cross_query = CrossQuerySource::Global;
    } else if (cross == "stream") {
        tc.cross_query = CrossQuerySource::Stream;
    } else {
        throw ValidationError("config: cross_query must be \"global\" or \"stream\"");
    }
    tc.leaky_slope = t.at("leaky_slope").get<double>();
    tc.early_stop_delta = t.at("early_stop_delta").get<double>();
    tc.early_stop_patience = t.at("early_stop_patience").get<int>();
    tc.checkpoint_every = t.at("checkpoint_every").get<int>();
    tc.validate();
    return tc;
}

KgConfig kg_config_from_json(const json& config) {
    const json& k = config.at("kg");
    KgConfig kc;
    kc.dim = k.at("dim").get<int>();
    kc.margin = k.at("margin").get<double>();
    kc.epochs = k.at("epochs").get<int>();
    kc.lr = k.at("lr").get<double>();
    kc.negatives_per_positive = k.at("negatives").get<int>();
    const std::string mode = k.at("region_vectors").get<std::string>();
    if (mode == "entity") {
        kc.mean_pool_regions = false;
    } else if (mode == "mean_pool") {
        kc.mean_pool_regions = true;
    } else {
        throw ValidationError("config: kg.region_vectors must be \"entity\" or \"mean_pool\"");
    }
    return kc;
}

SynthConfig synth_config_from_json(const json& config) {
    const json& s = config.at("synth");
    SynthConfig sc;
    const std::string grid = s.at("grid").get<std::string>();
    const auto x = grid.find('x');
    if (x == std::string::npos) {
        throw ValidationError("config: synth.grid must look like \"6x6\"");
    }
    try {
        sc.grid_w = std::stoi(grid.substr(0, x));
        sc.grid_h = std::stoi(grid.substr(x + 1));
    } catch (const std::exception&) {
        throw ValidationError("config: synth.grid must look like \"6x6\"");
    }
    sc.communities = s.at("communities").get<int>();
    sc.trips_per_region = s.at("trips_per_region").get<int>();
    sc.pois_per_region = s.at("pois_per_region").get<int>();
    sc.poi_categories = s.at("poi_categories").get<int>();
    sc.within_community_fraction = s.at("within_fraction").get<double>();
    sc.hub_fraction = s.at("hub_fraction").get<double>();
    sc.hub_concentration = s.at("hub_concentration").get<double>();
    sc.poi_signal = s.at("poi_signal").get<double>();
    sc.label_noise = s.at("label_noise").get<double>();
    sc.checkin_noise = s.at("checkin_noise").get<double>();
    sc.seed = config.at("seed").get<uint64_t>();
    sc.validate();
    return sc;
}

LoadedData LoadedData::from_city(const SynthCity& city) {
    LoadedData data;
    data.registry = city.registry;
    data.trips = city.trips;
    data.adjacency = city.adjacency;
    data.pois = city.pois;
    data.checkins = city.checkins;
    data.labels = city.labels;
    return data;
}

// ---- input preparation --------------------------------------------------------

PreparedInputs prepare_inputs(const LoadedData& data, const VariantSpec& variant,
                              const TrainingConfig& training, const KgConfig& kg, uint64_t seed,
                              const RegionVectors* precomputed_kg_vectors) {
    PreparedInputs prep;
    const int n = data.registry.size();
    prep.inputs.n = n;

    if (variant.use_ac) {
        if (data.trips.empty()) {
            throw ValidationError("the mobility stream needs a nonempty trips file");
        }
        const Dense counts = cooccurrence_counts(data.trips, n);
        prep.ac = accessibility_correlation(od_distributions(counts), training.alpha);
        prep.graph_ac = knn_graph(*prep.ac, training.knn_k);
        prep.inputs.mask_ac = attention_mask(*prep.graph_ac);
        prep.inputs.trip_pair_counts = Tensor::from_dense(aggregate_trip_pairs(data.trips, n));
    }
    if (variant.use_vc) {
        if (!data.adjacency.has_value()) {
            throw ValidationError("the neighborhood stream needs adjacency data");
        }
        prep.vc = vicinity_correlation(*data.adjacency);
        prep.graph_vc = knn_graph(*prep.vc, training.knn_k);
        prep.inputs.mask_vc = attention_mask(*prep.graph_vc);
        prep.inputs.vc_target = Tensor::from_dense(prep.vc->m);
    }
    if (variant.use_fc) {
        if (precomputed_kg_vectors != nullptr) {
            prep.kg_vectors = *precomputed_kg_vectors;
        } else {
            if (data.pois.empty()) {
                throw ValidationError("the functionality stream needs a nonempty POI file");
            }
            auto [vocab, triples] = build_kg(data.pois, data.registry);
            Rng kg_rng = Rng(seed).substream("kg");
            KgTrainResult trained = train_kg(triples, vocab, kg, kg_rng);
            prep.kg_final_loss = trained.epoch_losses.empty() ? 0.0 : trained.epoch_losses.back();
            prep.kg_vectors =
                region_functionality_vectors(trained.params, vocab, triples, kg.mean_pool_regions);
        }
        prep.fc = functionality_correlation(prep.kg_vectors->vectors);
        prep.graph_fc = knn_graph(*prep.fc, training.knn_k);
        prep.inputs.mask_fc = attention_mask(*prep.graph_fc);
        prep.inputs.fc_target = Tensor::from_dense(prep.fc->m);
        prep.inputs.kg_vectors = prep.kg_vectors->vectors;
        prep.inputs.has_kg_vectors = true;
    }
    return prep;
}

VariantRun run_variant(const LoadedData& data, Variant variant, const TrainingConfig& training,
                       const KgConfig& kg, uint64_t seed,
                       const RegionVectors* precomputed_kg_vectors) {
    const VariantSpec spec = variant_spec(variant);
    PreparedInputs prep =
        prepare_inputs(data, spec, training, kg, seed, precomputed_kg_vectors);
    Rng init_rng = Rng(seed).substream("init");
    Model model(training, spec, prep.inputs, init_rng);
    FitResult fitted = fit(model, prep.inputs, training);
    VariantRun run;
    run.embedding = std::move(fitted.embedding);
    run.log = std::move(fitted.log);
    run.early_stopped = fitted.early_stopped;
    return run;
}

// ---- subcommand machinery -------------------------------------------------------

namespace {

std::string resolve(const json& config, const char* key) {
    return config.at("data").at(key).get<std::string>();
}

bool has_path(const json& config, const char* key) {
    return config.at("data").contains(key) && config.at("data").at(key).is_string() &&
           !config.at("data").at(key).get<std::string>().empty();
}

LoadedData load_for_variant(const json& config, const VariantSpec& variant, bool want_eval_data) {
    LoadedData data;
    if (!has_path(config, "regions")) {
        throw ValidationError("config: data.regions is required");
    }
    data.registry = load_regions(resolve(config, "regions"));
    if (variant.use_ac) {
        if (!has_path(config, "trips")) throw ValidationError("config: data.trips is required");
        data.trips = load_trips(resolve(config, "trips"), data.registry);
    }
    if (variant.use_vc) {
        if (has_path(config, "adjacency")) {
            data.adjacency =
                load_adjacency(resolve(config, "adjacency"), data.registry, &data.warnings);
        } else if (has_path(config, "geojson")) {
            data.adjacency = adjacency_from_polygons(
                resolve(config, "geojson"), data.registry,
                config.at("data").at("adjacency_tolerance").get<double>());
        } else {
            throw ValidationError("config: the neighborhood stream needs data.adjacency or "
                                  "data.geojson");
        }
    }
    if (variant.use_fc) {
        if (!has_path(config, "pois")) throw ValidationError("config: data.pois is required");
        data.pois = load_pois(resolve(config, "pois"), data.registry);
    }
    if (want_eval_data) {
        if (has_path(config, "checkins")) {
            data.checkins = load_checkins(resolve(config, "checkins"), data.registry);
        }
        if (has_path(config, "labels")) {
            data.labels = load_labels(resolve(config, "labels"), data.registry);
        }
    }
    return data;
}

std::string hash_file(const std::string& path) {
    const std::string content = read_text_file(path);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fnv64:%016llx",
                  static_cast<unsigned long long>(fnv1a64(content)));
    return buf;
}

// Manifest: resolved config, seed and content hashes of every input and
// produced artifact. Hashes change iff inputs or config change.
void write_manifest(const std::string& out_dir, const std::string& subcommand, const json& config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    json manifest;
    manifest["subcommand"] = subcommand;
    manifest["seed"] = config.at("seed");
    manifest["config"] = config;
    json in = json::object();
    for (const auto& path : inputs) in[path] = hash_file(path);
    json out = json::object();
    for (const auto& path : outputs) out[path] = hash_file(path);
    manifest["inputs"] = in;
    manifest["outputs"] = out;
    write_text_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
}

std::vector<std::string> input_paths(const json& config) {
    std::vector<std::string> paths;
    for (const char* key : {"regions", "trips", "adjacency", "geojson", "pois", "checkins",
                            "labels"}) {
        if (has_path(config, key)) paths.push_back(resolve(config, key));
    }
    return paths;
}

void ensure_out_dir(const json& config) {
    const std::string out = config.at("out").get<std::string>();
    if (out.empty()) throw ValidationError("config: out directory is required");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw ValidationError("cannot create output directory: " + out);
}

int eval_cluster_count(const json& config, const std::optional<GroundTruthLabels>& labels) {
    const json& clusters = config.at("eval").at("clusters");
    if (clusters.is_number_integer()) return clusters.get<int>();
    if (clusters.is_string() && clusters.get<std::string>() == "auto") {
        if (!labels.has_value()) return 12;
        std::map<int, int> distinct;
        for (int l : *labels) distinct.emplace(l, 0);
        return std::max<int>(1, static_cast<int>(distinct.size()));
    }
    throw ValidationError("config: eval.clusters must be an integer or \"auto\"");
}

std::vector<double> lambda_grid_from_config(const json& config) {
    const json& l = config.at("eval").at("lambdas");
    if (l.is_null()) return default_lambda_grid();
    std::vector<double> grid;
    for (const auto& v : l) grid.push_back(v.get<double>());
    if (grid.empty()) throw ValidationError("config: eval.lambdas must not be empty");
    return grid;
}

void write_training_log(const std::string& path, const std::vector<LossBreakdown>& log) {
    std::string out = "epoch,loss_ac,loss_vc,loss_fc,total\n";
    for (size_t e = 0; e < log.size(); ++e) {
        out += std::to_string(e) + "," + format_double(log[e].ac) + "," +
               format_double(log[e].vc) + "," + format_double(log[e].fc) + "," +
               format_double(log[e].total) + "\n";
    }
    write_text_file(path, out);
}

Dense load_embeddings(const std::string& path, const RegionRegistry& registry) {
    RegionVectors vectors = load_region_vectors_csv(path, registry);
    for (size_t i = 0; i < vectors.flagged.size(); ++i) {
        if (vectors.flagged[i]) {
            throw ValidationError(path + ": missing embedding for region \"" +
                                  registry.id(static_cast<int>(i)) + "\"");
        }
    }
    return vectors.vectors;
}

void write_embeddings(const std::string& path, const Dense& embedding,
                      const RegionRegistry& registry) {
    RegionVectors v;
    v.vectors = embedding;
    v.flagged.assign(static_cast<size_t>(embedding.rows), 0);
    write_region_vectors_csv(path, v, registry);
}

json clustering_metrics(const json& config, const ClusteringResult& result, int k) {
    return json{{"task", "clustering"},
                {"variant", config.at("variant")},
                {"seed", config.at("seed")},
                {"clusters", k},
                {"nmi", result.nmi},
                {"ari", result.ari},
                {"kmeans_objective", result.objective}};
}

json popularity_metrics(const json& config, const RegressionResult& result) {
    return json{{"task", "popularity"}, {"variant", config.at("variant")},
                {"seed", config.at("seed")}, {"mae", result.mae},
                {"rmse", result.rmse},      {"r2", result.r2},
                {"lambda", result.lambda}};
}

void write_clusters_csv(const std::string& path, const std::vector<int>& assignment,
                        const RegionRegistry& registry) {
    std::string out = "region_id,cluster\n";
    for (int i = 0; i < registry.size(); ++i) {
        out += csv_quote(registry.id(i)) + "," + std::to_string(assignment[static_cast<size_t>(i)]) +
               "\n";
    }
    write_text_file(path, out);
}

void write_clusters_geojson(const std::string& geojson_path, const std::string& out_path,
                            const std::vector<int>& assignment, const RegionRegistry& registry) {
    json doc = json::parse(read_text_file(geojson_path));
    for (auto& feature : doc.at("features")) {
        const std::string id = feature.at("properties").at("region_id").get<std::string>();
        const int region = registry.find(id);
        if (region >= 0) {
            feature["properties"]["cluster"] = assignment[static_cast<size_t>(region)];
        }
    }
    write_text_file(out_path, doc.dump(1) + "\n");
}

// Region vectors reused across stages when the out directory already has
// them (written by train-kg); otherwise trained in place.
std::optional<RegionVectors> stored_kg_vectors(const json& config,
                                               const RegionRegistry& registry) {
    const std::string path = config.at("out").get<std::string>() + "/kg_region_vectors.csv";
    if (!fs::exists(path)) return std::nullopt;
    return load_region_vectors_csv(path, registry);
}

// ---- subcommands ---------------------------------------------------------------

json run_synth(const json& config) {
    ensure_out_dir(config);
    const std::string out = config.at("out").get<std::string>();
    const SynthConfig sc = synth_config_from_json(config);
    const SynthCity city = generate_city(sc);
    write_city(city, out);

    // A ready-to-run config pointing at the generated files.
    json city_config = default_config();
    city_config["seed"] = config.at("seed");
    city_config["out"] = "run";
    city_config["data"]["regions"] = "regions.csv";
    city_config["data"]["trips"] = "trips.csv";
    city_config["data"]["geojson"] = "regions.geojson";
    city_config["data"]["pois"] = "pois.csv";
    city_config["data"]["checkins"] = "checkins.csv";
    city_config["data"]["labels"] = "labels.csv";
    city_config["synth"] = config.at("synth");
    write_text_file(out + "/config.json", city_config.dump(2) + "\n");

    const std::vector<std::string> outputs = {
        out + "/regions.csv",  out + "/trips.csv",    out + "/adjacency.csv",
        out + "/pois.csv",     out + "/checkins.csv", out + "/labels.csv",
        out + "/regions.geojson", out + "/config.json"};
    write_manifest(out, "synth", config, {}, outputs);
    return json{{"subcommand", "synth"},
                {"regions", city.registry.size()},
                {"trips", city.trips.size()},
                {"pois", city.pois.size()},
                {"out", out}};
}

json run_train_kg(const json& config) {
    ensure_out_dir(config);
    const std::string out = config.at("out").get<std::string>();
    if (!has_path(config, "regions") || !has_path(config, "pois")) {
        throw ValidationError("train-kg needs data.regions and data.pois");
    }
    const RegionRegistry registry = load_regions(resolve(config, "regions"));
    const std::vector<PoiRecord> pois = load_pois(resolve(config, "pois"), registry);
    if (pois.empty()) throw ValidationError("train-kg: POI file has no rows");
    auto [vocab, triples] = build_kg(pois, registry);
    const KgConfig kc = kg_config_from_json(config);
    Rng kg_rng = Rng(config.at("seed").get<uint64_t>()).substream("kg");
    KgTrainResult trained = train_kg(triples, vocab, kc, kg_rng);
    const RegionVectors vectors =
        region_functionality_vectors(trained.params, vocab, triples, kc.mean_pool_regions);

    write_triples_csv(out + "/kg_triples.csv", triples, vocab);
    write_region_vectors_csv(out + "/kg_region_vectors.csv", vectors, registry);
    write_manifest(out, "train-kg", config, input_paths(config),
                   {out + "/kg_triples.csv", out + "/kg_region_vectors.csv"});
    return json{{"subcommand", "train-kg"},
                {"entities", vocab.num_entities()},
                {"relations", vocab.num_relations()},
                {"triples", triples.size()},
                {"initial_loss", trained.epoch_losses.empty() ? 0.0 : trained.epoch_losses.front()},
                {"final_loss", trained.epoch_losses.empty() ? 0.0 : trained.epoch_losses.back()}};
}

json run_build_graphs(const json& config) {
    ensure_out_dir(config);
    const std::string out = config.at("out").get<std::string>();
    const VariantSpec variant = variant_spec(parse_variant(config.at("variant").get<std::string>()));
    const TrainingConfig tc = training_config_from_json(config);
    const KgConfig kc = kg_config_from_json(config);
    LoadedData data = load_for_variant(config, variant, false);
    const auto stored = stored_kg_vectors(config, data.registry);
    PreparedInputs prep = prepare_inputs(data, variant, tc, kc,
                                         config.at("seed").get<uint64_t>(),
                                         stored.has_value() ? &*stored : nullptr);

    std::vector<std::string> outputs;
    auto dump_stream = [&](const char* name, const std::optional<CorrelationMatrix>& corr,
                           const std::optional<RegionGraph>& graph) {
        if (!corr.has_value()) return;
        const std::string corr_path = out + "/corr_" + name + ".csv";
        const std::string graph_path = out + "/graph_" + name + ".csv";
        write_correlation_csv(corr_path, *corr, data.registry);
        write_graph_csv(graph_path, *graph, data.registry);
        outputs.push_back(corr_path);
        outputs.push_back(graph_path);
    };
    dump_stream("ac", prep.ac, prep.graph_ac);
    dump_stream("vc", prep.vc, prep.graph_vc);
    dump_stream("fc", prep.fc, prep.graph_fc);
    if (prep.kg_vectors.has_value() && !stored.has_value()) {
        write_region_vectors_csv(out + "/kg_region_vectors.csv", *prep.kg_vectors, data.registry);
        outputs.push_back(out + "/kg_region_vectors.csv");
    }
    write_manifest(out, "build-graphs", config, input_paths(config), outputs);
    json report{{"subcommand", "build-graphs"}, {"outputs", outputs}};
    if (!data.warnings.empty()) report["warnings"] = data.warnings;
    return report;
}

json run_train(const json& config) {
    ensure_out_dir(config);
    const std::string out = config.at("out").get<std::string>();
    const Variant variant = parse_variant(config.at("variant").get<std::string>());
    const VariantSpec spec = variant_spec(variant);
    const TrainingConfig tc = training_config_from_json(config);
    const KgConfig kc = kg_config_from_json(config);
    const uint64_t seed = config.at("seed").get<uint64_t>();

    LoadedData data = load_for_variant(config, spec, false);
    const auto stored = stored_kg_vectors(config, data.registry);
    PreparedInputs prep =
        prepare_inputs(data, spec, tc, kc, seed, stored.has_value() ? &*stored : nullptr);
    Rng init_rng = Rng(seed).substream("init");
    Model model(tc, spec, prep.inputs, init_rng);
    std::vector<std::string> outputs;
    EpochCallback checkpoints;
    if (tc.checkpoint_every > 0) {
        checkpoints = [&](int epoch, const Model& m) {
            char name[48];
            std::snprintf(name, sizeof(name), "/checkpoint_epoch%04d.bin", epoch);
            save_checkpoint(out + name, m);
            outputs.push_back(out + name);
        };
    }
    FitResult fitted = fit(model, prep.inputs, tc, checkpoints);

    if (prep.kg_vectors.has_value() && !stored.has_value()) {
        write_region_vectors_csv(out + "/kg_region_vectors.csv", *prep.kg_vectors, data.registry);
        outputs.push_back(out + "/kg_region_vectors.csv");
    }
    save_checkpoint(out + "/checkpoint.bin", model);
    write_embeddings(out + "/embeddings.csv", fitted.embedding, data.registry);
    write_training_log(out + "/training_log.csv", fitted.log);
    outputs.insert(outputs.end(),
                   {out + "/checkpoint.bin", out + "/embeddings.csv", out + "/training_log.csv"});
    write_manifest(out, "train", config, input_paths(config), outputs);

    json report{{"subcommand", "train"},
                {"variant", variant_name(variant)},
                {"epochs_run", fitted.log.size()},
                {"early_stopped", fitted.early_stopped}};
    if (!fitted.log.empty()) {
        report["initial_loss"] = fitted.log.front().total;
        report["final_loss"] = fitted.log.back().total;
    }
    return report;
}

json run_embed(const json& config) {
    ensure_out_dir(config);
    const std::string out = config.at("out").get<std::string>();
    const VariantSpec spec = variant_spec(parse_variant(config.at("variant").get<std::string>()));
    const TrainingConfig tc = training_config_from_json(config);
    const KgConfig kc = kg_config_from_json(config);
    const uint64_t seed = config.at("seed").get<uint64_t>();

    LoadedData data = load_for_variant(config, spec, false);
    const auto stored = stored_kg_vectors(config, data.registry);
    if (spec.use_fc && !stored.has_value()) {
        throw ValidationError("embed: " + out +
                              "/kg_region_vectors.csv not found; run train-kg or train first");
    }
    PreparedInputs prep =
        prepare_inputs(data, spec, tc, kc, seed, stored.has_value() ? &*stored : nullptr);
    Rng init_rng = Rng(seed).substream("init");
    Model model(tc, spec, prep.inputs, init_rng);
    load_checkpoint(out + "/checkpoint.bin", model);
    Model::Outputs outputs = model.forward(prep.inputs);
    write_embeddings(out + "/embeddings.csv", outputs.embedding.to_dense(), data.registry);
    write_manifest(out, "embed", config, input_paths(config), {out + "/embeddings.csv"});
    return json{{"subcommand", "embed"}, {"embeddings", out + "/embeddings.csv"}};
}

json run_eval_cluster(const json& config) {
    ensure_out_dir(config);
    const std::string out = config.at("out").get<std::string>();
    if (!has_path(config, "regions") || !has_path(config, "labels")) {
        throw ValidationError("eval-cluster needs data.regions and data.labels");
    }
    const RegionRegistry registry = load_regions(resolve(config, "regions"));
    const GroundTruthLabels labels = load_labels(resolve(config, "labels"), registry);
    const Dense embeddings = load_embeddings(out + "/embeddings.csv", registry);
    const int k = eval_cluster_count(config, labels);
    Rng kmeans_rng = Rng(config.at("seed").get<uint64_t>()).substream("kmeans");
    const ClusteringResult result = evaluate_clustering(
        embeddings, labels, k, kmeans_rng, config.at("eval").at("restarts").get<int>());

    const json metrics = clustering_metrics(config, result, k);
    write_text_file(out + "/metrics_clustering.json", metrics.dump(2) + "\n");
    write_clusters_csv(out + "/clusters.csv", result.assignment, registry);
    std::vector<std::string> outputs = {out + "/metrics_clustering.json", out + "/clusters.csv"};
    if (has_path(config, "geojson")) {
        write_clusters_geojson(resolve(config, "geojson"), out + "/clusters.geojson",
                               result.assignment, registry);
        outputs.push_back(out + "/clusters.geojson");
    }
    std::vector<std::string> inputs = input_paths(config);
    inputs.push_back(out + "/embeddings.csv");
    write_manifest(out, "eval-cluster", config, inputs, outputs);
    return metrics;
}

json run_eval_popularity(const json& config) {
    ensure_out_dir(config);
    const std::string out = config.at("out").get<std::string>();
    if (!has_path(config, "regions") || !has_path(config, "checkins")) {
        throw ValidationError("eval-popularity needs data.regions and data.checkins");
    }
    const RegionRegistry registry = load_regions(resolve(config, "regions"));
    const CheckinVolumes volumes = load_checkins(resolve(config, "checkins"), registry);
    const Dense embeddings = load_embeddings(out + "/embeddings.csv", registry);
    Rng fold_rng = Rng(config.at("seed").get<uint64_t>()).substream("folds");
    const RegressionResult result = evaluate_popularity(
        embeddings, volumes, lambda_grid_from_config(config), fold_rng,
        config.at("eval").at("folds").get<int>(), config.at("eval").at("log1p").get<bool>());

    const json metrics = popularity_metrics(config, result);
    write_text_file(out + "/metrics_popularity.json", metrics.dump(2) + "\n");
    std::vector<std::string> inputs = input_paths(config);
    inputs.push_back(out + "/embeddings.csv");
    write_manifest(out, "eval-popularity", config, inputs, {out + "/metrics_popularity.json"});
    return metrics;
}

json run_all(const json& config) {
    ensure_out_dir(config);
    const std::string out = config.at("out").get<std::string>();
    const Variant variant = parse_variant(config.at("variant").get<std::string>());
    const VariantSpec spec = variant_spec(variant);
    const TrainingConfig tc = training_config_from_json(config);
    const KgConfig kc = kg_config_from_json(config);
    const uint64_t seed = config.at("seed").get<uint64_t>();

    LoadedData data = load_for_variant(config, spec, true);
    PreparedInputs prep = prepare_inputs(data, spec, tc, kc, seed);
    Rng init_rng = Rng(seed).substream("init");
    Model model(tc, spec, prep.inputs, init_rng);
    FitResult fitted = fit(model, prep.inputs, tc);

    std::vector<std::string> outputs;
    if (prep.kg_vectors.has_value()) {
        write_region_vectors_csv(out + "/kg_region_vectors.csv", *prep.kg_vectors, data.registry);
        outputs.push_back(out + "/kg_region_vectors.csv");
    }
    save_checkpoint(out + "/checkpoint.bin", model);
    write_embeddings(out + "/embeddings.csv", fitted.embedding, data.registry);
    write_training_log(out + "/training_log.csv", fitted.log);
    outputs.insert(outputs.end(),
                   {out + "/checkpoint.bin", out + "/embeddings.csv", out + "/training_log.csv"});

    json metrics{{"task", "all"},
                 {"variant", variant_name(variant)},
                 {"seed", config.at("seed")}};
    if (!fitted.log.empty()) {
        metrics["initial_loss"] = fitted.log.front().total;
        metrics["final_loss"] = fitted.log.back().total;
    }
    if (data.labels.has_value()) {
        const int k = eval_cluster_count(config, data.labels);
        Rng kmeans_rng = Rng(seed).substream("kmeans");
        const ClusteringResult cluster = evaluate_clustering(
            fitted.embedding, *data.labels, k, kmeans_rng,
            config.at("eval").at("restarts").get<int>());
        metrics["clusters"] = k;
        metrics["nmi"] = cluster.nmi;
        metrics["ari"] = cluster.ari;
        write_clusters_csv(out + "/clusters.csv", cluster.assignment, data.registry);
        outputs.push_back(out + "/clusters.csv");
        if (has_path(config, "geojson")) {
            write_clusters_geojson(resolve(config, "geojson"), out + "/clusters.geojson",
                                   cluster.assignment, data.registry);
            outputs.push_back(out + "/clusters.geojson");
        }
    }
    if (data.checkins.has_value()) {
        Rng fold_rng = Rng(seed).substream("folds");
        const RegressionResult pop = evaluate_popularity(
            fitted.embedding, *data.checkins, lambda_grid_from_config(config), fold_rng,
            config.at("eval").at("folds").get<int>(), config.at("eval").at("log1p").get<bool>());
        metrics["mae"] = pop.mae;
        metrics["rmse"] = pop.rmse;
        metrics["r2"] = pop.r2;
        metrics["lambda"] = pop.lambda;
    }
    write_text_file(out + "/metrics.json", metrics.dump(2) + "\n");
    outputs.push_back(out + "/metrics.json");
    write_manifest(out, "all", config, input_paths(config), outputs);
    return metrics;
}

json run_ablate(const json& config) {
    ensure_out_dir(config);
    const std::string out = config.at("out").get<std::string>();
    const TrainingConfig tc = training_config_from_json(config);
    const KgConfig kc = kg_config_from_json(config);
    const uint64_t seed = config.at("seed").get<uint64_t>();

    // Load once with everything; each variant picks what it uses.
    LoadedData data = load_for_variant(config, VariantSpec{}, true);
    if (!data.labels.has_value() || !data.checkins.has_value()) {
        throw ValidationError("ablate needs data.labels and data.checkins for the comparison");
    }
    // The SI stream is shared by several variants; train the KG once.
    PreparedInputs shared = prepare_inputs(data, variant_spec(Variant::Si), tc, kc, seed);
    const int k = eval_cluster_count(config, data.labels);

    std::string table = "variant,nmi,ari,mae,rmse,r2,lambda\n";
    json rows = json::array();
    std::vector<std::string> outputs;
    for (Variant variant : all_variants()) {
        const VariantSpec spec = variant_spec(variant);
        VariantRun run = run_variant(data, variant, tc, kc, seed,
                                     spec.use_fc ? &*shared.kg_vectors : nullptr);
        Rng kmeans_rng = Rng(seed).substream("kmeans");
        const ClusteringResult cluster =
            evaluate_clustering(run.embedding, *data.labels, k, kmeans_rng,
                                config.at("eval").at("restarts").get<int>());
        Rng fold_rng = Rng(seed).substream("folds");
        const RegressionResult pop = evaluate_popularity(
            run.embedding, *data.checkins, lambda_grid_from_config(config), fold_rng,
            config.at("eval").at("folds").get<int>(), config.at("eval").at("log1p").get<bool>());

        const char* name = variant_name(variant);
        table += std::string(name) + "," + format_double(cluster.nmi) + "," +
                 format_double(cluster.ari) + "," + format_double(pop.mae) + "," +
                 format_double(pop.rmse) + "," + format_double(pop.r2) + "," +
                 format_double(pop.lambda) + "\n";
        rows.push_back(json{{"variant", name},
                            {"nmi", cluster.nmi},
                            {"ari", cluster.ari},
                            {"mae", pop.mae},
                            {"rmse", pop.rmse},
                            {"r2", pop.r2},
                            {"lambda", pop.lambda}});
    }
    write_text_file(out + "/ablation.csv", table);
    outputs.push_back(out + "/ablation.csv");
    write_manifest(out, "ablate", config, input_paths(config), outputs);
    return json{{"subcommand", "ablate"}, {"clusters", k}, {"rows", rows}};
}

}  // namespace

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names = {"synth",        "build-graphs", "train-kg",
                                                   "train",        "embed",        "eval-cluster",
                                                   "eval-popularity", "ablate",    "all"};
    return names;
}

json run_subcommand(const std::string& subcommand, json config) {
    config = merge_config(default_config(), config);
    for (auto it = config.begin(); it != config.end(); ++it) {
        if (!default_config().contains(it.key())) {
            throw ValidationError("config: unknown top-level key \"" + std::string(it.key()) +
                                  "\"");
        }
    }
    if (subcommand == "synth") return run_synth(config);
    if (subcommand == "train-kg") return run_train_kg(config);
    if (subcommand == "build-graphs") return run_build_graphs(config);
    if (subcommand == "train") return run_train(config);
    if (subcommand == "embed") return run_embed(config);
    if (subcommand == "eval-cluster") return run_eval_cluster(config);
    if (subcommand == "eval-popularity") return run_eval_popularity(config);
    if (subcommand == "ablate") return run_ablate(config);
    if (subcommand == "all") return run_all(config);
    std::string valid;
    for (const auto& name : subcommands()) {
        if (!valid.empty()) valid += ", ";
        valid += name;
    }
    throw ValidationError("unknown subcommand \"" + subcommand + "\"; valid subcommands: " +
                          valid);
}

}  // namespace regionembed::pipeline
