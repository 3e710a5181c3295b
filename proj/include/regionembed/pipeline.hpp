#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "regionembed/data.hpp"
#include "regionembed/evaluation.hpp"
#include "regionembed/kg.hpp"
#include "regionembed/synth.hpp"
#include "regionembed/training.hpp"

namespace regionembed::pipeline {

using nlohmann::json;

// Schema defaults for the single JSON config; unknown keys are rejected at
// the top level only (stage sections are free-form forward).
json default_config();

// Deep-merges overrides into base (objects merge, everything else replaces).
json merge_config(json base, const json& overrides);

TrainingConfig training_config_from_json(const json& config);
KgConfig kg_config_from_json(const json& config);
SynthConfig synth_config_from_json(const json& config);

// In-memory dataset for one run.
struct LoadedData {
    RegionRegistry registry;
    std::vector<TripRecord> trips;
    std::optional<AdjacencySet> adjacency;
    std::vector<PoiRecord> pois;
    std::optional<CheckinVolumes> checkins;
    std::optional<GroundTruthLabels> labels;
    std::vector<std::string> warnings;

    static LoadedData from_city(const SynthCity& city);
};

// Correlation matrices, graphs and model inputs derived from a dataset for
// one variant. KG vectors are trained here when the variant needs them and
// none are supplied.
struct PreparedInputs {
    ModelInputs inputs;
    std::optional<CorrelationMatrix> ac, vc, fc;
    std::optional<RegionGraph> graph_ac, graph_vc, graph_fc;
    std::optional<RegionVectors> kg_vectors;
    std::optional<double> kg_final_loss;
};
PreparedInputs prepare_inputs(const LoadedData& data, const VariantSpec& variant,
                              const TrainingConfig& training, const KgConfig& kg, uint64_t seed,
                              const RegionVectors* precomputed_kg_vectors = nullptr);

// Trains one variant end to end (in memory) and returns its embedding and
// loss log.
struct VariantRun {
    Dense embedding;
    std::vector<LossBreakdown> log;
    bool early_stopped = false;
};
VariantRun run_variant(const LoadedData& data, Variant variant, const TrainingConfig& training,
                       const KgConfig& kg, uint64_t seed,
                       const RegionVectors* precomputed_kg_vectors = nullptr);

// Executes one CLI subcommand against a resolved config and returns the run
// report. Artifacts land under config["out"], together with a manifest
// recording the config, seed and content hashes of inputs and outputs.
json run_subcommand(const std::string& subcommand, json config);

const std::vector<std::string>& subcommands();

}  // namespace regionembed::pipeline
