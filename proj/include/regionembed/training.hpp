#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "regionembed/correlation.hpp"
#include "regionembed/fusion.hpp"
#include "regionembed/gat.hpp"
#include "regionembed/tensor.hpp"
#include "regionembed/trace.hpp"

namespace regionembed {

struct TrainingConfig {
    int epochs = 500;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double lambda_ac = 1.0;
    double lambda_vc = 1.0;
    double lambda_fc = 1.0;
    int dim = 96;
    int knn_k = 10;
    int gat_heads = 8;
    int gat_layers = 1;
    double leaky_slope = 0.2;
    int fusion_heads = 4;
    int ffn_hidden = 256;
    double alpha = 0.5;  // blend of origin/destination accessibility patterns
    bool swap_od = false;
    bool vector_gate = false;
    CrossQuerySource cross_query = CrossQuerySource::Stream;
    double early_stop_delta = 1e-6;
    int early_stop_patience = 50;
    int checkpoint_every = 0;  // epochs between checkpoint callbacks; 0 = never

    void validate() const;
};

// Ablation variants. Uni-/bi-graph variants drop the other correlation
// streams and their losses; R2V-g feeds the initial features straight into
// fusion; R2V-f replaces fusion by the unweighted mean of the GAT outputs
// with the losses applied to those outputs directly.
enum class Variant { Hm, Gn, Si, HmGn, HmSi, NoGat, NoFusion, Full };

Variant parse_variant(const std::string& name);
const char* variant_name(Variant v);
const std::vector<Variant>& all_variants();

struct VariantSpec {
    bool use_ac = true;
    bool use_vc = true;
    bool use_fc = true;
    bool use_gat = true;
    bool use_fusion = true;
};
VariantSpec variant_spec(Variant v);

struct LossBreakdown {
    double ac = 0.0;
    double vc = 0.0;
    double fc = 0.0;
    double total = 0.0;
};

// Everything the forward pass and losses consume, prepared once per run.
struct ModelInputs {
    int n = 0;
    Tensor mask_ac, mask_vc, mask_fc;  // attention masks of the active kNN graphs
    Tensor vc_target, fc_target;       // correlation matrices to reconstruct
    Tensor trip_pair_counts;           // N x N aggregated OD pair weights
    Dense kg_vectors;                  // N x d_kg functionality vectors
    bool has_kg_vectors = false;
};

class Model {
public:
    Model(const TrainingConfig& config, const VariantSpec& variant, const ModelInputs& inputs,
          Rng& rng);

    struct Outputs {
        Tensor e_ac, e_vc, e_fc;         // graph streams after GAT (or the inits)
        Tensor fused, global;            // fusion path (when enabled)
        Tensor dec_ac, dec_vc, dec_fc;   // loss-facing stream representations
        Tensor e_o, e_d;                 // origin/destination projections
        Tensor embedding;                // final region embedding
    };
    Outputs forward(const ModelInputs& inputs, ForwardTrace* trace = nullptr) const;

    const VariantSpec& variant() const { return variant_; }
    const TrainingConfig& config() const { return config_; }
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    Tensor parameter(const std::string& name) const;

private:
    TrainingConfig config_;
    VariantSpec variant_;
    Tensor init_ac_, init_vc_, init_fc_;
    Tensor kg_const_;   // constant N x d_kg when KG vectors seed the FC stream
    Tensor fc_proj_;    // trainable d_kg -> dim projection
    std::vector<GatLayerParams> gat_ac_, gat_vc_, gat_fc_;
    GateParams gate_;
    EncoderParams encoder_;
    DecoderParams dec_ac_, dec_vc_, dec_fc_;
    Tensor w_o_, w_d_;
};

// Weighted negative log likelihood of the observed OD pairs under full
// row softmaxes of the pairwise logits (both conditioning directions).
// swap_od flips which end of each trip conditions the softmax.
Tensor ac_loss(const Tensor& e_o, const Tensor& e_d, const Tensor& trip_pair_counts,
               bool swap_od = false);

// Mean squared reconstruction error between a correlation matrix and the
// Gram matrix of the stream embedding (all ordered pairs, diagonal included,
// normalized by N^2).
Tensor gram_reconstruction_loss(const Tensor& e, const Tensor& target);

struct FitResult {
    Dense embedding;
    std::vector<LossBreakdown> log;
    bool early_stopped = false;
};

// Invoked after the optimizer step of epochs the config selects via
// checkpoint_every (1-based epoch number).
using EpochCallback = std::function<void(int epoch, const Model& model)>;

FitResult fit(Model& model, const ModelInputs& inputs, const TrainingConfig& config,
              const EpochCallback& checkpoint_callback = {});

// Aggregates a trip list into the N x N pair-count matrix the AC loss uses.
Dense aggregate_trip_pairs(const std::vector<TripRecord>& trips, int n);

void save_checkpoint(const std::string& path, const Model& model);
void load_checkpoint(const std::string& path, Model& model);

}  // namespace regionembed
