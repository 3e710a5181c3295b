#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "regionembed/common.hpp"
#include "regionembed/data.hpp"
#include "regionembed/rng.hpp"
#include "regionembed/tensor.hpp"

namespace regionembed {

struct KnowledgeTriple {
    int head = 0;
    int relation = 0;
    int tail = 0;
    bool operator==(const KnowledgeTriple&) const = default;
};

// Entity order: regions (entity index == region index), then POIs in input
// order, then attribute values in first-appearance order. Relations: one per
// attribute field that occurs, in canonical field order, then LocatedIn; the
// upper half of the relation table holds the reversed twins.
struct KgVocab {
    std::vector<std::string> entities;
    std::vector<std::string> relations;  // forward relations then their twins
    int num_regions = 0;
    int num_forward_relations = 0;
    std::vector<uint8_t> region_has_poi;

    int num_entities() const { return static_cast<int>(entities.size()); }
    int num_relations() const { return static_cast<int>(relations.size()); }
    int reverse(int relation) const {
        return relation < num_forward_relations ? relation + num_forward_relations
                                                : relation - num_forward_relations;
    }
};

std::pair<KgVocab, std::vector<KnowledgeTriple>> build_kg(const std::vector<PoiRecord>& pois,
                                                          const RegionRegistry& registry);

struct TransDParams {
    Tensor entity;       // |ent| x d
    Tensor entity_proj;  // |ent| x d
    Tensor relation;     // |rel| x d
    Tensor relation_proj;

    int dim() const { return entity.cols(); }
    std::vector<Tensor> all() { return {entity, entity_proj, relation, relation_proj}; }
};

TransDParams init_transd(const KgVocab& vocab, int dim, Rng& rng);

// ||h_perp + r - t_perp||^2 with h_perp = (r_p h_p^T + I) h. Nonnegative;
// lower means more plausible.
double transd_score(const KnowledgeTriple& triple, const TransDParams& params);

struct KgConfig {
    int dim = 32;
    double margin = 1.0;
    int epochs = 200;
    double lr = 1e-2;
    int negatives_per_positive = 1;
    bool mean_pool_regions = true;
};

struct KgTrainResult {
    TransDParams params;
    TransDParams initial;  // snapshot before training, for rank comparisons
    std::vector<double> epoch_losses;
    // Largest entity/relation row norm observed after any epoch's
    // renormalization (the norm constraint holds iff this is <= 1).
    double max_embedding_norm = 0.0;
};

// Margin-ranking training with uniformly corrupted, filtered negatives.
// Entity and relation embeddings are renormalized onto the unit ball after
// each epoch.
KgTrainResult train_kg(const std::vector<KnowledgeTriple>& triples, const KgVocab& vocab,
                       const KgConfig& config, Rng& rng);

// Per-region functionality vectors. Default: the region's own entity row.
// mean_pool: average of the POI entity rows located in the region (regions
// with no POIs fall back to their entity row). Flags mark no-POI regions.
struct RegionVectors {
    Dense vectors;  // N x d
    std::vector<uint8_t> flagged;
};
RegionVectors region_functionality_vectors(const TransDParams& params, const KgVocab& vocab,
                                           const std::vector<KnowledgeTriple>& triples,
                                           bool mean_pool = false);

// Mean rank of each triple's true tail among all entities, excluding (h,r,*)
// tails that are themselves true triples.
double mean_filtered_rank(const TransDParams& params, const std::vector<KnowledgeTriple>& triples,
                          const KgVocab& vocab);

void write_triples_csv(const std::string& path, const std::vector<KnowledgeTriple>& triples,
                       const KgVocab& vocab);
void write_region_vectors_csv(const std::string& path, const RegionVectors& vectors,
                              const RegionRegistry& registry);
RegionVectors load_region_vectors_csv(const std::string& path, const RegionRegistry& registry);

}  // namespace regionembed
