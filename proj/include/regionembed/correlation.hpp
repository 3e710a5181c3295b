#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "regionembed/common.hpp"
#include "regionembed/data.hpp"

namespace regionembed {

enum class CorrKind { AcOrigin, AcDest, Ac, Vc, Fc };

// Symmetric region-pair similarity matrix. `flagged` marks regions whose
// underlying vector was zero (no trip mass / isolated / zero functionality
// vector); their similarities are defined as 0 rather than NaN.
struct CorrelationMatrix {
    CorrKind kind = CorrKind::Ac;
    Dense m;
    std::vector<uint8_t> flagged;
};

// kNN graph over regions. Each node carries its out-edges as
// (neighbor, correlation weight) pairs.
struct RegionGraph {
    int n = 0;
    int k = 0;
    std::vector<std::vector<std::pair<int, double>>> edges;
};

// Entry (i,j) counts trips with origin i and destination j.
Dense cooccurrence_counts(const std::vector<TripRecord>& trips, int n);

// Row i of p_origin: distribution over the origins of trips ending at i.
// Row i of p_dest: distribution over the destinations of trips starting at i.
// Rows with no mass are all-zero and flagged.
struct OdDistributions {
    Dense p_origin;
    Dense p_dest;
    std::vector<uint8_t> zero_origin_mass;
    std::vector<uint8_t> zero_dest_mass;
};
OdDistributions od_distributions(const Dense& counts);

// alpha blends the origin-pattern and destination-pattern similarities.
CorrelationMatrix accessibility_correlation(const OdDistributions& od, double alpha = 0.5);

// Cosine similarity of N-dimensional neighborhood indicators with the
// self-bit set, so adjacent regions share support and isolated regions are
// well defined.
CorrelationMatrix vicinity_correlation(const AdjacencySet& adj);

// Pairwise cosine similarity of per-region functionality vectors.
CorrelationMatrix functionality_correlation(const Dense& region_vectors);

// Highest-correlation peers become out-neighbors; ties break toward the
// lower region index. Nodes with fewer than k positive-similarity peers take
// all of them.
RegionGraph knn_graph(const CorrelationMatrix& corr, int k);

void write_correlation_csv(const std::string& path, const CorrelationMatrix& corr,
                           const RegionRegistry& registry);
void write_graph_csv(const std::string& path, const RegionGraph& graph,
                     const RegionRegistry& registry);

}  // namespace regionembed
