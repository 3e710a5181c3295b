#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "regionembed/common.hpp"

namespace regionembed {

// Canonical region index space. Indices are dense, 0..N-1, in the order the
// regions file declares them; every other loader resolves identifiers
// through this registry.
class RegionRegistry {
public:
    static RegionRegistry from_ids(std::vector<std::string> ids);

    int size() const { return static_cast<int>(ids_.size()); }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::string& id(int index) const { return ids_[static_cast<size_t>(index)]; }

    // -1 when unknown.
    int find(const std::string& id) const;
    // Throws ValidationError naming the identifier and source location.
    int require(const std::string& id, const std::string& file, int line) const;

private:
    std::vector<std::string> ids_;
    std::unordered_map<std::string, int> index_;
};

struct TripRecord {
    int origin = 0;
    int destination = 0;
    int64_t count = 1;
};

// Symmetric neighbor lists without self-membership.
struct AdjacencySet {
    std::vector<std::vector<int>> neighbors;

    explicit AdjacencySet(int n = 0) : neighbors(static_cast<size_t>(n)) {}
    int size() const { return static_cast<int>(neighbors.size()); }
    void add_edge(int a, int b);
    bool adjacent(int a, int b) const;
};

// POI attribute fields, in the canonical column order. FACILITY_T is
// mandatory, the rest optional (empty string means absent).
inline constexpr std::array<const char*, 9> kPoiFields = {
    "FACILITY_T", "FACI_DOM", "SEGMENTID", "PRI_ADD", "BIN",
    "SOS",        "SAFTYPE",  "COMPLEXID", "SOURCE"};

struct PoiRecord {
    std::string place_id;
    int region = 0;
    // field name -> categorical value; ordered so downstream iteration is
    // deterministic. Always contains FACILITY_T.
    std::map<std::string, std::string> attributes;
};

using CheckinVolumes = std::vector<double>;   // length N, nonnegative
using GroundTruthLabels = std::vector<int>;   // length N

// ---- loaders (CSV, UTF-8, header row required) ------------------------------

RegionRegistry load_regions(const std::string& path);
std::vector<TripRecord> load_trips(const std::string& path, const RegionRegistry& registry);
AdjacencySet load_adjacency(const std::string& path, const RegionRegistry& registry,
                            std::vector<std::string>* warnings = nullptr);
std::vector<PoiRecord> load_pois(const std::string& path, const RegionRegistry& registry);
CheckinVolumes load_checkins(const std::string& path, const RegionRegistry& registry);
GroundTruthLabels load_labels(const std::string& path, const RegionRegistry& registry);

// Derives adjacency from a GeoJSON FeatureCollection with one polygon (or
// multipolygon) feature per region, keyed by the region_id property. Two
// regions are neighbors iff their boundaries come within `tolerance` of each
// other; corner contact counts.
AdjacencySet adjacency_from_polygons(const std::string& geojson_path,
                                     const RegionRegistry& registry, double tolerance = 1e-9);

// ---- writers ----------------------------------------------------------------

void write_regions_csv(const std::string& path, const RegionRegistry& registry);
void write_trips_csv(const std::string& path, const std::vector<TripRecord>& trips,
                     const RegionRegistry& registry);
void write_adjacency_csv(const std::string& path, const AdjacencySet& adj,
                         const RegionRegistry& registry);
void write_pois_csv(const std::string& path, const std::vector<PoiRecord>& pois,
                    const RegionRegistry& registry);
void write_checkins_csv(const std::string& path, const CheckinVolumes& volumes,
                        const RegionRegistry& registry);
void write_labels_csv(const std::string& path, const GroundTruthLabels& labels,
                      const RegionRegistry& registry);

}  // namespace regionembed
