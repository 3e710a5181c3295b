#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "regionembed/data.hpp"

namespace regionembed {

// Generator for a grid city with planted communities. Every modality (trips,
// POI categories, check-in volume) carries the community signal, so each
// correlation stream has something to learn; geographic adjacency is the
// grid's 8-connectivity.
struct SynthConfig {
    int grid_w = 6;
    int grid_h = 6;
    int communities = 4;
    int trips_per_region = 12;
    int pois_per_region = 12;
    int poi_categories = 10;
    // Fraction of trips whose destination stays inside the origin's
    // community; the rest spread uniformly over the other communities.
    double within_community_fraction = 0.8;
    // A seeded fraction of regions gets hub mobility: their within-community
    // destination choice follows an idiosyncratic log-normal preference
    // (sigma = hub_concentration) instead of the uniform one, so mobility
    // alone is ambiguous for exactly those regions while the POI and
    // neighborhood streams still identify them.
    double hub_fraction = 1.0;
    double hub_concentration = 2.0;
    // Probability that a POI's category is drawn from the community's
    // preferred categories rather than uniformly.
    double poi_signal = 0.7;
    // Fraction of cells whose community label is re-rolled uniformly, so the
    // planted structure is not purely geometric.
    double label_noise = 0.1;
    // Check-in noise as a fraction of the across-region signal deviation.
    double checkin_noise = 0.1;
    uint64_t seed = 0;

    void validate() const;
};

struct SynthCity {
    RegionRegistry registry;
    std::vector<TripRecord> trips;  // aggregated (origin, destination, count)
    AdjacencySet adjacency;
    std::vector<PoiRecord> pois;
    CheckinVolumes checkins;
    GroundTruthLabels labels;  // planted communities
    std::string geojson;       // unit-square FeatureCollection
};

SynthCity generate_city(const SynthConfig& config);

// Writes regions/trips/adjacency/pois/checkins/labels CSVs plus
// regions.geojson into the directory. Byte-identical for a given city.
void write_city(const SynthCity& city, const std::string& out_dir);

}  // namespace regionembed
