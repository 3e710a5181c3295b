#include "regionembed/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"
#include "regionembed/csv.hpp"
#include "regionembed/rng.hpp"

namespace regionembed {

void SynthConfig::validate() const {
    if (grid_w < 1 || grid_h < 1) throw ContractError("synth: grid dimensions must be positive");
    if (communities < 1 || communities > grid_w * grid_h) {
        throw ContractError("synth: communities must be in [1, regions]");
    }
    if (trips_per_region < 1 || pois_per_region < 1 || poi_categories < 1) {
        throw ContractError("synth: counts must be positive");
    }
    if (within_community_fraction < 0 || within_community_fraction > 1 || poi_signal < 0 ||
        poi_signal > 1 || label_noise < 0 || label_noise > 1 || checkin_noise < 0 ||
        hub_concentration < 0 || hub_fraction < 0 || hub_fraction > 1) {
        throw ContractError("synth: fractions out of range");
    }
}

namespace {

// Contiguous community blocks: farthest-point seeding on the grid, then
// nearest-center assignment (ties to the lower center index).
std::vector<int> plant_communities(int w, int h, int c, double label_noise, Rng& rng) {
    const int n = w * h;
    std::vector<std::pair<int, int>> centers;
    centers.reserve(static_cast<size_t>(c));
    const int first = rng.uniform_int(n);
    centers.emplace_back(first % w, first / w);
    while (static_cast<int>(centers.size()) < c) {
        int best_cell = 0;
        double best_dist = -1.0;
        for (int cell = 0; cell < n; ++cell) {
            const int x = cell % w, y = cell / w;
            double nearest = std::numeric_limits<double>::infinity();
            for (const auto& [cx, cy] : centers) {
                const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                nearest = std::min(nearest, d);
            }
            if (nearest > best_dist) {
                best_dist = nearest;
                best_cell = cell;
            }
        }
        centers.emplace_back(best_cell % w, best_cell / w);
    }
    std::vector<int> labels(static_cast<size_t>(n), 0);
    for (int cell = 0; cell < n; ++cell) {
        const int x = cell % w, y = cell / w;
        double best = std::numeric_limits<double>::infinity();
        for (size_t k = 0; k < centers.size(); ++k) {
            const double d = (x - centers[k].first) * (x - centers[k].first) +
                             (y - centers[k].second) * (y - centers[k].second);
            if (d < best) {
                best = d;
                labels[static_cast<size_t>(cell)] = static_cast<int>(k);
            }
        }
    }
    for (int cell = 0; cell < n; ++cell) {
        if (rng.uniform() < label_noise) {
            labels[static_cast<size_t>(cell)] = rng.uniform_int(c);
        }
    }
    return labels;
}

std::string pad3(int v) {
    std::string s = std::to_string(v);
    while (s.size() < 3) s = "0" + s;
    return s;
}

}  // namespace

SynthCity generate_city(const SynthConfig& config) {
    config.validate();
    Rng rng = Rng(config.seed).substream("synth");
    const int w = config.grid_w, h = config.grid_h;
    const int n = w * h;

    SynthCity city;
    std::vector<std::string> ids;
    ids.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ids.push_back("R" + pad3(i));
    city.registry = RegionRegistry::from_ids(std::move(ids));

    city.labels = plant_communities(w, h, config.communities, config.label_noise, rng);

    // Grid adjacency with diagonal (corner) neighbors.
    city.adjacency = AdjacencySet(n);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                    city.adjacency.add_edge(y * w + x, ny * w + nx);
                }
            }
        }
    }

    // Trips: a within_community_fraction coin picks a destination inside the
    // origin's community (self-trips allowed); otherwise uniform over the
    // other communities. Within the community every origin has its own
    // hub preferences, so same-community origins overlap only partially.
    std::vector<std::vector<int>> members(static_cast<size_t>(config.communities));
    for (int i = 0; i < n; ++i) {
        members[static_cast<size_t>(city.labels[static_cast<size_t>(i)])].push_back(i);
    }
    std::vector<std::vector<int>> outsiders(static_cast<size_t>(config.communities));
    for (int c = 0; c < config.communities; ++c) {
        for (int i = 0; i < n; ++i) {
            if (city.labels[static_cast<size_t>(i)] != c) {
                outsiders[static_cast<size_t>(c)].push_back(i);
            }
        }
    }
    std::vector<uint8_t> hubby(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) hubby[static_cast<size_t>(i)] = rng.uniform() < config.hub_fraction;
    std::map<std::pair<int, int>, int64_t> pair_counts;
    std::vector<double> preference;
    for (int origin = 0; origin < n; ++origin) {
        const int community = city.labels[static_cast<size_t>(origin)];
        const auto& inside = members[static_cast<size_t>(community)];
        const auto& outside = outsiders[static_cast<size_t>(community)];
        preference.assign(inside.size(), 1.0);
        if (hubby[static_cast<size_t>(origin)]) {
            for (double& w : preference) w = std::exp(config.hub_concentration * rng.normal());
        }
        double total = 0.0;
        for (double w : preference) total += w;
        for (int t = 0; t < config.trips_per_region; ++t) {
            int destination;
            if (outside.empty() || rng.uniform() < config.within_community_fraction) {
                double target = rng.uniform() * total;
                size_t pick = 0;
                for (; pick + 1 < preference.size(); ++pick) {
                    target -= preference[pick];
                    if (target < 0) break;
                }
                destination = inside[pick];
            } else {
                destination = outside[static_cast<size_t>(rng.uniform_int(
                    static_cast<int>(outside.size())))];
            }
            ++pair_counts[{origin, destination}];
        }
    }
    for (const auto& [od, count] : pair_counts) {
        city.trips.push_back({od.first, od.second, count});
    }

    // POIs: every community prefers a round-robin slice of the category
    // vocabulary; subclasses refine categories, SOURCE is noise and present
    // only most of the time (exercises optional attributes).
    int poi_counter = 0;
    for (int region = 0; region < n; ++region) {
        const int community = city.labels[static_cast<size_t>(region)];
        for (int p = 0; p < config.pois_per_region; ++p) {
            int category;
            if (rng.uniform() < config.poi_signal) {
                // Categories whose index mod C equals this community.
                const int slots = (config.poi_categories + config.communities - 1 - community) /
                                  config.communities;
                const int pick = rng.uniform_int(std::max(1, slots));
                category = community + pick * config.communities;
                if (category >= config.poi_categories) category %= config.poi_categories;
            } else {
                category = rng.uniform_int(config.poi_categories);
            }
            PoiRecord rec;
            rec.place_id = "P" + pad3(poi_counter++);
            rec.region = region;
            rec.attributes["FACILITY_T"] = "cat_" + std::to_string(category);
            rec.attributes["FACI_DOM"] =
                "dom_" + std::to_string(category) + "_" + std::to_string(rng.uniform_int(3));
            if (rng.uniform() < 0.8) {
                rec.attributes["SOURCE"] = "src_" + std::to_string(rng.uniform_int(3));
            }
            city.pois.push_back(std::move(rec));
        }
    }

    // Check-ins: linear in the community one-hot plus seeded Gaussian noise.
    std::vector<double> community_level(static_cast<size_t>(config.communities));
    for (int c = 0; c < config.communities; ++c) {
        community_level[static_cast<size_t>(c)] = 50.0 + 40.0 * c;
    }
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
        mean += community_level[static_cast<size_t>(city.labels[static_cast<size_t>(i)])];
    }
    mean /= n;
    double variance = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = community_level[static_cast<size_t>(city.labels[static_cast<size_t>(i)])];
        variance += (v - mean) * (v - mean);
    }
    const double signal_sd = std::sqrt(variance / n);
    city.checkins.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double base =
            community_level[static_cast<size_t>(city.labels[static_cast<size_t>(i)])];
        const double noisy = base + rng.normal(0.0, config.checkin_noise * signal_sd);
        // Round so the CSV is compact; volumes stay nonnegative.
        city.checkins[static_cast<size_t>(i)] = std::max(0.0, std::round(noisy * 1000.0) / 1000.0);
    }

    // Unit-square polygons; corners touch diagonally, matching the
    // 8-connectivity above.
    nlohmann::json features = nlohmann::json::array();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            nlohmann::json feature;
            feature["type"] = "Feature";
            feature["properties"] = {{"region_id", city.registry.id(y * w + x)}};
            feature["geometry"] = {
                {"type", "Polygon"},
                {"coordinates",
                 {{{x, y}, {x + 1, y}, {x + 1, y + 1}, {x, y + 1}, {x, y}}}},
            };
            features.push_back(std::move(feature));
        }
    }
    nlohmann::json collection;
    collection["type"] = "FeatureCollection";
    collection["features"] = std::move(features);
    city.geojson = collection.dump(1);
    return city;
}

void write_city(const SynthCity& city, const std::string& out_dir) {
    write_regions_csv(out_dir + "/regions.csv", city.registry);
    write_trips_csv(out_dir + "/trips.csv", city.trips, city.registry);
    write_adjacency_csv(out_dir + "/adjacency.csv", city.adjacency, city.registry);
    write_pois_csv(out_dir + "/pois.csv", city.pois, city.registry);
    write_checkins_csv(out_dir + "/checkins.csv", city.checkins, city.registry);
    write_labels_csv(out_dir + "/labels.csv", city.labels, city.registry);
    write_text_file(out_dir + "/regions.geojson", city.geojson);
}

}  // namespace regionembed
