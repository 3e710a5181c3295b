#include "regionembed/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "regionembed/csv.hpp"

namespace regionembed {

using nlohmann::json;

// ---- registry ---------------------------------------------------------------

RegionRegistry RegionRegistry::from_ids(std::vector<std::string> ids) {
    RegionRegistry reg;
    reg.ids_ = std::move(ids);
    for (size_t i = 0; i < reg.ids_.size(); ++i) {
        if (reg.ids_[i].empty()) {
            throw ValidationError("region identifier at position " + std::to_string(i) +
                                  " is empty");
        }
        auto [_, inserted] = reg.index_.emplace(reg.ids_[i], static_cast<int>(i));
        if (!inserted) {
            throw ValidationError("duplicate region identifier: " + reg.ids_[i]);
        }
    }
    return reg;
}

int RegionRegistry::find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? -1 : it->second;
}

int RegionRegistry::require(const std::string& id, const std::string& file, int line) const {
    const int idx = find(id);
    if (idx < 0) {
        throw ValidationError(file + ":" + std::to_string(line) + ": unknown region \"" + id +
                              "\"");
    }
    return idx;
}

// ---- adjacency --------------------------------------------------------------

void AdjacencySet::add_edge(int a, int b) {
    if (a == b) return;
    auto insert_sorted = [](std::vector<int>& xs, int v) {
        auto it = std::lower_bound(xs.begin(), xs.end(), v);
        if (it == xs.end() || *it != v) xs.insert(it, v);
    };
    insert_sorted(neighbors[static_cast<size_t>(a)], b);
    insert_sorted(neighbors[static_cast<size_t>(b)], a);
}

bool AdjacencySet::adjacent(int a, int b) const {
    const auto& xs = neighbors[static_cast<size_t>(a)];
    return std::binary_search(xs.begin(), xs.end(), b);
}

// ---- loaders ----------------------------------------------------------------

namespace {

int require_column(const CsvTable& t, const std::string& name, const std::string& path) {
    const int c = csv_column(t, name);
    if (c < 0) {
        throw ValidationError(path + ": missing required column \"" + name + "\"");
    }
    return c;
}

double parse_number(const std::string& s, const std::string& path, int line) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(path + ":" + std::to_string(line) + ": not a finite number: \"" +
                              s + "\"");
    }
}

}  // namespace

RegionRegistry load_regions(const std::string& path) {
    const CsvTable t = read_csv(path);
    const int col = require_column(t, "region_id", path);
    std::vector<std::string> ids;
    ids.reserve(t.rows.size());
    for (const auto& row : t.rows) ids.push_back(row[static_cast<size_t>(col)]);
    return RegionRegistry::from_ids(std::move(ids));
}

std::vector<TripRecord> load_trips(const std::string& path, const RegionRegistry& registry) {
    const CsvTable t = read_csv(path);
    const int oc = require_column(t, "origin", path);
    const int dc = require_column(t, "destination", path);
    const int cc = csv_column(t, "count");
    std::vector<TripRecord> trips;
    trips.reserve(t.rows.size());
    for (size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        TripRecord rec;
        rec.origin = registry.require(row[static_cast<size_t>(oc)], path, t.line[r]);
        rec.destination = registry.require(row[static_cast<size_t>(dc)], path, t.line[r]);
        if (cc >= 0) {
            const double c = parse_number(row[static_cast<size_t>(cc)], path, t.line[r]);
            if (c <= 0 || c != std::floor(c)) {
                throw ValidationError(path + ":" + std::to_string(t.line[r]) +
                                      ": trip count must be a positive integer, got \"" +
                                      row[static_cast<size_t>(cc)] + "\"");
            }
            rec.count = static_cast<int64_t>(c);
        }
        trips.push_back(rec);
    }
    return trips;
}

AdjacencySet load_adjacency(const std::string& path, const RegionRegistry& registry,
                            std::vector<std::string>* warnings) {
    const CsvTable t = read_csv(path);
    const int ac = require_column(t, "region_a", path);
    const int bc = require_column(t, "region_b", path);
    AdjacencySet adj(registry.size());
    for (size_t r = 0; r < t.rows.size(); ++r) {
        const int a = registry.require(t.rows[r][static_cast<size_t>(ac)], path, t.line[r]);
        const int b = registry.require(t.rows[r][static_cast<size_t>(bc)], path, t.line[r]);
        if (a == b) {
            if (warnings) {
                warnings->push_back(path + ":" + std::to_string(t.line[r]) +
                                    ": dropped self-edge for region \"" + registry.id(a) + "\"");
            }
            continue;
        }
        adj.add_edge(a, b);
    }
    return adj;
}

std::vector<PoiRecord> load_pois(const std::string& path, const RegionRegistry& registry) {
    const CsvTable t = read_csv(path);
    const int pc = require_column(t, "place_id", path);
    const int rc = require_column(t, "region_id", path);
    const int fc = require_column(t, "facility_t", path);
    std::vector<std::pair<std::string, int>> optional_cols;
    for (const char* field : kPoiFields) {
        if (std::string(field) == "FACILITY_T") continue;
        std::string lower(field);
        for (char& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        const int c = csv_column(t, lower);
        if (c >= 0) optional_cols.emplace_back(field, c);
    }

    std::vector<PoiRecord> pois;
    std::unordered_map<std::string, int> seen;
    pois.reserve(t.rows.size());
    for (size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        PoiRecord rec;
        rec.place_id = row[static_cast<size_t>(pc)];
        if (!seen.emplace(rec.place_id, t.line[r]).second) {
            throw ValidationError(path + ":" + std::to_string(t.line[r]) +
                                  ": duplicate place_id \"" + rec.place_id + "\"");
        }
        rec.region = registry.require(row[static_cast<size_t>(rc)], path, t.line[r]);
        const std::string& facility = row[static_cast<size_t>(fc)];
        if (facility.empty()) {
            throw ValidationError(path + ":" + std::to_string(t.line[r]) +
                                  ": facility_t is required for place_id \"" + rec.place_id +
                                  "\"");
        }
        rec.attributes["FACILITY_T"] = facility;
        for (const auto& [field, c] : optional_cols) {
            const std::string& value = row[static_cast<size_t>(c)];
            if (!value.empty()) rec.attributes[field] = value;
        }
        pois.push_back(std::move(rec));
    }
    return pois;
}

CheckinVolumes load_checkins(const std::string& path, const RegionRegistry& registry) {
    const CsvTable t = read_csv(path);
    const int rc = require_column(t, "region_id", path);
    const int cc = csv_column(t, "count");
    CheckinVolumes volumes(static_cast<size_t>(registry.size()), 0.0);
    if (cc >= 0) {
        for (size_t r = 0; r < t.rows.size(); ++r) {
            const int region = registry.require(t.rows[r][static_cast<size_t>(rc)], path, t.line[r]);
            const double v = parse_number(t.rows[r][static_cast<size_t>(cc)], path, t.line[r]);
            if (v < 0) {
                throw ValidationError(path + ":" + std::to_string(t.line[r]) +
                                      ": check-in count must be nonnegative");
            }
            volumes[static_cast<size_t>(region)] += v;
        }
        return volumes;
    }
    // Per-event form: region_id,timestamp — one check-in per row.
    if (csv_column(t, "timestamp") < 0) {
        throw ValidationError(path + ": expected either a \"count\" or a \"timestamp\" column");
    }
    for (size_t r = 0; r < t.rows.size(); ++r) {
        const int region = registry.require(t.rows[r][static_cast<size_t>(rc)], path, t.line[r]);
        volumes[static_cast<size_t>(region)] += 1.0;
    }
    return volumes;
}

GroundTruthLabels load_labels(const std::string& path, const RegionRegistry& registry) {
    const CsvTable t = read_csv(path);
    const int rc = require_column(t, "region_id", path);
    const int dc = require_column(t, "district", path);
    GroundTruthLabels labels(static_cast<size_t>(registry.size()), -1);
    for (size_t r = 0; r < t.rows.size(); ++r) {
        const int region = registry.require(t.rows[r][static_cast<size_t>(rc)], path, t.line[r]);
        const double v = parse_number(t.rows[r][static_cast<size_t>(dc)], path, t.line[r]);
        if (v != std::floor(v)) {
            throw ValidationError(path + ":" + std::to_string(t.line[r]) +
                                  ": district must be an integer");
        }
        labels[static_cast<size_t>(region)] = static_cast<int>(v);
    }
    for (int i = 0; i < registry.size(); ++i) {
        if (labels[static_cast<size_t>(i)] < 0) {
            throw ValidationError(path + ": no district label for region \"" + registry.id(i) +
                                  "\"");
        }
    }
    return labels;
}

// ---- polygon adjacency --------------------------------------------------------

namespace {

struct Segment {
    double ax, ay, bx, by;
};

struct Outline {
    std::vector<Segment> segments;
    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
};

double point_segment_dist2(double px, double py, const Segment& s) {
    const double dx = s.bx - s.ax, dy = s.by - s.ay;
    const double len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (len2 > 0.0) {
        t = ((px - s.ax) * dx + (py - s.ay) * dy) / len2;
        t = std::clamp(t, 0.0, 1.0);
    }
    const double qx = s.ax + t * dx - px;
    const double qy = s.ay + t * dy - py;
    return qx * qx + qy * qy;
}

int orientation(double ax, double ay, double bx, double by, double cx, double cy) {
    const double v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
    if (v > 0) return 1;
    if (v < 0) return -1;
    return 0;
}

bool on_segment(double ax, double ay, double bx, double by, double px, double py) {
    return std::min(ax, bx) <= px && px <= std::max(ax, bx) && std::min(ay, by) <= py &&
           py <= std::max(ay, by);
}

bool segments_touch(const Segment& s, const Segment& t) {
    const int o1 = orientation(s.ax, s.ay, s.bx, s.by, t.ax, t.ay);
    const int o2 = orientation(s.ax, s.ay, s.bx, s.by, t.bx, t.by);
    const int o3 = orientation(t.ax, t.ay, t.bx, t.by, s.ax, s.ay);
    const int o4 = orientation(t.ax, t.ay, t.bx, t.by, s.bx, s.by);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_segment(s.ax, s.ay, s.bx, s.by, t.ax, t.ay)) return true;
    if (o2 == 0 && on_segment(s.ax, s.ay, s.bx, s.by, t.bx, t.by)) return true;
    if (o3 == 0 && on_segment(t.ax, t.ay, t.bx, t.by, s.ax, s.ay)) return true;
    if (o4 == 0 && on_segment(t.ax, t.ay, t.bx, t.by, s.bx, s.by)) return true;
    return false;
}

double segment_dist2(const Segment& s, const Segment& t) {
    if (segments_touch(s, t)) return 0.0;
    double d = point_segment_dist2(t.ax, t.ay, s);
    d = std::min(d, point_segment_dist2(t.bx, t.by, s));
    d = std::min(d, point_segment_dist2(s.ax, s.ay, t));
    d = std::min(d, point_segment_dist2(s.bx, s.by, t));
    return d;
}

void add_ring(Outline& outline, const json& ring, const std::string& feature_id) {
    if (!ring.is_array() || ring.size() < 2) {
        throw ValidationError("malformed geometry for feature \"" + feature_id +
                              "\": ring needs at least 2 points");
    }
    std::vector<std::pair<double, double>> pts;
    pts.reserve(ring.size());
    for (const auto& p : ring) {
        if (!p.is_array() || p.size() < 2 || !p[0].is_number() || !p[1].is_number()) {
            throw ValidationError("malformed geometry for feature \"" + feature_id +
                                  "\": coordinate is not [x,y]");
        }
        pts.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
    // Close the ring if the input did not.
    if (pts.front() != pts.back()) pts.push_back(pts.front());
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        outline.segments.push_back({pts[i].first, pts[i].second, pts[i + 1].first, pts[i + 1].second});
    }
    for (const auto& [x, y] : pts) {
        outline.min_x = std::min(outline.min_x, x);
        outline.min_y = std::min(outline.min_y, y);
        outline.max_x = std::max(outline.max_x, x);
        outline.max_y = std::max(outline.max_y, y);
    }
}

Outline outline_from_geometry(const json& geom, const std::string& feature_id) {
    Outline outline;
    outline.min_x = outline.min_y = std::numeric_limits<double>::infinity();
    outline.max_x = outline.max_y = -std::numeric_limits<double>::infinity();
    if (!geom.is_object() || !geom.contains("type") || !geom.contains("coordinates")) {
        throw ValidationError("malformed geometry for feature \"" + feature_id + "\"");
    }
    const std::string type = geom["type"].get<std::string>();
    const json& coords = geom["coordinates"];
    if (type == "Polygon") {
        for (const auto& ring : coords) add_ring(outline, ring, feature_id);
    } else if (type == "MultiPolygon") {
        for (const auto& poly : coords) {
            for (const auto& ring : poly) add_ring(outline, ring, feature_id);
        }
    } else {
        throw ValidationError("feature \"" + feature_id + "\" has unsupported geometry type \"" +
                              type + "\"");
    }
    if (outline.segments.empty()) {
        throw ValidationError("malformed geometry for feature \"" + feature_id +
                              "\": no segments");
    }
    return outline;
}

}  // namespace

AdjacencySet adjacency_from_polygons(const std::string& geojson_path,
                                     const RegionRegistry& registry, double tolerance) {
    json doc;
    try {
        doc = json::parse(read_text_file(geojson_path));
    } catch (const json::exception& e) {
        throw ValidationError(geojson_path + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" ||
        !doc.contains("features")) {
        throw ValidationError(geojson_path + ": expected a GeoJSON FeatureCollection");
    }

    std::vector<Outline> outlines(static_cast<size_t>(registry.size()));
    std::vector<bool> present(static_cast<size_t>(registry.size()), false);
    for (const auto& feature : doc["features"]) {
        if (!feature.contains("properties") || !feature["properties"].contains("region_id")) {
            throw ValidationError(geojson_path + ": feature without region_id property");
        }
        const std::string id = feature["properties"]["region_id"].get<std::string>();
        const int region = registry.find(id);
        if (region < 0) {
            throw ValidationError(geojson_path + ": unknown region \"" + id + "\"");
        }
        if (present[static_cast<size_t>(region)]) {
            throw ValidationError(geojson_path + ": duplicate feature for region \"" + id + "\"");
        }
        present[static_cast<size_t>(region)] = true;
        outlines[static_cast<size_t>(region)] =
            outline_from_geometry(feature.value("geometry", json()), id);
    }
    for (int i = 0; i < registry.size(); ++i) {
        if (!present[static_cast<size_t>(i)]) {
            throw ValidationError(geojson_path + ": no polygon feature for region \"" +
                                  registry.id(i) + "\"");
        }
    }

    AdjacencySet adj(registry.size());
    const double tol2 = tolerance * tolerance;
    for (int a = 0; a < registry.size(); ++a) {
        const Outline& oa = outlines[static_cast<size_t>(a)];
        for (int b = a + 1; b < registry.size(); ++b) {
            const Outline& ob = outlines[static_cast<size_t>(b)];
            // Bounding-box prefilter.
            if (oa.min_x > ob.max_x + tolerance || ob.min_x > oa.max_x + tolerance ||
                oa.min_y > ob.max_y + tolerance || ob.min_y > oa.max_y + tolerance) {
                continue;
            }
            bool close = false;
            for (const Segment& sa : oa.segments) {
                for (const Segment& sb : ob.segments) {
                    if (segment_dist2(sa, sb) <= tol2) {
                        close = true;
                        break;
                    }
                }
                if (close) break;
            }
            if (close) adj.add_edge(a, b);
        }
    }
    return adj;
}

// ---- writers ----------------------------------------------------------------

void write_regions_csv(const std::string& path, const RegionRegistry& registry) {
    std::string out = "region_id\n";
    for (const auto& id : registry.ids()) out += csv_quote(id) + "\n";
    write_text_file(path, out);
}

void write_trips_csv(const std::string& path, const std::vector<TripRecord>& trips,
                     const RegionRegistry& registry) {
    std::string out = "origin,destination,count\n";
    for (const auto& t : trips) {
        out += csv_quote(registry.id(t.origin)) + "," + csv_quote(registry.id(t.destination)) +
               "," + std::to_string(t.count) + "\n";
    }
    write_text_file(path, out);
}

void write_adjacency_csv(const std::string& path, const AdjacencySet& adj,
                         const RegionRegistry& registry) {
    std::string out = "region_a,region_b\n";
    for (int a = 0; a < adj.size(); ++a) {
        for (int b : adj.neighbors[static_cast<size_t>(a)]) {
            if (b > a) {
                out += csv_quote(registry.id(a)) + "," + csv_quote(registry.id(b)) + "\n";
            }
        }
    }
    write_text_file(path, out);
}

void write_pois_csv(const std::string& path, const std::vector<PoiRecord>& pois,
                    const RegionRegistry& registry) {
    std::string out = "place_id,region_id";
    for (const char* field : kPoiFields) {
        std::string lower(field);
        for (char& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        out += "," + lower;
    }
    out += "\n";
    for (const auto& p : pois) {
        out += csv_quote(p.place_id) + "," + csv_quote(registry.id(p.region));
        for (const char* field : kPoiFields) {
            auto it = p.attributes.find(field);
            out += ",";
            if (it != p.attributes.end()) out += csv_quote(it->second);
        }
        out += "\n";
    }
    write_text_file(path, out);
}

void write_checkins_csv(const std::string& path, const CheckinVolumes& volumes,
                        const RegionRegistry& registry) {
    std::string out = "region_id,count\n";
    for (int i = 0; i < registry.size(); ++i) {
        out += csv_quote(registry.id(i)) + "," + format_double(volumes[static_cast<size_t>(i)]) +
               "\n";
    }
    write_text_file(path, out);
}

void write_labels_csv(const std::string& path, const GroundTruthLabels& labels,
                      const RegionRegistry& registry) {
    std::string out = "region_id,district\n";
    for (int i = 0; i < registry.size(); ++i) {
        out += csv_quote(registry.id(i)) + "," + std::to_string(labels[static_cast<size_t>(i)]) +
               "\n";
    }
    write_text_file(path, out);
}

}  // namespace regionembed
