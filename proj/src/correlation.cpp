#include "regionembed/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "regionembed/csv.hpp"

namespace regionembed {

namespace {

double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

// Cosine similarity matrix of the rows of x. Zero rows get similarity 0
// everywhere (including the diagonal); nonzero rows get an exact 1 diagonal.
Dense row_cosine(const Dense& x, std::vector<uint8_t>& zero_row) {
    const int n = x.rows;
    Dense out(n, n, 0.0);
    std::vector<double> norms(static_cast<size_t>(n));
    zero_row.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        norms[static_cast<size_t>(i)] = std::sqrt(dot(x.row(i), x.row(i), x.cols));
        if (norms[static_cast<size_t>(i)] == 0.0) zero_row[static_cast<size_t>(i)] = 1;
    }
    for (int i = 0; i < n; ++i) {
        if (zero_row[static_cast<size_t>(i)]) continue;
        out.at(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            if (zero_row[static_cast<size_t>(j)]) continue;
            const double c = dot(x.row(i), x.row(j), x.cols) /
                             (norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)]);
            out.at(i, j) = c;
            out.at(j, i) = c;
        }
    }
    return out;
}

}  // namespace

Dense cooccurrence_counts(const std::vector<TripRecord>& trips, int n) {
    Dense counts(n, n, 0.0);
    for (const TripRecord& t : trips) {
        if (t.origin < 0 || t.origin >= n || t.destination < 0 || t.destination >= n) {
            throw ContractError("trip indices out of range for " + std::to_string(n) +
                                " regions");
        }
        counts.at(t.origin, t.destination) += static_cast<double>(t.count);
    }
    return counts;
}

OdDistributions od_distributions(const Dense& counts) {
    const int n = counts.rows;
    OdDistributions od;
    od.p_origin = Dense(n, n, 0.0);
    od.p_dest = Dense(n, n, 0.0);
    od.zero_origin_mass.assign(static_cast<size_t>(n), 0);
    od.zero_dest_mass.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        // Incoming trips: distribution over origins r of trips ending at i.
        double in_mass = 0.0;
        for (int r = 0; r < n; ++r) in_mass += counts.at(r, i);
        if (in_mass > 0.0) {
            for (int r = 0; r < n; ++r) od.p_origin.at(i, r) = counts.at(r, i) / in_mass;
        } else {
            od.zero_origin_mass[static_cast<size_t>(i)] = 1;
        }
        // Outgoing trips: distribution over destinations r of trips starting at i.
        double out_mass = 0.0;
        for (int r = 0; r < n; ++r) out_mass += counts.at(i, r);
        if (out_mass > 0.0) {
            for (int r = 0; r < n; ++r) od.p_dest.at(i, r) = counts.at(i, r) / out_mass;
        } else {
            od.zero_dest_mass[static_cast<size_t>(i)] = 1;
        }
    }
    return od;
}

CorrelationMatrix accessibility_correlation(const OdDistributions& od, double alpha) {
    const int n = od.p_origin.rows;
    std::vector<uint8_t> zero_o, zero_d;
    const Dense ac_o = row_cosine(od.p_origin, zero_o);
    const Dense ac_d = row_cosine(od.p_dest, zero_d);
    CorrelationMatrix corr;
    corr.kind = CorrKind::Ac;
    corr.m = Dense(n, n, 0.0);
    corr.flagged.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        corr.flagged[static_cast<size_t>(i)] =
            (zero_o[static_cast<size_t>(i)] || zero_d[static_cast<size_t>(i)]) ? 1 : 0;
        for (int j = 0; j < n; ++j) {
            corr.m.at(i, j) = alpha * ac_o.at(i, j) + (1.0 - alpha) * ac_d.at(i, j);
        }
    }
    return corr;
}

CorrelationMatrix vicinity_correlation(const AdjacencySet& adj) {
    const int n = adj.size();
    Dense indicators(n, n, 0.0);
    for (int i = 0; i < n; ++i) {
        indicators.at(i, i) = 1.0;  // self-bit
        for (int j : adj.neighbors[static_cast<size_t>(i)]) indicators.at(i, j) = 1.0;
    }
    CorrelationMatrix corr;
    corr.kind = CorrKind::Vc;
    corr.m = row_cosine(indicators, corr.flagged);
    return corr;
}

CorrelationMatrix functionality_correlation(const Dense& region_vectors) {
    CorrelationMatrix corr;
    corr.kind = CorrKind::Fc;
    corr.m = row_cosine(region_vectors, corr.flagged);
    return corr;
}

RegionGraph knn_graph(const CorrelationMatrix& corr, int k) {
    const int n = corr.m.rows;
    if (k < 1) throw ContractError("knn_graph: k must be at least 1");
    if (k >= n) {
        throw ContractError("knn_graph: k=" + std::to_string(k) + " must be smaller than N=" +
                            std::to_string(n));
    }
    RegionGraph graph;
    graph.n = n;
    graph.k = k;
    graph.edges.resize(static_cast<size_t>(n));
    std::vector<int> order;
    for (int i = 0; i < n; ++i) {
        order.clear();
        for (int j = 0; j < n; ++j) {
            if (j != i && corr.m.at(i, j) > 0.0) order.push_back(j);
        }
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double ca = corr.m.at(i, a), cb = corr.m.at(i, b);
            if (ca != cb) return ca > cb;
            return a < b;  // deterministic tie-break toward lower index
        });
        const int take = std::min<int>(k, static_cast<int>(order.size()));
        for (int t = 0; t < take; ++t) {
            graph.edges[static_cast<size_t>(i)].emplace_back(order[static_cast<size_t>(t)],
                                                             corr.m.at(i, order[static_cast<size_t>(t)]));
        }
    }
    return graph;
}

void write_correlation_csv(const std::string& path, const CorrelationMatrix& corr,
                           const RegionRegistry& registry) {
    std::string out = "region_a,region_b,value\n";
    for (int i = 0; i < corr.m.rows; ++i) {
        for (int j = i; j < corr.m.cols; ++j) {
            out += csv_quote(registry.id(i)) + "," + csv_quote(registry.id(j)) + "," +
                   format_double(corr.m.at(i, j)) + "\n";
        }
    }
    write_text_file(path, out);
}

void write_graph_csv(const std::string& path, const RegionGraph& graph,
                     const RegionRegistry& registry) {
    std::string out = "region_a,region_b,weight\n";
    for (int i = 0; i < graph.n; ++i) {
        for (const auto& [j, w] : graph.edges[static_cast<size_t>(i)]) {
            out += csv_quote(registry.id(i)) + "," + csv_quote(registry.id(j)) + "," +
                   format_double(w) + "\n";
        }
    }
    write_text_file(path, out);
}

}  // namespace regionembed
