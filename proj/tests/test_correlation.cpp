#include <cmath>
#include <vector>

#include "doctest.h"
#include "regionembed/correlation.hpp"
#include "regionembed/rng.hpp"
#include "testutil.hpp"

using namespace regionembed;

namespace {

// Independent double-loop cosine used as the oracle throughout.
double cosine_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> dense_row(const Dense& m, int i) {
    return std::vector<double>(m.row(i), m.row(i) + m.cols);
}

// The worked 4-trip instance over regions {A,B,C}.
std::vector<TripRecord> four_trips() {
    return {{0, 1, 1}, {0, 1, 1}, {0, 2, 1}, {1, 2, 1}};
}

}  // namespace

TEST_CASE("cooccurrence_counts: hand-enumerated instance") {
    const Dense counts = cooccurrence_counts(four_trips(), 3);
    CHECK(counts.at(0, 1) == 2);
    CHECK(counts.at(0, 2) == 1);
    CHECK(counts.at(1, 2) == 1);
    CHECK(counts.at(1, 0) == 0);
    double total = 0;
    for (double v : counts.v) total += v;
    CHECK(total == 4);  // mass conservation
}

TEST_CASE("cooccurrence_counts: empty trips and self-loops") {
    const Dense zero = cooccurrence_counts({}, 3);
    for (double v : zero.v) CHECK(v == 0);
    const Dense self = cooccurrence_counts({{0, 0, 1}}, 3);
    CHECK(self.at(0, 0) == 1);
}

TEST_CASE("od_distributions: hand-normalized rows and zero-mass flags") {
    const OdDistributions od = od_distributions(cooccurrence_counts(four_trips(), 3));
    // Destinations of trips starting at A: (B,B,C) -> [0, 2/3, 1/3].
    CHECK(od.p_dest.at(0, 0) == doctest::Approx(0.0));
    CHECK(od.p_dest.at(0, 1) == doctest::Approx(2.0 / 3));
    CHECK(od.p_dest.at(0, 2) == doctest::Approx(1.0 / 3));
    // Origins of trips ending at C: (A,B) -> [1/2, 1/2, 0].
    CHECK(od.p_origin.at(2, 0) == doctest::Approx(0.5));
    CHECK(od.p_origin.at(2, 1) == doctest::Approx(0.5));
    CHECK(od.p_origin.at(2, 2) == doctest::Approx(0.0));
    // A receives no trips; C sends none.
    CHECK(od.zero_origin_mass[0] == 1);
    CHECK(od.zero_dest_mass[2] == 1);
    for (int i = 0; i < 3; ++i) {
        double so = 0, sd = 0;
        for (int r = 0; r < 3; ++r) {
            so += od.p_origin.at(i, r);
            sd += od.p_dest.at(i, r);
        }
        CHECK((std::fabs(so - 1.0) < 1e-12 || so == 0.0));
        CHECK((std::fabs(sd - 1.0) < 1e-12 || sd == 0.0));
    }
}

TEST_CASE("od_distributions: uniform counts give uniform rows") {
    Dense counts(3, 3, 2.0);
    const OdDistributions od = od_distributions(counts);
    for (int i = 0; i < 3; ++i) {
        for (int r = 0; r < 3; ++r) {
            CHECK(od.p_origin.at(i, r) == doctest::Approx(1.0 / 3));
            CHECK(od.p_dest.at(i, r) == doctest::Approx(1.0 / 3));
        }
    }
}

TEST_CASE("accessibility_correlation: hand cosine AC_d(A,B) = 1/sqrt(5)") {
    const OdDistributions od = od_distributions(cooccurrence_counts(four_trips(), 3));
    // alpha = 0 keeps only the destination-pattern side.
    const CorrelationMatrix ac_d = accessibility_correlation(od, 0.0);
    CHECK(ac_d.m.at(0, 1) == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-12));
    // Identical destination distributions give exactly 1.
    const Dense counts = cooccurrence_counts({{0, 2, 5}, {1, 2, 7}}, 3);
    const CorrelationMatrix same = accessibility_correlation(od_distributions(counts), 0.0);
    CHECK(same.m.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    // Disjoint supports give 0.
    const Dense disjoint = cooccurrence_counts({{0, 1, 3}, {2, 0, 4}}, 3);
    const CorrelationMatrix zero = accessibility_correlation(od_distributions(disjoint), 0.0);
    CHECK(zero.m.at(0, 2) == doctest::Approx(0.0));
}

TEST_CASE("accessibility_correlation: scale invariance under count scaling") {
    Rng rng(21);
    std::vector<TripRecord> trips;
    for (int t = 0; t < 40; ++t) {
        trips.push_back({rng.uniform_int(6), rng.uniform_int(6), 1 + rng.uniform_int(3)});
    }
    const CorrelationMatrix base =
        accessibility_correlation(od_distributions(cooccurrence_counts(trips, 6)), 0.5);
    std::vector<TripRecord> scaled = trips;
    for (auto& t : scaled) t.count *= 17;
    const CorrelationMatrix big =
        accessibility_correlation(od_distributions(cooccurrence_counts(scaled, 6)), 0.5);
    for (size_t i = 0; i < base.m.v.size(); ++i) {
        CHECK(base.m.v[i] == doctest::Approx(big.m.v[i]).epsilon(1e-12));
    }
}

TEST_CASE("vicinity_correlation: strip A-B-C gives VC(A,C) = 1/2") {
    AdjacencySet adj(3);
    adj.add_edge(0, 1);
    adj.add_edge(1, 2);
    const CorrelationMatrix vc = vicinity_correlation(adj);
    // Indicators with self-bit: A=[1,1,0], B=[1,1,1], C=[0,1,1].
    CHECK(vc.m.at(0, 2) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(vc.m.at(0, 0) == 1.0);
}

TEST_CASE("vicinity_correlation: clique twins have correlation 1") {
    AdjacencySet adj(3);
    adj.add_edge(0, 1);
    adj.add_edge(0, 2);
    adj.add_edge(1, 2);
    const CorrelationMatrix vc = vicinity_correlation(adj);
    CHECK(vc.m.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("vicinity_correlation: isolated region only matches itself") {
    AdjacencySet adj(3);
    adj.add_edge(0, 1);
    const CorrelationMatrix vc = vicinity_correlation(adj);
    CHECK(vc.m.at(2, 0) == 0.0);
    CHECK(vc.m.at(2, 1) == 0.0);
    CHECK(vc.m.at(2, 2) == 1.0);
}

TEST_CASE("functionality_correlation: antipodal and zero vectors") {
    Dense vectors(3, 2, 0.0);
    vectors.at(0, 0) = 1.0;
    vectors.at(0, 1) = 2.0;
    vectors.at(1, 0) = -1.0;
    vectors.at(1, 1) = -2.0;
    const CorrelationMatrix fc = functionality_correlation(vectors);
    CHECK(fc.m.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(fc.m.at(0, 2) == 0.0);  // zero vector, flagged
    CHECK(fc.flagged[2] == 1);
}

TEST_CASE("all correlations match the double-loop oracle on random instances") {
    Rng rng(33);
    // AC on a random 8-region trip set, including silent regions.
    std::vector<TripRecord> trips;
    for (int t = 0; t < 60; ++t) {
        trips.push_back({rng.uniform_int(6), rng.uniform_int(6), 1 + rng.uniform_int(4)});
    }
    const int n = 8;  // regions 6 and 7 have no trips at all
    const OdDistributions od = od_distributions(cooccurrence_counts(trips, n));
    const double alpha = 0.3;
    const CorrelationMatrix ac = accessibility_correlation(od, alpha);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double expect =
                alpha * cosine_oracle(dense_row(od.p_origin, i), dense_row(od.p_origin, j)) +
                (1 - alpha) * cosine_oracle(dense_row(od.p_dest, i), dense_row(od.p_dest, j));
            CHECK(std::fabs(ac.m.at(i, j) - expect) < 1e-12);
        }
    }
    CHECK(ac.flagged[6] == 1);

    // VC on a random graph with an isolated node.
    AdjacencySet adj(7);
    for (int e = 0; e < 10; ++e) {
        const int a = rng.uniform_int(6), b = rng.uniform_int(6);
        if (a != b) adj.add_edge(a, b);
    }
    const CorrelationMatrix vc = vicinity_correlation(adj);
    for (int i = 0; i < 7; ++i) {
        std::vector<double> vi(7, 0.0);
        vi[static_cast<size_t>(i)] = 1.0;
        for (int x : adj.neighbors[static_cast<size_t>(i)]) vi[static_cast<size_t>(x)] = 1.0;
        for (int j = 0; j < 7; ++j) {
            std::vector<double> vj(7, 0.0);
            vj[static_cast<size_t>(j)] = 1.0;
            for (int x : adj.neighbors[static_cast<size_t>(j)]) vj[static_cast<size_t>(x)] = 1.0;
            CHECK(std::fabs(vc.m.at(i, j) - cosine_oracle(vi, vj)) < 1e-12);
        }
    }

    // FC on a random 5x4 matrix.
    Dense vectors(5, 4);
    for (double& v : vectors.v) v = rng.uniform(-2, 2);
    const CorrelationMatrix fc = functionality_correlation(vectors);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            CHECK(std::fabs(fc.m.at(i, j) - cosine_oracle(dense_row(vectors, i),
                                                          dense_row(vectors, j))) < 1e-12);
        }
    }
}

TEST_CASE("correlation matrices are symmetric with [0,1] AC/VC ranges") {
    Rng rng(55);
    std::vector<TripRecord> trips;
    for (int t = 0; t < 80; ++t) {
        trips.push_back({rng.uniform_int(9), rng.uniform_int(9), 1});
    }
    const CorrelationMatrix ac =
        accessibility_correlation(od_distributions(cooccurrence_counts(trips, 9)));
    for (int i = 0; i < 9; ++i) {
        for (int j = 0; j < 9; ++j) {
            CHECK(std::fabs(ac.m.at(i, j) - ac.m.at(j, i)) < 1e-12);
            CHECK(ac.m.at(i, j) >= 0.0);
            CHECK(ac.m.at(i, j) <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("knn_graph: complete graph at k = N-1 and single best edge at k = 1") {
    Rng rng(77);
    Dense m(5, 5);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) m.at(i, j) = i == j ? 1.0 : rng.uniform(0.01, 1.0);
    }
    // Symmetrize.
    for (int i = 0; i < 5; ++i) {
        for (int j = i + 1; j < 5; ++j) m.at(j, i) = m.at(i, j);
    }
    CorrelationMatrix corr{CorrKind::Ac, m, std::vector<uint8_t>(5, 0)};
    const RegionGraph complete = knn_graph(corr, 4);
    for (int i = 0; i < 5; ++i) CHECK(complete.edges[static_cast<size_t>(i)].size() == 4);

    const RegionGraph single = knn_graph(corr, 1);
    for (int i = 0; i < 5; ++i) {
        REQUIRE(single.edges[static_cast<size_t>(i)].size() == 1);
        double best = 0;
        for (int j = 0; j < 5; ++j) {
            if (j != i) best = std::max(best, m.at(i, j));
        }
        CHECK(single.edges[static_cast<size_t>(i)][0].second == best);
    }
}

TEST_CASE("knn_graph: matches a brute-force sort oracle, ties to lower index") {
    Rng rng(99);
    const int n = 6, k = 2;
    Dense m(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) m.at(i, j) = rng.uniform(-0.5, 1.0);
    }
    // Inject a deliberate tie.
    m.at(0, 3) = m.at(0, 4) = 0.9;
    CorrelationMatrix corr{CorrKind::Ac, m, std::vector<uint8_t>(static_cast<size_t>(n), 0)};
    const RegionGraph graph = knn_graph(corr, k);
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> order;
        for (int j = 0; j < n; ++j) {
            if (j != i && m.at(i, j) > 0) order.emplace_back(-m.at(i, j), j);
        }
        std::sort(order.begin(), order.end());
        const size_t expect = std::min<size_t>(static_cast<size_t>(k), order.size());
        REQUIRE(graph.edges[static_cast<size_t>(i)].size() == expect);
        for (size_t t = 0; t < expect; ++t) {
            CHECK(graph.edges[static_cast<size_t>(i)][t].first == order[t].second);
        }
    }
}

TEST_CASE("knn_graph: k >= N is a contract error; few positive peers take all") {
    Dense m(3, 3, 0.0);
    m.at(0, 1) = m.at(1, 0) = 0.5;
    CorrelationMatrix corr{CorrKind::Vc, m, std::vector<uint8_t>(3, 0)};
    CHECK_THROWS_AS(knn_graph(corr, 3), ContractError);
    const RegionGraph graph = knn_graph(corr, 2);
    CHECK(graph.edges[0].size() == 1);  // only one positive peer
    CHECK(graph.edges[2].empty());      // no positive peers at all
}
