#include <cmath>

#include "doctest.h"
#include "regionembed/gat.hpp"
#include "testutil.hpp"

using namespace regionembed;
using testutil::max_grad_rel_err;
using testutil::random_tensor;

namespace {

RegionGraph graph_from_edges(int n, const std::vector<std::pair<int, int>>& directed_edges) {
    RegionGraph g;
    g.n = n;
    g.k = 0;
    g.edges.resize(static_cast<size_t>(n));
    for (auto [a, b] : directed_edges) {
        g.edges[static_cast<size_t>(a)].emplace_back(b, 1.0);
    }
    return g;
}

// Independent dense-mask implementation: explicit per-node loops over the
// neighborhood, no shared code with gat_forward.
Dense gat_oracle(const GatLayerParams& layer, const RegionGraph& graph, const Dense& x) {
    const int n = graph.n;
    const int d_in = x.cols;
    const int d_head = layer.heads[0].w.cols();
    Dense out(n, static_cast<int>(layer.heads.size()) * d_head);
    for (size_t h = 0; h < layer.heads.size(); ++h) {
        const GatHead& head = layer.heads[h];
        Dense hx(n, d_head, 0.0);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < d_head; ++c) {
                double s = 0;
                for (int k = 0; k < d_in; ++k) s += x.at(i, k) * head.w.at(k, c);
                hx.at(i, c) = s;
            }
        }
        for (int i = 0; i < n; ++i) {
            std::vector<int> hood = {i};
            for (const auto& [j, w] : graph.edges[static_cast<size_t>(i)]) hood.push_back(j);
            std::vector<double> logits;
            for (int j : hood) {
                double fi = 0, fj = 0;
                for (int c = 0; c < d_head; ++c) {
                    fi += hx.at(i, c) * head.a_src.values()[static_cast<size_t>(c)];
                    fj += hx.at(j, c) * head.a_dst.values()[static_cast<size_t>(c)];
                }
                const double e = fi + fj;
                logits.push_back(e > 0 ? e : layer.leaky_slope * e);
            }
            double mx = logits[0];
            for (double v : logits) mx = std::max(mx, v);
            double total = 0;
            std::vector<double> alpha;
            for (double v : logits) {
                alpha.push_back(std::exp(v - mx));
                total += alpha.back();
            }
            for (double& a : alpha) a /= total;
            for (int c = 0; c < d_head; ++c) {
                double s = 0;
                for (size_t t = 0; t < hood.size(); ++t) s += alpha[t] * hx.at(hood[t], c);
                out.at(i, static_cast<int>(h) * d_head + c) = s;
            }
        }
    }
    for (double& v : out.v) v = v > 0 ? v : std::exp(v) - 1.0;  // elu
    return out;
}

}  // namespace

TEST_CASE("gat_forward: isolated node reduces to elu of its own transform") {
    Rng rng(101);
    GatLayerParams layer = make_gat_layer(4, 4, 1, 0.2, rng);
    const RegionGraph graph = graph_from_edges(2, {{1, 0}});  // node 0 isolated
    Tensor mask = attention_mask(graph);
    Tensor x = random_tensor({2, 4}, rng);
    ForwardTrace trace;
    Tensor out = gat_forward(layer, mask, x, &trace);
    // alpha_00 = 1 over the single-element neighborhood.
    CHECK(trace.attention[0].values.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    for (int c = 0; c < 4; ++c) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += x.at(0, k) * layer.heads[0].w.at(k, c);
        const double expect = s > 0 ? s : std::exp(s) - 1.0;
        CHECK(out.at(0, c) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("gat_forward: symmetric twin nodes get identical outputs") {
    Rng rng(102);
    GatLayerParams layer = make_gat_layer(4, 8, 2, 0.2, rng);
    const RegionGraph graph = graph_from_edges(2, {{0, 1}, {1, 0}});
    Tensor mask = attention_mask(graph);
    std::vector<double> row = {0.3, -1.2, 0.7, 2.0};
    std::vector<double> both = row;
    both.insert(both.end(), row.begin(), row.end());
    Tensor x = Tensor::from_values({2, 4}, both);
    Tensor out = gat_forward(layer, mask, x);
    for (int c = 0; c < 8; ++c) {
        CHECK(out.at(0, c) == doctest::Approx(out.at(1, c)).epsilon(1e-12));
    }
}

TEST_CASE("gat_forward: matches the dense-mask oracle on a 4-node graph") {
    Rng rng(103);
    GatLayerParams layer = make_gat_layer(5, 5, 1, 0.2, rng);
    const RegionGraph graph =
        graph_from_edges(4, {{0, 1}, {0, 2}, {1, 3}, {2, 0}, {3, 1}, {3, 2}});
    Tensor mask = attention_mask(graph);
    Tensor x = random_tensor({4, 5}, rng);
    Tensor out = gat_forward(layer, mask, x);
    const Dense expect = gat_oracle(layer, graph, x.to_dense());
    for (int i = 0; i < 4; ++i) {
        for (int c = 0; c < 5; ++c) {
            CHECK(std::fabs(out.at(i, c) - expect.at(i, c)) < 1e-10);
        }
    }
}

TEST_CASE("gat_forward: multi-head output matches the oracle too") {
    Rng rng(104);
    GatLayerParams layer = make_gat_layer(6, 8, 4, 0.2, rng);
    const RegionGraph graph = graph_from_edges(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}});
    Tensor mask = attention_mask(graph);
    Tensor x = random_tensor({5, 6}, rng);
    Tensor out = gat_forward(layer, mask, x);
    const Dense expect = gat_oracle(layer, graph, x.to_dense());
    for (int i = 0; i < 5; ++i) {
        for (int c = 0; c < 8; ++c) {
            CHECK(std::fabs(out.at(i, c) - expect.at(i, c)) < 1e-10);
        }
    }
}

TEST_CASE("gat_forward: zero attention vectors give the neighborhood mean") {
    Rng rng(105);
    GatLayerParams layer = make_gat_layer(3, 3, 1, 0.2, rng);
    std::fill(layer.heads[0].a_src.values().begin(), layer.heads[0].a_src.values().end(), 0.0);
    std::fill(layer.heads[0].a_dst.values().begin(), layer.heads[0].a_dst.values().end(), 0.0);
    const RegionGraph graph = graph_from_edges(3, {{0, 1}, {0, 2}});
    Tensor mask = attention_mask(graph);
    Tensor x = random_tensor({3, 3}, rng);
    ForwardTrace trace;
    Tensor out = gat_forward(layer, mask, x, &trace);
    for (int j = 0; j < 3; ++j) {
        CHECK(trace.attention[0].values.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }
    for (int c = 0; c < 3; ++c) {
        double mean = 0;
        for (int i = 0; i < 3; ++i) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += x.at(i, k) * layer.heads[0].w.at(k, c);
            mean += s / 3.0;
        }
        const double expect = mean > 0 ? mean : std::exp(mean) - 1.0;
        CHECK(out.at(0, c) == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("gat attention rows sum to one") {
    Rng rng(106);
    GatLayerParams layer = make_gat_layer(4, 8, 2, 0.2, rng);
    const RegionGraph graph = graph_from_edges(6, {{0, 1}, {1, 2}, {2, 3}, {4, 5}, {5, 0}});
    Tensor mask = attention_mask(graph);
    Tensor x = random_tensor({6, 4}, rng);
    ForwardTrace trace;
    gat_forward(layer, mask, x, &trace);
    for (const auto& entry : trace.attention) {
        for (int i = 0; i < entry.values.rows; ++i) {
            double s = 0;
            for (int j = 0; j < entry.values.cols; ++j) s += entry.values.at(i, j);
            CHECK(std::fabs(s - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("gat permutation equivariance") {
    Rng rng(107);
    GatLayerParams layer = make_gat_layer(4, 4, 2, 0.2, rng);
    const std::vector<std::pair<int, int>> edges = {{0, 1}, {1, 2}, {2, 0}, {3, 1}};
    const RegionGraph graph = graph_from_edges(4, edges);
    Tensor x = random_tensor({4, 4}, rng);
    Tensor out = gat_forward(layer, attention_mask(graph), x);

    const std::vector<int> perm = {2, 0, 3, 1};  // node i moves to perm[i]
    std::vector<std::pair<int, int>> permuted_edges;
    for (auto [a, b] : edges) {
        permuted_edges.emplace_back(perm[static_cast<size_t>(a)], perm[static_cast<size_t>(b)]);
    }
    const RegionGraph permuted_graph = graph_from_edges(4, permuted_edges);
    Dense xp(4, 4);
    for (int i = 0; i < 4; ++i) {
        for (int c = 0; c < 4; ++c) xp.at(perm[static_cast<size_t>(i)], c) = x.at(i, c);
    }
    Tensor out_p = gat_forward(layer, attention_mask(permuted_graph), Tensor::from_dense(xp));
    for (int i = 0; i < 4; ++i) {
        for (int c = 0; c < 4; ++c) {
            CHECK(out.at(i, c) ==
                  doctest::Approx(out_p.at(perm[static_cast<size_t>(i)], c)).epsilon(1e-10));
        }
    }
}

TEST_CASE("gat: gradient through two stacked layers matches finite differences") {
    Rng rng(108);
    std::vector<GatLayerParams> layers = {make_gat_layer(4, 4, 2, 0.2, rng),
                                          make_gat_layer(4, 4, 2, 0.2, rng)};
    const RegionGraph graph = graph_from_edges(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
    Tensor mask = attention_mask(graph);
    Tensor x = random_tensor({4, 4}, rng);
    std::vector<Tensor> params = {x};
    for (const auto& layer : layers) {
        for (const Tensor& p : layer.parameters()) params.push_back(p);
    }
    const double err = max_grad_rel_err(
        [&] {
            Tensor out = gat_encode(layers, mask, x);
            return sum_all(mul(out, out));
        },
        params);
    CHECK(err < 1e-4);
}
