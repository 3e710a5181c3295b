#pragma once

#include <string>
#include <vector>

#include "regionembed/correlation.hpp"
#include "regionembed/rng.hpp"
#include "regionembed/tensor.hpp"
#include "regionembed/trace.hpp"

namespace regionembed {

// One multi-head graph attention layer. The attention vector of each head is
// stored split as a_src/a_dst so the logit a^T [Wx_i || Wx_j] decomposes into
// a_src.Wx_i + a_dst.Wx_j.
struct GatHead {
    Tensor w;      // d_in x d_head
    Tensor a_src;  // d_head x 1
    Tensor a_dst;  // d_head x 1
};

struct GatLayerParams {
    std::vector<GatHead> heads;
    double leaky_slope = 0.2;

    std::vector<Tensor> parameters() const;
};

GatLayerParams make_gat_layer(int d_in, int d_out, int num_heads, double leaky_slope, Rng& rng);

// Additive attention mask: 0 where j is an out-neighbor of i (or j == i, the
// self-loop), a large negative constant elsewhere.
Tensor attention_mask(const RegionGraph& graph);

// Per head: e_ij = leaky_relu(a_src.Wx_i + a_dst.Wx_j) over the masked
// neighborhood, alpha = row softmax, output_i = sum_j alpha_ij Wx_j. Head
// outputs are concatenated, then elu.
Tensor gat_forward(const GatLayerParams& layer, const Tensor& mask, const Tensor& x,
                   ForwardTrace* trace = nullptr, const std::string& name = "gat");

// Applies a stack of layers to one graph's node features.
Tensor gat_encode(const std::vector<GatLayerParams>& layers, const Tensor& mask, const Tensor& x,
                  ForwardTrace* trace = nullptr, const std::string& name = "gat");

}  // namespace regionembed
