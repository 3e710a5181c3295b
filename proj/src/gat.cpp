#include "regionembed/gat.hpp"

namespace regionembed {

namespace {
constexpr double kMaskedLogit = -1e30;
}

std::vector<Tensor> GatLayerParams::parameters() const {
    std::vector<Tensor> out;
    for (const GatHead& h : heads) {
        out.push_back(h.w);
        out.push_back(h.a_src);
        out.push_back(h.a_dst);
    }
    return out;
}

GatLayerParams make_gat_layer(int d_in, int d_out, int num_heads, double leaky_slope, Rng& rng) {
    if (num_heads < 1 || d_out % num_heads != 0) {
        throw ContractError("gat layer: output dim " + std::to_string(d_out) +
                            " must be divisible by head count " + std::to_string(num_heads));
    }
    const int d_head = d_out / num_heads;
    GatLayerParams layer;
    layer.leaky_slope = leaky_slope;
    layer.heads.reserve(static_cast<size_t>(num_heads));
    for (int h = 0; h < num_heads; ++h) {
        GatHead head;
        head.w = xavier_uniform(d_in, d_head, rng);
        head.a_src = xavier_uniform(d_head, 1, rng);
        head.a_dst = xavier_uniform(d_head, 1, rng);
        layer.heads.push_back(std::move(head));
    }
    return layer;
}

Tensor attention_mask(const RegionGraph& graph) {
    Dense mask(graph.n, graph.n, kMaskedLogit);
    for (int i = 0; i < graph.n; ++i) {
        mask.at(i, i) = 0.0;  // self-loop keeps zero-degree nodes well-defined
        for (const auto& [j, w] : graph.edges[static_cast<size_t>(i)]) mask.at(i, j) = 0.0;
    }
    return Tensor::from_dense(mask);
}

Tensor gat_forward(const GatLayerParams& layer, const Tensor& mask, const Tensor& x,
                   ForwardTrace* trace, const std::string& name) {
    const int n = x.rows();
    if (mask.rows() != n || mask.cols() != n) {
        throw ContractError("gat_forward: mask " + shape_str(mask.shape()) +
                            " does not match node count " + std::to_string(n));
    }
    Tensor ones_row = Tensor::full({1, n}, 1.0);
    Tensor ones_col = Tensor::full({n, 1}, 1.0);
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(layer.heads.size());
    for (size_t h = 0; h < layer.heads.size(); ++h) {
        const GatHead& head = layer.heads[h];
        Tensor hx = matmul(x, head.w);                       // n x d_head
        Tensor f_src = matmul(hx, head.a_src);               // n x 1
        Tensor f_dst = matmul(hx, head.a_dst);               // n x 1
        // Pairwise logits e_ij = f_src[i] + f_dst[j] via rank-1 broadcasts.
        Tensor logits = add(matmul(f_src, ones_row), matmul(ones_col, transpose(f_dst)));
        Tensor alpha = softmax(add(leaky_relu(logits, layer.leaky_slope), mask), 1);
        if (trace) {
            trace->record_attention(name + ".head" + std::to_string(h), alpha.to_dense());
        }
        head_outputs.push_back(matmul(alpha, hx));
    }
    Tensor combined = head_outputs.size() == 1 ? head_outputs[0] : concat_cols(head_outputs);
    return elu(combined);
}

Tensor gat_encode(const std::vector<GatLayerParams>& layers, const Tensor& mask, const Tensor& x,
                  ForwardTrace* trace, const std::string& name) {
    Tensor out = x;
    for (size_t l = 0; l < layers.size(); ++l) {
        out = gat_forward(layers[l], mask, out, trace, name + ".layer" + std::to_string(l));
    }
    return out;
}

}  // namespace regionembed
