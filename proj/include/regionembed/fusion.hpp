#pragma once

#include <string>
#include <utility>
#include <vector>

#include "regionembed/rng.hpp"
#include "regionembed/tensor.hpp"
#include "regionembed/trace.hpp"

namespace regionembed {

struct LayerNormParams {
    Tensor gain;
    Tensor bias;
};
LayerNormParams make_layer_norm(int dim);

// Multi-head scaled dot-product attention with per-head projections and a
// shared output projection; no biases on the projections.
struct AttentionParams {
    std::vector<Tensor> wq, wk, wv;  // per head: d x d_head
    Tensor wo;                       // d x d

    std::vector<Tensor> parameters() const;
};
AttentionParams make_attention(int dim, int num_heads, Rng& rng);

Tensor multi_head_attention(const AttentionParams& attn, const Tensor& query_input,
                            const Tensor& kv_input, ForwardTrace* trace = nullptr,
                            const std::string& name = "attn");

struct FfnParams {
    Tensor w1, b1;  // d -> d_ff
    Tensor w2, b2;  // d_ff -> d

    std::vector<Tensor> parameters() const;
};
FfnParams make_ffn(int dim, int hidden, Rng& rng);
Tensor ffn_forward(const FfnParams& ffn, const Tensor& x);

// Per-region scalar gates g_m = sigmoid(E_m W + b); the fused representation
// is the gated sum over the graph streams.
struct GateParams {
    Tensor w;  // d x 1 (scalar gate) or d x d (vector gate)
    Tensor b;  // {1} or {d}
    bool vector_gate = false;

    std::vector<Tensor> parameters() const { return {w, b}; }
};
GateParams make_gate(int dim, bool vector_gate, Rng& rng);
Tensor global_fuse(const GateParams& gate, const std::vector<Tensor>& graph_embeddings,
                   ForwardTrace* trace = nullptr);

// Transformer-style block: self-attention and feed-forward sublayers with
// residual connections and layer normalization around each.
struct EncoderParams {
    AttentionParams attn;
    LayerNormParams ln1, ln2;
    FfnParams ffn;

    std::vector<Tensor> parameters() const;
};
EncoderParams make_encoder(int dim, int num_heads, int ffn_hidden, Rng& rng);
Tensor encode(const EncoderParams& enc, const Tensor& x, ForwardTrace* trace = nullptr,
              const std::string& name = "encoder");

// Which stream supplies the cross-attention query. Global reads the fused
// path literally (K/V from the decoder's own stream); Stream is the
// alternative wiring with the roles exchanged.
enum class CrossQuerySource { Global, Stream };

struct DecoderParams {
    AttentionParams self_attn;
    AttentionParams cross_attn;
    LayerNormParams ln1, ln2, ln3;
    FfnParams ffn;

    std::vector<Tensor> parameters() const;
};
DecoderParams make_decoder(int dim, int num_heads, int ffn_hidden, Rng& rng);
Tensor decode(const DecoderParams& dec, const Tensor& e_m, const Tensor& e_global,
              CrossQuerySource query_source = CrossQuerySource::Global,
              ForwardTrace* trace = nullptr, const std::string& name = "decoder");

// Trainable origin/destination projections of the accessibility stream.
std::pair<Tensor, Tensor> project_od(const Tensor& w_o, const Tensor& w_d, const Tensor& e_ac);

}  // namespace regionembed
