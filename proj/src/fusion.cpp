#include "regionembed/fusion.hpp"

#include <cmath>

namespace regionembed {

LayerNormParams make_layer_norm(int dim) {
    return {Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

std::vector<Tensor> AttentionParams::parameters() const {
    std::vector<Tensor> out;
    for (const Tensor& t : wq) out.push_back(t);
    for (const Tensor& t : wk) out.push_back(t);
    for (const Tensor& t : wv) out.push_back(t);
    out.push_back(wo);
    return out;
}

AttentionParams make_attention(int dim, int num_heads, Rng& rng) {
    if (num_heads < 1 || dim % num_heads != 0) {
        throw ContractError("attention: dim " + std::to_string(dim) +
                            " must be divisible by head count " + std::to_string(num_heads));
    }
    const int d_head = dim / num_heads;
    AttentionParams attn;
    for (int h = 0; h < num_heads; ++h) {
        attn.wq.push_back(xavier_uniform(dim, d_head, rng));
        attn.wk.push_back(xavier_uniform(dim, d_head, rng));
        attn.wv.push_back(xavier_uniform(dim, d_head, rng));
    }
    attn.wo = xavier_uniform(dim, dim, rng);
    return attn;
}

Tensor multi_head_attention(const AttentionParams& attn, const Tensor& query_input,
                            const Tensor& kv_input, ForwardTrace* trace,
                            const std::string& name) {
    const int d_head = attn.wq[0].cols();
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(d_head));
    std::vector<Tensor> heads;
    heads.reserve(attn.wq.size());
    for (size_t h = 0; h < attn.wq.size(); ++h) {
        Tensor q = matmul(query_input, attn.wq[h]);
        Tensor k = matmul(kv_input, attn.wk[h]);
        Tensor v = matmul(kv_input, attn.wv[h]);
        Tensor weights = softmax(scale(matmul(q, transpose(k)), scale_factor), 1);
        if (trace) {
            trace->record_attention(name + ".head" + std::to_string(h), weights.to_dense());
        }
        heads.push_back(matmul(weights, v));
    }
    Tensor combined = heads.size() == 1 ? heads[0] : concat_cols(heads);
    return matmul(combined, attn.wo);
}

std::vector<Tensor> FfnParams::parameters() const { return {w1, b1, w2, b2}; }

FfnParams make_ffn(int dim, int hidden, Rng& rng) {
    FfnParams ffn;
    ffn.w1 = xavier_uniform(dim, hidden, rng);
    ffn.b1 = Tensor::zeros({hidden}, true);
    ffn.w2 = xavier_uniform(hidden, dim, rng);
    ffn.b2 = Tensor::zeros({dim}, true);
    return ffn;
}

Tensor ffn_forward(const FfnParams& ffn, const Tensor& x) {
    return add_rowvec(matmul(elu(add_rowvec(matmul(x, ffn.w1), ffn.b1)), ffn.w2), ffn.b2);
}

GateParams make_gate(int dim, bool vector_gate, Rng& rng) {
    GateParams gate;
    gate.vector_gate = vector_gate;
    gate.w = xavier_uniform(dim, vector_gate ? dim : 1, rng);
    gate.b = Tensor::zeros({vector_gate ? dim : 1}, true);
    return gate;
}

Tensor global_fuse(const GateParams& gate, const std::vector<Tensor>& graph_embeddings,
                   ForwardTrace* trace) {
    if (graph_embeddings.empty()) throw ContractError("global_fuse: no graph embeddings");
    const auto& shape = graph_embeddings[0].shape();
    for (const Tensor& e : graph_embeddings) {
        if (e.shape() != shape) {
            throw ContractError("global_fuse: shape mismatch " + shape_str(shape) + " vs " +
                                shape_str(e.shape()));
        }
    }
    Tensor fused;
    static const char* kStreams[] = {"ac", "vc", "fc"};
    for (size_t m = 0; m < graph_embeddings.size(); ++m) {
        const Tensor& e = graph_embeddings[m];
        Tensor g = sigmoid(add_rowvec(matmul(e, gate.w), gate.b));
        if (trace) {
            const char* label = m < 3 ? kStreams[m] : "extra";
            trace->record_gate(std::string("gate.") + label, g.to_dense());
        }
        Tensor term = gate.vector_gate ? mul(g, e) : mul_colvec(e, g);
        fused = fused.defined() ? add(fused, term) : term;
    }
    return fused;
}

std::vector<Tensor> EncoderParams::parameters() const {
    std::vector<Tensor> out = attn.parameters();
    out.push_back(ln1.gain);
    out.push_back(ln1.bias);
    auto f = ffn.parameters();
    out.insert(out.end(), f.begin(), f.end());
    out.push_back(ln2.gain);
    out.push_back(ln2.bias);
    return out;
}

EncoderParams make_encoder(int dim, int num_heads, int ffn_hidden, Rng& rng) {
    EncoderParams enc;
    enc.attn = make_attention(dim, num_heads, rng);
    enc.ln1 = make_layer_norm(dim);
    enc.ln2 = make_layer_norm(dim);
    enc.ffn = make_ffn(dim, ffn_hidden, rng);
    return enc;
}

Tensor encode(const EncoderParams& enc, const Tensor& x, ForwardTrace* trace,
              const std::string& name) {
    Tensor h = layer_norm(add(x, multi_head_attention(enc.attn, x, x, trace, name + ".self")),
                          enc.ln1.gain, enc.ln1.bias);
    return layer_norm(add(h, ffn_forward(enc.ffn, h)), enc.ln2.gain, enc.ln2.bias);
}

std::vector<Tensor> DecoderParams::parameters() const {
    std::vector<Tensor> out = self_attn.parameters();
    auto c = cross_attn.parameters();
    out.insert(out.end(), c.begin(), c.end());
    out.push_back(ln1.gain);
    out.push_back(ln1.bias);
    out.push_back(ln2.gain);
    out.push_back(ln2.bias);
    out.push_back(ln3.gain);
    out.push_back(ln3.bias);
    auto f = ffn.parameters();
    out.insert(out.end(), f.begin(), f.end());
    return out;
}

DecoderParams make_decoder(int dim, int num_heads, int ffn_hidden, Rng& rng) {
    DecoderParams dec;
    dec.self_attn = make_attention(dim, num_heads, rng);
    dec.cross_attn = make_attention(dim, num_heads, rng);
    dec.ln1 = make_layer_norm(dim);
    dec.ln2 = make_layer_norm(dim);
    dec.ln3 = make_layer_norm(dim);
    dec.ffn = make_ffn(dim, ffn_hidden, rng);
    return dec;
}

Tensor decode(const DecoderParams& dec, const Tensor& e_m, const Tensor& e_global,
              CrossQuerySource query_source, ForwardTrace* trace, const std::string& name) {
    Tensor stream = layer_norm(
        add(e_m, multi_head_attention(dec.self_attn, e_m, e_m, trace, name + ".self")),
        dec.ln1.gain, dec.ln1.bias);
    const bool from_global = query_source == CrossQuerySource::Global;
    const Tensor& query_side = from_global ? e_global : stream;
    const Tensor& kv_side = from_global ? stream : e_global;
    Tensor cross = multi_head_attention(dec.cross_attn, query_side, kv_side, trace,
                                        name + ".cross");
    // Residual anchors on the query stream, as in the standard decoder block.
    Tensor mixed = layer_norm(add(query_side, cross), dec.ln2.gain, dec.ln2.bias);
    return layer_norm(add(mixed, ffn_forward(dec.ffn, mixed)), dec.ln3.gain, dec.ln3.bias);
}

std::pair<Tensor, Tensor> project_od(const Tensor& w_o, const Tensor& w_d, const Tensor& e_ac) {
    return {matmul(e_ac, w_o), matmul(e_ac, w_d)};
}

}  // namespace regionembed
