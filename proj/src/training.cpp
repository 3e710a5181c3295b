#include "regionembed/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

namespace regionembed {

void TrainingConfig::validate() const {
    if (epochs < 0) throw ContractError("training config: epochs must be nonnegative");
    if (lr <= 0) throw ContractError("training config: learning rate must be positive");
    if (dim < 1) throw ContractError("training config: dim must be positive");
    if (gat_heads < 1 || dim % gat_heads != 0) {
        throw ContractError("training config: dim " + std::to_string(dim) +
                            " must be divisible by gat_heads " + std::to_string(gat_heads));
    }
    if (fusion_heads < 1 || dim % fusion_heads != 0) {
        throw ContractError("training config: dim " + std::to_string(dim) +
                            " must be divisible by fusion_heads " + std::to_string(fusion_heads));
    }
    if (knn_k < 1) throw ContractError("training config: k must be at least 1");
    if (alpha < 0 || alpha > 1) throw ContractError("training config: alpha must be in [0,1]");
}

namespace {

const std::vector<std::pair<Variant, const char*>>& variant_names() {
    static const std::vector<std::pair<Variant, const char*>> names = {
        {Variant::Hm, "HM"},         {Variant::Gn, "GN"},
        {Variant::Si, "SI"},         {Variant::HmGn, "HM+GN"},
        {Variant::HmSi, "HM+SI"},    {Variant::NoGat, "R2V-g"},
        {Variant::NoFusion, "R2V-f"}, {Variant::Full, "full"},
    };
    return names;
}

}  // namespace

Variant parse_variant(const std::string& name) {
    for (const auto& [v, n] : variant_names()) {
        if (name == n) return v;
    }
    std::string valid;
    for (const auto& [v, n] : variant_names()) {
        if (!valid.empty()) valid += ", ";
        valid += n;
    }
    throw ValidationError("unknown variant \"" + name + "\"; valid variants: " + valid);
}

const char* variant_name(Variant v) {
    for (const auto& [var, n] : variant_names()) {
        if (var == v) return n;
    }
    return "?";
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> all = {Variant::Hm,    Variant::Gn,      Variant::Si,
                                             Variant::HmGn,  Variant::HmSi,    Variant::NoGat,
                                             Variant::NoFusion, Variant::Full};
    return all;
}

VariantSpec variant_spec(Variant v) {
    VariantSpec s;
    switch (v) {
        case Variant::Hm: s.use_vc = s.use_fc = false; break;
        case Variant::Gn: s.use_ac = s.use_fc = false; break;
        case Variant::Si: s.use_ac = s.use_vc = false; break;
        case Variant::HmGn: s.use_fc = false; break;
        case Variant::HmSi: s.use_vc = false; break;
        case Variant::NoGat: s.use_gat = false; break;
        case Variant::NoFusion: s.use_fusion = false; break;
        case Variant::Full: break;
    }
    return s;
}

// ---- model ------------------------------------------------------------------

Model::Model(const TrainingConfig& config, const VariantSpec& variant, const ModelInputs& inputs,
             Rng& rng)
    : config_(config), variant_(variant) {
    config.validate();
    const int n = inputs.n;
    const int d = config.dim;

    if (variant_.use_ac) {
        init_ac_ = normal_init({n, d}, 0.1, rng);
        if (variant_.use_gat) {
            for (int l = 0; l < config.gat_layers; ++l) {
                gat_ac_.push_back(make_gat_layer(d, d, config.gat_heads, config.leaky_slope, rng));
            }
        }
    }
    if (variant_.use_vc) {
        init_vc_ = normal_init({n, d}, 0.1, rng);
        if (variant_.use_gat) {
            for (int l = 0; l < config.gat_layers; ++l) {
                gat_vc_.push_back(make_gat_layer(d, d, config.gat_heads, config.leaky_slope, rng));
            }
        }
    }
    if (variant_.use_fc) {
        if (inputs.has_kg_vectors) {
            kg_const_ = Tensor::from_dense(inputs.kg_vectors);
            fc_proj_ = xavier_uniform(inputs.kg_vectors.cols, d, rng);
        } else {
            init_fc_ = normal_init({n, d}, 0.1, rng);
        }
        if (variant_.use_gat) {
            for (int l = 0; l < config.gat_layers; ++l) {
                gat_fc_.push_back(make_gat_layer(d, d, config.gat_heads, config.leaky_slope, rng));
            }
        }
    }
    if (variant_.use_fusion) {
        gate_ = make_gate(d, config.vector_gate, rng);
        encoder_ = make_encoder(d, config.fusion_heads, config.ffn_hidden, rng);
        if (variant_.use_ac) dec_ac_ = make_decoder(d, config.fusion_heads, config.ffn_hidden, rng);
        if (variant_.use_vc) dec_vc_ = make_decoder(d, config.fusion_heads, config.ffn_hidden, rng);
        if (variant_.use_fc) dec_fc_ = make_decoder(d, config.fusion_heads, config.ffn_hidden, rng);
    }
    if (variant_.use_ac) {
        w_o_ = xavier_uniform(d, d, rng);
        w_d_ = xavier_uniform(d, d, rng);
    }
}

Model::Outputs Model::forward(const ModelInputs& inputs, ForwardTrace* trace) const {
    Outputs out;
    if (variant_.use_ac) {
        out.e_ac = variant_.use_gat ? gat_encode(gat_ac_, inputs.mask_ac, init_ac_, trace, "gat.ac")
                                    : init_ac_;
    }
    if (variant_.use_vc) {
        out.e_vc = variant_.use_gat ? gat_encode(gat_vc_, inputs.mask_vc, init_vc_, trace, "gat.vc")
                                    : init_vc_;
    }
    if (variant_.use_fc) {
        Tensor x = init_fc_.defined() ? init_fc_ : matmul(kg_const_, fc_proj_);
        out.e_fc = variant_.use_gat ? gat_encode(gat_fc_, inputs.mask_fc, x, trace, "gat.fc") : x;
    }

    std::vector<Tensor> streams;
    if (out.e_ac.defined()) streams.push_back(out.e_ac);
    if (out.e_vc.defined()) streams.push_back(out.e_vc);
    if (out.e_fc.defined()) streams.push_back(out.e_fc);

    if (variant_.use_fusion) {
        out.fused = global_fuse(gate_, streams, trace);
        out.global = encode(encoder_, out.fused, trace, "encoder");
        if (variant_.use_ac) {
            out.dec_ac = decode(dec_ac_, out.e_ac, out.global, config_.cross_query, trace,
                                "decoder.ac");
        }
        if (variant_.use_vc) {
            out.dec_vc = decode(dec_vc_, out.e_vc, out.global, config_.cross_query, trace,
                                "decoder.vc");
        }
        if (variant_.use_fc) {
            out.dec_fc = decode(dec_fc_, out.e_fc, out.global, config_.cross_query, trace,
                                "decoder.fc");
        }
        out.embedding = out.global;
    } else {
        // Equal-weight combination; losses read the GAT outputs directly.
        out.dec_ac = out.e_ac;
        out.dec_vc = out.e_vc;
        out.dec_fc = out.e_fc;
        Tensor sum;
        for (const Tensor& s : streams) sum = sum.defined() ? add(sum, s) : s;
        out.embedding = scale(sum, 1.0 / static_cast<double>(streams.size()));
    }
    if (variant_.use_ac) {
        auto [eo, ed] = project_od(w_o_, w_d_, out.dec_ac);
        out.e_o = eo;
        out.e_d = ed;
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> named;
    auto push = [&](const std::string& name, const Tensor& t) {
        if (t.defined()) named.emplace_back(name, t);
    };
    auto push_gat = [&](const std::string& prefix, const std::vector<GatLayerParams>& layers) {
        for (size_t l = 0; l < layers.size(); ++l) {
            for (size_t h = 0; h < layers[l].heads.size(); ++h) {
                const std::string base = prefix + ".layer" + std::to_string(l) + ".head" +
                                         std::to_string(h);
                push(base + ".w", layers[l].heads[h].w);
                push(base + ".a_src", layers[l].heads[h].a_src);
                push(base + ".a_dst", layers[l].heads[h].a_dst);
            }
        }
    };
    auto push_attention = [&](const std::string& prefix, const AttentionParams& attn) {
        if (attn.wq.empty()) return;
        for (size_t h = 0; h < attn.wq.size(); ++h) {
            push(prefix + ".wq" + std::to_string(h), attn.wq[h]);
            push(prefix + ".wk" + std::to_string(h), attn.wk[h]);
            push(prefix + ".wv" + std::to_string(h), attn.wv[h]);
        }
        push(prefix + ".wo", attn.wo);
    };
    auto push_ffn = [&](const std::string& prefix, const FfnParams& ffn) {
        push(prefix + ".w1", ffn.w1);
        push(prefix + ".b1", ffn.b1);
        push(prefix + ".w2", ffn.w2);
        push(prefix + ".b2", ffn.b2);
    };
    auto push_decoder = [&](const std::string& prefix, const DecoderParams& dec) {
        if (dec.self_attn.wq.empty()) return;
        push_attention(prefix + ".self", dec.self_attn);
        push_attention(prefix + ".cross", dec.cross_attn);
        push(prefix + ".ln1.gain", dec.ln1.gain);
        push(prefix + ".ln1.bias", dec.ln1.bias);
        push(prefix + ".ln2.gain", dec.ln2.gain);
        push(prefix + ".ln2.bias", dec.ln2.bias);
        push(prefix + ".ln3.gain", dec.ln3.gain);
        push(prefix + ".ln3.bias", dec.ln3.bias);
        push_ffn(prefix + ".ffn", dec.ffn);
    };

    push("init_ac", init_ac_);
    push("init_vc", init_vc_);
    push("init_fc", init_fc_);
    push("fc_proj", fc_proj_);
    push_gat("gat.ac", gat_ac_);
    push_gat("gat.vc", gat_vc_);
    push_gat("gat.fc", gat_fc_);
    push("gate.w", gate_.w);
    push("gate.b", gate_.b);
    if (!encoder_.attn.wq.empty()) {
        push_attention("encoder.attn", encoder_.attn);
        push("encoder.ln1.gain", encoder_.ln1.gain);
        push("encoder.ln1.bias", encoder_.ln1.bias);
        push("encoder.ln2.gain", encoder_.ln2.gain);
        push("encoder.ln2.bias", encoder_.ln2.bias);
        push_ffn("encoder.ffn", encoder_.ffn);
    }
    push_decoder("decoder.ac", dec_ac_);
    push_decoder("decoder.vc", dec_vc_);
    push_decoder("decoder.fc", dec_fc_);
    push("w_o", w_o_);
    push("w_d", w_d_);
    return named;
}

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

Tensor Model::parameter(const std::string& name) const {
    for (auto& [n, t] : named_parameters()) {
        if (n == name) return t;
    }
    throw ContractError("no parameter named \"" + name + "\"");
}

// ---- losses -----------------------------------------------------------------

Tensor ac_loss(const Tensor& e_o, const Tensor& e_d, const Tensor& trip_pair_counts,
               bool swap_od) {
    // Conditioning follows the printed index roles: each pair (i,j) is read
    // with i as the softmax row. swap_od conditions on the other end by
    // transposing the pair weights.
    Tensor counts = swap_od ? transpose(trip_pair_counts) : trip_pair_counts;
    Tensor logits_o = matmul(e_o, transpose(e_d));
    Tensor logits_d = matmul(e_d, transpose(e_o));
    Tensor weighted = add(mul(counts, log_softmax_rows(logits_o)),
                          mul(counts, log_softmax_rows(logits_d)));
    return scale(sum_all(weighted), -1.0);
}

Tensor gram_reconstruction_loss(const Tensor& e, const Tensor& target) {
    const int n = e.rows();
    if (target.rows() != n || target.cols() != n) {
        throw ContractError("gram_reconstruction_loss: target " + shape_str(target.shape()) +
                            " does not match embedding rows " + std::to_string(n));
    }
    Tensor gram = matmul(e, transpose(e));
    return scale(squared_error(target, gram), 1.0 / (static_cast<double>(n) * n));
}

// ---- fit ----------------------------------------------------------------------

namespace {

void throw_on_non_finite(const Model::Outputs& out, int epoch) {
    const std::pair<const char*, const Tensor*> probes[] = {
        {"e_ac", &out.e_ac},     {"e_vc", &out.e_vc},     {"e_fc", &out.e_fc},
        {"fused", &out.fused},   {"global", &out.global}, {"dec_ac", &out.dec_ac},
        {"dec_vc", &out.dec_vc}, {"dec_fc", &out.dec_fc}, {"e_o", &out.e_o},
        {"e_d", &out.e_d},       {"embedding", &out.embedding},
    };
    for (const auto& [name, t] : probes) {
        if (t->defined() && !t->all_finite()) {
            throw NumericError("non-finite values in tensor \"" + std::string(name) +
                               "\" at epoch " + std::to_string(epoch));
        }
    }
    throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
}

}  // namespace

FitResult fit(Model& model, const ModelInputs& inputs, const TrainingConfig& config,
              const EpochCallback& checkpoint_callback) {
    const VariantSpec& variant = model.variant();
    if (variant.use_ac && !inputs.trip_pair_counts.defined()) {
        throw ContractError("fit: variant uses the mobility stream but no trips were provided");
    }

    FitResult result;
    std::vector<Tensor> params = model.parameters();
    Adam opt(params, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps);

    double best = std::numeric_limits<double>::infinity();
    int epochs_without_improvement = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        opt.zero_grad();
        Model::Outputs out = model.forward(inputs);

        LossBreakdown lb;
        Tensor total;
        auto accumulate = [&](Tensor term, double weight, double& slot) {
            slot = term.item();
            if (weight == 0.0) return;
            Tensor weighted = weight == 1.0 ? term : scale(term, weight);
            total = total.defined() ? add(total, weighted) : weighted;
        };
        if (variant.use_ac) {
            accumulate(ac_loss(out.e_o, out.e_d, inputs.trip_pair_counts, config.swap_od),
                       config.lambda_ac, lb.ac);
        }
        if (variant.use_vc) {
            accumulate(gram_reconstruction_loss(out.dec_vc, inputs.vc_target), config.lambda_vc,
                       lb.vc);
        }
        if (variant.use_fc) {
            accumulate(gram_reconstruction_loss(out.dec_fc, inputs.fc_target), config.lambda_fc,
                       lb.fc);
        }
        if (!total.defined()) {
            throw ContractError("fit: variant has no active loss terms");
        }
        lb.total = config.lambda_ac * lb.ac + config.lambda_vc * lb.vc + config.lambda_fc * lb.fc;
        if (!std::isfinite(lb.total)) throw_on_non_finite(out, epoch);
        result.log.push_back(lb);

        backward(total);
        opt.step();
        if (checkpoint_callback && config.checkpoint_every > 0 &&
            (epoch + 1) % config.checkpoint_every == 0) {
            checkpoint_callback(epoch + 1, model);
        }

        if (best - lb.total >= config.early_stop_delta) {
            epochs_without_improvement = 0;
        } else {
            ++epochs_without_improvement;
        }
        best = std::min(best, lb.total);
        if (config.early_stop_patience > 0 &&
            epochs_without_improvement >= config.early_stop_patience) {
            result.early_stopped = true;
            break;
        }
    }

    Model::Outputs final_out = model.forward(inputs);
    if (!final_out.embedding.all_finite()) throw_on_non_finite(final_out, config.epochs);
    result.embedding = final_out.embedding.to_dense();
    return result;
}

Dense aggregate_trip_pairs(const std::vector<TripRecord>& trips, int n) {
    Dense counts(n, n, 0.0);
    for (const TripRecord& t : trips) {
        counts.at(t.origin, t.destination) += static_cast<double>(t.count);
    }
    return counts;
}

// ---- checkpoints --------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[8] = {'R', 'G', 'E', 'M', 'B', '1', '\n', '\0'};
}

void save_checkpoint(const std::string& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const auto named = model.named_parameters();
    const uint32_t count = static_cast<uint32_t>(named.size());
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& [name, t] : named) {
        const uint32_t name_len = static_cast<uint32_t>(name.size());
        out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
        out.write(name.data(), name_len);
        const uint32_t rank = static_cast<uint32_t>(t.shape().size());
        out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
        for (int d : t.shape()) {
            const uint32_t dim = static_cast<uint32_t>(d);
            out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
        }
        out.write(reinterpret_cast<const char*>(t.values().data()),
                  static_cast<std::streamsize>(t.values().size() * sizeof(double)));
    }
    if (!out) throw ValidationError("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, Model& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw ValidationError(path + ": not a checkpoint file");
    }
    uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> records;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        uint32_t rank = 0;
        in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
        std::vector<int> shape(rank);
        size_t total = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            uint32_t dim = 0;
            in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
            shape[d] = static_cast<int>(dim);
            total *= dim;
        }
        std::vector<double> values(total);
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(total * sizeof(double)));
        if (!in) throw ValidationError(path + ": truncated checkpoint");
        records.emplace(std::move(name), std::make_pair(std::move(shape), std::move(values)));
    }
    for (auto& [name, t] : model.named_parameters()) {
        auto it = records.find(name);
        if (it == records.end()) {
            throw ValidationError(path + ": checkpoint is missing parameter \"" + name + "\"");
        }
        if (it->second.first != t.shape()) {
            throw ValidationError(path + ": shape mismatch for parameter \"" + name + "\"");
        }
        Tensor handle = t;
        handle.values() = it->second.second;
    }
}

}  // namespace regionembed
