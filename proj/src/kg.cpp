#include "regionembed/kg.hpp"

#include <algorithm>
#include <cmath>

#include "regionembed/csv.hpp"

namespace regionembed {

namespace {

constexpr const char* kLocatedIn = "LocatedIn";

uint64_t triple_key(int h, int r, int t, int num_entities, int num_relations) {
    return (static_cast<uint64_t>(h) * static_cast<uint64_t>(num_relations) +
            static_cast<uint64_t>(r)) *
               static_cast<uint64_t>(num_entities) +
           static_cast<uint64_t>(t);
}

}  // namespace

std::pair<KgVocab, std::vector<KnowledgeTriple>> build_kg(const std::vector<PoiRecord>& pois,
                                                          const RegionRegistry& registry) {
    KgVocab vocab;
    vocab.num_regions = registry.size();
    vocab.region_has_poi.assign(static_cast<size_t>(registry.size()), 0);
    std::unordered_map<std::string, int> entity_index;
    for (const auto& id : registry.ids()) {
        entity_index.emplace("region:" + id, static_cast<int>(vocab.entities.size()));
        vocab.entities.push_back("region:" + id);
    }

    // Forward relations: the attribute fields that actually occur, in
    // canonical order, then LocatedIn.
    std::unordered_set<std::string> fields_used;
    for (const auto& poi : pois) {
        for (const auto& [field, _] : poi.attributes) fields_used.insert(field);
    }
    std::unordered_map<std::string, int> relation_index;
    for (const char* field : kPoiFields) {
        if (fields_used.count(field)) {
            relation_index.emplace(field, static_cast<int>(vocab.relations.size()));
            vocab.relations.emplace_back(field);
        }
    }
    relation_index.emplace(kLocatedIn, static_cast<int>(vocab.relations.size()));
    vocab.relations.emplace_back(kLocatedIn);
    vocab.num_forward_relations = static_cast<int>(vocab.relations.size());
    for (int r = 0; r < vocab.num_forward_relations; ++r) {
        vocab.relations.push_back(vocab.relations[static_cast<size_t>(r)] + "_rev");
    }

    auto intern_entity = [&](const std::string& name) {
        auto it = entity_index.find(name);
        if (it != entity_index.end()) return it->second;
        const int idx = static_cast<int>(vocab.entities.size());
        entity_index.emplace(name, idx);
        vocab.entities.push_back(name);
        return idx;
    };

    // Intern POI entities first so entity blocks stay contiguous.
    std::vector<int> poi_entities;
    poi_entities.reserve(pois.size());
    for (const auto& poi : pois) poi_entities.push_back(intern_entity("poi:" + poi.place_id));

    std::vector<KnowledgeTriple> triples;
    auto emit = [&](int head, int relation, int tail) {
        triples.push_back({head, relation, tail});
        triples.push_back({tail, vocab.reverse(relation), head});
    };
    for (size_t p = 0; p < pois.size(); ++p) {
        const PoiRecord& poi = pois[p];
        const int poi_entity = poi_entities[p];
        for (const char* field : kPoiFields) {
            auto it = poi.attributes.find(field);
            if (it == poi.attributes.end()) continue;
            // Shared value entities create the long-range paths between POIs.
            const int value_entity = intern_entity("val:" + it->second);
            emit(poi_entity, relation_index.at(field), value_entity);
        }
        emit(poi_entity, relation_index.at(kLocatedIn), poi.region);
        vocab.region_has_poi[static_cast<size_t>(poi.region)] = 1;
    }
    return {std::move(vocab), std::move(triples)};
}

TransDParams init_transd(const KgVocab& vocab, int dim, Rng& rng) {
    const double limit = 6.0 / std::sqrt(static_cast<double>(dim));
    auto uniform_rows = [&](int rows) {
        std::vector<double> vals(static_cast<size_t>(rows) * dim);
        for (double& v : vals) v = rng.uniform(-limit, limit);
        // Start on the unit ball, matching the per-epoch constraint.
        for (int i = 0; i < rows; ++i) {
            double norm = 0.0;
            for (int j = 0; j < dim; ++j) {
                const double x = vals[static_cast<size_t>(i) * dim + j];
                norm += x * x;
            }
            norm = std::sqrt(norm);
            if (norm > 1.0) {
                for (int j = 0; j < dim; ++j) vals[static_cast<size_t>(i) * dim + j] /= norm;
            }
        }
        return Tensor::from_values({rows, dim}, std::move(vals), true);
    };
    TransDParams params;
    params.entity = uniform_rows(vocab.num_entities());
    params.entity_proj = uniform_rows(vocab.num_entities());
    params.relation = uniform_rows(vocab.num_relations());
    params.relation_proj = uniform_rows(vocab.num_relations());
    return params;
}

double transd_score(const KnowledgeTriple& triple, const TransDParams& params) {
    const int d = params.dim();
    const auto& ent = params.entity.values();
    const auto& entp = params.entity_proj.values();
    const auto& rel = params.relation.values();
    const auto& relp = params.relation_proj.values();
    const double* h = ent.data() + static_cast<size_t>(triple.head) * d;
    const double* hp = entp.data() + static_cast<size_t>(triple.head) * d;
    const double* t = ent.data() + static_cast<size_t>(triple.tail) * d;
    const double* tp = entp.data() + static_cast<size_t>(triple.tail) * d;
    const double* r = rel.data() + static_cast<size_t>(triple.relation) * d;
    const double* rp = relp.data() + static_cast<size_t>(triple.relation) * d;
    double hdot = 0.0, tdot = 0.0;
    for (int j = 0; j < d; ++j) {
        hdot += h[j] * hp[j];
        tdot += t[j] * tp[j];
    }
    double score = 0.0;
    for (int j = 0; j < d; ++j) {
        // h_perp = h + (h_p . h) r_p, and likewise for the tail.
        const double diff = (h[j] + hdot * rp[j]) + r[j] - (t[j] + tdot * rp[j]);
        score += diff * diff;
    }
    return score;
}

namespace {

double renormalize_rows(Tensor& t) {
    const int rows = t.rows(), d = t.cols();
    auto& vals = t.values();
    double max_norm = 0.0;
    for (int i = 0; i < rows; ++i) {
        double norm = 0.0;
        for (int j = 0; j < d; ++j) {
            const double x = vals[static_cast<size_t>(i) * d + j];
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm > 1.0) {
            for (int j = 0; j < d; ++j) vals[static_cast<size_t>(i) * d + j] /= norm;
            norm = 1.0;
        }
        max_norm = std::max(max_norm, norm);
    }
    return max_norm;
}

// Batched score over index triples: row-parallel TransD using the closed
// form h_perp = h + (h_p . h) r_p.
Tensor batch_scores(const TransDParams& params, const std::vector<int>& heads,
                    const std::vector<int>& rels, const std::vector<int>& tails) {
    Tensor h = gather_rows(params.entity, heads);
    Tensor hp = gather_rows(params.entity_proj, heads);
    Tensor t = gather_rows(params.entity, tails);
    Tensor tp = gather_rows(params.entity_proj, tails);
    Tensor r = gather_rows(params.relation, rels);
    Tensor rp = gather_rows(params.relation_proj, rels);
    Tensor h_perp = add(h, mul_colvec(rp, row_sum(mul(h, hp))));
    Tensor t_perp = add(t, mul_colvec(rp, row_sum(mul(t, tp))));
    Tensor diff = sub(add(h_perp, r), t_perp);
    return row_sum(mul(diff, diff));
}

}  // namespace

KgTrainResult train_kg(const std::vector<KnowledgeTriple>& triples, const KgVocab& vocab,
                       const KgConfig& config, Rng& rng) {
    if (triples.empty()) throw ContractError("train_kg: empty triple list");

    KgTrainResult result;
    result.params = init_transd(vocab, config.dim, rng);
    result.initial.entity = Tensor::from_values({vocab.num_entities(), config.dim},
                                                result.params.entity.values(), false);
    result.initial.entity_proj = Tensor::from_values({vocab.num_entities(), config.dim},
                                                     result.params.entity_proj.values(), false);
    result.initial.relation = Tensor::from_values({vocab.num_relations(), config.dim},
                                                  result.params.relation.values(), false);
    result.initial.relation_proj = Tensor::from_values(
        {vocab.num_relations(), config.dim}, result.params.relation_proj.values(), false);

    std::unordered_set<uint64_t> known;
    known.reserve(triples.size() * 2);
    for (const auto& t : triples) {
        known.insert(triple_key(t.head, t.relation, t.tail, vocab.num_entities(),
                                vocab.num_relations()));
    }

    std::vector<int> pos_h, pos_r, pos_t;
    for (const auto& t : triples) {
        for (int k = 0; k < config.negatives_per_positive; ++k) {
            pos_h.push_back(t.head);
            pos_r.push_back(t.relation);
            pos_t.push_back(t.tail);
        }
    }

    Adam opt(result.params.all(), config.lr);
    const int batch = static_cast<int>(pos_h.size());
    std::vector<int> neg_h(pos_h.size()), neg_t(pos_t.size());
    Tensor margin = Tensor::full({batch, 1}, config.margin);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // Filtered uniform corruption of head or tail.
        for (int i = 0; i < batch; ++i) {
            const bool corrupt_head = rng.uniform() < 0.5;
            int candidate;
            for (int attempt = 0;; ++attempt) {
                candidate = rng.uniform_int(vocab.num_entities());
                const int h = corrupt_head ? candidate : pos_h[static_cast<size_t>(i)];
                const int t = corrupt_head ? pos_t[static_cast<size_t>(i)] : candidate;
                if (!known.count(triple_key(h, pos_r[static_cast<size_t>(i)], t,
                                            vocab.num_entities(), vocab.num_relations())) ||
                    attempt > 100) {
                    neg_h[static_cast<size_t>(i)] = h;
                    neg_t[static_cast<size_t>(i)] = t;
                    break;
                }
            }
        }
        opt.zero_grad();
        Tensor pos = batch_scores(result.params, pos_h, pos_r, pos_t);
        Tensor neg = batch_scores(result.params, neg_h, pos_r, neg_t);
        Tensor loss = sum_all(relu(add(margin, sub(pos, neg))));
        backward(loss);
        opt.step();
        result.max_embedding_norm = std::max(
            result.max_embedding_norm, std::max(renormalize_rows(result.params.entity),
                                                renormalize_rows(result.params.relation)));
        result.epoch_losses.push_back(loss.item());
    }
    return result;
}

RegionVectors region_functionality_vectors(const TransDParams& params, const KgVocab& vocab,
                                           const std::vector<KnowledgeTriple>& triples,
                                           bool mean_pool) {
    const int n = vocab.num_regions;
    const int d = params.dim();
    RegionVectors out;
    out.vectors = Dense(n, d, 0.0);
    out.flagged.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        out.flagged[static_cast<size_t>(i)] = vocab.region_has_poi[static_cast<size_t>(i)] ? 0 : 1;
        const double* row = params.entity.values().data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) out.vectors.at(i, j) = row[j];
    }
    if (!mean_pool) return out;

    // Average the POI entity rows located in each region; LocatedIn triples
    // carry (poi, LocatedIn, region).
    int located_in = -1;
    for (int r = 0; r < vocab.num_forward_relations; ++r) {
        if (vocab.relations[static_cast<size_t>(r)] == "LocatedIn") located_in = r;
    }
    std::vector<int> counts(static_cast<size_t>(n), 0);
    Dense sums(n, d, 0.0);
    for (const auto& t : triples) {
        if (t.relation != located_in) continue;
        const double* row = params.entity.values().data() + static_cast<size_t>(t.head) * d;
        for (int j = 0; j < d; ++j) sums.at(t.tail, j) += row[j];
        ++counts[static_cast<size_t>(t.tail)];
    }
    for (int i = 0; i < n; ++i) {
        if (counts[static_cast<size_t>(i)] > 0) {
            for (int j = 0; j < d; ++j) {
                out.vectors.at(i, j) = sums.at(i, j) / counts[static_cast<size_t>(i)];
            }
        }
    }
    return out;
}

double mean_filtered_rank(const TransDParams& params, const std::vector<KnowledgeTriple>& triples,
                          const KgVocab& vocab) {
    std::unordered_set<uint64_t> known;
    for (const auto& t : triples) {
        known.insert(triple_key(t.head, t.relation, t.tail, vocab.num_entities(),
                                vocab.num_relations()));
    }
    const int d = params.dim();
    const int num_entities = vocab.num_entities();
    const auto& ent = params.entity.values();
    const auto& entp = params.entity_proj.values();
    const auto& rel = params.relation.values();
    const auto& relp = params.relation_proj.values();

    double total_rank = 0.0;
    std::vector<double> h_perp(static_cast<size_t>(d));
    for (const auto& triple : triples) {
        const double* h = ent.data() + static_cast<size_t>(triple.head) * d;
        const double* hp = entp.data() + static_cast<size_t>(triple.head) * d;
        const double* r = rel.data() + static_cast<size_t>(triple.relation) * d;
        const double* rp = relp.data() + static_cast<size_t>(triple.relation) * d;
        double hdot = 0.0;
        for (int j = 0; j < d; ++j) hdot += h[j] * hp[j];
        for (int j = 0; j < d; ++j) h_perp[static_cast<size_t>(j)] = h[j] + hdot * rp[j] + r[j];

        auto tail_score = [&](int tail) {
            const double* t = ent.data() + static_cast<size_t>(tail) * d;
            const double* tp = entp.data() + static_cast<size_t>(tail) * d;
            double tdot = 0.0;
            for (int j = 0; j < d; ++j) tdot += t[j] * tp[j];
            double s = 0.0;
            for (int j = 0; j < d; ++j) {
                const double diff = h_perp[static_cast<size_t>(j)] - (t[j] + tdot * rp[j]);
                s += diff * diff;
            }
            return s;
        };

        const double true_score = tail_score(triple.tail);
        int rank = 1;
        for (int t = 0; t < num_entities; ++t) {
            if (t == triple.tail) continue;
            if (known.count(triple_key(triple.head, triple.relation, t, num_entities,
                                       vocab.num_relations()))) {
                continue;  // filtered: other true tails do not count against us
            }
            if (tail_score(t) < true_score) ++rank;
        }
        total_rank += rank;
    }
    return total_rank / static_cast<double>(triples.size());
}

void write_triples_csv(const std::string& path, const std::vector<KnowledgeTriple>& triples,
                       const KgVocab& vocab) {
    std::string out = "head,relation,tail\n";
    for (const auto& t : triples) {
        out += csv_quote(vocab.entities[static_cast<size_t>(t.head)]) + "," +
               csv_quote(vocab.relations[static_cast<size_t>(t.relation)]) + "," +
               csv_quote(vocab.entities[static_cast<size_t>(t.tail)]) + "\n";
    }
    write_text_file(path, out);
}

void write_region_vectors_csv(const std::string& path, const RegionVectors& vectors,
                              const RegionRegistry& registry) {
    const int d = vectors.vectors.cols;
    std::string out = "region_id";
    for (int j = 0; j < d; ++j) out += ",v" + std::to_string(j);
    out += "\n";
    for (int i = 0; i < vectors.vectors.rows; ++i) {
        out += csv_quote(registry.id(i));
        for (int j = 0; j < d; ++j) out += "," + format_double(vectors.vectors.at(i, j));
        out += "\n";
    }
    write_text_file(path, out);
}

RegionVectors load_region_vectors_csv(const std::string& path, const RegionRegistry& registry) {
    const CsvTable t = read_csv(path);
    const int rc = csv_column(t, "region_id");
    if (rc < 0) throw ValidationError(path + ": missing region_id column");
    const int d = static_cast<int>(t.header.size()) - 1;
    if (d < 1) throw ValidationError(path + ": no vector columns");
    RegionVectors out;
    out.vectors = Dense(registry.size(), d, 0.0);
    out.flagged.assign(static_cast<size_t>(registry.size()), 1);
    for (size_t r = 0; r < t.rows.size(); ++r) {
        const int region = registry.require(t.rows[r][static_cast<size_t>(rc)], path, t.line[r]);
        out.flagged[static_cast<size_t>(region)] = 0;
        int j = 0;
        for (size_t c = 0; c < t.header.size(); ++c) {
            if (static_cast<int>(c) == rc) continue;
            out.vectors.at(region, j++) = std::stod(t.rows[r][c]);
        }
    }
    return out;
}

}  // namespace regionembed
