#include "likr/kg_embed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include <json.hpp>

#include "binary_io.hpp"
#include "likr/error.hpp"

namespace likr {
namespace {

constexpr char kEmbeddingMagic[9] = "LIKREMB1";
constexpr std::uint32_t kEmbeddingVersion = 1;

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void normalize(std::span<double> v) {
    double n = norm(v);
    if (n > 0.0)
        for (double& x : v) x /= n;
}

// (h + r - t) / ||h + r - t||, or zeros when the residual vanishes.
double residual_unit(std::span<const double> h, std::span<const double> r, std::span<const double> t,
                     std::vector<double>& unit) {
    unit.resize(h.size());
    double s = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
        unit[k] = h[k] + r[k] - t[k];
        s += unit[k] * unit[k];
    }
    double n = std::sqrt(s);
    if (n > 0.0)
        for (double& x : unit) x /= n;
    else
        std::fill(unit.begin(), unit.end(), 0.0);
    return n;
}

}  // namespace

EmbeddingTable::EmbeddingTable(std::size_t dim, std::size_t n_entities, std::size_t n_relations)
    : dim_(dim),
      n_entities_(n_entities),
      n_relations_(n_relations),
      entities_(dim * n_entities, 0.0),
      relations_(dim * n_relations, 0.0) {
    if (dim == 0) throw Error("embedding dimension must be positive");
}

std::span<const double> EmbeddingTable::entity(EntityId id) const {
    if (id >= n_entities_) throw Error("embedding: entity id " + std::to_string(id) + " out of range");
    return {entities_.data() + static_cast<std::size_t>(id) * dim_, dim_};
}

std::span<double> EmbeddingTable::entity(EntityId id) {
    if (id >= n_entities_) throw Error("embedding: entity id " + std::to_string(id) + " out of range");
    return {entities_.data() + static_cast<std::size_t>(id) * dim_, dim_};
}

std::span<const double> EmbeddingTable::relation(RelationId id) const {
    if (id >= n_relations_) throw Error("embedding: relation id " + std::to_string(id) + " out of range");
    return {relations_.data() + static_cast<std::size_t>(id) * dim_, dim_};
}

std::span<double> EmbeddingTable::relation(RelationId id) {
    if (id >= n_relations_) throw Error("embedding: relation id " + std::to_string(id) + " out of range");
    return {relations_.data() + static_cast<std::size_t>(id) * dim_, dim_};
}

void TransEConfig::validate() const {
    if (dim == 0 || negatives_per_positive == 0 || epochs == 0 || batch_size == 0)
        throw Error("TransE config: dim, negatives_per_positive, epochs and batch_size must be positive");
    if (!(margin > 0.0) || !(learning_rate > 0.0)) throw Error("TransE config: margin and learning_rate must be positive");
}

double score_triple(const EmbeddingTable& emb, EntityId head, RelationId relation, EntityId tail) {
    auto h = emb.entity(head);
    auto r = emb.relation(relation);
    auto t = emb.entity(tail);
    double s = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
        double d = h[k] + r[k] - t[k];
        s += d * d;
    }
    return -std::sqrt(s);
}

double inner_product(const EmbeddingTable& emb, EntityId a, EntityId b) {
    auto x = emb.entity(a);
    auto y = emb.entity(b);
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * y[k];
    return s;
}

MarginGradient margin_loss_gradient(std::span<const double> head, std::span<const double> relation,
                                    std::span<const double> tail, std::span<const double> neg_head,
                                    std::span<const double> neg_tail, double margin) {
    const auto d = head.size();
    MarginGradient g;
    g.head.assign(d, 0.0);
    g.relation.assign(d, 0.0);
    g.tail.assign(d, 0.0);
    g.neg_head.assign(d, 0.0);
    g.neg_tail.assign(d, 0.0);
    std::vector<double> up, un;
    double pos = residual_unit(head, relation, tail, up);
    double neg = residual_unit(neg_head, relation, neg_tail, un);
    double hinge = margin + pos - neg;
    if (hinge <= 0.0) return g;
    g.loss = hinge;
    for (std::size_t k = 0; k < d; ++k) {
        g.head[k] = up[k];
        g.tail[k] = -up[k];
        g.neg_head[k] = -un[k];
        g.neg_tail[k] = un[k];
        g.relation[k] = up[k] - un[k];
    }
    return g;
}

TransEResult train_transe(const KnowledgeGraph& kg, const TransEConfig& config, const EpochLogger& log) {
    config.validate();
    const auto triples = kg.all_triples();
    if (triples.empty() || kg.entity_count() < 2) throw Error("TransE: knowledge graph is empty");

    const std::size_t dim = config.dim;
    const std::size_t n_ent = kg.entity_count();
    EmbeddingTable emb(dim, n_ent, kg.relation_count());
    std::mt19937_64 rng(config.seed);

    if (config.init == EmbeddingInit::Uniform) {
        const double bound = 6.0 / std::sqrt(static_cast<double>(dim));
        std::uniform_real_distribution<double> unif(-bound, bound);
        for (EntityId e = 0; e < n_ent; ++e) {
            auto v = emb.entity(e);
            for (double& x : v) x = unif(rng);
            normalize(v);
        }
        for (RelationId r = 0; r < kg.relation_count(); ++r) {
            auto v = emb.relation(r);
            for (double& x : v) x = unif(rng);
            normalize(v);
        }
    }

    std::vector<std::size_t> order(triples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::uniform_int_distribution<EntityId> pick_entity(0, static_cast<EntityId>(n_ent - 1));
    std::bernoulli_distribution coin(0.5);

    std::vector<double> grad_ent(n_ent * dim, 0.0);
    std::vector<double> grad_rel(kg.relation_count() * dim, 0.0);
    std::vector<char> touched_ent(n_ent, 0), touched_rel(kg.relation_count(), 0);
    std::vector<EntityId> touched_ent_list;
    std::vector<RelationId> touched_rel_list;

    auto add = [&](std::vector<double>& buf, std::size_t row, const std::vector<double>& g) {
        double* dst = buf.data() + row * dim;
        for (std::size_t k = 0; k < dim; ++k) dst[k] += g[k];
    };
    auto touch_ent = [&](EntityId e) {
        if (!touched_ent[e]) {
            touched_ent[e] = 1;
            touched_ent_list.push_back(e);
        }
    };
    auto touch_rel = [&](RelationId r) {
        if (!touched_rel[r]) {
            touched_rel[r] = 1;
            touched_rel_list.push_back(r);
        }
    };
    auto apply = [&]() {
        const double lr = config.learning_rate;
        for (auto e : touched_ent_list) {
            auto v = emb.entity(e);
            double* g = grad_ent.data() + static_cast<std::size_t>(e) * dim;
            for (std::size_t k = 0; k < dim; ++k) {
                v[k] -= lr * g[k];
                g[k] = 0.0;
            }
            touched_ent[e] = 0;
        }
        for (auto r : touched_rel_list) {
            auto v = emb.relation(r);
            double* g = grad_rel.data() + static_cast<std::size_t>(r) * dim;
            for (std::size_t k = 0; k < dim; ++k) {
                v[k] -= lr * g[k];
                g[k] = 0.0;
            }
            touched_rel[r] = 0;
        }
        touched_ent_list.clear();
        touched_rel_list.clear();
    };

    TransEResult result;
    const double n_samples = static_cast<double>(triples.size() * config.negatives_per_positive);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t in_batch = 0;
        for (std::size_t idx : order) {
            const auto& pos = triples[idx];
            for (std::size_t n = 0; n < config.negatives_per_positive; ++n) {
                Triple neg = pos;
                if (coin(rng)) {
                    do neg.head = pick_entity(rng);
                    while (neg.head == pos.head);
                } else {
                    do neg.tail = pick_entity(rng);
                    while (neg.tail == pos.tail);
                }
                auto g = margin_loss_gradient(emb.entity(pos.head), emb.relation(pos.relation), emb.entity(pos.tail),
                                              emb.entity(neg.head), emb.entity(neg.tail), config.margin);
                epoch_loss += g.loss;
                if (g.loss > 0.0) {
                    add(grad_ent, pos.head, g.head);
                    add(grad_ent, pos.tail, g.tail);
                    add(grad_ent, neg.head, g.neg_head);
                    add(grad_ent, neg.tail, g.neg_tail);
                    add(grad_rel, pos.relation, g.relation);
                    touch_ent(pos.head);
                    touch_ent(pos.tail);
                    touch_ent(neg.head);
                    touch_ent(neg.tail);
                    touch_rel(pos.relation);
                }
            }
            if (++in_batch == config.batch_size) {
                apply();
                in_batch = 0;
            }
        }
        if (in_batch > 0) apply();
        if (!std::isfinite(epoch_loss)) throw Error("TransE diverged: non-finite loss at epoch " + std::to_string(epoch));

        double max_norm = 0.0;
        for (EntityId e = 0; e < n_ent; ++e) {
            auto v = emb.entity(e);
            double nv = norm(v);
            if (nv > 1.0) {
                for (double& x : v) x /= nv;
                nv = norm(v);
            }
            max_norm = std::max(max_norm, nv);
        }
        result.trace.epoch_loss.push_back(epoch_loss);
        result.trace.epoch_mean_loss.push_back(epoch_loss / n_samples);
        result.trace.max_entity_norm.push_back(max_norm);
        if (log) log(epoch, epoch_loss / n_samples);
    }
    result.table = std::move(emb);
    return result;
}

void save_embeddings(const EmbeddingTable& emb, const KnowledgeGraph& kg, const std::filesystem::path& bin_path,
                     const std::filesystem::path& sidecar_path) {
    if (emb.entity_count() != kg.entity_count() || emb.relation_count() != kg.relation_count())
        throw Error("embedding table does not match the graph");
    {
        std::ofstream out(bin_path, std::ios::binary);
        if (!out) throw Error("cannot write " + bin_path.string());
        detail::write_magic(out, kEmbeddingMagic);
        detail::write_le<std::uint32_t>(out, kEmbeddingVersion);
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(emb.dim()));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(emb.entity_count()));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(emb.relation_count()));
        for (double x : emb.entity_data()) detail::write_le<float>(out, static_cast<float>(x));
        for (double x : emb.relation_data()) detail::write_le<float>(out, static_cast<float>(x));
    }
    nlohmann::json side;
    side["dim"] = emb.dim();
    auto& ents = side["entities"] = nlohmann::json::object();
    for (const auto& e : kg.entities()) ents[e.qualified_label()] = e.id;
    auto& rels = side["relations"] = nlohmann::json::object();
    for (const auto& r : kg.relations()) rels[r.name] = r.id;
    std::ofstream out(sidecar_path, std::ios::binary);
    if (!out) throw Error("cannot write " + sidecar_path.string());
    out << side.dump(2) << '\n';
}

EmbeddingTable load_embeddings(const std::filesystem::path& bin_path) {
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw Error("cannot open " + bin_path.string());
    const auto what = "embedding file " + bin_path.string();
    detail::expect_magic(in, kEmbeddingMagic, what);
    auto version = detail::read_le<std::uint32_t>(in, what);
    if (version != kEmbeddingVersion) throw Error(what + ": unsupported version " + std::to_string(version));
    auto dim = detail::read_le<std::uint32_t>(in, what);
    auto n_ent = detail::read_le<std::uint32_t>(in, what);
    auto n_rel = detail::read_le<std::uint32_t>(in, what);
    EmbeddingTable emb(dim, n_ent, n_rel);
    for (EntityId e = 0; e < n_ent; ++e)
        for (double& x : emb.entity(e)) x = detail::read_le<float>(in, what);
    for (RelationId r = 0; r < n_rel; ++r)
        for (double& x : emb.relation(r)) x = detail::read_le<float>(in, what);
    return emb;
}

}  // namespace likr
