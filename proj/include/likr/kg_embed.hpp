#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "likr/kg_store.hpp"

namespace likr {

class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::size_t dim, std::size_t n_entities, std::size_t n_relations);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t entity_count() const noexcept { return n_entities_; }
    std::size_t relation_count() const noexcept { return n_relations_; }

    std::span<const double> entity(EntityId id) const;
    std::span<double> entity(EntityId id);
    std::span<const double> relation(RelationId id) const;
    std::span<double> relation(RelationId id);

    const std::vector<double>& entity_data() const noexcept { return entities_; }
    const std::vector<double>& relation_data() const noexcept { return relations_; }

    friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

private:
    std::size_t dim_ = 0;
    std::size_t n_entities_ = 0;
    std::size_t n_relations_ = 0;
    std::vector<double> entities_;
    std::vector<double> relations_;
};

enum class EmbeddingInit { Uniform, Zero };

struct TransEConfig {
    std::size_t dim = 100;
    double margin = 1.0;
    std::size_t negatives_per_positive = 1;
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;
    EmbeddingInit init = EmbeddingInit::Uniform;

    void validate() const;
};

struct TransETrace {
    std::vector<double> epoch_loss;  // summed hinge loss per epoch
    std::vector<double> epoch_mean_loss;
    std::vector<double> max_entity_norm;  // after clipping
};

struct TransEResult {
    EmbeddingTable table;
    TransETrace trace;
};

using EpochLogger = std::function<void(std::size_t epoch, double mean_loss)>;

// -||e_h + r - e_t||_2; higher is more plausible.
double score_triple(const EmbeddingTable& emb, EntityId head, RelationId relation, EntityId tail);

double inner_product(const EmbeddingTable& emb, EntityId a, EntityId b);

// Hinge term max(0, margin + ||h + r - t|| - ||h' + r - t'||) and its gradient
// with respect to each of the five vectors, treated as independent variables.
struct MarginGradient {
    double loss = 0.0;
    std::vector<double> head, relation, tail, neg_head, neg_tail;
};

MarginGradient margin_loss_gradient(std::span<const double> head, std::span<const double> relation,
                                    std::span<const double> tail, std::span<const double> neg_head,
                                    std::span<const double> neg_tail, double margin);

// Margin-ranking TransE trained with minibatch SGD over every stored triple
// (inverses included). Entity vectors are clipped to the unit ball after each epoch.
TransEResult train_transe(const KnowledgeGraph& kg, const TransEConfig& config, const EpochLogger& log = {});

// Binary table: "LIKREMB1" magic, u32 version, u32 dim, u32 |V|, u32 |R|, then
// little-endian float32 rows (entities, then relations). The JSON sidecar maps
// qualified entity labels and relation names to ids.
void save_embeddings(const EmbeddingTable& emb, const KnowledgeGraph& kg, const std::filesystem::path& bin_path,
                     const std::filesystem::path& sidecar_path);
EmbeddingTable load_embeddings(const std::filesystem::path& bin_path);

}  // namespace likr
