#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "likr/error.hpp"

namespace likr {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

// Pseudo-relation of the stay-in-place action. Never stored in a graph.
inline constexpr RelationId kSelfLoop = std::numeric_limits<RelationId>::max();

enum class EntityKind : std::uint8_t { User, Item, MetadataValue };

std::string_view to_string(EntityKind kind);

struct Entity {
    EntityId id = 0;
    EntityKind kind = EntityKind::User;
    std::string metadata_type;  // set only for MetadataValue
    std::string label;

    // "user:alice", "item:Alien", "genre:Drama". Unique within a graph.
    std::string qualified_label() const;
};

struct RelationType {
    RelationId id = 0;
    std::string name;
    std::optional<RelationId> inverse_of;
    EntityKind head_kind = EntityKind::User;
    EntityKind tail_kind = EntityKind::Item;
    std::string metadata_type;  // the value side's type for has_<type> / <type>_of
    bool forward = true;
};

struct Edge {
    RelationId relation = 0;
    EntityId target = 0;

    friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct Triple {
    EntityId head = 0;
    RelationId relation = 0;
    EntityId tail = 0;

    friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct Interaction {
    std::string user;
    std::string item;
    std::int64_t timestamp = 0;

    friend bool operator==(const Interaction&, const Interaction&) = default;
};

using ItemMetadata = std::map<std::string, std::map<std::string, std::vector<std::string>>>;

struct DatasetBundle {
    std::vector<Interaction> interactions;
    ItemMetadata item_metadata;  // item label -> metadata type -> values
    std::vector<std::string> metadata_types;
    std::string domain_name;
};

struct KGStats {
    std::size_t entity_count = 0;
    std::size_t entity_type_count = 0;
    std::size_t triple_count = 0;  // stored, inverses included
    std::size_t relation_type_count = 0;  // relation types carrying at least one triple
    double sparsity = 0.0;  // stored triples / |V|^2
};

// Immutable typed multigraph. Every forward triple is stored together with its
// inverse, and each adjacency list is sorted by (relation, neighbor).
class KnowledgeGraph {
public:
    KnowledgeGraph() = default;
    KnowledgeGraph(std::vector<Entity> entities, std::vector<RelationType> relations,
                   std::span<const Triple> forward_triples);

    const std::vector<Entity>& entities() const noexcept { return entities_; }
    const std::vector<RelationType>& relations() const noexcept { return relations_; }
    std::size_t entity_count() const noexcept { return entities_.size(); }
    std::size_t relation_count() const noexcept { return relations_.size(); }

    const Entity& entity(EntityId id) const;
    const RelationType& relation(RelationId id) const;
    std::span<const Edge> neighbors(EntityId id) const;
    bool has_edge(EntityId head, RelationId relation, EntityId tail) const;

    std::optional<EntityId> find(EntityKind kind, std::string_view label,
                                 std::string_view metadata_type = {}) const;
    std::optional<EntityId> find_qualified(std::string_view qualified_label) const;
    std::optional<RelationId> find_relation(std::string_view name) const;

    std::vector<EntityId> entities_of(EntityKind kind) const;
    std::vector<EntityId> metadata_values(std::string_view metadata_type) const;

    std::vector<Triple> forward_triples() const;
    std::vector<Triple> all_triples() const;
    std::size_t stored_triple_count() const noexcept { return stored_triples_; }

    // Items the user is linked to by "interacted", ascending id.
    std::vector<EntityId> interacted_items(EntityId user) const;

private:
    std::vector<Entity> entities_;
    std::vector<RelationType> relations_;
    std::vector<std::vector<Edge>> adjacency_;
    std::unordered_map<std::string, EntityId> by_qualified_label_;
    std::size_t stored_triples_ = 0;
};

// Schema used by build_kg: interacted/interacted_by followed by
// has_<type>/<type>_of for every metadata type, in declaration order.
std::vector<RelationType> make_relation_schema(std::span<const std::string> metadata_types);

inline constexpr RelationId kInteracted = 0;
inline constexpr RelationId kInteractedBy = 1;

std::vector<Interaction> read_interactions(const std::filesystem::path& path);
void write_interactions(const std::filesystem::path& path, std::span<const Interaction> rows);

DatasetBundle load_dataset(const std::filesystem::path& interactions_path,
                           const std::filesystem::path& metadata_path,
                           std::vector<std::string> metadata_types, std::string domain_name,
                           std::span<const std::string> ignored_types = {});

KnowledgeGraph build_kg(const DatasetBundle& bundle, std::span<const Interaction> train);

KGStats stats(const KnowledgeGraph& kg);

// Debug export: head_label<TAB>relation_name<TAB>tail_label per stored triple.
void export_triples_tsv(const KnowledgeGraph& kg, const std::filesystem::path& path);

void save_graph(const KnowledgeGraph& kg, const std::filesystem::path& path);
KnowledgeGraph load_graph(const std::filesystem::path& path);

}  // namespace likr
