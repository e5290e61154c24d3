#include "likr/kg_store.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "likr/error.hpp"

namespace likr {

using nlohmann::json;

std::string_view to_string(EntityKind kind) {
    switch (kind) {
        case EntityKind::User: return "user";
        case EntityKind::Item: return "item";
        case EntityKind::MetadataValue: return "value";
    }
    return "unknown";
}

namespace {

std::string qualify(EntityKind kind, std::string_view label, std::string_view metadata_type) {
    std::string out;
    if (kind == EntityKind::MetadataValue)
        out.append(metadata_type);
    else
        out.append(to_string(kind));
    out.push_back(':');
    out.append(label);
    return out;
}

EntityKind kind_from_string(std::string_view s) {
    if (s == "user") return EntityKind::User;
    if (s == "item") return EntityKind::Item;
    if (s == "value") return EntityKind::MetadataValue;
    throw Error("unknown entity kind '" + std::string(s) + "'");
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            cols.push_back(line.substr(start));
            break;
        }
        cols.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return cols;
}

}  // namespace

std::string Entity::qualified_label() const { return qualify(kind, label, metadata_type); }

KnowledgeGraph::KnowledgeGraph(std::vector<Entity> entities, std::vector<RelationType> relations,
                               std::span<const Triple> forward_triples)
    : entities_(std::move(entities)), relations_(std::move(relations)) {
    for (std::size_t i = 0; i < entities_.size(); ++i) {
        auto& e = entities_[i];
        if (e.id != i) throw Error("entity ids must be dense and in order");
        if (e.label.empty()) throw Error("entity " + std::to_string(i) + " has an empty label");
        if (e.kind == EntityKind::MetadataValue && e.metadata_type.empty())
            throw Error("metadata value '" + e.label + "' has no metadata type");
        auto [it, inserted] = by_qualified_label_.emplace(e.qualified_label(), e.id);
        if (!inserted) throw Error("duplicate entity '" + it->first + "'");
    }
    for (std::size_t i = 0; i < relations_.size(); ++i) {
        const auto& r = relations_[i];
        if (r.id != i) throw Error("relation ids must be dense and in order");
        if (!r.inverse_of || *r.inverse_of >= relations_.size())
            throw Error("relation '" + r.name + "' lacks a valid inverse");
        if (relations_[*r.inverse_of].inverse_of != r.id)
            throw Error("relation '" + r.name + "' inverse is not involutive");
    }

    adjacency_.assign(entities_.size(), {});
    for (const auto& t : forward_triples) {
        if (t.head >= entities_.size() || t.tail >= entities_.size())
            throw Error("triple references an unknown entity");
        if (t.relation >= relations_.size()) throw Error("triple references an unknown relation");
        if (t.head == t.tail) throw Error("self-loop triple on '" + entities_[t.head].label + "'");
        const auto& rel = relations_[t.relation];
        const auto& h = entities_[t.head];
        const auto& tl = entities_[t.tail];
        auto kind_ok = [](const Entity& e, EntityKind kind, const std::string& type) {
            return e.kind == kind && (kind != EntityKind::MetadataValue || e.metadata_type == type);
        };
        if (!kind_ok(h, rel.head_kind, rel.metadata_type) || !kind_ok(tl, rel.tail_kind, rel.metadata_type))
            throw Error("triple (" + h.label + ", " + rel.name + ", " + tl.label + ") violates the relation schema");
        adjacency_[t.head].push_back({t.relation, t.tail});
        adjacency_[t.tail].push_back({*rel.inverse_of, t.head});
    }
    for (auto& list : adjacency_) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
        stored_triples_ += list.size();
    }
}

const Entity& KnowledgeGraph::entity(EntityId id) const {
    if (id >= entities_.size()) throw Error("entity id " + std::to_string(id) + " out of range");
    return entities_[id];
}

const RelationType& KnowledgeGraph::relation(RelationId id) const {
    if (id >= relations_.size()) throw Error("relation id " + std::to_string(id) + " out of range");
    return relations_[id];
}

std::span<const Edge> KnowledgeGraph::neighbors(EntityId id) const {
    if (id >= adjacency_.size()) throw Error("entity id " + std::to_string(id) + " out of range");
    return adjacency_[id];
}

bool KnowledgeGraph::has_edge(EntityId head, RelationId relation, EntityId tail) const {
    auto adj = neighbors(head);
    return std::binary_search(adj.begin(), adj.end(), Edge{relation, tail});
}

std::optional<EntityId> KnowledgeGraph::find(EntityKind kind, std::string_view label,
                                             std::string_view metadata_type) const {
    return find_qualified(qualify(kind, label, metadata_type));
}

std::optional<EntityId> KnowledgeGraph::find_qualified(std::string_view qualified_label) const {
    auto it = by_qualified_label_.find(std::string(qualified_label));
    if (it == by_qualified_label_.end()) return std::nullopt;
    return it->second;
}

std::optional<RelationId> KnowledgeGraph::find_relation(std::string_view name) const {
    for (const auto& r : relations_)
        if (r.name == name) return r.id;
    return std::nullopt;
}

std::vector<EntityId> KnowledgeGraph::entities_of(EntityKind kind) const {
    std::vector<EntityId> out;
    for (const auto& e : entities_)
        if (e.kind == kind) out.push_back(e.id);
    return out;
}

std::vector<EntityId> KnowledgeGraph::metadata_values(std::string_view metadata_type) const {
    std::vector<EntityId> out;
    for (const auto& e : entities_)
        if (e.kind == EntityKind::MetadataValue && e.metadata_type == metadata_type) out.push_back(e.id);
    return out;
}

std::vector<Triple> KnowledgeGraph::forward_triples() const {
    std::vector<Triple> out;
    for (EntityId h = 0; h < adjacency_.size(); ++h)
        for (const auto& e : adjacency_[h])
            if (relations_[e.relation].forward) out.push_back({h, e.relation, e.target});
    return out;
}

std::vector<Triple> KnowledgeGraph::all_triples() const {
    std::vector<Triple> out;
    out.reserve(stored_triples_);
    for (EntityId h = 0; h < adjacency_.size(); ++h)
        for (const auto& e : adjacency_[h]) out.push_back({h, e.relation, e.target});
    return out;
}

std::vector<EntityId> KnowledgeGraph::interacted_items(EntityId user) const {
    std::vector<EntityId> out;
    for (const auto& e : neighbors(user))
        if (e.relation == kInteracted) out.push_back(e.target);
    return out;
}

std::vector<RelationType> make_relation_schema(std::span<const std::string> metadata_types) {
    std::vector<RelationType> rels;
    rels.push_back({kInteracted, "interacted", kInteractedBy, EntityKind::User, EntityKind::Item, "", true});
    rels.push_back({kInteractedBy, "interacted_by", kInteracted, EntityKind::Item, EntityKind::User, "", false});
    for (const auto& type : metadata_types) {
        auto fwd = static_cast<RelationId>(rels.size());
        rels.push_back({fwd, "has_" + type, fwd + 1, EntityKind::Item, EntityKind::MetadataValue, type, true});
        rels.push_back({fwd + 1, type + "_of", fwd, EntityKind::MetadataValue, EntityKind::Item, type, false});
    }
    return rels;
}

std::vector<Interaction> read_interactions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open interactions file " + path.string());
    std::vector<Interaction> rows;
    std::string line;
    std::size_t lineno = 0;
    const auto file = path.string();
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cols = split_tabs(line);
        if (cols.size() != 3)
            throw FormatError(file, lineno, "expected 3 tab-separated columns, found " + std::to_string(cols.size()));
        if (cols[0].empty() || cols[1].empty()) throw FormatError(file, lineno, "empty user or item label");
        std::int64_t ts = 0;
        auto ts_col = cols[2];
        auto [ptr, ec] = std::from_chars(ts_col.data(), ts_col.data() + ts_col.size(), ts);
        if (ec != std::errc{} || ptr != ts_col.data() + ts_col.size() || ts < 0)
            throw FormatError(file, lineno, "unparsable timestamp '" + std::string(ts_col) + "'");
        rows.push_back({std::string(cols[0]), std::string(cols[1]), ts});
    }
    return rows;
}

void write_interactions(const std::filesystem::path& path, std::span<const Interaction> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& r : rows) out << r.user << '\t' << r.item << '\t' << r.timestamp << '\n';
}

DatasetBundle load_dataset(const std::filesystem::path& interactions_path,
                           const std::filesystem::path& metadata_path,
                           std::vector<std::string> metadata_types, std::string domain_name,
                           std::span<const std::string> ignored_types) {
    if (metadata_types.empty()) throw Error("at least one metadata type is required");
    DatasetBundle bundle;
    bundle.metadata_types = std::move(metadata_types);
    bundle.domain_name = std::move(domain_name);

    std::set<std::tuple<std::string, std::string, std::int64_t>> seen;
    for (auto& row : read_interactions(interactions_path)) {
        if (seen.emplace(row.user, row.item, row.timestamp).second) bundle.interactions.push_back(std::move(row));
    }

    std::ifstream in(metadata_path);
    if (!in) throw Error("cannot open metadata file " + metadata_path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(metadata_path.string() + ": " + e.what());
    }
    const auto file = metadata_path.string();
    if (!doc.is_object()) throw Error(file + ": top level must be an object of items");
    auto is_ignored = [&](const std::string& t) {
        return std::find(ignored_types.begin(), ignored_types.end(), t) != ignored_types.end();
    };
    auto is_known = [&](const std::string& t) {
        return std::find(bundle.metadata_types.begin(), bundle.metadata_types.end(), t) !=
               bundle.metadata_types.end();
    };
    for (const auto& [item, types] : doc.items()) {
        if (!types.is_object()) throw Error(file + ": metadata for item '" + item + "' must be an object");
        auto& slot = bundle.item_metadata[item];
        for (const auto& [type, values] : types.items()) {
            if (is_ignored(type)) continue;
            if (!is_known(type))
                throw Error(file + ": unknown metadata type '" + type + "' for item '" + item + "'");
            if (!values.is_array())
                throw Error(file + ": values of '" + type + "' for item '" + item + "' must be an array");
            auto& out = slot[type];
            for (const auto& v : values) {
                if (!v.is_string() || v.get<std::string>().empty())
                    throw Error(file + ": non-string or empty value in '" + type + "' for item '" + item + "'");
                out.push_back(v.get<std::string>());
            }
        }
    }
    return bundle;
}

KnowledgeGraph build_kg(const DatasetBundle& bundle, std::span<const Interaction> train) {
    if (train.empty()) throw Error("empty training graph");

    std::set<std::tuple<std::string, std::string, std::int64_t>> all;
    for (const auto& r : bundle.interactions) all.emplace(r.user, r.item, r.timestamp);
    for (const auto& r : train)
        if (!all.count({r.user, r.item, r.timestamp}))
            throw Error("training interaction (" + r.user + ", " + r.item + ") is not part of the dataset");

    std::vector<Entity> entities;
    std::unordered_map<std::string, EntityId> ids;
    auto intern = [&](EntityKind kind, const std::string& label, const std::string& type) {
        auto key = qualify(kind, label, type);
        auto it = ids.find(key);
        if (it != ids.end()) return it->second;
        auto id = static_cast<EntityId>(entities.size());
        entities.push_back({id, kind, kind == EntityKind::MetadataValue ? type : std::string{}, label});
        ids.emplace(std::move(key), id);
        return id;
    };

    for (const auto& r : bundle.interactions) {
        intern(EntityKind::User, r.user, "");
        intern(EntityKind::Item, r.item, "");
    }
    for (const auto& [item, _] : bundle.item_metadata) intern(EntityKind::Item, item, "");

    auto relations = make_relation_schema(bundle.metadata_types);
    std::vector<Triple> triples;
    std::set<std::pair<EntityId, EntityId>> pairs;
    for (const auto& r : train) {
        auto u = ids.at(qualify(EntityKind::User, r.user, ""));
        auto i = ids.at(qualify(EntityKind::Item, r.item, ""));
        if (pairs.emplace(u, i).second) triples.push_back({u, kInteracted, i});
    }

    // Items in id order so value ids follow first appearance.
    const auto n_items_and_users = entities.size();
    for (EntityId id = 0; id < n_items_and_users; ++id) {
        if (entities[id].kind != EntityKind::Item) continue;
        auto md = bundle.item_metadata.find(entities[id].label);
        if (md == bundle.item_metadata.end()) continue;
        for (std::size_t k = 0; k < bundle.metadata_types.size(); ++k) {
            const auto& type = bundle.metadata_types[k];
            auto vals = md->second.find(type);
            if (vals == md->second.end()) continue;
            auto rel = static_cast<RelationId>(2 + 2 * k);
            for (const auto& v : vals->second) {
                auto vid = intern(EntityKind::MetadataValue, v, type);
                if (pairs.emplace(id, vid).second) triples.push_back({id, rel, vid});
            }
        }
    }
    return KnowledgeGraph(std::move(entities), std::move(relations), triples);
}

KGStats stats(const KnowledgeGraph& kg) {
    KGStats s;
    s.entity_count = kg.entity_count();
    s.triple_count = kg.stored_triple_count();
    std::set<std::pair<EntityKind, std::string>> kinds;
    for (const auto& e : kg.entities()) kinds.emplace(e.kind, e.metadata_type);
    s.entity_type_count = kinds.size();
    std::set<RelationId> used;
    for (const auto& e : kg.entities())
        for (const auto& edge : kg.neighbors(e.id)) used.insert(edge.relation);
    s.relation_type_count = used.size();
    if (s.entity_count > 0)
        s.sparsity = static_cast<double>(s.triple_count) /
                     (static_cast<double>(s.entity_count) * static_cast<double>(s.entity_count));
    return s;
}

void export_triples_tsv(const KnowledgeGraph& kg, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& t : kg.all_triples())
        out << kg.entity(t.head).label << '\t' << kg.relation(t.relation).name << '\t' << kg.entity(t.tail).label
            << '\n';
}

void save_graph(const KnowledgeGraph& kg, const std::filesystem::path& path) {
    json doc;
    auto& ents = doc["entities"] = json::array();
    for (const auto& e : kg.entities()) {
        json j = {{"kind", std::string(to_string(e.kind))}, {"label", e.label}};
        if (e.kind == EntityKind::MetadataValue) j["type"] = e.metadata_type;
        ents.push_back(std::move(j));
    }
    auto& rels = doc["relations"] = json::array();
    for (const auto& r : kg.relations()) {
        rels.push_back({{"name", r.name},
                        {"inverse", *r.inverse_of},
                        {"head", std::string(to_string(r.head_kind))},
                        {"tail", std::string(to_string(r.tail_kind))},
                        {"type", r.metadata_type},
                        {"forward", r.forward}});
    }
    auto& tr = doc["triples"] = json::array();
    for (const auto& t : kg.forward_triples()) tr.push_back({t.head, t.relation, t.tail});
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << doc.dump() << '\n';
}

KnowledgeGraph load_graph(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open graph file " + path.string());
    try {
        auto doc = json::parse(in);
        std::vector<Entity> entities;
        for (const auto& j : doc.at("entities")) {
            auto id = static_cast<EntityId>(entities.size());
            auto kind = kind_from_string(j.at("kind").get<std::string>());
            entities.push_back({id, kind, j.value("type", std::string{}), j.at("label").get<std::string>()});
        }
        std::vector<RelationType> relations;
        for (const auto& j : doc.at("relations")) {
            auto id = static_cast<RelationId>(relations.size());
            relations.push_back({id, j.at("name").get<std::string>(), j.at("inverse").get<RelationId>(),
                                 kind_from_string(j.at("head").get<std::string>()),
                                 kind_from_string(j.at("tail").get<std::string>()), j.at("type").get<std::string>(),
                                 j.at("forward").get<bool>()});
        }
        std::vector<Triple> triples;
        for (const auto& j : doc.at("triples"))
            triples.push_back({j.at(0).get<EntityId>(), j.at(1).get<RelationId>(), j.at(2).get<EntityId>()});
        return KnowledgeGraph(std::move(entities), std::move(relations), triples);
    } catch (const json::exception& e) {
        throw Error(path.string() + ": malformed graph file: " + e.what());
    }
}

}  // namespace likr
