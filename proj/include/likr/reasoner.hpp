#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include "likr/mdp_env.hpp"

namespace likr {

enum class ScoreAggregation { Max, SumProb };

struct BeamConfig {
    std::vector<std::size_t> widths{4, 2, 1};  // top-z actions kept per hop
    std::size_t top_n = 40;
    ScoreAggregation aggregation = ScoreAggregation::Max;

    void validate(std::size_t horizon) const;
};

struct ReasoningPath {
    std::vector<EntityId> entities;    // e_0 (the user) ... e_T
    std::vector<RelationId> relations;  // r_1 ... r_T, kSelfLoop for stops
    double log_prob = 0.0;

    EntityId terminal() const { return entities.back(); }
};

struct RankedItem {
    EntityId item = 0;
    double score = 0.0;
    ReasoningPath path;  // best supporting path
};

struct Recommendations {
    EntityId user = 0;
    std::vector<RankedItem> ranked;
};

// Expands every beam entry by its top widths[t] actions (probability
// descending, ties to the lower target id) for each hop t. Returns every
// generated path of full length; dead ends are padded with stops.
template <ActionPolicy Policy>
std::vector<ReasoningPath> beam_search(const KnowledgeGraph& kg, const Policy& policy, const EmbeddingTable& emb,
                                       EntityId user, const MdpConfig& mdp, const BeamConfig& beam) {
    beam.validate(mdp.max_path_len);
    if (kg.entity(user).kind != EntityKind::User) throw Error("beam search must start from a user entity");

    struct Entry {
        State state;
        ReasoningPath path;
    };
    std::vector<Entry> level;
    level.push_back({State::initial(user), {{user}, {}, 0.0}});
    Rng unused(0);
    for (std::size_t t = 0; t < mdp.max_path_len; ++t) {
        std::vector<Entry> next;
        for (const auto& entry : level) {
            const auto space = valid_actions(kg, entry.state, mdp, emb, unused, false);
            const auto probs = policy.distribution(entry.state, space);
            std::vector<std::size_t> idx(space.candidates.size());
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            auto before = [&](std::size_t a, std::size_t b) {
                if (probs[a] != probs[b]) return probs[a] > probs[b];
                const auto& ca = space.candidates[a];
                const auto& cb = space.candidates[b];
                if (ca.target != cb.target) return ca.target < cb.target;
                return ca.relation < cb.relation;
            };
            const auto z = std::min(beam.widths[t], idx.size());
            std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(z), idx.end(), before);
            for (std::size_t k = 0; k < z; ++k) {
                const auto& action = space.candidates[idx[k]];
                Entry child{step(kg, entry.state, action, mdp.max_path_len), entry.path};
                child.path.entities.push_back(action.target);
                child.path.relations.push_back(action.relation);
                child.path.log_prob += std::log(probs[idx[k]]);
                next.push_back(std::move(child));
            }
        }
        level = std::move(next);
    }
    std::vector<ReasoningPath> out;
    out.reserve(level.size());
    for (auto& e : level) out.push_back(std::move(e.path));
    return out;
}

// Keeps paths ending at an item outside the user's training history, scores
// each item by its best path (or log of summed path probabilities), sorts by
// score descending with ties to the lower item id, and truncates to n.
Recommendations rank_items(EntityId user, std::span<const ReasoningPath> paths, const KnowledgeGraph& kg,
                           const std::set<EntityId>& user_train_items, std::size_t n,
                           ScoreAggregation aggregation = ScoreAggregation::Max);

// JSON-lines: {"user", "items": [{"item", "score", "path": [[relation, entity], ...]}]}.
void save_recommendations(std::span<const Recommendations> recs, const KnowledgeGraph& kg,
                          const std::filesystem::path& path);

}  // namespace likr
