#include "likr/reasoner.hpp"

#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

namespace likr {

void BeamConfig::validate(std::size_t horizon) const {
    if (widths.size() != horizon)
        throw Error("beam needs one width per hop: got " + std::to_string(widths.size()) + " for " +
                    std::to_string(horizon) + " hops");
    if (std::any_of(widths.begin(), widths.end(), [](std::size_t w) { return w == 0; }))
        throw Error("beam widths must be positive");
}

Recommendations rank_items(EntityId user, std::span<const ReasoningPath> paths, const KnowledgeGraph& kg,
                           const std::set<EntityId>& user_train_items, std::size_t n, ScoreAggregation aggregation) {
    struct Acc {
        double best = -std::numeric_limits<double>::infinity();
        double prob_sum = 0.0;
        const ReasoningPath* path = nullptr;
    };
    std::map<EntityId, Acc> items;
    for (const auto& p : paths) {
        const auto item = p.terminal();
        if (kg.entity(item).kind != EntityKind::Item || user_train_items.count(item)) continue;
        auto& acc = items[item];
        acc.prob_sum += std::exp(p.log_prob);
        if (!acc.path || p.log_prob > acc.best) {
            acc.best = p.log_prob;
            acc.path = &p;
        }
    }
    Recommendations rec;
    rec.user = user;
    for (const auto& [item, acc] : items) {
        const double score = aggregation == ScoreAggregation::Max ? acc.best : std::log(acc.prob_sum);
        rec.ranked.push_back({item, score, *acc.path});
    }
    std::stable_sort(rec.ranked.begin(), rec.ranked.end(), [](const RankedItem& a, const RankedItem& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item < b.item;
    });
    if (rec.ranked.size() > n) rec.ranked.resize(n);
    return rec;
}

void save_recommendations(std::span<const Recommendations> recs, const KnowledgeGraph& kg,
                          const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& rec : recs) {
        nlohmann::json items = nlohmann::json::array();
        for (const auto& r : rec.ranked) {
            nlohmann::json hops = nlohmann::json::array();
            for (std::size_t i = 0; i < r.path.relations.size(); ++i) {
                const auto rel = r.path.relations[i];
                hops.push_back({rel == kSelfLoop ? std::string("self_loop") : kg.relation(rel).name,
                                kg.entity(r.path.entities[i + 1]).label});
            }
            items.push_back({{"item", kg.entity(r.item).label}, {"score", r.score}, {"path", hops}});
        }
        nlohmann::json line = {{"user", kg.entity(rec.user).label}, {"items", items}};
        out << line.dump() << '\n';
    }
}

}  // namespace likr
