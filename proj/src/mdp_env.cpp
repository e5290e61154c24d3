#include "likr/mdp_env.hpp"

#include <algorithm>
#include <numeric>

namespace likr {

bool State::visited(EntityId e) const {
    if (e == user) return true;
    return std::any_of(history.begin(), history.end(), [e](const Action& a) { return a.target == e; });
}

std::vector<EntityId> State::entity_path() const {
    std::vector<EntityId> out;
    out.reserve(history.size() + 1);
    out.push_back(user);
    for (const auto& a : history) out.push_back(a.target);
    return out;
}

void MdpConfig::validate() const {
    if (max_path_len < 1) throw Error("max_path_len must be at least 1");
    if (max_actions < 1) throw Error("max_actions must be at least 1");
    if (!(action_dropout >= 0.0 && action_dropout < 1.0)) throw Error("action_dropout must lie in [0, 1)");
}

void RewardConfig::validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw Error("reward weights alpha and beta must be non-negative");
}

ActionSpace valid_actions(const KnowledgeGraph& kg, const State& state, const MdpConfig& config,
                          const EmbeddingTable& emb, Rng& rng, bool training) {
    ActionSpace space;
    for (const auto& edge : kg.neighbors(state.current))
        if (!state.visited(edge.target)) space.candidates.push_back({edge.relation, edge.target});

    if (space.candidates.empty()) {
        space.candidates.push_back(stop_action(state.current));
        space.includes_stop = true;
        return space;
    }

    if (space.candidates.size() > config.max_actions) {
        std::vector<std::pair<double, std::size_t>> ranked;
        ranked.reserve(space.candidates.size());
        for (std::size_t i = 0; i < space.candidates.size(); ++i)
            ranked.emplace_back(inner_product(emb, space.candidates[i].target, state.user), i);
        auto better = [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            const auto& ca = space.candidates[a.second];
            const auto& cb = space.candidates[b.second];
            return std::tie(ca.target, ca.relation) < std::tie(cb.target, cb.relation);
        };
        std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(config.max_actions),
                          ranked.end(), better);
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < config.max_actions; ++i) keep.push_back(ranked[i].second);
        std::sort(keep.begin(), keep.end());
        std::vector<Action> kept;
        kept.reserve(keep.size());
        for (auto i : keep) kept.push_back(space.candidates[i]);
        space.candidates = std::move(kept);
    }

    if (training && config.action_dropout > 0.0) {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::vector<Action> survivors;
        for (const auto& a : space.candidates)
            if (unif(rng) >= config.action_dropout) survivors.push_back(a);
        if (survivors.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, space.candidates.size() - 1);
            survivors.push_back(space.candidates[pick(rng)]);
        }
        space.candidates = std::move(survivors);
    }
    return space;
}

State step(const KnowledgeGraph& kg, const State& state, const Action& action, std::size_t horizon) {
    if (state.step >= horizon)
        throw Error("step beyond the horizon of " + std::to_string(horizon) + " hops");
    if (!action.is_stop()) {
        if (!kg.has_edge(state.current, action.relation, action.target))
            throw Error("invalid action: no edge from entity " + std::to_string(state.current) + " to " +
                        std::to_string(action.target));
        if (state.visited(action.target))
            throw Error("invalid action: entity " + std::to_string(action.target) + " already visited");
    } else if (action.target != state.current) {
        throw Error("invalid action: stop must stay on the current entity");
    }
    State next = state;
    next.current = action.target;
    next.history.push_back(action);
    next.step = state.step + 1;
    return next;
}

double reward_llm(const State& state_after, const IntuitionSet& intuition) {
    return intuition.matched.count(state_after.current) ? 1.0 : 0.0;
}

double reward_kg(const State& state_after, const EmbeddingTable& emb) {
    auto path = state_after.entity_path();
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) sum += inner_product(emb, path[i], path[i + 1]);
    return sum;
}

double reward_kg_increment(const State& state_after, const EmbeddingTable& emb) {
    if (state_after.history.empty()) return 0.0;
    auto n = state_after.history.size();
    EntityId prev = n >= 2 ? state_after.history[n - 2].target : state_after.user;
    return inner_product(emb, prev, state_after.current);
}

double total_reward(const State& state_after, const RewardConfig& config, const IntuitionSet& intuition,
                    const EmbeddingTable& emb, std::size_t horizon) {
    if (config.timing == RewardTiming::TerminalOnly) {
        if (state_after.step < horizon) return 0.0;
        return config.beta * reward_llm(state_after, intuition) + config.alpha * reward_kg(state_after, emb);
    }
    const double kg_term = config.incremental_kg ? reward_kg_increment(state_after, emb) : reward_kg(state_after, emb);
    return config.beta * reward_llm(state_after, intuition) + config.alpha * kg_term;
}

std::size_t sample_index(std::span<const double> probs, Rng& rng) {
    if (probs.empty()) throw Error("cannot sample from an empty distribution");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    // Rounding left u above the final cumulative sum.
    for (std::size_t i = probs.size(); i-- > 0;)
        if (probs[i] > 0.0) return i;
    return probs.size() - 1;
}

}  // namespace likr
