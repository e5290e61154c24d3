#pragma once

#include <concepts>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "likr/intuition.hpp"
#include "likr/kg_embed.hpp"
#include "likr/kg_store.hpp"

namespace likr {

using Rng = std::mt19937_64;

struct Action {
    RelationId relation = kSelfLoop;
    EntityId target = 0;

    bool is_stop() const noexcept { return relation == kSelfLoop; }
    friend auto operator<=>(const Action&, const Action&) = default;
};

inline Action stop_action(EntityId current) { return {kSelfLoop, current}; }

// s_t = (user, current entity, traversed (relation, entity) history).
struct State {
    EntityId user = 0;
    EntityId current = 0;
    std::vector<Action> history;
    std::size_t step = 0;

    static State initial(EntityId user) { return {user, user, {}, 0}; }
    bool visited(EntityId e) const;
    // e_0 = user, then the entity reached by each step.
    std::vector<EntityId> entity_path() const;
};

struct ActionSpace {
    std::vector<Action> candidates;
    bool includes_stop = false;  // true only at dead ends, where stop is the sole candidate
};

struct MdpConfig {
    std::size_t max_path_len = 3;
    std::size_t max_actions = 400;
    double action_dropout = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class RewardTiming { PerStep, TerminalOnly };

struct RewardConfig {
    double alpha = 0.5;  // weight of the embedding-path term
    double beta = 1.0;   // weight of the intuition term
    RewardTiming timing = RewardTiming::PerStep;
    // PerStep only: pay <e_{t-1}, e_t> at step t instead of the whole prefix sum.
    bool incremental_kg = true;

    void validate() const;
};

struct Transition {
    State state;
    ActionSpace space;
    std::size_t chosen = 0;
};

struct Episode {
    std::vector<Transition> path;
    std::vector<double> rewards;
    EntityId terminal = 0;
};

// Outgoing edges of the current entity minus visited targets. Over-full spaces
// keep the max_actions targets with the highest <e_target, e_user>; training
// mode then drops each survivor with probability action_dropout, keeping at
// least one. Evaluation mode never touches rng.
ActionSpace valid_actions(const KnowledgeGraph& kg, const State& state, const MdpConfig& config,
                          const EmbeddingTable& emb, Rng& rng, bool training);

State step(const KnowledgeGraph& kg, const State& state, const Action& action, std::size_t horizon);

double reward_llm(const State& state_after, const IntuitionSet& intuition);
// Sum of <e_i, e_{i+1}> over the whole path so far.
double reward_kg(const State& state_after, const EmbeddingTable& emb);
// <e_{t-1}, e_t> for the last step only.
double reward_kg_increment(const State& state_after, const EmbeddingTable& emb);
double total_reward(const State& state_after, const RewardConfig& config, const IntuitionSet& intuition,
                    const EmbeddingTable& emb, std::size_t horizon);

template <class P>
concept ActionPolicy = requires(const P& p, const State& s, const ActionSpace& a) {
    { p.distribution(s, a) } -> std::convertible_to<std::vector<double>>;
};

// Inverse-CDF draw from a probability vector.
std::size_t sample_index(std::span<const double> probs, Rng& rng);

template <ActionPolicy Policy>
Episode rollout(const KnowledgeGraph& kg, const Policy& policy, const EmbeddingTable& emb, EntityId user,
                const MdpConfig& mdp, const RewardConfig& reward, const IntuitionSet& intuition, Rng& rng,
                bool training = true) {
    if (kg.entity(user).kind != EntityKind::User) throw Error("rollout must start from a user entity");
    Episode ep;
    State s = State::initial(user);
    for (std::size_t t = 0; t < mdp.max_path_len; ++t) {
        auto space = valid_actions(kg, s, mdp, emb, rng, training);
        auto probs = policy.distribution(s, space);
        auto idx = sample_index(probs, rng);
        auto next = step(kg, s, space.candidates[idx], mdp.max_path_len);
        ep.rewards.push_back(total_reward(next, reward, intuition, emb, mdp.max_path_len));
        ep.path.push_back({std::move(s), std::move(space), idx});
        s = std::move(next);
    }
    ep.terminal = s.current;
    return ep;
}

}  // namespace likr
