#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>
#include <json.hpp>

#include "fixtures.hpp"
#include "likr/policy.hpp"
#include "likr/reasoner.hpp"

using namespace likr;
using likr::testing::TempDir;

namespace {

using PathKey = std::pair<std::vector<EntityId>, std::vector<RelationId>>;

// Depth-first enumeration of every length-T walk with its probability.
void enumerate(const KnowledgeGraph& kg, const Policy& policy, const EmbeddingTable& emb, const State& s,
               std::size_t horizon, ReasoningPath acc, std::map<PathKey, double>& out) {
    if (s.step == horizon) {
        out[{acc.entities, acc.relations}] = acc.log_prob;
        return;
    }
    std::vector<Action> actions;
    for (const auto& e : kg.neighbors(s.current))
        if (!s.visited(e.target)) actions.push_back({e.relation, e.target});
    if (actions.empty()) actions.push_back(stop_action(s.current));
    ActionSpace space{actions, actions[0].is_stop()};
    const auto probs = policy.distribution(s, space);
    for (std::size_t i = 0; i < actions.size(); ++i) {
        auto next = acc;
        next.entities.push_back(actions[i].target);
        next.relations.push_back(actions[i].relation);
        next.log_prob += std::log(probs[i]);
        enumerate(kg, policy, emb, step(kg, s, actions[i], horizon), horizon, next, out);
    }
}

std::map<PathKey, double> exhaustive(const KnowledgeGraph& kg, const Policy& policy, const EmbeddingTable& emb,
                                     EntityId user, std::size_t horizon) {
    std::map<PathKey, double> out;
    enumerate(kg, policy, emb, State::initial(user), horizon, {{user}, {}, 0.0}, out);
    return out;
}

std::set<PathKey> keys(const std::vector<ReasoningPath>& paths) {
    std::set<PathKey> s;
    for (const auto& p : paths) s.insert({p.entities, p.relations});
    return s;
}

MdpConfig eval_mdp() {
    MdpConfig m;
    m.action_dropout = 0.0;
    return m;
}

class Reasoner : public ::testing::Test {
protected:
    KnowledgeGraph kg = likr::testing::tiny_kg();
    EmbeddingTable emb = likr::testing::random_embeddings(kg, 4, 6);
    PolicyParameters params = PolicyParameters::initialize(4, 8, 6, 3);
};

ReasoningPath make_path(std::vector<EntityId> ents, double log_prob) {
    ReasoningPath p;
    p.entities = std::move(ents);
    p.relations.assign(p.entities.size() - 1, kInteracted);
    p.log_prob = log_prob;
    return p;
}

}  // namespace

TEST_F(Reasoner, WideBeamEqualsExhaustiveSet) {
    Policy policy(params, emb);
    BeamConfig beam;
    beam.widths = {50, 50, 50};
    for (auto user : kg.entities_of(EntityKind::User)) {
        auto oracle = exhaustive(kg, policy, emb, user, 3);
        auto paths = beam_search(kg, policy, emb, user, eval_mdp(), beam);
        EXPECT_EQ(paths.size(), oracle.size());
        std::set<PathKey> expected;
        for (const auto& [k, lp] : oracle) expected.insert(k);
        EXPECT_EQ(keys(paths), expected);
        for (const auto& p : paths) EXPECT_NEAR(p.log_prob, oracle.at({p.entities, p.relations}), 1e-12);
    }
}

TEST_F(Reasoner, NarrowBeamIsSubsetOfExhaustive) {
    Policy policy(params, emb);
    BeamConfig beam;  // 4, 2, 1
    for (auto user : kg.entities_of(EntityKind::User)) {
        auto oracle = exhaustive(kg, policy, emb, user, 3);
        auto paths = beam_search(kg, policy, emb, user, eval_mdp(), beam);
        EXPECT_LE(paths.size(), 8u);
        for (const auto& p : paths) EXPECT_TRUE(oracle.count({p.entities, p.relations}));
        EXPECT_EQ(keys(paths).size(), paths.size());
    }
}

TEST_F(Reasoner, BeamKeepsMostProbableFirstHops) {
    Policy policy(params, emb);
    BeamConfig beam;
    beam.widths = {2, 1, 1};
    const EntityId user = 0;
    auto paths = beam_search(kg, policy, emb, user, eval_mdp(), beam);
    ASSERT_EQ(paths.size(), 2u);
    Rng unused(0);
    auto space = valid_actions(kg, State::initial(user), eval_mdp(), emb, unused, false);
    auto probs = policy.distribution(State::initial(user), space);
    std::vector<double> sorted = probs;
    std::sort(sorted.rbegin(), sorted.rend());
    std::set<EntityId> chosen{paths[0].entities[1], paths[1].entities[1]};
    for (std::size_t i = 0; i < space.candidates.size(); ++i)
        if (chosen.count(space.candidates[i].target)) {
            EXPECT_GE(probs[i], sorted[1]);
        }
}

TEST_F(Reasoner, WiderBeamsReturnSupersets) {
    Policy policy(params, emb);
    const std::vector<std::vector<std::size_t>> ladders{{1, 1, 1}, {2, 1, 1}, {4, 2, 1}, {4, 3, 2}, {6, 4, 3}};
    for (auto user : kg.entities_of(EntityKind::User)) {
        std::set<PathKey> previous;
        for (const auto& w : ladders) {
            BeamConfig beam;
            beam.widths = w;
            auto current = keys(beam_search(kg, policy, emb, user, eval_mdp(), beam));
            EXPECT_TRUE(std::includes(current.begin(), current.end(), previous.begin(), previous.end()));
            previous = std::move(current);
        }
    }
}

TEST(BeamSearch, IsolatedUserYieldsSingleStopPath) {
    DatasetBundle b;
    b.metadata_types = {"genre"};
    b.item_metadata["lonely"]["genre"] = {"g"};
    b.interactions = {{"u", "i", 1}, {"ghost", "i", 2}};
    auto kg = build_kg(b, std::vector<Interaction>{{"u", "i", 1}});
    auto emb = likr::testing::random_embeddings(kg, 2, 1);
    auto params = PolicyParameters::initialize(2, 4, 3, 1);
    Policy policy(params, emb);
    const auto ghost = *kg.find(EntityKind::User, "ghost");
    auto paths = beam_search(kg, policy, emb, ghost, eval_mdp(), BeamConfig{});
    ASSERT_EQ(paths.size(), 1u);
    EXPECT_EQ(paths[0].entities, (std::vector<EntityId>{ghost, ghost, ghost, ghost}));
    EXPECT_EQ(paths[0].relations, (std::vector<RelationId>{kSelfLoop, kSelfLoop, kSelfLoop}));
    EXPECT_EQ(paths[0].log_prob, 0.0);
}

TEST(BeamSearch, RejectsBadWidthsAndNonUserStart) {
    auto kg = likr::testing::tiny_kg();
    auto emb = likr::testing::random_embeddings(kg, 2, 1);
    auto params = PolicyParameters::initialize(2, 4, 3, 1);
    Policy policy(params, emb);
    BeamConfig beam;
    beam.widths = {4, 2};
    EXPECT_THROW(beam_search(kg, policy, emb, 0, eval_mdp(), beam), Error);
    beam.widths = {4, 0, 1};
    EXPECT_THROW(beam_search(kg, policy, emb, 0, eval_mdp(), beam), Error);
    const auto item = *kg.find(EntityKind::Item, "i0");
    EXPECT_THROW(beam_search(kg, policy, emb, item, eval_mdp(), BeamConfig{}), Error);
}

TEST(RankItems, MaxAggregationAndFiltering) {
    auto kg = likr::testing::tiny_kg();
    const auto u = *kg.find(EntityKind::User, "u0");
    const auto i0 = *kg.find(EntityKind::Item, "i0"), i1 = *kg.find(EntityKind::Item, "i1"),
               i7 = *kg.find(EntityKind::Item, "i7"), drama = *kg.find(EntityKind::MetadataValue, "Drama", "genre");
    std::vector<ReasoningPath> paths{make_path({u, 1, 2, i7}, std::log(0.2)), make_path({u, 1, 2, i1}, std::log(0.3)),
                                     make_path({u, 3, 4, i1}, std::log(0.1)), make_path({u, 1, 2, i0}, std::log(0.9)),
                                     make_path({u, 1, 2, drama}, std::log(0.95))};
    auto rec = rank_items(u, paths, kg, {i0}, 10);
    EXPECT_EQ(rec.user, u);
    ASSERT_EQ(rec.ranked.size(), 2u);
    EXPECT_EQ(rec.ranked[0].item, i1);
    EXPECT_DOUBLE_EQ(rec.ranked[0].score, std::log(0.3));
    EXPECT_EQ(rec.ranked[0].path.entities[1], 1u);
    EXPECT_EQ(rec.ranked[1].item, i7);
    EXPECT_EQ(rank_items(u, paths, kg, {i0}, 1).ranked.size(), 1u);
}

TEST(RankItems, SumProbAggregation) {
    auto kg = likr::testing::tiny_kg();
    const auto u = *kg.find(EntityKind::User, "u0");
    const auto i1 = *kg.find(EntityKind::Item, "i1"), i7 = *kg.find(EntityKind::Item, "i7");
    std::vector<ReasoningPath> paths{make_path({u, 1, 2, i7}, std::log(0.25)), make_path({u, 1, 2, i1}, std::log(0.2)),
                                     make_path({u, 3, 4, i1}, std::log(0.1))};
    auto rec = rank_items(u, paths, kg, {}, 10, ScoreAggregation::SumProb);
    ASSERT_EQ(rec.ranked.size(), 2u);
    EXPECT_EQ(rec.ranked[0].item, i1);
    EXPECT_NEAR(rec.ranked[0].score, std::log(0.3), 1e-12);
    EXPECT_DOUBLE_EQ(rec.ranked[0].path.log_prob, std::log(0.2));
}

TEST(RankItems, TiesGoToLowerItemId) {
    auto kg = likr::testing::tiny_kg();
    const auto u = *kg.find(EntityKind::User, "u0");
    const auto i8 = *kg.find(EntityKind::Item, "i8"), i9 = *kg.find(EntityKind::Item, "i9");
    std::vector<ReasoningPath> paths{make_path({u, 1, 2, std::max(i8, i9)}, -1.0),
                                     make_path({u, 1, 2, std::min(i8, i9)}, -1.0)};
    auto rec = rank_items(u, paths, kg, {}, 10);
    ASSERT_EQ(rec.ranked.size(), 2u);
    EXPECT_LT(rec.ranked[0].item, rec.ranked[1].item);
}

TEST(RankItems, UnderflowedPathProbabilitiesStillRank) {
    auto kg = likr::testing::tiny_kg();
    const auto u = *kg.find(EntityKind::User, "u0");
    const auto i7 = *kg.find(EntityKind::Item, "i7");
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<ReasoningPath> paths{make_path({u, 1, 2, i7}, ninf)};
    auto rec = rank_items(u, paths, kg, {}, 10);
    ASSERT_EQ(rec.ranked.size(), 1u);
    EXPECT_EQ(rec.ranked[0].score, ninf);
    EXPECT_EQ(rec.ranked[0].path.terminal(), i7);
    auto sum = rank_items(u, paths, kg, {}, 10, ScoreAggregation::SumProb);
    ASSERT_EQ(sum.ranked.size(), 1u);
}

TEST(SaveRecommendations, JsonLinesFormat) {
    TempDir dir;
    auto kg = likr::testing::tiny_kg();
    const auto u = *kg.find(EntityKind::User, "u0");
    const auto i0 = *kg.find(EntityKind::Item, "i0"), i7 = *kg.find(EntityKind::Item, "i7");
    const auto genre = *kg.find_relation("has_genre"), genre_of = *kg.find_relation("genre_of");
    const auto comedy = *kg.find(EntityKind::MetadataValue, "Comedy", "genre");
    ReasoningPath p{{u, i0, comedy, i7}, {kInteracted, genre, genre_of}, -1.5};
    Recommendations rec{u, {{i7, -1.5, p}}};
    std::vector<Recommendations> recs{rec, Recommendations{*kg.find(EntityKind::User, "u1"), {}}};
    save_recommendations(recs, kg, dir / "r.jsonl");
    auto text = likr::testing::read_text(dir / "r.jsonl");
    auto nl = text.find('\n');
    auto first = nlohmann::json::parse(text.substr(0, nl));
    EXPECT_EQ(first["user"], "u0");
    EXPECT_EQ(first["items"][0]["item"], "i7");
    EXPECT_EQ(first["items"][0]["score"], -1.5);
    EXPECT_EQ(first["items"][0]["path"], nlohmann::json::parse(
                                              R"([["interacted","i0"],["has_genre","Comedy"],["genre_of","i7"]])"));
    auto second = nlohmann::json::parse(text.substr(nl + 1));
    EXPECT_EQ(second["user"], "u1");
    EXPECT_TRUE(second["items"].empty());
}
