#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <gtest/gtest.h>
#include <json.hpp>

#include "fixtures.hpp"
#include "likr/kg_embed.hpp"

using namespace likr;
using likr::testing::TempDir;

namespace {

EmbeddingTable table2(std::vector<std::vector<double>> ents, std::vector<double> rel) {
    EmbeddingTable t(2, ents.size(), 1);
    for (EntityId e = 0; e < ents.size(); ++e) std::copy(ents[e].begin(), ents[e].end(), t.entity(e).begin());
    std::copy(rel.begin(), rel.end(), t.relation(0).begin());
    return t;
}

// Finite-difference oracle for the hinge term, independent of the library.
double hinge(const std::vector<std::vector<double>>& v, double margin) {
    double pos = 0.0, neg = 0.0;
    for (std::size_t k = 0; k < v[0].size(); ++k) {
        pos += std::pow(v[0][k] + v[1][k] - v[2][k], 2);
        neg += std::pow(v[3][k] + v[1][k] - v[4][k], 2);
    }
    return std::max(0.0, margin + std::sqrt(pos) - std::sqrt(neg));
}

TransEConfig tiny_config() {
    TransEConfig c;
    c.dim = 16;
    c.epochs = 200;
    c.batch_size = 16;
    c.learning_rate = 0.01;
    c.seed = 7;
    return c;
}

}  // namespace

TEST(ScoreTriple, ExactTranslationScoresZero) {
    auto t = table2({{0.2, 0.3}, {0.5, -0.1}}, {0.3, -0.4});
    EXPECT_NEAR(score_triple(t, 0, 0, 1), 0.0, 1e-15);
}

TEST(ScoreTriple, HandExample) {
    auto t = table2({{1, 0}, {0, 1}}, {0, 0});
    EXPECT_DOUBLE_EQ(score_triple(t, 0, 0, 1), -std::sqrt(2.0));
}

TEST(ScoreTriple, TranslationInvariant) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 50; ++i) {
        auto t = table2({{u(rng), u(rng)}, {u(rng), u(rng)}}, {u(rng), u(rng)});
        const double before = score_triple(t, 0, 0, 1);
        const double sx = u(rng), sy = u(rng);
        for (EntityId e : {0u, 1u}) {
            t.entity(e)[0] += sx;
            t.entity(e)[1] += sy;
        }
        EXPECT_NEAR(score_triple(t, 0, 0, 1), before, 1e-12);
    }
}

TEST(ScoreTriple, OutOfRangeIds) {
    auto t = table2({{1, 0}, {0, 1}}, {0, 0});
    EXPECT_THROW(score_triple(t, 0, 0, 2), Error);
    EXPECT_THROW(score_triple(t, 0, 1, 1), Error);
    EXPECT_THROW(inner_product(t, 5, 0), Error);
}

TEST(InnerProduct, HandExamplesAndSymmetry) {
    auto t = table2({{1, 0}, {0, 1}, {0.5, 0.5}}, {0, 0});
    EXPECT_EQ(inner_product(t, 0, 1), 0.0);
    EXPECT_DOUBLE_EQ(inner_product(t, 2, 2), 0.5);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 50; ++i) {
        auto r = table2({{u(rng), u(rng)}, {u(rng), u(rng)}}, {0, 0});
        EXPECT_EQ(inner_product(r, 0, 1), inner_product(r, 1, 0));
    }
}

TEST(MarginGradient, MatchesCentralDifferences) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-1, 1);
    const double margin = 1.0, h = 1e-6;
    int points = 0;
    while (points < 20) {
        std::vector<std::vector<double>> v(5, std::vector<double>(6));
        for (auto& vec : v)
            for (auto& x : vec) x = u(rng);
        // Stay clear of the hinge kink so the derivative exists.
        if (hinge(v, margin) < 0.05) continue;
        ++points;
        auto g = margin_loss_gradient(v[0], v[1], v[2], v[3], v[4], margin);
        EXPECT_NEAR(g.loss, hinge(v, margin), 1e-12);
        const std::vector<double>* analytic[] = {&g.head, &g.relation, &g.tail, &g.neg_head, &g.neg_tail};
        for (std::size_t which = 0; which < 5; ++which) {
            for (std::size_t k = 0; k < 6; ++k) {
                auto plus = v, minus = v;
                plus[which][k] += h;
                minus[which][k] -= h;
                const double numeric = (hinge(plus, margin) - hinge(minus, margin)) / (2 * h);
                const double a = (*analytic[which])[k];
                const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-8);
                EXPECT_LE(rel, 1e-4) << "vector " << which << " coord " << k;
            }
        }
    }
}

TEST(MarginGradient, InactiveHingeIsFlat) {
    std::vector<double> z(3, 0.0), far{5, 5, 5};
    auto g = margin_loss_gradient(z, z, z, far, z, 1.0);
    EXPECT_EQ(g.loss, 0.0);
    for (double x : g.head) EXPECT_EQ(x, 0.0);
}

TEST(TrainTransE, ZeroInitFirstEpochLossIsMarginTimesSamples) {
    auto kg = likr::testing::tiny_kg();
    auto c = tiny_config();
    c.init = EmbeddingInit::Zero;
    c.epochs = 1;
    c.margin = 0.75;
    c.negatives_per_positive = 2;
    auto res = train_transe(kg, c);
    EXPECT_DOUBLE_EQ(res.trace.epoch_loss[0], 0.75 * 2.0 * static_cast<double>(kg.stored_triple_count()));
    EXPECT_DOUBLE_EQ(res.trace.epoch_mean_loss[0], 0.75);
}

TEST(TrainTransE, SeedDeterminism) {
    auto kg = likr::testing::tiny_kg();
    auto c = tiny_config();
    c.epochs = 20;
    auto a = train_transe(kg, c);
    auto b = train_transe(kg, c);
    EXPECT_TRUE(a.table == b.table);
    EXPECT_EQ(a.trace.epoch_loss, b.trace.epoch_loss);
    c.seed = 8;
    EXPECT_FALSE(train_transe(kg, c).table == a.table);
}

TEST(TrainTransE, NormsClippedEveryEpochAndLossNonNegative) {
    auto kg = likr::testing::tiny_kg();
    auto c = tiny_config();
    c.epochs = 50;
    c.learning_rate = 0.1;
    std::size_t logged = 0;
    auto res = train_transe(kg, c, [&](std::size_t, double mean) {
        ++logged;
        EXPECT_GE(mean, 0.0);
    });
    EXPECT_EQ(logged, 50u);
    ASSERT_EQ(res.trace.max_entity_norm.size(), 50u);
    for (double n : res.trace.max_entity_norm) EXPECT_LE(n, 1.0 + 1e-9);
    for (EntityId e = 0; e < kg.entity_count(); ++e) {
        double s = 0.0;
        for (double x : res.table.entity(e)) s += x * x;
        EXPECT_LE(std::sqrt(s), 1.0 + 1e-9);
        for (double x : res.table.entity(e)) EXPECT_TRUE(std::isfinite(x));
    }
}

TEST(TrainTransE, LossTrendsDownOnTinyGraph) {
    auto kg = likr::testing::tiny_kg();
    auto res = train_transe(kg, tiny_config());
    const auto& l = res.trace.epoch_mean_loss;
    ASSERT_EQ(l.size(), 200u);
    auto window = [&](std::size_t end) {
        double s = 0.0;
        for (std::size_t i = end - 20; i < end; ++i) s += l[i];
        return s / 20.0;
    };
    EXPECT_LT(window(200), window(20));
    // Over the last 10% of epochs the moving average may not rise by more than 5%.
    for (std::size_t end = 181; end <= 200; ++end) EXPECT_LE(window(end), window(end - 1) * 1.05 + 1e-12);
}

TEST(TrainTransE, DivergenceNamesEpoch) {
    auto kg = likr::testing::tiny_kg();
    auto c = tiny_config();
    c.learning_rate = 1e306;
    c.epochs = 5;
    try {
        train_transe(kg, c);
        FAIL() << "expected divergence";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
    }
}

TEST(TrainTransE, ConfigValidation) {
    auto kg = likr::testing::tiny_kg();
    for (auto mutate : std::vector<void (*)(TransEConfig&)>{
             [](TransEConfig& c) { c.dim = 0; }, [](TransEConfig& c) { c.margin = 0; },
             [](TransEConfig& c) { c.learning_rate = -1; }, [](TransEConfig& c) { c.batch_size = 0; },
             [](TransEConfig& c) { c.negatives_per_positive = 0; }, [](TransEConfig& c) { c.epochs = 0; }}) {
        auto c = tiny_config();
        mutate(c);
        EXPECT_THROW(train_transe(kg, c), Error);
    }
}

TEST(EmbeddingFile, RoundTripAndHeader) {
    TempDir dir;
    auto kg = likr::testing::tiny_kg();
    auto emb = likr::testing::random_embeddings(kg, 5, 1);
    save_embeddings(emb, kg, dir / "e.bin", dir / "e.json");
    auto back = load_embeddings(dir / "e.bin");
    ASSERT_EQ(back.dim(), 5u);
    ASSERT_EQ(back.entity_count(), kg.entity_count());
    ASSERT_EQ(back.relation_count(), kg.relation_count());
    for (std::size_t i = 0; i < emb.entity_data().size(); ++i)
        EXPECT_EQ(back.entity_data()[i], static_cast<double>(static_cast<float>(emb.entity_data()[i])));

    auto bytes = likr::testing::read_text(dir / "e.bin");
    EXPECT_EQ(bytes.substr(0, 8), "LIKREMB1");
    std::uint32_t header[4];
    std::memcpy(header, bytes.data() + 8, sizeof header);
    EXPECT_EQ(header[0], 1u);
    EXPECT_EQ(header[1], 5u);
    EXPECT_EQ(header[2], kg.entity_count());
    EXPECT_EQ(header[3], kg.relation_count());
    EXPECT_EQ(bytes.size(), 8 + 16 + 4 * 5 * (kg.entity_count() + kg.relation_count()));

    auto side = nlohmann::json::parse(likr::testing::read_text(dir / "e.json"));
    EXPECT_EQ(side["entities"]["user:u0"], *kg.find(EntityKind::User, "u0"));
    EXPECT_EQ(side["relations"]["interacted"], kInteracted);
}

TEST(EmbeddingFile, CorruptFilesRejected) {
    TempDir dir;
    likr::testing::write_text(dir / "bad.bin", "NOTMAGIC");
    EXPECT_THROW(load_embeddings(dir / "bad.bin"), Error);
    auto kg = likr::testing::tiny_kg();
    save_embeddings(likr::testing::random_embeddings(kg, 3, 1), kg, dir / "e.bin", dir / "e.json");
    auto bytes = likr::testing::read_text(dir / "e.bin");
    likr::testing::write_text(dir / "short.bin", bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(load_embeddings(dir / "short.bin"), Error);
    EXPECT_THROW(load_embeddings(dir / "missing.bin"), Error);
}
