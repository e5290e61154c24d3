#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "likr/evalkit.hpp"

using namespace likr;
using likr::testing::TempDir;

namespace {

std::vector<Interaction> rows(std::initializer_list<std::pair<const char*, std::int64_t>> r, const char* user = "u") {
    std::vector<Interaction> out;
    for (const auto& [item, ts] : r) out.push_back({user, item, ts});
    return out;
}

// Brute-force reference: membership by linear scan, gains summed from scratch.
double ref_recall(const std::vector<int>& rec, const std::vector<int>& rel, std::size_t k) {
    double hits = 0;
    for (int r : rel)
        for (std::size_t i = 0; i < rec.size() && i < k; ++i)
            if (rec[i] == r) {
                hits += 1;
                break;
            }
    return hits / static_cast<double>(rel.size());
}

double ref_ndcg(const std::vector<int>& rec, const std::vector<int>& rel, std::size_t k) {
    double dcg = 0, idcg = 0;
    for (std::size_t i = 0; i < rec.size() && i < k; ++i)
        if (std::find(rel.begin(), rel.end(), rec[i]) != rel.end()) dcg += std::log(2.0) / std::log(i + 2.0);
    for (std::size_t i = 0; i < rel.size() && i < k; ++i) idcg += std::log(2.0) / std::log(i + 2.0);
    return dcg / idcg;
}

}  // namespace

TEST(TimeSplit, TenRowsSixTwoTwo) {
    std::vector<Interaction> in;
    for (int i = 9; i >= 0; --i) in.push_back({"u" + std::to_string(i % 3), "i" + std::to_string(i), i * 10});
    auto s = time_split(in, SplitSpec{});
    ASSERT_EQ(s.train.size(), 6u);
    ASSERT_EQ(s.valid.size(), 2u);
    ASSERT_EQ(s.test.size(), 2u);
    for (int i = 0; i < 6; ++i) EXPECT_EQ(s.train[i].timestamp, i * 10);
    EXPECT_EQ(s.valid[0].timestamp, 60);
    EXPECT_EQ(s.test[1].timestamp, 90);
}

TEST(TimeSplit, EqualTimestampsKeepInputOrder) {
    std::vector<Interaction> in;
    for (int i = 0; i < 10; ++i) in.push_back({"u", "i" + std::to_string(i), 5});
    auto s = time_split(in, SplitSpec{});
    std::vector<Interaction> joined = s.train;
    joined.insert(joined.end(), s.valid.begin(), s.valid.end());
    joined.insert(joined.end(), s.test.begin(), s.test.end());
    EXPECT_EQ(joined, in);
}

TEST(TimeSplit, SevenRowsFloorBoundaries) {
    std::vector<Interaction> in;
    for (int i = 0; i < 7; ++i) in.push_back({"u", "i" + std::to_string(i), i});
    auto s = time_split(in, SplitSpec{});
    EXPECT_EQ(s.train.size(), 4u);  // floor(4.2)
    EXPECT_EQ(s.valid.size(), 1u);  // floor(5.6) - 4
    EXPECT_EQ(s.test.size(), 2u);
}

TEST(TimeSplit, TooFewRowsAndBadRatios) {
    auto four = rows({{"a", 1}, {"b", 2}, {"c", 3}, {"d", 4}});
    EXPECT_THROW(time_split(four, SplitSpec{}), Error);
    auto five = rows({{"a", 1}, {"b", 2}, {"c", 3}, {"d", 4}, {"e", 5}});
    EXPECT_NO_THROW(time_split(five, SplitSpec{}));
    SplitSpec bad;
    bad.train_ratio = 0.7;
    EXPECT_THROW(time_split(five, bad), Error);
    bad = {};
    bad.cold_start_cap = 0;
    EXPECT_THROW(bad.validate(), Error);
}

TEST(TimeSplit, PartitionProperty) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        auto b = likr::testing::random_bundle(8, 30, 5 + rng() % 100, rng);
        auto s = time_split(b.interactions, SplitSpec{});
        EXPECT_EQ(s.train.size() + s.valid.size() + s.test.size(), b.interactions.size());
        auto key = [](const Interaction& r) { return std::tuple(r.user, r.item, r.timestamp); };
        std::multiset<std::tuple<std::string, std::string, std::int64_t>> in, out;
        for (const auto& r : b.interactions) in.insert(key(r));
        for (const auto* part : {&s.train, &s.valid, &s.test})
            for (const auto& r : *part) out.insert(key(r));
        EXPECT_EQ(in, out);
        if (!s.train.empty() && !s.valid.empty()) {
            EXPECT_LE(s.train.back().timestamp, s.valid.front().timestamp);
        }
        if (!s.valid.empty() && !s.test.empty()) {
            EXPECT_LE(s.valid.back().timestamp, s.test.front().timestamp);
        }
    }
}

TEST(Truncate, FifteenRowsKeepsTenMostRecent) {
    std::vector<Interaction> in;
    for (int i = 0; i < 15; ++i) in.push_back({"u", "i" + std::to_string(i), 100 + i});
    in.push_back({"v", "x", 1});
    auto out = truncate_cold_start(in, 10);
    ASSERT_EQ(out.size(), 11u);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(out[i].timestamp, 105 + i);
    EXPECT_EQ(out[10].user, "v");
}

TEST(Truncate, ShortHistoriesUntouchedAndChronological) {
    auto in = rows({{"a", 1}, {"b", 2}, {"c", 3}});
    EXPECT_EQ(truncate_cold_start(in, 10), in);
    EXPECT_THROW(truncate_cold_start(in, 0), Error);
}

TEST(Truncate, IdempotentAndPerUserCapped) {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        auto b = likr::testing::random_bundle(6, 40, 10 + rng() % 200, rng);
        auto s = time_split(b.interactions, SplitSpec{});
        const std::size_t cap = 1 + rng() % 12;
        auto once = truncate_cold_start(s.train, cap);
        EXPECT_EQ(truncate_cold_start(once, cap), once);
        std::map<std::string, std::vector<std::int64_t>> kept, all;
        for (const auto& r : once) kept[r.user].push_back(r.timestamp);
        for (const auto& r : s.train) all[r.user].push_back(r.timestamp);
        for (auto& [u, ts] : all) {
            EXPECT_EQ(kept[u].size(), std::min(cap, ts.size()));
            EXPECT_TRUE(std::is_sorted(kept[u].begin(), kept[u].end()));
            std::sort(ts.begin(), ts.end());
            if (ts.size() > cap) {
                EXPECT_GE(kept[u].front(), ts[ts.size() - cap]);
            }
        }
    }
}

TEST(Recall, Examples) {
    std::vector<std::string> top{"a", "b"};
    EXPECT_EQ(recall_at_k<std::string>(top, {"a", "c"}, 2), 0.5);
    EXPECT_EQ(recall_at_k<std::string>(top, {"a", "b"}, 2), 1.0);
    EXPECT_EQ(recall_at_k<std::string>(top, {"x"}, 2), 0.0);
    EXPECT_EQ(recall_at_k<std::string>(std::vector<std::string>{}, {"x"}, 2), 0.0);
    EXPECT_TRUE(std::isnan(recall_at_k<std::string>(top, {}, 2)));
}

TEST(Ndcg, Examples) {
    std::vector<std::string> top{"x", "a", "y"};
    EXPECT_NEAR(ndcg_at_k<std::string>(top, {"a", "b"}, 3), 0.3869, 5e-5);
    const double exact = (1.0 / std::log2(3.0)) / (1.0 + 1.0 / std::log2(3.0));
    EXPECT_NEAR(ndcg_at_k<std::string>(top, {"a", "b"}, 3), exact, 1e-15);
    EXPECT_DOUBLE_EQ(ndcg_at_k<std::string>(std::vector<std::string>{"a", "b"}, {"a", "b"}, 3), 1.0);
    EXPECT_EQ(ndcg_at_k<std::string>(top, {"q"}, 3), 0.0);
}

TEST(Metrics, MatchBruteForceOnRandomCases) {
    std::mt19937_64 rng(1000);
    for (int trial = 0; trial < 1000; ++trial) {
        const int universe = 5 + static_cast<int>(rng() % 60);
        std::vector<int> all(universe);
        std::iota(all.begin(), all.end(), 0);
        std::shuffle(all.begin(), all.end(), rng);
        std::vector<int> rec(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(rng() % universe));
        std::shuffle(all.begin(), all.end(), rng);
        std::vector<int> rel(all.begin(), all.begin() + 1 + static_cast<std::ptrdiff_t>(rng() % (universe - 1)));
        const std::size_t k = 1 + rng() % 50;
        std::set<int> relset(rel.begin(), rel.end());
        const double r = recall_at_k<int>(rec, relset, k), n = ndcg_at_k<int>(rec, relset, k);
        EXPECT_NEAR(r, ref_recall(rec, rel, k), 1e-9);
        EXPECT_NEAR(n, ref_ndcg(rec, rel, k), 1e-9);
        EXPECT_GE(r, 0.0);
        EXPECT_LE(r, 1.0);
        EXPECT_GE(n, 0.0);
        EXPECT_LE(n, 1.0 + 1e-12);
        if (rec.size() > k + 1) {
            auto shuffled = rec;
            std::shuffle(shuffled.begin() + static_cast<std::ptrdiff_t>(k), shuffled.end(), rng);
            EXPECT_EQ(ndcg_at_k<int>(shuffled, relset, k), n);
        }
    }
}

TEST(Evaluate, MacroAverageAndExclusion) {
    RecommendationLists recs{{"good", {"a", "b"}}, {"bad", {"x", "y"}}, {"idle", {"a"}}};
    std::vector<Interaction> test{{"good", "a", 1}, {"good", "b", 2}, {"bad", "a", 3}};
    std::vector<std::size_t> ks{2};
    auto report = evaluate(recs, test, ks);
    EXPECT_EQ(report.n_users, 2u);
    EXPECT_EQ(report.n_excluded, 1u);
    EXPECT_DOUBLE_EQ(report.metrics.at("recall@2"), 0.5);
    EXPECT_DOUBLE_EQ(report.metrics.at("ndcg@2"), 0.5);
    ASSERT_EQ(report.per_user.size(), 2u);
    EXPECT_EQ(report.per_user[0].user, "bad");
    EXPECT_EQ(report.per_user[0].metrics.at("recall@2"), 0.0);
}

TEST(Evaluate, PerfectSingleUserAndMissingList) {
    RecommendationLists recs{{"u", {"a", "b", "c"}}};
    std::vector<Interaction> test{{"u", "a", 1}, {"u", "c", 2}};
    auto report = evaluate(recs, test);
    EXPECT_EQ(report.metrics.at("recall@20"), 1.0);
    EXPECT_EQ(report.metrics.at("recall@40"), 1.0);
    EXPECT_LT(report.metrics.at("ndcg@20"), 1.0);
    std::vector<Interaction> other{{"w", "a", 1}};
    auto r2 = evaluate(recs, other);
    EXPECT_EQ(r2.n_users, 1u);
    EXPECT_EQ(r2.metrics.at("recall@20"), 0.0);
}

TEST(Reports, CsvAndMarkdown) {
    TempDir dir;
    EvalReport r;
    r.ks = {20};
    r.metrics = {{"recall@20", 0.25}, {"ndcg@20", 0.125}};
    r.n_users = 4;
    r.n_excluded = 1;
    write_report_csv(r, dir / "r.csv");
    EXPECT_EQ(likr::testing::read_text(dir / "r.csv"), "metric,k,value,n_users\nrecall,20,0.25,4\nndcg,20,0.125,4\n");
    write_report_markdown(r, "likr", dir / "r.md");
    auto md = likr::testing::read_text(dir / "r.md");
    EXPECT_NE(md.find("| Method | Recall@20 [%] | nDCG@20 [%] |"), std::string::npos) << md;
    EXPECT_NE(md.find("| likr | 25.00 | 12.50 |"), std::string::npos) << md;
    EXPECT_NE(md.find("excluded (no test items): 1"), std::string::npos);
}
