#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "likr/kg_store.hpp"

namespace likr {

struct SplitSpec {
    double train_ratio = 0.6;
    double valid_ratio = 0.2;
    double test_ratio = 0.2;
    std::size_t cold_start_cap = 10;

    void validate() const;
};

struct Split {
    std::vector<Interaction> train;
    std::vector<Interaction> valid;
    std::vector<Interaction> test;
};

// Global chronological holdout: stable sort by timestamp, then the oldest
// floor(n * train) rows train, up to floor(n * (train + valid)) validate, the
// remainder test.
Split time_split(std::span<const Interaction> interactions, const SplitSpec& spec);

// Keeps each user's `cap` most recent rows; surviving rows keep input order.
std::vector<Interaction> truncate_cold_start(std::span<const Interaction> train, std::size_t cap);

// |top-k ∩ relevant| / |relevant|. NaN when relevant is empty (the caller
// excludes such users).
template <class Item>
double recall_at_k(std::span<const Item> recommended, const std::set<Item>& relevant, std::size_t k) {
    if (relevant.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::set<Item> seen;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, recommended.size()); ++i)
        if (seen.insert(recommended[i]).second && relevant.count(recommended[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

// Binary-relevance nDCG with DCG = sum rel_i / log2(i + 1) over the top k and
// IDCG over min(|relevant|, k) leading hits. NaN when relevant is empty.
template <class Item>
double ndcg_at_k(std::span<const Item> recommended, const std::set<Item>& relevant, std::size_t k) {
    if (relevant.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::set<Item> seen;
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, recommended.size()); ++i)
        if (seen.insert(recommended[i]).second && relevant.count(recommended[i]))
            dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, relevant.size()); ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return dcg / idcg;
}

struct UserMetrics {
    std::string user;
    std::map<std::string, double> metrics;  // "recall@20" -> value
};

struct EvalReport {
    std::vector<std::size_t> ks;
    std::map<std::string, double> metrics;  // macro averages
    std::vector<UserMetrics> per_user;
    std::size_t n_users = 0;     // evaluated
    std::size_t n_excluded = 0;  // recommended for, but no test items
};

using RecommendationLists = std::map<std::string, std::vector<std::string>>;  // user -> ranked items

// Macro-averaged recall@k and nDCG@k over users with at least one test item.
EvalReport evaluate(const RecommendationLists& recommendations, std::span<const Interaction> test,
                    std::span<const std::size_t> ks = std::vector<std::size_t>{20, 40});

// CSV "metric,k,value,n_users".
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
// Method | Recall@k | nDCG@k ... in percent, two decimals.
void write_report_markdown(const EvalReport& report, const std::string& method, const std::filesystem::path& path);

}  // namespace likr
