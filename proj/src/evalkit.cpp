#include "likr/evalkit.hpp"

#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "likr/error.hpp"

namespace likr {

void SplitSpec::validate() const {
    if (train_ratio < 0.0 || valid_ratio < 0.0 || test_ratio < 0.0) throw Error("split ratios must be non-negative");
    if (std::abs(train_ratio + valid_ratio + test_ratio - 1.0) > 1e-9) throw Error("split ratios must sum to 1");
    if (cold_start_cap < 1) throw Error("cold-start cap must be at least 1");
}

Split time_split(std::span<const Interaction> interactions, const SplitSpec& spec) {
    spec.validate();
    if (interactions.size() < 5)
        throw Error("time split needs at least 5 interactions, got " + std::to_string(interactions.size()));
    std::vector<Interaction> sorted(interactions.begin(), interactions.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
    const auto n = static_cast<double>(sorted.size());
    // The epsilon absorbs representation error such as 0.6 * 10 = 5.999...
    const auto cut1 = static_cast<std::size_t>(std::floor(n * spec.train_ratio + 1e-9));
    const auto cut2 = std::max(cut1, static_cast<std::size_t>(std::floor(n * (spec.train_ratio + spec.valid_ratio) + 1e-9)));
    Split s;
    s.train.assign(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(cut1));
    s.valid.assign(sorted.begin() + static_cast<std::ptrdiff_t>(cut1), sorted.begin() + static_cast<std::ptrdiff_t>(cut2));
    s.test.assign(sorted.begin() + static_cast<std::ptrdiff_t>(cut2), sorted.end());
    return s;
}

std::vector<Interaction> truncate_cold_start(std::span<const Interaction> train, std::size_t cap) {
    if (cap < 1) throw Error("cold-start cap must be at least 1");
    std::unordered_map<std::string, std::vector<std::size_t>> by_user;
    for (std::size_t i = 0; i < train.size(); ++i) by_user[train[i].user].push_back(i);
    std::vector<char> keep(train.size(), 0);
    for (auto& [user, rows] : by_user) {
        // Most recent first; among equal timestamps the later row is newer.
        std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
            if (train[a].timestamp != train[b].timestamp) return train[a].timestamp > train[b].timestamp;
            return a > b;
        });
        for (std::size_t k = 0; k < std::min(cap, rows.size()); ++k) keep[rows[k]] = 1;
    }
    std::vector<Interaction> out;
    for (std::size_t i = 0; i < train.size(); ++i)
        if (keep[i]) out.push_back(train[i]);
    return out;
}

EvalReport evaluate(const RecommendationLists& recommendations, std::span<const Interaction> test,
                    std::span<const std::size_t> ks) {
    EvalReport report;
    report.ks.assign(ks.begin(), ks.end());
    std::map<std::string, std::set<std::string>> relevant;
    for (const auto& r : test) relevant[r.user].insert(r.item);

    std::set<std::string> users;
    for (const auto& [u, _] : recommendations) users.insert(u);
    for (const auto& [u, _] : relevant) users.insert(u);

    const std::vector<std::string> none;
    for (const auto& user : users) {
        auto rel = relevant.find(user);
        if (rel == relevant.end() || rel->second.empty()) {
            ++report.n_excluded;
            continue;
        }
        auto rec = recommendations.find(user);
        std::span<const std::string> list = rec == recommendations.end() ? none : rec->second;
        UserMetrics um{user, {}};
        for (auto k : ks) {
            um.metrics["recall@" + std::to_string(k)] = recall_at_k(list, rel->second, k);
            um.metrics["ndcg@" + std::to_string(k)] = ndcg_at_k(list, rel->second, k);
        }
        report.per_user.push_back(std::move(um));
    }
    report.n_users = report.per_user.size();
    for (auto k : ks) {
        for (const std::string metric : {"recall", "ndcg"}) {
            const auto key = metric + "@" + std::to_string(k);
            double sum = 0.0;
            for (const auto& um : report.per_user) sum += um.metrics.at(key);
            report.metrics[key] = report.n_users ? sum / static_cast<double>(report.n_users) : 0.0;
        }
    }
    return report;
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "metric,k,value,n_users\n";
    out << std::setprecision(17);
    for (auto k : report.ks)
        for (const std::string metric : {"recall", "ndcg"})
            out << metric << ',' << k << ',' << report.metrics.at(metric + "@" + std::to_string(k)) << ','
                << report.n_users << '\n';
}

void write_report_markdown(const EvalReport& report, const std::string& method, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    std::ostringstream head, rule, row;
    head << "| Method |";
    rule << "|---|";
    row << "| " << method << " |";
    row << std::fixed << std::setprecision(2);
    for (auto k : report.ks) {
        head << " Recall@" << k << " [%] | nDCG@" << k << " [%] |";
        rule << "---|---|";
        row << ' ' << 100.0 * report.metrics.at("recall@" + std::to_string(k)) << " | "
            << 100.0 * report.metrics.at("ndcg@" + std::to_string(k)) << " |";
    }
    out << head.str() << '\n' << rule.str() << '\n' << row.str() << '\n';
    out << "\nUsers evaluated: " << report.n_users << ", excluded (no test items): " << report.n_excluded << '\n';
}

}  // namespace likr
