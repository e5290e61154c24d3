#include "fixtures.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace likr::testing {

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("likr-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

DatasetBundle tiny_bundle() {
    DatasetBundle b;
    b.metadata_types = {"genre", "director"};
    b.domain_name = "movie";
    for (int i = 0; i < 10; ++i) {
        const auto item = "i" + std::to_string(i);
        b.item_metadata[item]["genre"] = {i < 5 ? "Drama" : "Comedy"};
        b.item_metadata[item]["director"] = {i % 5 < 3 ? "Kurosawa" : "Varda"};
    }
    std::int64_t ts = 0;
    for (int u = 0; u < 6; ++u) {
        const int base = u < 3 ? 0 : 5;
        const auto user = "u" + std::to_string(u);
        for (int k = 0; k < 5; ++k) b.interactions.push_back({user, "i" + std::to_string(base + k), ts++});
        // Two cross-community items keep the graph connected.
        const int other = 5 - base;
        b.interactions.push_back({user, "i" + std::to_string(other + u % 5), ts++});
        b.interactions.push_back({user, "i" + std::to_string(other + (u + 2) % 5), ts++});
    }
    return b;
}

KnowledgeGraph tiny_kg() {
    auto b = tiny_bundle();
    return build_kg(b, b.interactions);
}

DatasetBundle random_bundle(std::size_t users, std::size_t items, std::size_t rows, std::mt19937_64& rng) {
    DatasetBundle b;
    b.metadata_types = {"genre", "director"};
    b.domain_name = "movie";
    std::uniform_int_distribution<std::size_t> pick_user(0, users - 1), pick_item(0, items - 1), pick_val(0, 3);
    std::uniform_int_distribution<std::int64_t> pick_ts(0, 1000);
    for (std::size_t i = 0; i < items; ++i) {
        const auto item = "item" + std::to_string(i);
        b.item_metadata[item]["genre"] = {"g" + std::to_string(pick_val(rng))};
        if (pick_val(rng) > 0) b.item_metadata[item]["director"] = {"d" + std::to_string(pick_val(rng))};
    }
    for (std::size_t r = 0; r < rows; ++r)
        b.interactions.push_back(
            {"user" + std::to_string(pick_user(rng)), "item" + std::to_string(pick_item(rng)), pick_ts(rng)});
    return b;
}

EmbeddingTable random_embeddings(const KnowledgeGraph& kg, std::size_t dim, std::uint64_t seed, double scale) {
    EmbeddingTable t(dim, kg.entity_count(), kg.relation_count());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (EntityId e = 0; e < kg.entity_count(); ++e)
        for (auto& x : t.entity(e)) x = u(rng);
    for (RelationId r = 0; r < kg.relation_count(); ++r)
        for (auto& x : t.relation(r)) x = u(rng);
    return t;
}

}  // namespace likr::testing
