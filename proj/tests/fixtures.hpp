#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "likr/kg_embed.hpp"
#include "likr/kg_store.hpp"

namespace likr::testing {

// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

void write_text(const std::filesystem::path& p, const std::string& text);
std::string read_text(const std::filesystem::path& p);

// 6 users, 10 items, 2 genres, 2 directors (20 entities). Users 0-2 favour
// items 0-4, users 3-5 items 5-9; genre follows the community.
DatasetBundle tiny_bundle();
KnowledgeGraph tiny_kg();

// Random bundle with `users` users, `items` items and two metadata types.
DatasetBundle random_bundle(std::size_t users, std::size_t items, std::size_t rows, std::mt19937_64& rng);

// Entity and relation vectors drawn uniformly from [-scale, scale].
EmbeddingTable random_embeddings(const KnowledgeGraph& kg, std::size_t dim, std::uint64_t seed, double scale = 0.5);

}  // namespace likr::testing
