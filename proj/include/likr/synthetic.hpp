#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "likr/kg_store.hpp"

namespace likr {

// Steering fixture: every user has one designated genre. Early training rows
// are drawn uniformly from all items, the last `signal_items` training rows and
// all validation/test rows come from the designated genre. Train, validation
// and test rows occupy disjoint global time windows, so a 60/20/20 time split
// with train_per_user : valid_per_user : test_per_user = 3 : 1 : 1 recovers them.
struct SyntheticSpec {
    std::size_t users = 50;
    std::size_t items = 100;
    std::size_t genres = 5;
    std::size_t train_per_user = 12;
    std::size_t valid_per_user = 4;
    std::size_t test_per_user = 4;
    std::size_t signal_items = 2;
    std::uint64_t seed = 2024;
};

struct SyntheticDataset {
    std::vector<Interaction> interactions;
    ItemMetadata metadata;
    std::vector<std::string> genre_names;
    std::map<std::string, std::string> designated_genre;  // user -> genre
    std::map<std::string, std::string> mock_responses;    // user -> "genre: <name>"
};

SyntheticDataset make_synthetic(const SyntheticSpec& spec);

// Writes interactions.tsv, metadata.json and mock_responses.json into dir.
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);

}  // namespace likr
