#include "likr/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "likr/error.hpp"

namespace likr {
namespace {

const std::vector<std::string> kGenreNames = {"Action", "Comedy",    "Drama",     "Horror", "Romance",
                                              "Sci-Fi", "Animation", "Thriller", "Western", "Documentary"};

std::string padded(const char* prefix, std::size_t i) {
    std::ostringstream s;
    s << prefix << std::setw(3) << std::setfill('0') << i;
    return s.str();
}

}  // namespace

SyntheticDataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.users == 0 || spec.items == 0 || spec.genres == 0) throw Error("synthetic spec sizes must be positive");
    if (spec.items % spec.genres != 0) throw Error("items must divide evenly into genres");
    const std::size_t per_genre = spec.items / spec.genres;
    const std::size_t genre_rows = spec.signal_items + spec.valid_per_user + spec.test_per_user;
    if (genre_rows > per_genre) throw Error("genre too small for the requested per-user genre rows");
    if (spec.signal_items > spec.train_per_user) throw Error("signal_items exceeds train_per_user");
    if (spec.train_per_user + spec.valid_per_user + spec.test_per_user > spec.items)
        throw Error("not enough items for the requested history length");

    SyntheticDataset data;
    for (std::size_t g = 0; g < spec.genres; ++g)
        data.genre_names.push_back(g < kGenreNames.size() ? kGenreNames[g] : "Genre " + std::to_string(g));

    std::vector<std::string> item_labels;
    for (std::size_t i = 0; i < spec.items; ++i) {
        item_labels.push_back(padded("item_", i));
        data.metadata[item_labels.back()]["genre"] = {data.genre_names[i % spec.genres]};
    }

    std::mt19937_64 rng(spec.seed);
    constexpr std::int64_t kTrainStart = 1'000'000, kValidStart = 2'000'000, kTestStart = 3'000'000;
    for (std::size_t u = 0; u < spec.users; ++u) {
        const auto user = padded("user_", u);
        const std::size_t g = u % spec.genres;
        data.designated_genre[user] = data.genre_names[g];
        data.mock_responses[user] = "genre: " + data.genre_names[g];

        std::vector<std::size_t> in_genre;
        for (std::size_t i = g; i < spec.items; i += spec.genres) in_genre.push_back(i);
        std::shuffle(in_genre.begin(), in_genre.end(), rng);
        std::vector<std::size_t> genre_pick(in_genre.begin(), in_genre.begin() + static_cast<std::ptrdiff_t>(genre_rows));
        std::set<std::size_t> used(genre_pick.begin(), genre_pick.end());

        std::vector<std::size_t> train;
        std::uniform_int_distribution<std::size_t> any(0, spec.items - 1);
        while (train.size() < spec.train_per_user - spec.signal_items) {
            auto i = any(rng);
            if (used.insert(i).second) train.push_back(i);
        }
        for (std::size_t k = 0; k < spec.signal_items; ++k) train.push_back(genre_pick[k]);

        auto emit = [&](std::int64_t start, std::size_t pos, std::size_t item) {
            const auto ts = start + static_cast<std::int64_t>((pos * spec.users + u) * 60);
            data.interactions.push_back({user, item_labels[item], ts});
        };
        for (std::size_t k = 0; k < train.size(); ++k) emit(kTrainStart, k, train[k]);
        for (std::size_t k = 0; k < spec.valid_per_user; ++k) emit(kValidStart, k, genre_pick[spec.signal_items + k]);
        for (std::size_t k = 0; k < spec.test_per_user; ++k)
            emit(kTestStart, k, genre_pick[spec.signal_items + spec.valid_per_user + k]);
    }
    return data;
}

void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_interactions(dir / "interactions.tsv", data.interactions);
    {
        std::ofstream out(dir / "metadata.json", std::ios::binary);
        if (!out) throw Error("cannot write metadata.json in " + dir.string());
        out << nlohmann::json(data.metadata).dump(2) << '\n';
    }
    std::ofstream out(dir / "mock_responses.json", std::ios::binary);
    if (!out) throw Error("cannot write mock_responses.json in " + dir.string());
    out << nlohmann::json(data.mock_responses).dump(2) << '\n';
}

}  // namespace likr
