#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "likr/evalkit.hpp"
#include "likr/intuition.hpp"
#include "likr/kg_embed.hpp"
#include "likr/kg_store.hpp"
#include "likr/mdp_env.hpp"
#include "likr/policy.hpp"
#include "likr/reasoner.hpp"

namespace likr {

struct DatasetConfig {
    std::filesystem::path interactions;
    std::filesystem::path metadata;
    std::vector<std::string> metadata_types;
    std::vector<std::string> excluded_metadata_types;
    std::string domain = "movie";
};

struct IntuitionConfig {
    ProviderKind provider = ProviderKind::Mock;
    std::filesystem::path mock_responses;
    std::string endpoint;
    std::string model;
    std::string token_env = "LIKR_API_TOKEN";
    std::string response_field = "text";
    bool temporal_aware = true;
    std::size_t max_in_flight = 1;
    std::int64_t min_request_interval_ms = 0;
    std::filesystem::path cache;  // empty: <output_dir>/llm_cache.jsonl
    double match_threshold = kDefaultMatchThreshold;
};

struct RunConfig {
    DatasetConfig dataset;
    SplitSpec split;
    TransEConfig transe;
    IntuitionConfig intuition;
    MdpConfig mdp;
    RewardConfig reward;
    TrainConfig train;
    BeamConfig beam;
    std::vector<std::size_t> eval_ks{20, 40};
    std::vector<double> sweep_alphas{0.0, 0.25, 0.5, 0.75, 1.0};
    std::filesystem::path output_dir = "likr_out";
    std::uint64_t seed = 42;
    std::size_t threads = 1;

    // Copies the global seed and thread count into every stochastic module.
    void propagate();
    void validate() const;
    nlohmann::json to_json() const;
};

// Relative paths inside the file resolve against the file's directory.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

// In-memory stages, shared by the CLI and the tests.
struct PreparedData {
    DatasetBundle bundle;
    Split split;
    std::vector<Interaction> train;  // truncated training rows
    KnowledgeGraph kg;
};

PreparedData prepare_data(const DatasetBundle& bundle, const SplitSpec& spec);

ProviderConfig provider_config(const IntuitionConfig& config);

struct IntuitionRun {
    IntuitionMap intuitions;
    std::vector<QueryRequest> requests;
    std::vector<IntuitionResponse> responses;
    std::size_t skipped_lines = 0;
    std::size_t unmatched = 0;
};

// Prompts every trainable user with their chronological training history.
IntuitionRun gather_intuitions(const KnowledgeGraph& kg, std::span<const Interaction> train,
                               const std::vector<std::string>& metadata_types, const std::string& domain,
                               const IntuitionConfig& config, LlmProvider& provider, ResponseCache* cache);

std::vector<Recommendations> recommend_all(const KnowledgeGraph& kg, const PolicyParameters& params,
                                           const EmbeddingTable& emb, const MdpConfig& mdp, const BeamConfig& beam,
                                           std::size_t threads);

RecommendationLists to_lists(std::span<const Recommendations> recs, const KnowledgeGraph& kg);
RecommendationLists load_recommendation_lists(const std::filesystem::path& path);

// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

// Per-stage record of input/artifact hashes in <output_dir>/manifest.json.
class Manifest {
public:
    explicit Manifest(std::filesystem::path output_dir);

    const std::filesystem::path& dir() const noexcept { return dir_; }
    bool has_stage(const std::string& stage) const;
    const nlohmann::json& data() const noexcept { return data_; }

    // Confirms the stage ran, its artifacts are unmodified, the upstream
    // artifacts it consumed are unchanged, and recursively the same for the
    // upstream stages. Throws with a rebuild hint otherwise.
    void verify(const std::string& stage) const;

    // Hash of an artifact recorded by `stage`.
    std::string artifact_hash(const std::string& stage, const std::string& artifact) const;

    void record(const std::string& stage, const RunConfig& config,
                const std::map<std::string, std::filesystem::path>& inputs, const std::vector<std::string>& artifacts,
                const std::map<std::string, std::vector<std::string>>& consumed);

private:
    void save() const;

    std::filesystem::path dir_;
    nlohmann::json data_;
};

struct SweepRow {
    double alpha = 0.0;
    EvalReport report;
};

// Artifact-on-disk stages. Every stage after build verifies its upstream
// through the manifest before reading anything.
class Pipeline {
public:
    Pipeline(RunConfig config, std::ostream& log);

    void build();
    void embed();
    void intuit();
    void train();
    void recommend();
    EvalReport eval();
    std::vector<SweepRow> sweep_alpha();
    void run_all();

    const RunConfig& config() const noexcept { return config_; }

private:
    std::filesystem::path out(const std::string& name) const { return config_.output_dir / name; }
    KnowledgeGraph load_kg() const;

    RunConfig config_;
    std::ostream& log_;
    Manifest manifest_;
};

// Writes the steering fixture plus a ready-to-run config.json into dir.
void write_demo(const std::filesystem::path& dir, std::uint64_t seed);

// Configuration tuned for the synthetic fixture.
RunConfig synthetic_run_config(const std::filesystem::path& dir, std::uint64_t seed);

}  // namespace likr
