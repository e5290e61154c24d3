#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "likr/error.hpp"
#include "likr/kg_store.hpp"

namespace likr {

struct PromptContext {
    EntityId user = 0;
    std::vector<std::string> history;  // item labels, oldest first
    std::vector<std::string> metadata_types;
    std::string domain_name = "movie";
    bool temporal_aware = true;
};

// Renders the preference-elicitation prompt. With temporal_aware the prompt
// asks for the *next* item and states that history is ordered oldest to newest.
std::string build_prompt(const PromptContext& ctx);

struct IntuitionResponse {
    std::string user;
    std::string raw_text;
    std::string provider_name;
    std::int64_t retrieved_at = 0;  // unix seconds
    bool from_cache = false;
};

// Retryable provider failure (connection error, timeout, 5xx/429).
class TransientProviderError : public Error {
public:
    using Error::Error;
};

class LlmProvider {
public:
    virtual ~LlmProvider() = default;
    virtual std::string name() const = 0;
    virtual std::string complete(const std::string& user, const std::string& prompt) = 0;
    virtual std::int64_t timestamp() const;
};

class MockProvider final : public LlmProvider {
public:
    explicit MockProvider(std::map<std::string, std::string> table) : table_(std::move(table)) {}

    std::string name() const override { return "mock"; }
    std::string complete(const std::string& user, const std::string& prompt) override;
    std::int64_t timestamp() const override { return 0; }

    std::size_t calls() const noexcept { return calls_.load(); }

private:
    std::map<std::string, std::string> table_;
    std::atomic<std::size_t> calls_{0};
};

struct HttpProviderConfig {
    std::string endpoint;  // e.g. http://localhost:8080/v1/complete
    std::string model;
    std::string token;  // sent as "Authorization: Bearer <token>" when non-empty
    std::string response_field = "text";  // dotted path into the JSON reply, e.g. "choices.0.text"
    std::chrono::milliseconds timeout{60000};
};

// POSTs {"model": ..., "prompt": ...} as JSON and extracts the completion text.
class HttpProvider final : public LlmProvider {
public:
    explicit HttpProvider(HttpProviderConfig config);

    std::string name() const override { return "http:" + config_.model; }
    std::string complete(const std::string& user, const std::string& prompt) override;

private:
    HttpProviderConfig config_;
    std::string base_;
    std::string path_;
};

enum class ProviderKind { Mock, Http };

struct ProviderConfig {
    ProviderKind kind = ProviderKind::Mock;
    HttpProviderConfig http;
    std::map<std::string, std::string> mock_table;
    std::size_t max_in_flight = 1;
    std::chrono::milliseconds min_request_interval{0};
    std::size_t max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};

    void validate() const;
};

std::unique_ptr<LlmProvider> make_provider(const ProviderConfig& config);

// JSON-lines response cache keyed by (user, sha256(prompt), provider name).
// Safe to share between threads; appends go through one lock.
class ResponseCache {
public:
    ResponseCache() = default;  // in-memory only
    explicit ResponseCache(std::filesystem::path path);

    std::optional<IntuitionResponse> find(const std::string& user, const std::string& prompt_sha256,
                                          const std::string& provider) const;
    void put(const IntuitionResponse& response, const std::string& prompt_sha256);
    std::size_t size() const;

private:
    static std::string key(const std::string& user, const std::string& sha, const std::string& provider);

    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::map<std::string, IntuitionResponse> entries_;
};

struct RetryPolicy {
    std::size_t max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};
};

// One provider call per (user, prompt) unless cached. Transient failures are
// retried with doubling backoff; refusals come back as ordinary text.
IntuitionResponse query_llm(const std::string& user, const std::string& prompt, LlmProvider& provider,
                            ResponseCache* cache, const RetryPolicy& retry = {});

struct QueryRequest {
    std::string user;
    std::string prompt;
};

// Issues up to max_in_flight concurrent requests, spaced at least
// min_request_interval apart. Results are returned in request order.
std::vector<IntuitionResponse> query_all(std::span<const QueryRequest> requests, LlmProvider& provider,
                                         ResponseCache* cache, const ProviderConfig& config);

struct ElementPair {
    std::string metadata_type;
    std::string element;

    friend bool operator==(const ElementPair&, const ElementPair&) = default;
};

struct ParsedResponse {
    std::vector<ElementPair> pairs;
    std::size_t skipped_lines = 0;
};

ParsedResponse parse_response(std::string_view text, std::span<const std::string> metadata_types);

struct IntuitionSet {
    EntityId user = 0;
    std::set<EntityId> matched;  // metadata-value entities
    std::vector<ElementPair> unmatched;
};

// Case-fold, punctuation to spaces, collapse and trim whitespace.
std::string normalize_element(std::string_view s);
double token_jaccard(std::string_view a, std::string_view b);

inline constexpr double kDefaultMatchThreshold = 0.5;

IntuitionSet match_elements(EntityId user, std::span<const ElementPair> pairs, const KnowledgeGraph& kg,
                            double threshold = kDefaultMatchThreshold);

using IntuitionMap = std::map<EntityId, IntuitionSet>;

// JSON: user label -> {matched_labels, matched_ids, unmatched: [{type, element}]}.
void save_intuitions(const IntuitionMap& intuitions, const KnowledgeGraph& kg, const std::filesystem::path& path);
IntuitionMap load_intuitions(const std::filesystem::path& path, const KnowledgeGraph& kg);

}  // namespace likr
