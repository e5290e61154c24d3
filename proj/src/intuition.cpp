#include "likr/intuition.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "likr/hashing.hpp"

namespace likr {

using nlohmann::json;

namespace {

struct DomainVerbs {
    std::string present;  // "watch"
    std::string past;     // "watched"
};

DomainVerbs verbs_for(std::string_view domain) {
    if (domain == "movie" || domain == "film" || domain == "video" || domain == "show")
        return {"watch", "watched"};
    if (domain == "music" || domain == "song" || domain == "track" || domain == "artist" || domain == "album")
        return {"listen to", "listened to"};
    if (domain == "book" || domain == "article") return {"read", "read"};
    return {"interact with", "interacted with"};
}

std::string plural(const std::string& noun) {
    if (noun.empty()) return noun;
    if (noun.back() == 's') return noun;
    if (noun.back() == 'y' && noun.size() > 1 && !std::strchr("aeiou", noun[noun.size() - 2]))
        return noun.substr(0, noun.size() - 1) + "ies";
    return noun + "s";
}

std::string join(std::span<const std::string> parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.append(sep);
        out.append(parts[i]);
    }
    return out;
}

std::string_view trim(std::string_view s) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// Leading list markers: "-", "*", "+", "•", "1.", "2)".
std::string_view strip_bullet(std::string_view s) {
    s = trim(s);
    while (!s.empty() && s.front() == '#') s.remove_prefix(1);
    s = trim(s);
    if (s.starts_with("\xE2\x80\xA2")) return trim(s.substr(3));
    if (!s.empty() && (s.front() == '-' || s.front() == '+') && s.size() > 1 && s[1] == ' ') return trim(s.substr(1));
    if (s.size() > 1 && s.front() == '*' && s[1] == ' ') return trim(s.substr(1));
    std::size_t digits = 0;
    while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
    if (digits > 0 && digits < s.size() && (s[digits] == '.' || s[digits] == ')')) return trim(s.substr(digits + 1));
    return s;
}

std::string strip_emphasis(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s)
        if (c != '*' && c != '`') out.push_back(c);
    return out;
}

std::string_view strip_wrapping(std::string_view s) {
    s = trim(s);
    while (!s.empty() && (s.back() == '.' || s.back() == ';')) s.remove_suffix(1);
    s = trim(s);
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
    return trim(s);
}

std::set<std::string> tokens(std::string_view normalized) {
    std::set<std::string> out;
    std::istringstream in{std::string(normalized)};
    std::string tok;
    while (in >> tok) out.insert(tok);
    return out;
}

class RateLimiter {
public:
    explicit RateLimiter(std::chrono::milliseconds interval) : interval_(interval) {}

    void acquire() {
        if (interval_.count() <= 0) return;
        std::chrono::steady_clock::time_point slot;
        {
            std::lock_guard lock(mutex_);
            auto now = std::chrono::steady_clock::now();
            slot = std::max(now, next_);
            next_ = slot + interval_;
        }
        std::this_thread::sleep_until(slot);
    }

private:
    std::chrono::milliseconds interval_;
    std::mutex mutex_;
    std::chrono::steady_clock::time_point next_{};
};

IntuitionResponse query_impl(const std::string& user, const std::string& prompt, LlmProvider& provider,
                             ResponseCache* cache, const RetryPolicy& retry, RateLimiter* limiter) {
    const auto sha = sha256_hex(prompt);
    const auto provider_name = provider.name();
    if (cache) {
        if (auto hit = cache->find(user, sha, provider_name)) {
            hit->from_cache = true;
            return *hit;
        }
    }
    auto backoff = retry.initial_backoff;
    for (std::size_t attempt = 0;; ++attempt) {
        try {
            if (limiter) limiter->acquire();
            IntuitionResponse resp{user, provider.complete(user, prompt), provider_name, provider.timestamp(), false};
            if (cache) cache->put(resp, sha);
            return resp;
        } catch (const TransientProviderError& e) {
            if (attempt >= retry.max_retries)
                throw Error("provider " + provider_name + " failed for user '" + user + "' after " +
                            std::to_string(attempt + 1) + " attempts: " + e.what());
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }
}

const json& follow_path(const json& doc, const std::string& path) {
    const json* cur = &doc;
    std::size_t start = 0;
    while (start <= path.size()) {
        auto dot = path.find('.', start);
        auto part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (cur->is_array()) {
            std::size_t idx = 0;
            auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), idx);
            if (ec != std::errc{} || p != part.data() + part.size() || idx >= cur->size())
                throw Error("response field path '" + path + "': bad array index '" + part + "'");
            cur = &(*cur)[idx];
        } else if (cur->is_object() && cur->contains(part)) {
            cur = &(*cur)[part];
        } else {
            throw Error("response field path '" + path + "': missing '" + part + "'");
        }
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return *cur;
}

}  // namespace

std::string build_prompt(const PromptContext& ctx) {
    if (ctx.history.empty()) throw Error("cold-start history required");
    if (ctx.metadata_types.empty()) throw Error("at least one metadata type is required");
    const auto v = verbs_for(ctx.domain_name);
    const auto& d = ctx.domain_name;
    const auto ds = plural(d);
    const std::string next = ctx.temporal_aware ? "next " : "";

    std::string p;
    p += "I am thinking of recommending the " + next + d + " for a user to " + v.present + ". ";
    p += "The user has " + v.past + " the following " + ds;
    if (ctx.temporal_aware) p += " in this order, with the more recently " + v.past + " " + ds + " appearing at the end";
    p += ":\n";
    p += join(ctx.history, ", ") + ".\n";
    p += "Based on the metadata types such as " + join(ctx.metadata_types, ", ") +
         ", please choose the metadata that is especially important, and provide the elements that the " + next + d +
         " should have for this user.\n";
    p += "Please format the output as follows:\n";
    p += "metadata type: element";
    return p;
}

std::int64_t LlmProvider::timestamp() const {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string MockProvider::complete(const std::string& user, const std::string&) {
    ++calls_;
    auto it = table_.find(user);
    if (it == table_.end()) throw Error("mock provider has no response for user '" + user + "'");
    return it->second;
}

HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw Error("http provider requires an endpoint");
    auto scheme = config_.endpoint.find("://");
    if (scheme == std::string::npos) throw Error("endpoint '" + config_.endpoint + "' lacks a scheme");
    auto slash = config_.endpoint.find('/', scheme + 3);
    base_ = config_.endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
}

std::string HttpProvider::complete(const std::string&, const std::string& prompt) {
    httplib::Client cli(base_);
    cli.set_connection_timeout(config_.timeout);
    cli.set_read_timeout(config_.timeout);
    cli.set_write_timeout(config_.timeout);
    httplib::Headers headers;
    if (!config_.token.empty()) headers.emplace("Authorization", "Bearer " + config_.token);
    json body = {{"model", config_.model}, {"prompt", prompt}};
    auto res = cli.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw TransientProviderError("request to " + config_.endpoint + " failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
        throw TransientProviderError("endpoint returned HTTP " + std::to_string(res->status));
    if (res->status != 200) throw Error("endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
    json reply;
    try {
        reply = json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw Error(std::string("endpoint returned invalid JSON: ") + e.what());
    }
    const auto& field = follow_path(reply, config_.response_field);
    if (!field.is_string()) throw Error("response field '" + config_.response_field + "' is not a string");
    return field.get<std::string>();
}

void ProviderConfig::validate() const {
    if (kind == ProviderKind::Http && http.endpoint.empty()) throw Error("http provider requires an endpoint");
    if (max_in_flight == 0) throw Error("max_in_flight must be positive");
}

std::unique_ptr<LlmProvider> make_provider(const ProviderConfig& config) {
    config.validate();
    if (config.kind == ProviderKind::Mock) return std::make_unique<MockProvider>(config.mock_table);
    return std::make_unique<HttpProvider>(config.http);
}

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            IntuitionResponse r{j.at("user").get<std::string>(), j.at("raw_text").get<std::string>(),
                                j.at("provider").get<std::string>(), j.at("retrieved_at").get<std::int64_t>(), true};
            entries_[key(r.user, j.at("prompt_sha256").get<std::string>(), r.provider_name)] = std::move(r);
        } catch (const json::exception& e) {
            throw FormatError(path_.string(), lineno, std::string("malformed cache record: ") + e.what());
        }
    }
}

std::string ResponseCache::key(const std::string& user, const std::string& sha, const std::string& provider) {
    return user + '\x1f' + sha + '\x1f' + provider;
}

std::optional<IntuitionResponse> ResponseCache::find(const std::string& user, const std::string& prompt_sha256,
                                                     const std::string& provider) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key(user, prompt_sha256, provider));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void ResponseCache::put(const IntuitionResponse& response, const std::string& prompt_sha256) {
    std::lock_guard lock(mutex_);
    entries_[key(response.user, prompt_sha256, response.provider_name)] = response;
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot append to cache " + path_.string());
    json j = {{"user", response.user},
              {"prompt_sha256", prompt_sha256},
              {"provider", response.provider_name},
              {"raw_text", response.raw_text},
              {"retrieved_at", response.retrieved_at}};
    out << j.dump() << '\n';
}

std::size_t ResponseCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

IntuitionResponse query_llm(const std::string& user, const std::string& prompt, LlmProvider& provider,
                            ResponseCache* cache, const RetryPolicy& retry) {
    return query_impl(user, prompt, provider, cache, retry, nullptr);
}

std::vector<IntuitionResponse> query_all(std::span<const QueryRequest> requests, LlmProvider& provider,
                                         ResponseCache* cache, const ProviderConfig& config) {
    config.validate();
    std::vector<IntuitionResponse> out(requests.size());
    std::vector<std::exception_ptr> errors(requests.size());
    RateLimiter limiter(config.min_request_interval);
    RetryPolicy retry{config.max_retries, config.initial_backoff};
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < requests.size(); i = next++) {
            try {
                out[i] = query_impl(requests[i].user, requests[i].prompt, provider, cache, retry, &limiter);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto n_threads = std::min(config.max_in_flight, requests.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

ParsedResponse parse_response(std::string_view text, std::span<const std::string> metadata_types) {
    ParsedResponse result;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        auto raw = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        if (trim(raw).empty()) continue;

        auto line = strip_emphasis(strip_bullet(raw));
        auto colon = line.find(':');
        if (colon == std::string::npos) {
            ++result.skipped_lines;
            continue;
        }
        auto type = lower(trim(std::string_view(line).substr(0, colon)));
        auto match = std::find_if(metadata_types.begin(), metadata_types.end(),
                                  [&](const std::string& t) { return lower(t) == type; });
        if (match == metadata_types.end()) {
            ++result.skipped_lines;
            continue;
        }
        std::string_view rest = std::string_view(line).substr(colon + 1);
        std::size_t pos = 0;
        bool any = false;
        while (pos <= rest.size()) {
            auto comma = rest.find(',', pos);
            auto piece = strip_wrapping(rest.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
            if (!piece.empty()) {
                result.pairs.push_back({*match, std::string(piece)});
                any = true;
            }
            if (comma == std::string_view::npos) break;
            pos = comma + 1;
        }
        if (!any) ++result.skipped_lines;
    }
    return result;
}

std::string normalize_element(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        auto uc = static_cast<unsigned char>(c);
        if (std::isspace(uc) || (uc < 0x80 && std::ispunct(uc))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(uc)));
    }
    return out;
}

double token_jaccard(std::string_view a, std::string_view b) {
    auto ta = tokens(normalize_element(a));
    auto tb = tokens(normalize_element(b));
    if (ta.empty() && tb.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& t : ta) inter += tb.count(t);
    return static_cast<double>(inter) / static_cast<double>(ta.size() + tb.size() - inter);
}

IntuitionSet match_elements(EntityId user, std::span<const ElementPair> pairs, const KnowledgeGraph& kg,
                            double threshold) {
    IntuitionSet out;
    out.user = user;
    std::map<std::string, std::vector<std::pair<EntityId, std::string>>> candidates;
    for (const auto& pair : pairs) {
        auto [slot, fresh] = candidates.try_emplace(pair.metadata_type);
        if (fresh)
            for (auto id : kg.metadata_values(pair.metadata_type))
                slot->second.emplace_back(id, normalize_element(kg.entity(id).label));
        const auto& cands = slot->second;
        const auto needle = normalize_element(pair.element);

        std::optional<EntityId> hit;
        for (const auto& [id, norm] : cands) {
            if (norm == needle) {
                hit = id;
                break;
            }
        }
        if (!hit) {
            double best = -1.0;
            for (const auto& [id, norm] : cands) {
                double j = token_jaccard(needle, norm);
                if (j >= threshold && j > best) {
                    best = j;
                    hit = id;
                }
            }
        }
        if (hit)
            out.matched.insert(*hit);
        else
            out.unmatched.push_back(pair);
    }
    return out;
}

void save_intuitions(const IntuitionMap& intuitions, const KnowledgeGraph& kg, const std::filesystem::path& path) {
    json doc = json::object();
    for (const auto& [user, set] : intuitions) {
        json labels = json::array(), ids = json::array(), unmatched = json::array();
        for (auto id : set.matched) {
            labels.push_back(kg.entity(id).label);
            ids.push_back(id);
        }
        for (const auto& p : set.unmatched) unmatched.push_back({{"type", p.metadata_type}, {"element", p.element}});
        doc[kg.entity(user).label] = {{"matched_labels", labels}, {"matched_ids", ids}, {"unmatched", unmatched}};
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

IntuitionMap load_intuitions(const std::filesystem::path& path, const KnowledgeGraph& kg) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    IntuitionMap out;
    try {
        auto doc = json::parse(in);
        for (const auto& [label, rec] : doc.items()) {
            auto user = kg.find(EntityKind::User, label);
            if (!user) throw Error(path.string() + ": unknown user '" + label + "'");
            IntuitionSet set;
            set.user = *user;
            for (const auto& id : rec.at("matched_ids")) {
                auto e = id.get<EntityId>();
                if (kg.entity(e).kind != EntityKind::MetadataValue)
                    throw Error(path.string() + ": matched id " + std::to_string(e) + " is not a metadata value");
                set.matched.insert(e);
            }
            for (const auto& u : rec.at("unmatched"))
                set.unmatched.push_back({u.at("type").get<std::string>(), u.at("element").get<std::string>()});
            out.emplace(*user, std::move(set));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + ": malformed intuition file: " + e.what());
    }
    return out;
}

}  // namespace likr
