#include "likr/pipeline.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "likr/error.hpp"
#include "likr/hashing.hpp"
#include "likr/parallel.hpp"
#include "likr/synthetic.hpp"

namespace likr {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <class E>
struct EnumName {
    E value;
    const char* name;
};

constexpr EnumName<RewardTiming> kTimings[] = {{RewardTiming::PerStep, "per_step"},
                                               {RewardTiming::TerminalOnly, "terminal_only"}};
constexpr EnumName<Baseline> kBaselines[] = {{Baseline::None, "none"}, {Baseline::BatchMeanReturn, "batch_mean"}};
constexpr EnumName<ScoreAggregation> kAggregations[] = {{ScoreAggregation::Max, "max"},
                                                        {ScoreAggregation::SumProb, "sum_prob"}};
constexpr EnumName<EmbeddingInit> kInits[] = {{EmbeddingInit::Uniform, "uniform"}, {EmbeddingInit::Zero, "zero"}};
constexpr EnumName<ProviderKind> kProviders[] = {{ProviderKind::Mock, "mock"}, {ProviderKind::Http, "http"}};

template <class E, std::size_t N>
std::string enum_name(const EnumName<E> (&table)[N], E v) {
    for (const auto& e : table)
        if (e.value == v) return e.name;
    throw Error("unnamed enum value");
}

template <class E, std::size_t N>
E enum_value(const EnumName<E> (&table)[N], const std::string& s, const std::string& key) {
    std::string allowed;
    for (const auto& e : table) {
        if (s == e.name) return e.value;
        allowed += allowed.empty() ? e.name : std::string(", ") + e.name;
    }
    throw Error("config: " + key + " must be one of " + allowed + ", got '" + s + "'");
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& section) {
    if (!obj.is_object()) throw Error("config: section '" + section + "' must be an object");
    for (const auto& [k, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        if (!ok) throw Error("config: unknown key '" + k + "' in " + (section.empty() ? "top level" : section));
    }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& section) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error("config: bad value for " + section + "." + key + ": " + e.what());
    }
}

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

void require_file(const fs::path& p, const std::string& what) {
    if (p.empty()) throw Error(what + " path is not set");
    if (!fs::is_regular_file(p)) throw Error(what + " not found: " + p.string());
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    return out;
}

std::map<std::string, std::string> read_mock_table(const fs::path& p) {
    require_file(p, "mock response table");
    std::ifstream in(p, std::ios::binary);
    try {
        return json::parse(in).get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw Error(p.string() + ": mock responses must be an object of user -> text: " + e.what());
    }
}

std::string metric_header(std::span<const std::size_t> ks) {
    std::string h;
    for (auto k : ks) h += ",recall@" + std::to_string(k) + ",ndcg@" + std::to_string(k);
    return h;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw Error("cannot format number");
    return std::string(buf, end);
}

// ---- config ----

void RunConfig::propagate() {
    transe.seed = seed;
    mdp.seed = seed;
    train.seed = seed;
    train.threads = threads;
}

void RunConfig::validate() const {
    split.validate();
    transe.validate();
    mdp.validate();
    reward.validate();
    train.validate();
    beam.validate(mdp.max_path_len);
    if (reward.alpha < 0.0 || reward.alpha > 1.0) throw Error("alpha must lie in [0, 1]");
    if (eval_ks.empty()) throw Error("eval.ks must not be empty");
    for (auto k : eval_ks)
        if (k == 0) throw Error("eval.ks entries must be positive");
    for (auto a : sweep_alphas)
        if (a < 0.0 || a > 1.0) throw Error("sweep alphas must lie in [0, 1]");
    if (threads == 0) throw Error("threads must be at least 1");
    if (dataset.metadata_types.empty()) throw Error("dataset.metadata_types must not be empty");
    if (intuition.max_in_flight == 0) throw Error("intuition.max_in_flight must be at least 1");
    if (intuition.min_request_interval_ms < 0) throw Error("intuition.min_request_interval_ms must be >= 0");
}

json RunConfig::to_json() const {
    json j;
    j["dataset"] = {{"interactions", dataset.interactions.string()},
                    {"metadata", dataset.metadata.string()},
                    {"metadata_types", dataset.metadata_types},
                    {"excluded_metadata_types", dataset.excluded_metadata_types},
                    {"domain", dataset.domain}};
    j["split"] = {{"train", split.train_ratio},
                  {"valid", split.valid_ratio},
                  {"test", split.test_ratio},
                  {"cold_start_cap", split.cold_start_cap}};
    j["transe"] = {{"dim", transe.dim},
                   {"margin", transe.margin},
                   {"negatives", transe.negatives_per_positive},
                   {"epochs", transe.epochs},
                   {"batch_size", transe.batch_size},
                   {"learning_rate", transe.learning_rate},
                   {"init", enum_name(kInits, transe.init)}};
    j["intuition"] = {{"provider", enum_name(kProviders, intuition.provider)},
                      {"mock_responses", intuition.mock_responses.string()},
                      {"endpoint", intuition.endpoint},
                      {"model", intuition.model},
                      {"token_env", intuition.token_env},
                      {"response_field", intuition.response_field},
                      {"temporal_aware", intuition.temporal_aware},
                      {"max_in_flight", intuition.max_in_flight},
                      {"min_request_interval_ms", intuition.min_request_interval_ms},
                      {"cache", intuition.cache.string()},
                      {"match_threshold", intuition.match_threshold}};
    j["mdp"] = {{"max_path_len", mdp.max_path_len},
                {"max_actions", mdp.max_actions},
                {"action_dropout", mdp.action_dropout}};
    j["reward"] = {{"alpha", reward.alpha},
                   {"beta", reward.beta},
                   {"timing", enum_name(kTimings, reward.timing)},
                   {"incremental_kg", reward.incremental_kg}};
    j["policy"] = {{"gamma", train.gamma},
                   {"learning_rate", train.learning_rate},
                   {"batch_size", train.batch_size},
                   {"epochs", train.epochs},
                   {"baseline", enum_name(kBaselines, train.baseline)},
                   {"hidden1", train.hidden1},
                   {"hidden2", train.hidden2}};
    j["beam"] = {{"widths", beam.widths},
                 {"top_n", beam.top_n},
                 {"aggregation", enum_name(kAggregations, beam.aggregation)}};
    j["eval"] = {{"ks", eval_ks}};
    j["sweep"] = {{"alphas", sweep_alphas}};
    j["output_dir"] = output_dir.string();
    j["seed"] = seed;
    j["threads"] = threads;
    return j;
}

RunConfig run_config_from_json(const json& j, const fs::path& base) {
    RunConfig c;
    check_keys(j,
               {"dataset", "split", "transe", "intuition", "mdp", "reward", "policy", "beam", "eval", "sweep",
                "output_dir", "seed", "threads"},
               "");
    if (j.contains("dataset")) {
        const auto& s = j["dataset"];
        check_keys(s, {"interactions", "metadata", "metadata_types", "excluded_metadata_types", "domain"}, "dataset");
        std::string p;
        read(s, "interactions", p, "dataset");
        c.dataset.interactions = resolve(base, p);
        p.clear();
        read(s, "metadata", p, "dataset");
        c.dataset.metadata = resolve(base, p);
        read(s, "metadata_types", c.dataset.metadata_types, "dataset");
        read(s, "excluded_metadata_types", c.dataset.excluded_metadata_types, "dataset");
        read(s, "domain", c.dataset.domain, "dataset");
    }
    if (j.contains("split")) {
        const auto& s = j["split"];
        check_keys(s, {"train", "valid", "test", "cold_start_cap"}, "split");
        read(s, "train", c.split.train_ratio, "split");
        read(s, "valid", c.split.valid_ratio, "split");
        read(s, "test", c.split.test_ratio, "split");
        read(s, "cold_start_cap", c.split.cold_start_cap, "split");
    }
    if (j.contains("transe")) {
        const auto& s = j["transe"];
        check_keys(s, {"dim", "margin", "negatives", "epochs", "batch_size", "learning_rate", "init"}, "transe");
        read(s, "dim", c.transe.dim, "transe");
        read(s, "margin", c.transe.margin, "transe");
        read(s, "negatives", c.transe.negatives_per_positive, "transe");
        read(s, "epochs", c.transe.epochs, "transe");
        read(s, "batch_size", c.transe.batch_size, "transe");
        read(s, "learning_rate", c.transe.learning_rate, "transe");
        std::string init = enum_name(kInits, c.transe.init);
        read(s, "init", init, "transe");
        c.transe.init = enum_value(kInits, init, "transe.init");
    }
    if (j.contains("intuition")) {
        const auto& s = j["intuition"];
        check_keys(s,
                   {"provider", "mock_responses", "endpoint", "model", "token_env", "response_field", "temporal_aware",
                    "max_in_flight", "min_request_interval_ms", "cache", "match_threshold"},
                   "intuition");
        std::string provider = enum_name(kProviders, c.intuition.provider);
        read(s, "provider", provider, "intuition");
        c.intuition.provider = enum_value(kProviders, provider, "intuition.provider");
        std::string p;
        read(s, "mock_responses", p, "intuition");
        c.intuition.mock_responses = resolve(base, p);
        p.clear();
        read(s, "cache", p, "intuition");
        c.intuition.cache = resolve(base, p);
        read(s, "endpoint", c.intuition.endpoint, "intuition");
        read(s, "model", c.intuition.model, "intuition");
        read(s, "token_env", c.intuition.token_env, "intuition");
        read(s, "response_field", c.intuition.response_field, "intuition");
        read(s, "temporal_aware", c.intuition.temporal_aware, "intuition");
        read(s, "max_in_flight", c.intuition.max_in_flight, "intuition");
        read(s, "min_request_interval_ms", c.intuition.min_request_interval_ms, "intuition");
        read(s, "match_threshold", c.intuition.match_threshold, "intuition");
    }
    if (j.contains("mdp")) {
        const auto& s = j["mdp"];
        check_keys(s, {"max_path_len", "max_actions", "action_dropout"}, "mdp");
        read(s, "max_path_len", c.mdp.max_path_len, "mdp");
        read(s, "max_actions", c.mdp.max_actions, "mdp");
        read(s, "action_dropout", c.mdp.action_dropout, "mdp");
    }
    if (j.contains("reward")) {
        const auto& s = j["reward"];
        check_keys(s, {"alpha", "beta", "timing", "incremental_kg"}, "reward");
        read(s, "alpha", c.reward.alpha, "reward");
        read(s, "beta", c.reward.beta, "reward");
        std::string timing = enum_name(kTimings, c.reward.timing);
        read(s, "timing", timing, "reward");
        c.reward.timing = enum_value(kTimings, timing, "reward.timing");
        read(s, "incremental_kg", c.reward.incremental_kg, "reward");
    }
    if (j.contains("policy")) {
        const auto& s = j["policy"];
        check_keys(s, {"gamma", "learning_rate", "batch_size", "epochs", "baseline", "hidden1", "hidden2"}, "policy");
        read(s, "gamma", c.train.gamma, "policy");
        read(s, "learning_rate", c.train.learning_rate, "policy");
        read(s, "batch_size", c.train.batch_size, "policy");
        read(s, "epochs", c.train.epochs, "policy");
        std::string baseline = enum_name(kBaselines, c.train.baseline);
        read(s, "baseline", baseline, "policy");
        c.train.baseline = enum_value(kBaselines, baseline, "policy.baseline");
        read(s, "hidden1", c.train.hidden1, "policy");
        read(s, "hidden2", c.train.hidden2, "policy");
    }
    if (j.contains("beam")) {
        const auto& s = j["beam"];
        check_keys(s, {"widths", "top_n", "aggregation"}, "beam");
        read(s, "widths", c.beam.widths, "beam");
        read(s, "top_n", c.beam.top_n, "beam");
        std::string agg = enum_name(kAggregations, c.beam.aggregation);
        read(s, "aggregation", agg, "beam");
        c.beam.aggregation = enum_value(kAggregations, agg, "beam.aggregation");
    }
    if (j.contains("eval")) {
        check_keys(j["eval"], {"ks"}, "eval");
        read(j["eval"], "ks", c.eval_ks, "eval");
    }
    if (j.contains("sweep")) {
        check_keys(j["sweep"], {"alphas"}, "sweep");
        read(j["sweep"], "alphas", c.sweep_alphas, "sweep");
    }
    std::string out = c.output_dir.string();
    read(j, "output_dir", out, "");
    c.output_dir = resolve(base, out);
    read(j, "seed", c.seed, "");
    read(j, "threads", c.threads, "");
    c.propagate();
    c.validate();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    require_file(path, "config file");
    std::ifstream in(path, std::ios::binary);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(path.string() + ": invalid JSON: " + e.what());
    }
    return run_config_from_json(j, fs::absolute(path).parent_path());
}

void save_run_config(const RunConfig& config, const fs::path& path) {
    auto out = open_out(path);
    out << config.to_json().dump(2) << '\n';
}

// ---- in-memory stages ----

PreparedData prepare_data(const DatasetBundle& bundle, const SplitSpec& spec) {
    PreparedData d;
    d.bundle = bundle;
    d.split = time_split(bundle.interactions, spec);
    d.train = truncate_cold_start(d.split.train, spec.cold_start_cap);
    d.kg = build_kg(bundle, d.train);
    return d;
}

ProviderConfig provider_config(const IntuitionConfig& config) {
    ProviderConfig p;
    p.kind = config.provider;
    p.max_in_flight = config.max_in_flight;
    p.min_request_interval = std::chrono::milliseconds(config.min_request_interval_ms);
    if (config.provider == ProviderKind::Mock) {
        p.mock_table = read_mock_table(config.mock_responses);
    } else {
        p.http.endpoint = config.endpoint;
        p.http.model = config.model;
        p.http.response_field = config.response_field;
        if (!config.token_env.empty())
            if (const char* tok = std::getenv(config.token_env.c_str())) p.http.token = tok;
    }
    p.validate();
    return p;
}

IntuitionRun gather_intuitions(const KnowledgeGraph& kg, std::span<const Interaction> train,
                               const std::vector<std::string>& metadata_types, const std::string& domain,
                               const IntuitionConfig& config, LlmProvider& provider, ResponseCache* cache) {
    std::map<std::string, std::vector<std::string>> history;
    for (const auto& r : train) history[r.user].push_back(r.item);

    IntuitionRun run;
    std::vector<EntityId> users;
    for (auto u : trainable_users(kg)) {
        const auto& label = kg.entity(u).label;
        auto h = history.find(label);
        if (h == history.end()) continue;
        PromptContext ctx{u, h->second, metadata_types, domain, config.temporal_aware};
        run.requests.push_back({label, build_prompt(ctx)});
        users.push_back(u);
    }
    auto pc = ProviderConfig{};
    pc.max_in_flight = config.max_in_flight;
    pc.min_request_interval = std::chrono::milliseconds(config.min_request_interval_ms);
    run.responses = query_all(run.requests, provider, cache, pc);
    for (std::size_t i = 0; i < users.size(); ++i) {
        auto parsed = parse_response(run.responses[i].raw_text, metadata_types);
        run.skipped_lines += parsed.skipped_lines;
        auto set = match_elements(users[i], parsed.pairs, kg, config.match_threshold);
        run.unmatched += set.unmatched.size();
        run.intuitions[users[i]] = std::move(set);
    }
    return run;
}

std::vector<Recommendations> recommend_all(const KnowledgeGraph& kg, const PolicyParameters& params,
                                           const EmbeddingTable& emb, const MdpConfig& mdp, const BeamConfig& beam,
                                           std::size_t threads) {
    const auto users = trainable_users(kg);
    const Policy policy(params, emb);
    std::vector<Recommendations> out(users.size());
    parallel_for(users.size(), threads, [&](std::size_t i) {
        const auto paths = beam_search(kg, policy, emb, users[i], mdp, beam);
        const auto items = kg.interacted_items(users[i]);
        out[i] = rank_items(users[i], paths, kg, std::set<EntityId>(items.begin(), items.end()), beam.top_n,
                            beam.aggregation);
    });
    return out;
}

RecommendationLists to_lists(std::span<const Recommendations> recs, const KnowledgeGraph& kg) {
    RecommendationLists lists;
    for (const auto& r : recs) {
        auto& l = lists[kg.entity(r.user).label];
        for (const auto& item : r.ranked) l.push_back(kg.entity(item.item).label);
    }
    return lists;
}

RecommendationLists load_recommendation_lists(const fs::path& path) {
    require_file(path, "recommendations");
    std::ifstream in(path, std::ios::binary);
    RecommendationLists lists;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.empty()) continue;
        try {
            auto j = json::parse(line);
            auto& l = lists[j.at("user").get<std::string>()];
            for (const auto& item : j.at("items")) l.push_back(item.at("item").get<std::string>());
        } catch (const json::exception& e) {
            throw FormatError(path.string(), n, e.what());
        }
    }
    return lists;
}

// ---- manifest ----

Manifest::Manifest(fs::path output_dir) : dir_(std::move(output_dir)), data_({{"stages", json::object()}}) {
    const auto p = dir_ / "manifest.json";
    if (!fs::exists(p)) return;
    std::ifstream in(p, std::ios::binary);
    try {
        data_ = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(p.string() + ": corrupt manifest: " + e.what());
    }
    if (!data_.contains("stages")) throw Error(p.string() + ": manifest has no stages");
}

bool Manifest::has_stage(const std::string& stage) const { return data_["stages"].contains(stage); }

std::string Manifest::artifact_hash(const std::string& stage, const std::string& artifact) const {
    if (!has_stage(stage)) throw Error("stage '" + stage + "' has not been run; run `likr " + stage + "` first");
    const auto& a = data_["stages"][stage]["artifacts"];
    if (!a.contains(artifact)) throw Error("stage '" + stage + "' recorded no artifact " + artifact);
    return a[artifact].get<std::string>();
}

void Manifest::verify(const std::string& stage) const {
    if (!has_stage(stage)) throw Error("stage '" + stage + "' has not been run; run `likr " + stage + "` first");
    const auto& s = data_["stages"][stage];
    for (const auto& [name, sha] : s["inputs"].items()) {
        const fs::path p = sha["path"].get<std::string>();
        if (!fs::is_regular_file(p) || sha256_file(p) != sha["sha256"].get<std::string>())
            throw Error("input " + p.string() + " changed since `likr " + stage + "`; rerun `likr " + stage + "`");
    }
    for (const auto& [name, sha] : s["artifacts"].items()) {
        const auto p = dir_ / name;
        if (!fs::is_regular_file(p)) throw Error("artifact " + p.string() + " is missing; rerun `likr " + stage + "`");
        if (sha256_file(p) != sha.get<std::string>())
            throw Error("artifact " + p.string() + " was modified; rerun `likr " + stage + "`");
    }
    for (const auto& [upstream, files] : s["consumed"].items()) {
        for (const auto& [name, sha] : files.items()) {
            if (!has_stage(upstream) || !data_["stages"][upstream]["artifacts"].contains(name) ||
                data_["stages"][upstream]["artifacts"][name] != sha)
                throw Error("stale upstream: " + upstream + "/" + name + " changed after `likr " + stage +
                            "` consumed it; rerun `likr " + stage + "`");
        }
        verify(upstream);
    }
}

void Manifest::record(const std::string& stage, const RunConfig& config,
                      const std::map<std::string, fs::path>& inputs, const std::vector<std::string>& artifacts,
                      const std::map<std::string, std::vector<std::string>>& consumed) {
    json s;
    s["seed"] = config.seed;
    s["config"] = config.to_json();
    s["inputs"] = json::object();
    for (const auto& [name, p] : inputs) s["inputs"][name] = {{"path", p.string()}, {"sha256", sha256_file(p)}};
    s["artifacts"] = json::object();
    for (const auto& a : artifacts) s["artifacts"][a] = sha256_file(dir_ / a);
    s["consumed"] = json::object();
    for (const auto& [up, files] : consumed)
        for (const auto& f : files) s["consumed"][up][f] = artifact_hash(up, f);
    data_["stages"][stage] = std::move(s);
    data_["seed"] = config.seed;
    save();
}

void Manifest::save() const {
    const auto p = dir_ / "manifest.json";
    auto out = open_out(p);
    out << data_.dump(2) << '\n';
}

// ---- artifact stages ----

Pipeline::Pipeline(RunConfig config, std::ostream& log)
    : config_(std::move(config)), log_(log), manifest_((config_.propagate(), config_.output_dir)) {
    config_.validate();
    fs::create_directories(config_.output_dir);
}

KnowledgeGraph Pipeline::load_kg() const { return load_graph(out("kg.json")); }

void Pipeline::build() {
    require_file(config_.dataset.interactions, "interactions file");
    require_file(config_.dataset.metadata, "metadata file");
    auto bundle = load_dataset(config_.dataset.interactions, config_.dataset.metadata, config_.dataset.metadata_types,
                               config_.dataset.domain, config_.dataset.excluded_metadata_types);
    const auto d = prepare_data(bundle, config_.split);
    save_graph(d.kg, out("kg.json"));
    export_triples_tsv(d.kg, out("triples.tsv"));
    write_interactions(out("train.tsv"), d.train);
    write_interactions(out("valid.tsv"), d.split.valid);
    write_interactions(out("test.tsv"), d.split.test);
    const auto st = stats(d.kg);
    {
        auto o = open_out(out("kg_stats.json"));
        o << json{{"entities", st.entity_count},
                  {"entity_types", st.entity_type_count},
                  {"triples", st.triple_count},
                  {"relation_types", st.relation_type_count},
                  {"sparsity", st.sparsity},
                  {"train_rows", d.train.size()},
                  {"train_rows_before_truncation", d.split.train.size()},
                  {"valid_rows", d.split.valid.size()},
                  {"test_rows", d.split.test.size()}}
                 .dump(2)
          << '\n';
    }
    log_ << "build: " << st.entity_count << " entities, " << st.triple_count << " triples, " << d.train.size()
         << " training rows (" << d.split.train.size() << " before truncation), " << d.split.test.size()
         << " test rows\n";
    manifest_.record("build", config_,
                     {{"interactions", config_.dataset.interactions}, {"metadata", config_.dataset.metadata}},
                     {"kg.json", "triples.tsv", "train.tsv", "valid.tsv", "test.tsv", "kg_stats.json"}, {});
}

void Pipeline::embed() {
    manifest_.verify("build");
    const auto kg = load_kg();
    auto logf = open_out(out("embed.log"));
    logf << std::setprecision(17);
    const auto res = train_transe(kg, config_.transe, [&](std::size_t epoch, double mean_loss) {
        logf << "epoch " << epoch << " mean_loss " << mean_loss << '\n';
    });
    logf.close();
    save_embeddings(res.table, kg, out("embeddings.bin"), out("embeddings.json"));
    log_ << "embed: " << config_.transe.epochs << " epochs, final mean loss "
         << (res.trace.epoch_mean_loss.empty() ? 0.0 : res.trace.epoch_mean_loss.back()) << '\n';
    manifest_.record("embed", config_, {}, {"embeddings.bin", "embeddings.json", "embed.log"},
                     {{"build", {"kg.json"}}});
}

void Pipeline::intuit() {
    manifest_.verify("build");
    const auto kg = load_kg();
    const auto train = read_interactions(out("train.tsv"));
    auto provider = make_provider(provider_config(config_.intuition));
    ResponseCache cache(config_.intuition.cache.empty() ? out("llm_cache.jsonl") : config_.intuition.cache);
    std::vector<std::string> types;
    for (const auto& t : config_.dataset.metadata_types)
        if (std::find(config_.dataset.excluded_metadata_types.begin(), config_.dataset.excluded_metadata_types.end(),
                      t) == config_.dataset.excluded_metadata_types.end())
            types.push_back(t);
    const auto run = gather_intuitions(kg, train, types, config_.dataset.domain, config_.intuition, *provider, &cache);
    save_intuitions(run.intuitions, kg, out("intuitions.json"));
    {
        auto o = open_out(out("prompts.jsonl"));
        for (std::size_t i = 0; i < run.requests.size(); ++i)
            o << json{{"user", run.requests[i].user},
                      {"prompt", run.requests[i].prompt},
                      {"response", run.responses[i].raw_text}}
                     .dump()
              << '\n';
    }
    std::size_t matched = 0, empty = 0;
    for (const auto& [u, s] : run.intuitions) {
        matched += s.matched.size();
        empty += s.matched.empty();
    }
    log_ << "intuit: " << run.intuitions.size() << " users, " << matched << " matched elements, " << run.unmatched
         << " unmatched, " << empty << " users without intuition, " << run.skipped_lines << " skipped lines\n";
    manifest_.record("intuit", config_, {}, {"intuitions.json", "prompts.jsonl"}, {{"build", {"kg.json", "train.tsv"}}});
}

void Pipeline::train() {
    manifest_.verify("embed");
    manifest_.verify("intuit");
    const auto kg = load_kg();
    const auto emb = load_embeddings(out("embeddings.bin"));
    const auto intuitions = load_intuitions(out("intuitions.json"), kg);
    auto logf = open_out(out("train.log"));
    logf << std::setprecision(17);
    const auto res = train_agent(kg, emb, intuitions, config_.mdp, config_.reward, config_.train,
                                 [&](std::size_t epoch, double mean_return) {
                                     logf << "epoch " << epoch << " mean_return " << mean_return << '\n';
                                 });
    logf.close();
    save_policy(res.params, config_.train, out("policy.bin"), out("policy.json"));
    log_ << "train: " << config_.train.epochs << " epochs, final mean return "
         << (res.epoch_mean_return.empty() ? 0.0 : res.epoch_mean_return.back()) << '\n';
    manifest_.record("train", config_, {}, {"policy.bin", "policy.json", "train.log"},
                     {{"build", {"kg.json"}}, {"embed", {"embeddings.bin"}}, {"intuit", {"intuitions.json"}}});
}

void Pipeline::recommend() {
    manifest_.verify("train");
    const auto kg = load_kg();
    const auto emb = load_embeddings(out("embeddings.bin"));
    const auto params = load_policy(out("policy.bin"));
    const auto recs = recommend_all(kg, params, emb, config_.mdp, config_.beam, config_.threads);
    save_recommendations(recs, kg, out("recommendations.jsonl"));
    log_ << "recommend: " << recs.size() << " users\n";
    manifest_.record("recommend", config_, {}, {"recommendations.jsonl"},
                     {{"build", {"kg.json"}}, {"embed", {"embeddings.bin"}}, {"train", {"policy.bin"}}});
}

EvalReport Pipeline::eval() {
    manifest_.verify("recommend");
    const auto lists = load_recommendation_lists(out("recommendations.jsonl"));
    const auto test = read_interactions(out("test.tsv"));
    auto report = evaluate(lists, test, config_.eval_ks);
    write_report_csv(report, out("report.csv"));
    write_report_markdown(report,
                          "likr (alpha=" + format_double(config_.reward.alpha) +
                              ", beta=" + format_double(config_.reward.beta) + ")",
                          out("report.md"));
    log_ << "eval: " << report.n_users << " users";
    for (const auto& [k, v] : report.metrics) log_ << ", " << k << " " << v;
    log_ << '\n';
    manifest_.record("eval", config_, {}, {"report.csv", "report.md"},
                     {{"recommend", {"recommendations.jsonl"}}, {"build", {"test.tsv"}}});
    return report;
}

std::vector<SweepRow> Pipeline::sweep_alpha() {
    manifest_.verify("embed");
    manifest_.verify("intuit");
    const auto kg = load_kg();
    const auto emb = load_embeddings(out("embeddings.bin"));
    const auto intuitions = load_intuitions(out("intuitions.json"), kg);
    const auto test = read_interactions(out("test.tsv"));

    std::vector<SweepRow> rows;
    for (double alpha : config_.sweep_alphas) {
        auto reward = config_.reward;
        reward.alpha = alpha;
        const auto res = train_agent(kg, emb, intuitions, config_.mdp, reward, config_.train);
        const auto recs = recommend_all(kg, res.params, emb, config_.mdp, config_.beam, config_.threads);
        rows.push_back({alpha, evaluate(to_lists(recs, kg), test, config_.eval_ks)});
        log_ << "sweep: alpha " << format_double(alpha);
        for (const auto& [k, v] : rows.back().report.metrics) log_ << ", " << k << " " << v;
        log_ << '\n';
    }

    auto csv = open_out(out("sweep.csv"));
    csv << "alpha,beta" << metric_header(config_.eval_ks) << ",n_users\n" << std::setprecision(17);
    auto md = open_out(out("sweep.md"));
    md << "| alpha |";
    for (auto k : config_.eval_ks) md << " Recall@" << k << " [%] | nDCG@" << k << " [%] |";
    md << "\n|---|";
    for (std::size_t i = 0; i < config_.eval_ks.size(); ++i) md << "---|---|";
    md << '\n' << std::fixed << std::setprecision(2);
    for (const auto& row : rows) {
        csv << format_double(row.alpha) << ',' << format_double(config_.reward.beta);
        md << "| " << format_double(row.alpha) << " |";
        for (auto k : config_.eval_ks) {
            const auto r = row.report.metrics.at("recall@" + std::to_string(k));
            const auto n = row.report.metrics.at("ndcg@" + std::to_string(k));
            csv << ',' << r << ',' << n;
            md << ' ' << 100.0 * r << " | " << 100.0 * n << " |";
        }
        csv << ',' << row.report.n_users << '\n';
        md << '\n';
    }
    csv.close();
    md.close();
    manifest_.record("sweep-alpha", config_, {}, {"sweep.csv", "sweep.md"},
                     {{"build", {"kg.json", "test.tsv"}}, {"embed", {"embeddings.bin"}}, {"intuit", {"intuitions.json"}}});
    return rows;
}

void Pipeline::run_all() {
    build();
    embed();
    intuit();
    train();
    recommend();
    eval();
}

// ---- synthetic demo ----

RunConfig synthetic_run_config(const fs::path& dir, std::uint64_t seed) {
    RunConfig c;
    c.dataset.interactions = dir / "interactions.tsv";
    c.dataset.metadata = dir / "metadata.json";
    c.dataset.metadata_types = {"genre"};
    c.dataset.domain = "movie";
    c.intuition.provider = ProviderKind::Mock;
    c.intuition.mock_responses = dir / "mock_responses.json";
    c.transe.dim = 16;
    c.transe.epochs = 100;
    c.transe.batch_size = 64;
    c.transe.learning_rate = 0.01;
    c.train.hidden1 = 64;
    c.train.hidden2 = 32;
    c.train.batch_size = 10;
    c.train.epochs = 300;
    c.train.learning_rate = 0.005;
    c.mdp.action_dropout = 0.2;
    // One genre node fans out to all of its items, so the last hop needs room.
    c.beam.widths = {3, 2, 20};
    c.beam.top_n = 40;
    c.eval_ks = {10, 20};
    c.output_dir = dir / "out";
    c.seed = seed;
    c.propagate();
    return c;
}

void write_demo(const fs::path& dir, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    write_synthetic(make_synthetic(spec), dir);
    auto c = synthetic_run_config(dir, seed);
    // Paths relative to the config file so the directory can be moved.
    auto j = c.to_json();
    j["dataset"]["interactions"] = "interactions.tsv";
    j["dataset"]["metadata"] = "metadata.json";
    j["intuition"]["mock_responses"] = "mock_responses.json";
    j["intuition"]["cache"] = "";
    j["output_dir"] = "out";
    auto o = open_out(dir / "config.json");
    o << j.dump(2) << '\n';
}

}  // namespace likr
