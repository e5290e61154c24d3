#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "likr/error.hpp"
#include "likr/pipeline.hpp"

namespace {

struct Overrides {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha;
    std::optional<double> beta;
    std::optional<std::string> provider;
    std::optional<bool> temporal_aware;
    std::optional<std::size_t> threads;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> embed_epochs;
    std::vector<double> alphas;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", o.out, "output directory (overrides output_dir)");
    cmd->add_option("--seed", o.seed, "global seed for every stochastic stage");
    cmd->add_option("--alpha", o.alpha, "weight of the embedding-path reward");
    cmd->add_option("--beta", o.beta, "weight of the intuition reward (0 disables it)");
    cmd->add_option("--provider", o.provider, "intuition provider")->check(CLI::IsMember({"mock", "http"}));
    cmd->add_option("--temporal-aware", o.temporal_aware, "order-aware prompt (true/false)");
    cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", o.epochs, "policy training epochs");
    cmd->add_option("--embed-epochs", o.embed_epochs, "TransE epochs");
}

likr::RunConfig resolve(const Overrides& o) {
    auto c = likr::load_run_config(o.config);
    if (!o.out.empty()) c.output_dir = std::filesystem::absolute(o.out);
    if (o.seed) c.seed = *o.seed;
    if (o.alpha) c.reward.alpha = *o.alpha;
    if (o.beta) c.reward.beta = *o.beta;
    if (o.provider) c.intuition.provider = *o.provider == "http" ? likr::ProviderKind::Http : likr::ProviderKind::Mock;
    if (o.temporal_aware) c.intuition.temporal_aware = *o.temporal_aware;
    if (o.threads) c.threads = *o.threads;
    if (o.epochs) c.train.epochs = *o.epochs;
    if (o.embed_epochs) c.transe.epochs = *o.embed_epochs;
    if (!o.alphas.empty()) c.sweep_alphas = o.alphas;
    c.propagate();
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"likr: knowledge-graph path reasoning recommender with LLM intuition rewards"};
    app.require_subcommand(1);
    Overrides o;

    struct Stage {
        const char* name;
        const char* help;
    };
    const Stage stages[] = {
        {"build", "load the dataset, split it and build the knowledge graph"},
        {"embed", "train TransE embeddings"},
        {"intuit", "query the provider for per-user intuition sets"},
        {"train", "train the path-reasoning policy"},
        {"recommend", "beam-search recommendations for every user"},
        {"eval", "recall/nDCG report on the test split"},
        {"sweep-alpha", "train and evaluate one agent per alpha"},
        {"run", "build, embed, intuit, train, recommend and eval"},
    };
    for (const auto& s : stages) {
        auto* cmd = app.add_subcommand(s.name, s.help);
        add_common(cmd, o);
        if (std::string(s.name) == "sweep-alpha") cmd->add_option("--alphas", o.alphas, "alpha grid");
    }

    std::string demo_dir;
    std::uint64_t demo_seed = 2024;
    auto* demo = app.add_subcommand("demo-synthetic", "write the synthetic steering fixture and a config");
    demo->add_option("dir", demo_dir, "target directory")->required();
    demo->add_option("--seed", demo_seed, "fixture seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (demo->parsed()) {
            likr::write_demo(demo_dir, demo_seed);
            std::cout << "wrote fixture to " << demo_dir << "; next: likr run --config " << demo_dir
                      << "/config.json\n";
            return 0;
        }
        const auto* cmd = app.get_subcommands().front();
        const std::string name = cmd->get_name();
        likr::Pipeline p(resolve(o), std::cout);
        if (name == "build") p.build();
        else if (name == "embed") p.embed();
        else if (name == "intuit") p.intuit();
        else if (name == "train") p.train();
        else if (name == "recommend") p.recommend();
        else if (name == "eval") p.eval();
        else if (name == "sweep-alpha") p.sweep_alpha();
        else if (name == "run") p.run_all();
    } catch (const std::exception& e) {
        std::cerr << "likr: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
