#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "likr/intuition.hpp"
#include "likr/kg_embed.hpp"
#include "likr/mdp_env.hpp"

namespace likr {

// concat(e_user, e_current, mean of history entities or zeros); length 3D.
std::vector<double> encode_state(const State& state, const EmbeddingTable& emb);

// concat(relation embedding or zeros for stop, target embedding); length 2D.
std::vector<double> encode_action(const Action& action, const EmbeddingTable& emb);

// Flat parameter vector of the action scorer:
//   state branch  h = relu(W2 relu(W1 s + b1) + b2)     3D -> H1 -> H2
//   action branch f = Wa a + ba                         2D -> H2
//   score(s, a)   = <h, f>
struct PolicyParameters {
    std::size_t dim = 0;
    std::size_t hidden1 = 512;
    std::size_t hidden2 = 256;
    std::vector<double> values;

    std::size_t state_dim() const noexcept { return 3 * dim; }
    std::size_t action_dim() const noexcept { return 2 * dim; }

    struct Layout {
        std::size_t w1, b1, w2, b2, wa, ba, total;
    };
    Layout layout() const noexcept;

    // Glorot-uniform weights, zero biases.
    static PolicyParameters initialize(std::size_t dim, std::size_t hidden1, std::size_t hidden2, std::uint64_t seed);

    friend bool operator==(const PolicyParameters&, const PolicyParameters&) = default;
};

// Read-only scorer over fixed parameters and embeddings. Satisfies ActionPolicy.
class Policy {
public:
    Policy(const PolicyParameters& params, const EmbeddingTable& emb);

    std::vector<double> scores(const State& state, const ActionSpace& actions) const;
    std::vector<double> distribution(const State& state, const ActionSpace& actions) const;

private:
    std::vector<double> state_features(const State& state) const;

    const PolicyParameters& params_;
    const EmbeddingTable& emb_;
};

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> scores);

enum class Baseline { None, BatchMeanReturn };

struct TrainConfig {
    double gamma = 0.99;
    double learning_rate = 0.001;
    std::size_t batch_size = 64;
    std::size_t epochs = 100;
    Baseline baseline = Baseline::BatchMeanReturn;
    std::size_t hidden1 = 512;
    std::size_t hidden2 = 256;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const;
};

// G_t = sum_{k >= t} gamma^{k-t} R_k.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

// Loss -(1/B) sum_episodes sum_t (G_t - b_t) log pi(a_t | s_t), where b_t is
// the batch mean of G_t under BatchMeanReturn and zero otherwise. When
// `gradient` is non-null it receives dLoss/dparams (same layout as values).
double reinforce_loss(const PolicyParameters& params, const EmbeddingTable& emb, std::span<const Episode> batch,
                      const TrainConfig& config, std::vector<double>* gradient);

class AdamOptimizer {
public:
    explicit AdamOptimizer(std::size_t n, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                           double epsilon = 1e-8);
    void step(std::span<double> params, std::span<const double> gradient);
    std::size_t steps() const noexcept { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

// One REINFORCE step: gradient of reinforce_loss followed by an Adam update.
// Returns the batch loss. Throws if any episode yields a non-finite gradient.
double reinforce_update(PolicyParameters& params, AdamOptimizer& optimizer, const EmbeddingTable& emb,
                        std::span<const Episode> batch, const TrainConfig& config);

struct TrainResult {
    PolicyParameters params;
    std::vector<double> epoch_mean_return;  // mean G_0 over the epoch's episodes
};

using TrainLogger = std::function<void(std::size_t epoch, double mean_return)>;

// Per epoch: users in seeded shuffled order, one training-mode rollout each,
// an update per batch. Every rollout draws from its own (seed, epoch, user)
// stream so results do not depend on the thread count.
TrainResult train_agent(const KnowledgeGraph& kg, const EmbeddingTable& emb, const IntuitionMap& intuitions,
                        const MdpConfig& mdp, const RewardConfig& reward, const TrainConfig& config,
                        const TrainLogger& log = {});

// Users with at least one edge, ascending id.
std::vector<EntityId> trainable_users(const KnowledgeGraph& kg);

// Binary checkpoint: "LIKRPOL1", u32 version, u32 D, u32 H1, u32 H2, u64 count,
// float64 parameters. The JSON sidecar records the training configuration.
void save_policy(const PolicyParameters& params, const TrainConfig& config, const std::filesystem::path& bin_path,
                 const std::filesystem::path& sidecar_path);
PolicyParameters load_policy(const std::filesystem::path& bin_path);

}  // namespace likr
