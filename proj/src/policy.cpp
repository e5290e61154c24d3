#include "likr/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "binary_io.hpp"
#include "likr/parallel.hpp"

namespace likr {
namespace {

constexpr char kPolicyMagic[9] = "LIKRPOL1";
constexpr std::uint32_t kPolicyVersion = 1;

// y = W x + b for row-major W (rows x cols).
void affine(const double* w, const double* b, const double* x, std::size_t rows, std::size_t cols, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = w + r * cols;
        double s = b[r];
        for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
        y[r] = s;
    }
}

struct Forward {
    std::vector<double> x, z1, h1, z2, h2;
    std::vector<double> q;  // Wa^T h2
    double bias = 0.0;      // <h2, ba>
    std::vector<std::vector<double>> actions;
    std::vector<double> scores;
};

Forward forward(const PolicyParameters& p, const EmbeddingTable& emb, const State& state, const ActionSpace& space) {
    const auto L = p.layout();
    const double* v = p.values.data();
    const std::size_t S = p.state_dim(), A = p.action_dim(), H1 = p.hidden1, H2 = p.hidden2;
    Forward f;
    f.x = encode_state(state, emb);
    f.z1.resize(H1);
    f.h1.resize(H1);
    affine(v + L.w1, v + L.b1, f.x.data(), H1, S, f.z1.data());
    for (std::size_t i = 0; i < H1; ++i) f.h1[i] = std::max(0.0, f.z1[i]);
    f.z2.resize(H2);
    f.h2.resize(H2);
    affine(v + L.w2, v + L.b2, f.h1.data(), H2, H1, f.z2.data());
    for (std::size_t i = 0; i < H2; ++i) f.h2[i] = std::max(0.0, f.z2[i]);

    f.q.assign(A, 0.0);
    const double* wa = v + L.wa;
    for (std::size_t r = 0; r < H2; ++r) {
        const double hr = f.h2[r];
        if (hr == 0.0) continue;
        const double* row = wa + r * A;
        for (std::size_t c = 0; c < A; ++c) f.q[c] += hr * row[c];
    }
    f.bias = 0.0;
    for (std::size_t r = 0; r < H2; ++r) f.bias += f.h2[r] * v[L.ba + r];

    f.actions.reserve(space.candidates.size());
    f.scores.reserve(space.candidates.size());
    for (const auto& a : space.candidates) {
        auto enc = encode_action(a, emb);
        double s = f.bias;
        for (std::size_t c = 0; c < A; ++c) s += f.q[c] * enc[c];
        f.scores.push_back(s);
        f.actions.push_back(std::move(enc));
    }
    return f;
}

double log_softmax_at(std::span<const double> scores, std::size_t k) {
    double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - mx);
    return scores[k] - mx - std::log(z);
}

// Accumulates coef * d(log pi_k)/d(params) into grad.
void backward(const PolicyParameters& p, const Forward& f, std::size_t chosen, double coef, double* grad) {
    const auto L = p.layout();
    const double* v = p.values.data();
    const std::size_t S = p.state_dim(), A = p.action_dim(), H1 = p.hidden1, H2 = p.hidden2;
    const auto probs = softmax(f.scores);

    std::vector<double> abar(A, 0.0);
    double gsum = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        const double g = coef * ((j == chosen ? 1.0 : 0.0) - probs[j]);
        gsum += g;
        const auto& a = f.actions[j];
        for (std::size_t c = 0; c < A; ++c) abar[c] += g * a[c];
    }

    std::vector<double> dh2(H2, 0.0);
    const double* wa = v + L.wa;
    for (std::size_t r = 0; r < H2; ++r) {
        const double* row = wa + r * A;
        double* grow = grad + L.wa + r * A;
        double s = gsum * v[L.ba + r];
        for (std::size_t c = 0; c < A; ++c) {
            s += row[c] * abar[c];
            grow[c] += f.h2[r] * abar[c];
        }
        grad[L.ba + r] += gsum * f.h2[r];
        dh2[r] = s;
    }

    std::vector<double> dz2(H2);
    for (std::size_t r = 0; r < H2; ++r) dz2[r] = f.z2[r] > 0.0 ? dh2[r] : 0.0;
    std::vector<double> dh1(H1, 0.0);
    const double* w2 = v + L.w2;
    for (std::size_t r = 0; r < H2; ++r) {
        const double d = dz2[r];
        if (d == 0.0) continue;
        const double* row = w2 + r * H1;
        double* grow = grad + L.w2 + r * H1;
        for (std::size_t c = 0; c < H1; ++c) {
            grow[c] += d * f.h1[c];
            dh1[c] += d * row[c];
        }
        grad[L.b2 + r] += d;
    }
    for (std::size_t r = 0; r < H1; ++r) {
        const double d = f.z1[r] > 0.0 ? dh1[r] : 0.0;
        if (d == 0.0) continue;
        double* grow = grad + L.w1 + r * S;
        for (std::size_t c = 0; c < S; ++c) grow[c] += d * f.x[c];
        grad[L.b1 + r] += d;
    }
}

std::vector<double> timestep_baseline(std::span<const std::vector<double>> returns, Baseline kind) {
    std::size_t horizon = 0;
    for (const auto& g : returns) horizon = std::max(horizon, g.size());
    std::vector<double> b(horizon, 0.0);
    if (kind == Baseline::None) return b;
    std::vector<std::size_t> counts(horizon, 0);
    for (const auto& g : returns)
        for (std::size_t t = 0; t < g.size(); ++t) {
            b[t] += g[t];
            ++counts[t];
        }
    for (std::size_t t = 0; t < horizon; ++t)
        if (counts[t]) b[t] /= static_cast<double>(counts[t]);
    return b;
}

}  // namespace

std::vector<double> encode_state(const State& state, const EmbeddingTable& emb) {
    const auto D = emb.dim();
    std::vector<double> out(3 * D, 0.0);
    auto u = emb.entity(state.user);
    auto c = emb.entity(state.current);
    std::copy(u.begin(), u.end(), out.begin());
    std::copy(c.begin(), c.end(), out.begin() + static_cast<std::ptrdiff_t>(D));
    if (!state.history.empty()) {
        for (const auto& a : state.history) {
            auto e = emb.entity(a.target);
            for (std::size_t k = 0; k < D; ++k) out[2 * D + k] += e[k];
        }
        const double n = static_cast<double>(state.history.size());
        for (std::size_t k = 0; k < D; ++k) out[2 * D + k] /= n;
    }
    return out;
}

std::vector<double> encode_action(const Action& action, const EmbeddingTable& emb) {
    const auto D = emb.dim();
    std::vector<double> out(2 * D, 0.0);
    if (!action.is_stop()) {
        auto r = emb.relation(action.relation);
        std::copy(r.begin(), r.end(), out.begin());
    }
    auto t = emb.entity(action.target);
    std::copy(t.begin(), t.end(), out.begin() + static_cast<std::ptrdiff_t>(D));
    return out;
}

PolicyParameters::Layout PolicyParameters::layout() const noexcept {
    Layout l{};
    const std::size_t S = state_dim(), A = action_dim();
    l.w1 = 0;
    l.b1 = l.w1 + hidden1 * S;
    l.w2 = l.b1 + hidden1;
    l.b2 = l.w2 + hidden2 * hidden1;
    l.wa = l.b2 + hidden2;
    l.ba = l.wa + hidden2 * A;
    l.total = l.ba + hidden2;
    return l;
}

PolicyParameters PolicyParameters::initialize(std::size_t dim, std::size_t hidden1, std::size_t hidden2,
                                              std::uint64_t seed) {
    if (dim == 0 || hidden1 == 0 || hidden2 == 0) throw Error("policy dimensions must be positive");
    PolicyParameters p;
    p.dim = dim;
    p.hidden1 = hidden1;
    p.hidden2 = hidden2;
    const auto L = p.layout();
    p.values.assign(L.total, 0.0);
    Rng rng(seed);
    auto fill = [&](std::size_t offset, std::size_t fan_out, std::size_t fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> unif(-bound, bound);
        for (std::size_t i = 0; i < fan_out * fan_in; ++i) p.values[offset + i] = unif(rng);
    };
    fill(L.w1, hidden1, p.state_dim());
    fill(L.w2, hidden2, hidden1);
    fill(L.wa, hidden2, p.action_dim());
    return p;
}

Policy::Policy(const PolicyParameters& params, const EmbeddingTable& emb) : params_(params), emb_(emb) {
    if (params.dim != emb.dim()) throw Error("policy dimension does not match the embedding table");
    if (params.values.size() != params.layout().total) throw Error("policy parameter vector has the wrong size");
}

std::vector<double> Policy::scores(const State& state, const ActionSpace& actions) const {
    if (actions.candidates.empty()) throw Error("action distribution over an empty action set");
    return forward(params_, emb_, state, actions).scores;
}

std::vector<double> Policy::distribution(const State& state, const ActionSpace& actions) const {
    return softmax(scores(state, actions));
}

std::vector<double> softmax(std::span<const double> scores) {
    if (scores.empty()) throw Error("softmax of an empty vector");
    const double mx = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - mx);
        z += out[i];
    }
    for (double& p : out) p /= z;
    return out;
}

void TrainConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error("discount gamma must lie in (0, 1]");
    if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
    if (batch_size == 0 || epochs == 0 || hidden1 == 0 || hidden2 == 0)
        throw Error("batch_size, epochs and hidden sizes must be positive");
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
    std::vector<double> g(rewards.size(), 0.0);
    double acc = 0.0;
    for (std::size_t t = rewards.size(); t-- > 0;) {
        acc = rewards[t] + gamma * acc;
        g[t] = acc;
    }
    return g;
}

double reinforce_loss(const PolicyParameters& params, const EmbeddingTable& emb, std::span<const Episode> batch,
                      const TrainConfig& config, std::vector<double>* gradient) {
    if (batch.empty()) throw Error("REINFORCE batch is empty");
    if (gradient) gradient->assign(params.values.size(), 0.0);
    std::vector<std::vector<double>> returns;
    returns.reserve(batch.size());
    for (const auto& ep : batch) returns.push_back(discounted_returns(ep.rewards, config.gamma));
    const auto baseline = timestep_baseline(returns, config.baseline);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    double loss = 0.0;
    for (std::size_t e = 0; e < batch.size(); ++e) {
        const auto& ep = batch[e];
        if (ep.path.size() != ep.rewards.size()) throw Error("episode " + std::to_string(e) + " is malformed");
        for (std::size_t t = 0; t < ep.path.size(); ++t) {
            const auto& tr = ep.path[t];
            const double advantage = returns[e][t] - baseline[t];
            if (advantage == 0.0 || tr.space.candidates.size() < 2) continue;
            auto f = forward(params, emb, tr.state, tr.space);
            const double logp = log_softmax_at(f.scores, tr.chosen);
            loss -= advantage * logp * inv_b;
            if (gradient) backward(params, f, tr.chosen, -advantage * inv_b, gradient->data());
        }
        if (gradient && !std::all_of(gradient->begin(), gradient->end(), [](double x) { return std::isfinite(x); }))
            throw Error("non-finite policy gradient from episode " + std::to_string(e));
    }
    return loss;
}

AdamOptimizer::AdamOptimizer(std::size_t n, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon), m_(n, 0.0), v_(n, 0.0) {}

void AdamOptimizer::step(std::span<double> params, std::span<const double> gradient) {
    if (params.size() != m_.size() || gradient.size() != m_.size()) throw Error("Adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = gradient[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

double reinforce_update(PolicyParameters& params, AdamOptimizer& optimizer, const EmbeddingTable& emb,
                        std::span<const Episode> batch, const TrainConfig& config) {
    std::vector<double> grad;
    const double loss = reinforce_loss(params, emb, batch, config, &grad);
    optimizer.step(params.values, grad);
    return loss;
}

std::vector<EntityId> trainable_users(const KnowledgeGraph& kg) {
    std::vector<EntityId> out;
    for (auto u : kg.entities_of(EntityKind::User))
        if (!kg.neighbors(u).empty()) out.push_back(u);
    return out;
}

TrainResult train_agent(const KnowledgeGraph& kg, const EmbeddingTable& emb, const IntuitionMap& intuitions,
                        const MdpConfig& mdp, const RewardConfig& reward, const TrainConfig& config,
                        const TrainLogger& log) {
    mdp.validate();
    reward.validate();
    config.validate();
    const auto users = trainable_users(kg);
    if (users.empty()) throw Error("no users to train on");

    TrainResult result;
    result.params = PolicyParameters::initialize(emb.dim(), config.hidden1, config.hidden2, config.seed);
    AdamOptimizer adam(result.params.values.size(), config.learning_rate);
    const IntuitionSet empty;
    const auto seed_lo = static_cast<std::uint32_t>(config.seed);
    const auto seed_hi = static_cast<std::uint32_t>(config.seed >> 32);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::seed_seq order_seq{seed_lo, seed_hi, static_cast<std::uint32_t>(epoch), 0x5eedu};
        Rng order_rng(order_seq);
        auto order = users;
        std::shuffle(order.begin(), order.end(), order_rng);

        double return_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const auto n = std::min(config.batch_size, order.size() - start);
            std::vector<Episode> batch(n);
            const Policy policy(result.params, emb);
            parallel_for(n, config.threads, [&](std::size_t i) {
                const auto user = order[start + i];
                std::seed_seq seq{seed_lo, seed_hi, static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(user)};
                Rng rng(seq);
                auto it = intuitions.find(user);
                batch[i] = rollout(kg, policy, emb, user, mdp, reward, it == intuitions.end() ? empty : it->second,
                                   rng, true);
            });
            for (const auto& ep : batch) return_sum += discounted_returns(ep.rewards, config.gamma).front();
            reinforce_update(result.params, adam, emb, batch, config);
        }
        const double mean_return = return_sum / static_cast<double>(order.size());
        result.epoch_mean_return.push_back(mean_return);
        if (log) log(epoch, mean_return);
    }
    return result;
}

void save_policy(const PolicyParameters& params, const TrainConfig& config, const std::filesystem::path& bin_path,
                 const std::filesystem::path& sidecar_path) {
    {
        std::ofstream out(bin_path, std::ios::binary);
        if (!out) throw Error("cannot write " + bin_path.string());
        detail::write_magic(out, kPolicyMagic);
        detail::write_le<std::uint32_t>(out, kPolicyVersion);
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.dim));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.hidden1));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.hidden2));
        detail::write_le<std::uint64_t>(out, params.values.size());
        for (double x : params.values) detail::write_le<double>(out, x);
    }
    nlohmann::json side = {{"gamma", config.gamma},
                           {"learning_rate", config.learning_rate},
                           {"batch_size", config.batch_size},
                           {"epochs", config.epochs},
                           {"baseline", config.baseline == Baseline::None ? "none" : "batch_mean"},
                           {"hidden1", config.hidden1},
                           {"hidden2", config.hidden2},
                           {"seed", config.seed},
                           {"optimizer", "adam"}};
    std::ofstream out(sidecar_path, std::ios::binary);
    if (!out) throw Error("cannot write " + sidecar_path.string());
    out << side.dump(2) << '\n';
}

PolicyParameters load_policy(const std::filesystem::path& bin_path) {
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw Error("cannot open " + bin_path.string());
    const auto what = "policy checkpoint " + bin_path.string();
    detail::expect_magic(in, kPolicyMagic, what);
    if (auto v = detail::read_le<std::uint32_t>(in, what); v != kPolicyVersion)
        throw Error(what + ": unsupported version " + std::to_string(v));
    PolicyParameters p;
    p.dim = detail::read_le<std::uint32_t>(in, what);
    p.hidden1 = detail::read_le<std::uint32_t>(in, what);
    p.hidden2 = detail::read_le<std::uint32_t>(in, what);
    const auto count = detail::read_le<std::uint64_t>(in, what);
    if (count != p.layout().total) throw Error(what + ": parameter count does not match the header");
    p.values.resize(count);
    for (auto& x : p.values) x = detail::read_le<double>(in, what);
    return p;
}

}  // namespace likr
