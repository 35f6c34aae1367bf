#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include "qmixlab/env.hpp"
#include "qmixlab/graph.hpp"
#include "qmixlab/rng.hpp"

namespace qmixlab {

using ParamSet = std::map<std::string, Tensor>;

inline void bind_params(ad::Bindings& b, const ParamSet& p) {
    for (const auto& [name, t] : p) b[name] = t;
}

inline std::vector<std::string> param_names(const ParamSet& p) {
    std::vector<std::string> names;
    names.reserve(p.size());
    for (const auto& [name, t] : p) names.push_back(name);
    return names;
}

struct QmixConfig {
    int n_agents = 2;
    int obs_dim = 6;
    int n_actions = 5;
    int state_dim = 6;
    int hidden = 32;
    int mix_hidden = 16;
    bool share_params = true;
};

namespace detail {

inline Tensor uniform_init(ad::Shape shape, int fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace detail

struct AgentLeaves {
    int W_in, b_in;
    ad::GruLeaves gru;
    int W_out, b_out;
};

// Per-agent recurrent Q-network: obs -> tanh MLP -> GRU -> linear head.
class QmixNets {
public:
    QmixNets() = default;
    QmixNets(QmixConfig cfg, Rng& rng) : cfg_(cfg) {
        for (int i = 0; i < agent_sets(); ++i) {
            const std::string p = agent_prefix(i);
            params_[p + "/W_in"] = detail::uniform_init({cfg_.hidden, in_dim()}, in_dim(), rng);
            params_[p + "/b_in"] = detail::uniform_init({cfg_.hidden}, in_dim(), rng);
            for (const char* gate : {"Wz", "Wr", "Wh"})
                params_[p + "/gru/" + gate] =
                    detail::uniform_init({cfg_.hidden, cfg_.hidden}, cfg_.hidden, rng);
            for (const char* gate : {"Uz", "Ur", "Uh"})
                params_[p + "/gru/" + gate] =
                    detail::uniform_init({cfg_.hidden, cfg_.hidden}, cfg_.hidden, rng);
            for (const char* gate : {"bz", "br", "bh"})
                params_[p + "/gru/" + gate] = detail::uniform_init({cfg_.hidden}, cfg_.hidden, rng);
            params_[p + "/W_out"] =
                detail::uniform_init({cfg_.n_actions, cfg_.hidden}, cfg_.hidden, rng);
            params_[p + "/b_out"] = detail::uniform_init({cfg_.n_actions}, cfg_.hidden, rng);
        }
        params_["mixer/hw1_W"] = detail::uniform_init({cfg_.n_agents * cfg_.mix_hidden, cfg_.state_dim},
                                                      cfg_.state_dim, rng);
        params_["mixer/hw1_b"] =
            detail::uniform_init({cfg_.n_agents * cfg_.mix_hidden}, cfg_.state_dim, rng);
        params_["mixer/hb1_W"] =
            detail::uniform_init({cfg_.mix_hidden, cfg_.state_dim}, cfg_.state_dim, rng);
        params_["mixer/hb1_b"] = detail::uniform_init({cfg_.mix_hidden}, cfg_.state_dim, rng);
        params_["mixer/hw2_W"] =
            detail::uniform_init({cfg_.mix_hidden, cfg_.state_dim}, cfg_.state_dim, rng);
        params_["mixer/hw2_b"] = detail::uniform_init({cfg_.mix_hidden}, cfg_.state_dim, rng);
        params_["mixer/hb2_W1"] =
            detail::uniform_init({cfg_.mix_hidden, cfg_.state_dim}, cfg_.state_dim, rng);
        params_["mixer/hb2_b1"] = detail::uniform_init({cfg_.mix_hidden}, cfg_.state_dim, rng);
        params_["mixer/hb2_W2"] =
            detail::uniform_init({1, cfg_.mix_hidden}, cfg_.mix_hidden, rng);
        params_["mixer/hb2_b2"] = detail::uniform_init({1}, cfg_.mix_hidden, rng);
    }

    const QmixConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    int in_dim() const { return cfg_.obs_dim + (cfg_.share_params ? cfg_.n_agents : 0); }
    int agent_sets() const { return cfg_.share_params ? 1 : cfg_.n_agents; }
    std::string agent_prefix(int agent) const {
        return cfg_.share_params ? "agent" : "agent" + std::to_string(agent);
    }

    // obs + one-hot agent id (shared-parameter mode only)
    Tensor agent_input(int agent, const Tensor& obs) const {
        if (static_cast<int>(obs.size()) != cfg_.obs_dim)
            throw Error("agent_q: observation has dimension " + std::to_string(obs.size()) +
                        ", expected " + std::to_string(cfg_.obs_dim));
        if (!cfg_.share_params) return obs;
        Tensor x = Tensor::zeros({in_dim()});
        std::copy(obs.data.begin(), obs.data.end(), x.data.begin());
        x.data[static_cast<size_t>(cfg_.obs_dim + agent)] = 1.0;
        return x;
    }

    static AgentLeaves agent_leaves(ad::Graph& g, const std::string& prefix, int in_dim,
                                    int hidden, int n_actions) {
        AgentLeaves l;
        l.W_in = g.leaf(prefix + "/W_in", {hidden, in_dim}, ad::LeafKind::Param);
        l.b_in = g.leaf(prefix + "/b_in", {hidden}, ad::LeafKind::Param);
        l.gru = ad::gru_leaves(g, prefix + "/gru", hidden, hidden);
        l.W_out = g.leaf(prefix + "/W_out", {n_actions, hidden}, ad::LeafKind::Param);
        l.b_out = g.leaf(prefix + "/b_out", {n_actions}, ad::LeafKind::Param);
        return l;
    }

    // (q node, next-hidden node)
    static std::pair<int, int> agent_fragment(ad::Graph& g, const AgentLeaves& l, int x, int h) {
        int z = g.tanh_(g.add(g.matmul(l.W_in, x), l.b_in));
        int h2 = ad::gru_cell(g, l.gru, z, h);
        int q = g.add(g.matmul(l.W_out, h2), l.b_out);
        return {q, h2};
    }

    struct MixerLeaves {
        int hw1_W, hw1_b, hb1_W, hb1_b, hw2_W, hw2_b, hb2_W1, hb2_b1, hb2_W2, hb2_b2;
    };

    static MixerLeaves mixer_leaves(ad::Graph& g, int n_agents, int mix_hidden, int state_dim) {
        MixerLeaves l;
        l.hw1_W = g.leaf("mixer/hw1_W", {n_agents * mix_hidden, state_dim}, ad::LeafKind::Param);
        l.hw1_b = g.leaf("mixer/hw1_b", {n_agents * mix_hidden}, ad::LeafKind::Param);
        l.hb1_W = g.leaf("mixer/hb1_W", {mix_hidden, state_dim}, ad::LeafKind::Param);
        l.hb1_b = g.leaf("mixer/hb1_b", {mix_hidden}, ad::LeafKind::Param);
        l.hw2_W = g.leaf("mixer/hw2_W", {mix_hidden, state_dim}, ad::LeafKind::Param);
        l.hw2_b = g.leaf("mixer/hw2_b", {mix_hidden}, ad::LeafKind::Param);
        l.hb2_W1 = g.leaf("mixer/hb2_W1", {mix_hidden, state_dim}, ad::LeafKind::Param);
        l.hb2_b1 = g.leaf("mixer/hb2_b1", {mix_hidden}, ad::LeafKind::Param);
        l.hb2_W2 = g.leaf("mixer/hb2_W2", {1, mix_hidden}, ad::LeafKind::Param);
        l.hb2_b2 = g.leaf("mixer/hb2_b2", {1}, ad::LeafKind::Param);
        return l;
    }

    // Q_tot = |w2(s)|^T elu(|W1(s)| q + b1(s)) + b2(s); abs keeps the mixing
    // weights nonnegative, hence Q_tot monotone in every agent q.
    static int mixer_fragment(ad::Graph& g, const MixerLeaves& l, int qvec, int state,
                              int n_agents, int mix_hidden) {
        int w1 = g.reshape(g.abs_(g.add(g.matmul(l.hw1_W, state), l.hw1_b)),
                           {mix_hidden, n_agents});
        int b1 = g.add(g.matmul(l.hb1_W, state), l.hb1_b);
        int hidden = g.elu(g.add(g.matmul(w1, qvec), b1));
        int w2 = g.abs_(g.add(g.matmul(l.hw2_W, state), l.hw2_b));
        int b2 = g.add(g.matmul(l.hb2_W2, g.relu(g.add(g.matmul(l.hb2_W1, state), l.hb2_b1))),
                       l.hb2_b2);
        return g.add(g.dot(w2, hidden), b2);
    }

    // Single-step agent forward pass. Returns (q values, next hidden state).
    std::pair<Tensor, Tensor> agent_q(int agent, const Tensor& obs, const Tensor& h) const {
        ensure_graphs();
        ad::Bindings b;
        bind_params(b, params_);
        b["obs_in"] = agent_input(agent, obs);
        b["hid"] = h;
        const ad::Graph& g = agent_graphs_[static_cast<size_t>(cfg_.share_params ? 0 : agent)];
        Tensor out = ad::forward(g, b);
        Tensor q = Tensor::zeros({cfg_.n_actions});
        Tensor h2 = Tensor::zeros({cfg_.hidden});
        std::copy(out.data.begin(), out.data.begin() + cfg_.n_actions, q.data.begin());
        std::copy(out.data.begin() + cfg_.n_actions, out.data.end(), h2.data.begin());
        return {q, h2};
    }

    Tensor zero_hidden() const { return Tensor::zeros({cfg_.hidden}); }

    double mix(const Tensor& agent_qs, const Tensor& state) const {
        if (static_cast<int>(agent_qs.size()) != cfg_.n_agents)
            throw Error("mix: expected one q per agent");
        ensure_graphs();
        ad::Bindings b;
        bind_params(b, params_);
        b["qvec"] = agent_qs;
        b["state_in"] = state;
        return ad::forward(mixer_graph_, b).data[0];
    }

private:
    void ensure_graphs() const {
        if (!agent_graphs_.empty()) return;
        for (int i = 0; i < agent_sets(); ++i) {
            ad::Graph g;
            AgentLeaves l = agent_leaves(g, agent_prefix(i), in_dim(), cfg_.hidden, cfg_.n_actions);
            int x = g.leaf("obs_in", {in_dim()});
            int h = g.leaf("hid", {cfg_.hidden});
            auto [q, h2] = agent_fragment(g, l, x, h);
            g.set_output(g.concat(q, h2));
            agent_graphs_.push_back(std::move(g));
        }
        ad::Graph m;
        MixerLeaves ml = mixer_leaves(m, cfg_.n_agents, cfg_.mix_hidden, cfg_.state_dim);
        int qv = m.leaf("qvec", {cfg_.n_agents});
        int st = m.leaf("state_in", {cfg_.state_dim});
        m.set_output(mixer_fragment(m, ml, qv, st, cfg_.n_agents, cfg_.mix_hidden));
        mixer_graph_ = std::move(m);
    }

    QmixConfig cfg_;
    ParamSet params_;
    mutable std::vector<ad::Graph> agent_graphs_;
    mutable ad::Graph mixer_graph_;
};

// epsilon-greedy over available actions; argmax ties break to the lowest index
inline int select_action(const Tensor& q, double epsilon, Rng& rng,
                         const std::vector<uint8_t>* avail = nullptr) {
    int n = static_cast<int>(q.size());
    std::vector<int> candidates;
    for (int a = 0; a < n; ++a)
        if (!avail || (*avail)[static_cast<size_t>(a)]) candidates.push_back(a);
    if (candidates.empty()) throw Error("select_action: empty availability mask");
    if (epsilon > 0.0 && rng.uniform() < epsilon)
        return candidates[static_cast<size_t>(rng.uniform_int(static_cast<int>(candidates.size())))];
    int best = candidates[0];
    for (int a : candidates)
        if (q.at(a) > q.at(best)) best = a;
    return best;
}

inline std::vector<int> select_actions(const std::vector<Tensor>& qs, double epsilon, Rng& rng) {
    std::vector<int> actions;
    actions.reserve(qs.size());
    for (const Tensor& q : qs) actions.push_back(select_action(q, epsilon, rng));
    return actions;
}

// --- Episode storage --------------------------------------------------------

struct Episode {
    std::vector<Tensor> states;      // length T+1
    std::vector<JointObs> obs;       // length T+1 (possibly perturbed)
    std::vector<std::vector<int>> actions;  // length T
    std::vector<double> rewards;     // length T
    std::vector<uint8_t> done;       // length T
    bool win = false;

    int length() const { return static_cast<int>(actions.size()); }
};

struct EpisodeBatch {
    std::vector<Episode> episodes;

    int max_len() const {
        int m = 0;
        for (const auto& e : episodes) m = std::max(m, e.length());
        return m;
    }
    // validity mask for episodes padded to max_len
    std::vector<std::vector<uint8_t>> mask() const {
        std::vector<std::vector<uint8_t>> m;
        for (const auto& e : episodes) {
            std::vector<uint8_t> row(static_cast<size_t>(max_len()), 0);
            for (int t = 0; t < e.length(); ++t) row[static_cast<size_t>(t)] = 1;
            m.push_back(std::move(row));
        }
        return m;
    }
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(int capacity) : capacity_(capacity) {}

    void add(Episode ep) {
        if (static_cast<int>(episodes_.size()) == capacity_) episodes_.pop_front();
        episodes_.push_back(std::move(ep));
    }
    int size() const { return static_cast<int>(episodes_.size()); }

    EpisodeBatch sample(int batch_size, Rng& rng) const {
        if (episodes_.empty()) throw Error("replay: buffer empty");
        EpisodeBatch batch;
        for (int i = 0; i < batch_size; ++i)
            batch.episodes.push_back(episodes_[static_cast<size_t>(rng.uniform_int(size()))]);
        return batch;
    }

private:
    int capacity_;
    std::deque<Episode> episodes_;
};

// --- Optimization ------------------------------------------------------------

inline double global_norm(const std::map<std::string, Tensor>& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (double v : g.data) sq += v * v;
    return std::sqrt(sq);
}

inline void clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm) {
    double norm = global_norm(grads);
    if (norm <= max_norm || norm == 0.0) return;
    double scale = max_norm / norm;
    for (auto& [name, g] : grads)
        for (double& v : g.data) v *= scale;
}

class RmsProp {
public:
    explicit RmsProp(double lr, double alpha = 0.99, double eps = 1e-5)
        : lr_(lr), alpha_(alpha), eps_(eps) {}

    void step(ParamSet& params, const std::map<std::string, Tensor>& grads) {
        for (auto& [name, p] : params) {
            auto it = grads.find(name);
            if (it == grads.end()) continue;
            const Tensor& g = it->second;
            Tensor& acc = sq_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
            for (long i = 0; i < p.size(); ++i) {
                double gi = g.data[static_cast<size_t>(i)];
                double& a = acc.data[static_cast<size_t>(i)];
                a = alpha_ * a + (1.0 - alpha_) * gi * gi;
                p.data[static_cast<size_t>(i)] -= lr_ * gi / (std::sqrt(a) + eps_);
            }
        }
    }
    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_, alpha_, eps_;
    std::map<std::string, Tensor> sq_;
};

// --- TD training -------------------------------------------------------------

inline ParamSet sync_targets(const QmixNets& nets) { return nets.params(); }

namespace detail {

// Bootstrap Q_tot over an episode: the live network picks each agent's greedy
// action (double estimator), the frozen copy evaluates it; both hidden chains
// roll from zero over the stored observations.
inline std::vector<double> target_qtot(const QmixNets& arch, const ParamSet& target_params,
                                       const Episode& ep) {
    QmixNets tgt = arch;  // copies config and graph structure
    tgt.params() = target_params;
    int T = ep.length();
    int n = arch.config().n_agents;
    std::vector<Tensor> ho(static_cast<size_t>(n), arch.zero_hidden());
    std::vector<Tensor> ht(static_cast<size_t>(n), tgt.zero_hidden());
    std::vector<double> qtot(static_cast<size_t>(T + 1), 0.0);
    for (int t = 0; t <= T; ++t) {
        Tensor chosen = Tensor::zeros({n});
        for (int i = 0; i < n; ++i) {
            const Tensor& obs = ep.obs[static_cast<size_t>(t)][static_cast<size_t>(i)];
            auto [qo, ho2] = arch.agent_q(i, obs, ho[static_cast<size_t>(i)]);
            ho[static_cast<size_t>(i)] = ho2;
            int amax = 0;
            for (int a = 1; a < static_cast<int>(qo.size()); ++a)
                if (qo.at(a) > qo.at(amax)) amax = a;
            auto [qt, ht2] = tgt.agent_q(i, obs, ht[static_cast<size_t>(i)]);
            ht[static_cast<size_t>(i)] = ht2;
            chosen.at(i) = qt.at(amax);
        }
        qtot[static_cast<size_t>(t)] = tgt.mix(chosen, ep.states[static_cast<size_t>(t)]);
    }
    return qtot;
}

struct LossGraph {
    ad::Graph g;
    std::vector<AgentLeaves> agents;  // one per parameter set
    QmixNets::MixerLeaves mixer;
};

}  // namespace detail

// Builds the squared TD-error graph for a batch and returns (graph, loss node).
// Observations, states and targets enter as constants; parameters are leaves.
inline std::pair<int, detail::LossGraph> build_td_loss(const QmixNets& nets,
                                                       const ParamSet& target_params,
                                                       const EpisodeBatch& batch, double gamma) {
    const QmixConfig& cfg = nets.config();
    detail::LossGraph lg;
    ad::Graph& g = lg.g;
    for (int i = 0; i < nets.agent_sets(); ++i)
        lg.agents.push_back(QmixNets::agent_leaves(g, nets.agent_prefix(i), nets.in_dim(),
                                                   cfg.hidden, cfg.n_actions));
    lg.mixer = QmixNets::mixer_leaves(g, cfg.n_agents, cfg.mix_hidden, cfg.state_dim);

    int total = -1;
    long count = 0;
    for (const Episode& ep : batch.episodes) {
        std::vector<double> tgt = detail::target_qtot(nets, target_params, ep);
        std::vector<int> h(static_cast<size_t>(cfg.n_agents),
                           g.constant(Tensor::zeros({cfg.hidden})));
        for (int t = 0; t < ep.length(); ++t) {
            int qvec = -1;
            for (int i = 0; i < cfg.n_agents; ++i) {
                int x = g.constant(
                    nets.agent_input(i, ep.obs[static_cast<size_t>(t)][static_cast<size_t>(i)]));
                const AgentLeaves& al = lg.agents[static_cast<size_t>(cfg.share_params ? 0 : i)];
                auto [q, h2] = QmixNets::agent_fragment(g, al, x, h[static_cast<size_t>(i)]);
                h[static_cast<size_t>(i)] = h2;
                int chosen = g.dot(q, g.constant(Tensor::onehot(
                                          cfg.n_actions,
                                          ep.actions[static_cast<size_t>(t)][static_cast<size_t>(i)])));
                qvec = (qvec < 0) ? chosen : g.concat(qvec, chosen);
            }
            if (cfg.n_agents == 1) qvec = g.reshape(qvec, {1});
            int st = g.constant(ep.states[static_cast<size_t>(t)]);
            int qtot = QmixNets::mixer_fragment(g, lg.mixer, qvec, st, cfg.n_agents, cfg.mix_hidden);
            double bootstrap = ep.done[static_cast<size_t>(t)] ? 0.0 : tgt[static_cast<size_t>(t + 1)];
            double y = ep.rewards[static_cast<size_t>(t)] + gamma * bootstrap;
            int err = g.sub(g.constant(Tensor::scalar(y)), qtot);
            int sq = g.mul(err, err);
            total = (total < 0) ? sq : g.add(total, sq);
            ++count;
        }
    }
    if (total < 0) throw Error("td_update: batch has no transitions");
    int loss = g.scale(total, 1.0 / static_cast<double>(count));
    return {loss, std::move(lg)};
}

// One gradient step on the masked mean squared TD error. Returns the loss.
inline double td_update(QmixNets& nets, const ParamSet& target_params, const EpisodeBatch& batch,
                        double gamma, RmsProp& opt, double grad_clip = 10.0) {
    auto [loss_node, lg] = build_td_loss(nets, target_params, batch, gamma);
    lg.g.set_output(loss_node);
    ad::Bindings b;
    bind_params(b, nets.params());
    auto [loss, grads] = ad::value_and_grad(lg.g, b, param_names(nets.params()));
    clip_global_norm(grads, grad_clip);
    opt.step(nets.params(), grads);
    return loss;
}

}  // namespace qmixlab
