#pragma once

#include <optional>
#include <vector>

#include "qmixlab/env.hpp"
#include "qmixlab/qmix.hpp"

namespace qmixlab {

enum class AttackKind { None, Fgsm, Atla, Paad };

inline const char* attack_name(AttackKind k) {
    switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Atla: return "atla";
    case AttackKind::Paad: return "paad";
    }
    return "?";
}

inline AttackKind attack_from_name(const std::string& s) {
    if (s == "none") return AttackKind::None;
    if (s == "fgsm") return AttackKind::Fgsm;
    if (s == "atla") return AttackKind::Atla;
    if (s == "paad") return AttackKind::Paad;
    throw Error("unknown attack kind '" + s + "'");
}

struct PerturbSpec {
    double epsilon = 0.0;
    std::vector<uint8_t> attacked;  // per-agent mask
    std::vector<double> clip_lo, clip_hi;
    const TabularSaSG* candidates = nullptr;  // finite B^i(s), tabular games only

    static PerturbSpec attack_all(const SaDecPomdpSpec& spec, double epsilon) {
        if (epsilon < 0.0) throw Error("perturb: epsilon must be nonnegative");
        PerturbSpec p;
        p.epsilon = epsilon;
        p.attacked.assign(static_cast<size_t>(spec.n_agents), 1);
        p.clip_lo = spec.obs_lower;
        p.clip_hi = spec.obs_upper;
        return p;
    }

    bool is_attacked(int agent) const { return attacked[static_cast<size_t>(agent)] != 0; }
    int n_attacked() const {
        int m = 0;
        for (uint8_t a : attacked) m += a;
        return m;
    }

    Tensor clamp(const Tensor& o) const {
        Tensor r = o;
        for (long d = 0; d < r.size(); ++d)
            r.data[static_cast<size_t>(d)] =
                std::clamp(r.data[static_cast<size_t>(d)], clip_lo[static_cast<size_t>(d)],
                           clip_hi[static_cast<size_t>(d)]);
        return r;
    }
};

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

namespace detail {

// Gradient of the cross-entropy objective w.r.t. the observation of one agent,
// through its recurrent Q-network at the current hidden state.
// target_hat < 0: untargeted, L = CE(q, u). Otherwise L = CE(q, target_hat) - CE(q, u).
inline Tensor obs_objective_grad(const QmixNets& victim, int agent, const Tensor& obs,
                                 const Tensor& h, int target_hat) {
    auto [q_clean, h_unused] = victim.agent_q(agent, obs, h);
    int u = ad::argmax(q_clean);

    const QmixConfig& cfg = victim.config();
    ad::Graph g;
    AgentLeaves al = QmixNets::agent_leaves(g, victim.agent_prefix(agent), victim.in_dim(),
                                            cfg.hidden, cfg.n_actions);
    int o = g.leaf("obs_adv", {cfg.obs_dim});
    int x = o;
    if (cfg.share_params)
        x = g.concat(o, g.constant(Tensor::onehot(cfg.n_agents, agent)));
    auto [qn, hn] = QmixNets::agent_fragment(g, al, x, g.constant(h));
    int loss;
    if (target_hat < 0) {
        loss = g.softmax_xent(qn, u);
    } else {
        loss = g.sub(g.softmax_xent(qn, target_hat), g.softmax_xent(qn, u));
    }
    g.set_output(loss);

    ad::Bindings b;
    bind_params(b, victim.params());
    b["obs_adv"] = obs;
    return ad::grad(g, b, {"obs_adv"}).at("obs_adv");
}

}  // namespace detail

// One-step l-inf attack pushing the victim away from its clean argmax action:
// delta = eps * sign(grad CE(q(o~), argmax q(o))) at o~ = o, then clip.
inline Tensor fgsm_untargeted(const QmixNets& victim, int agent, const Tensor& obs,
                              const Tensor& h, const PerturbSpec& spec) {
    if (spec.epsilon < 0.0) throw Error("fgsm: epsilon must be nonnegative");
    if (spec.epsilon == 0.0) return obs;
    Tensor g = detail::obs_objective_grad(victim, agent, obs, h, -1);
    Tensor out = obs;
    for (long d = 0; d < obs.size(); ++d)
        out.data[static_cast<size_t>(d)] += spec.epsilon * sign0(g.data[static_cast<size_t>(d)]);
    return spec.clamp(out);
}

// Targeted variant: descend CE(q, a_hat) - CE(q, u), pushing probability mass
// toward the director's direction action and away from the clean argmax.
inline Tensor fgsm_targeted(const QmixNets& victim, int agent, const Tensor& obs, const Tensor& h,
                            int a_hat, const PerturbSpec& spec) {
    if (spec.epsilon < 0.0) throw Error("fgsm: epsilon must be nonnegative");
    if (a_hat < 0 || a_hat >= victim.config().n_actions)
        throw Error("fgsm_targeted: direction action out of range");
    if (spec.epsilon == 0.0) return obs;
    Tensor g = detail::obs_objective_grad(victim, agent, obs, h, a_hat);
    Tensor out = obs;
    for (long d = 0; d < obs.size(); ++d)
        out.data[static_cast<size_t>(d)] -= spec.epsilon * sign0(g.data[static_cast<size_t>(d)]);
    return spec.clamp(out);
}

// --- Learned adversary (alternating training) --------------------------------
//
// Gaussian policy over pre-squash values g; the realized perturbation is
// eps * tanh(g) per attacked agent, so every sample respects the budget.

struct AdvConfig {
    int n_agents = 2;
    int obs_dim = 6;
    int hidden = 32;
    std::vector<uint8_t> attacked;
    double epsilon = 0.2;
};

struct AdvAction {
    Tensor presquash;  // g, one block per attacked agent
    double logp = 0.0;
};

class AdvPolicy {
public:
    AdvPolicy() = default;
    AdvPolicy(AdvConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        if (cfg_.attacked.empty()) cfg_.attacked.assign(static_cast<size_t>(cfg_.n_agents), 1);
        int D = joint_dim();
        int K = out_dim();
        params_["pol/W1"] = detail::uniform_init({cfg_.hidden, D}, D, rng);
        params_["pol/b1"] = detail::uniform_init({cfg_.hidden}, D, rng);
        params_["pol/W2"] = detail::uniform_init({K, cfg_.hidden}, cfg_.hidden, rng);
        params_["pol/b2"] = detail::uniform_init({K}, cfg_.hidden, rng);
        params_["pol/log_std"] = Tensor(ad::Shape{K}, std::vector<double>(static_cast<size_t>(K), -0.5));
        params_["val/W1"] = detail::uniform_init({cfg_.hidden, D}, D, rng);
        params_["val/b1"] = detail::uniform_init({cfg_.hidden}, D, rng);
        params_["val/W2"] = detail::uniform_init({1, cfg_.hidden}, cfg_.hidden, rng);
        params_["val/b2"] = detail::uniform_init({1}, cfg_.hidden, rng);
    }

    const AdvConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    int joint_dim() const { return cfg_.n_agents * cfg_.obs_dim; }
    int out_dim() const {
        int m = 0;
        for (uint8_t a : cfg_.attacked) m += a;
        return m * cfg_.obs_dim;
    }

    Tensor flatten(const JointObs& obs) const {
        Tensor x = Tensor::zeros({joint_dim()});
        for (int i = 0; i < cfg_.n_agents; ++i)
            std::copy(obs[static_cast<size_t>(i)].data.begin(), obs[static_cast<size_t>(i)].data.end(),
                      x.data.begin() + static_cast<long>(i) * cfg_.obs_dim);
        return x;
    }

    Tensor mean(const JointObs& obs) const {
        ad::Graph g;
        int W1 = g.leaf("pol/W1", {cfg_.hidden, joint_dim()}, ad::LeafKind::Param);
        int b1 = g.leaf("pol/b1", {cfg_.hidden}, ad::LeafKind::Param);
        int W2 = g.leaf("pol/W2", {out_dim(), cfg_.hidden}, ad::LeafKind::Param);
        int b2 = g.leaf("pol/b2", {out_dim()}, ad::LeafKind::Param);
        int x = g.constant(flatten(obs));
        g.set_output(g.add(g.matmul(W2, g.tanh_(g.add(g.matmul(W1, x), b1))), b2));
        ad::Bindings b;
        bind_params(b, params_);
        return ad::forward(g, b);
    }

    double value(const JointObs& obs) const {
        ad::Graph g;
        int W1 = g.leaf("val/W1", {cfg_.hidden, joint_dim()}, ad::LeafKind::Param);
        int b1 = g.leaf("val/b1", {cfg_.hidden}, ad::LeafKind::Param);
        int W2 = g.leaf("val/W2", {1, cfg_.hidden}, ad::LeafKind::Param);
        int b2 = g.leaf("val/b2", {1}, ad::LeafKind::Param);
        int x = g.constant(flatten(obs));
        g.set_output(g.add(g.matmul(W2, g.tanh_(g.add(g.matmul(W1, x), b1))), b2));
        ad::Bindings b;
        bind_params(b, params_);
        return ad::forward(g, b).data[0];
    }

    AdvAction sample(const JointObs& obs, Rng& rng, bool deterministic) const {
        Tensor mu = mean(obs);
        const Tensor& ls = params_.at("pol/log_std");
        AdvAction act;
        act.presquash = mu;
        if (!deterministic)
            for (long d = 0; d < mu.size(); ++d)
                act.presquash.data[static_cast<size_t>(d)] +=
                    std::exp(ls.data[static_cast<size_t>(d)]) * rng.normal();
        act.logp = logp_gaussian(mu, ls, act.presquash);
        return act;
    }

    static double logp_gaussian(const Tensor& mu, const Tensor& log_std, const Tensor& g) {
        double lp = 0.0;
        for (long d = 0; d < mu.size(); ++d) {
            double ls = log_std.data[static_cast<size_t>(d)];
            double z = (g.data[static_cast<size_t>(d)] - mu.data[static_cast<size_t>(d)]) * std::exp(-ls);
            lp += -0.5 * z * z - ls - 0.5 * std::log(2.0 * M_PI);
        }
        return lp;
    }

    // perturbed joint observation from a pre-squash sample
    JointObs perturb(const JointObs& obs, const Tensor& presquash, const PerturbSpec& spec) const {
        JointObs out = obs;
        int block = 0;
        for (int i = 0; i < cfg_.n_agents; ++i) {
            if (!cfg_.attacked[static_cast<size_t>(i)]) continue;
            Tensor& o = out[static_cast<size_t>(i)];
            for (int d = 0; d < cfg_.obs_dim; ++d)
                o.data[static_cast<size_t>(d)] +=
                    cfg_.epsilon *
                    std::tanh(presquash.data[static_cast<size_t>(block * cfg_.obs_dim + d)]);
            o = spec.clamp(o);
            ++block;
        }
        return out;
    }

private:
    AdvConfig cfg_;
    ParamSet params_;
};

// Alg. 1 line 2: adversary samples perturbing observations for the attacked
// agents; everyone else sees the clean observation.
inline JointObs atla_adversary_act(const AdvPolicy& adv, const JointObs& obs, Rng& rng,
                                   const PerturbSpec& spec, bool deterministic = false,
                                   AdvAction* out_action = nullptr) {
    AdvAction a = adv.sample(obs, rng, deterministic);
    if (out_action) *out_action = a;
    return adv.perturb(obs, a.presquash, spec);
}

struct AdvEpisode {
    std::vector<JointObs> obs;        // clean observations seen by the adversary
    std::vector<Tensor> presquash;    // sampled g per step
    std::vector<double> logp;         // log-probabilities at sampling time
    std::vector<double> rewards;      // negated victim team rewards
};

// One epoch of clipped-surrogate policy gradient on negated victim reward.
// Returns the surrogate+value loss before the update.
inline double atla_adversary_update(AdvPolicy& adv, const std::vector<AdvEpisode>& rollouts,
                                    RmsProp& opt, double clip_ratio, double gamma,
                                    double grad_clip = 10.0) {
    long steps = 0;
    for (const auto& ep : rollouts) steps += static_cast<long>(ep.presquash.size());
    if (steps == 0) throw Error("atla_update: empty rollouts");

    const AdvConfig& cfg = adv.config();
    int D = adv.joint_dim(), K = adv.out_dim(), H = cfg.hidden;
    ad::Graph g;
    int pW1 = g.leaf("pol/W1", {H, D}, ad::LeafKind::Param);
    int pb1 = g.leaf("pol/b1", {H}, ad::LeafKind::Param);
    int pW2 = g.leaf("pol/W2", {K, H}, ad::LeafKind::Param);
    int pb2 = g.leaf("pol/b2", {K}, ad::LeafKind::Param);
    int pls = g.leaf("pol/log_std", {K}, ad::LeafKind::Param);
    int vW1 = g.leaf("val/W1", {H, D}, ad::LeafKind::Param);
    int vb1 = g.leaf("val/b1", {H}, ad::LeafKind::Param);
    int vW2 = g.leaf("val/W2", {1, H}, ad::LeafKind::Param);
    int vb2 = g.leaf("val/b2", {1}, ad::LeafKind::Param);

    int total = -1;
    for (const auto& ep : rollouts) {
        int T = static_cast<int>(ep.presquash.size());
        std::vector<double> ret(static_cast<size_t>(T), 0.0);
        double acc = 0.0;
        for (int t = T - 1; t >= 0; --t) {
            acc = ep.rewards[static_cast<size_t>(t)] + gamma * acc;
            ret[static_cast<size_t>(t)] = acc;
        }
        for (int t = 0; t < T; ++t) {
            int x = g.constant(adv.flatten(ep.obs[static_cast<size_t>(t)]));
            int mu = g.add(g.matmul(pW2, g.tanh_(g.add(g.matmul(pW1, x), pb1))), pb2);
            int d = g.sub(g.constant(ep.presquash[static_cast<size_t>(t)]), mu);
            int inv_var = g.exp_(g.scale(pls, -2.0));
            int quad = g.scale(g.sum(g.mul(g.mul(d, d), inv_var)), -0.5);
            int logp = g.add(g.add(quad, g.scale(g.sum(pls), -1.0)),
                             g.constant(Tensor::scalar(-0.5 * K * std::log(2.0 * M_PI))));
            int ratio = g.exp_(g.sub(logp, g.constant(Tensor::scalar(ep.logp[static_cast<size_t>(t)]))));

            double A = ret[static_cast<size_t>(t)] - adv.value(ep.obs[static_cast<size_t>(t)]);
            int adv_c = g.constant(Tensor::scalar(A));
            int clipped = g.minimum(g.maximum(ratio, g.constant(Tensor::scalar(1.0 - clip_ratio))),
                                    g.constant(Tensor::scalar(1.0 + clip_ratio)));
            int surr = g.minimum(g.mul(ratio, adv_c), g.mul(clipped, adv_c));

            int v = g.add(g.matmul(vW2, g.tanh_(g.add(g.matmul(vW1, x), vb1))), vb2);
            int verr = g.sub(v, g.constant(Tensor::scalar(ret[static_cast<size_t>(t)])));
            int step_loss = g.add(g.scale(surr, -1.0), g.scale(g.mul(verr, verr), 0.5));
            total = (total < 0) ? step_loss : g.add(total, step_loss);
        }
    }
    g.set_output(g.scale(total, 1.0 / static_cast<double>(steps)));

    ad::Bindings b;
    bind_params(b, adv.params());
    auto [loss, grads] = ad::value_and_grad(g, b, param_names(adv.params()));
    clip_global_norm(grads, grad_clip);
    opt.step(adv.params(), grads);
    return loss;
}

// --- PA-AD director -----------------------------------------------------------

// Alg. 2 line 2: epsilon-greedy direction per attacked agent from the
// director's own QMIX agent networks over the clean observations.
inline std::vector<int> paad_director_act(const QmixNets& director, const JointObs& obs,
                                          std::vector<Tensor>& hidden, double epsilon_explore,
                                          Rng& rng) {
    int n = director.config().n_agents;
    std::vector<int> directions(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        auto [q, h2] = director.agent_q(i, obs[static_cast<size_t>(i)], hidden[static_cast<size_t>(i)]);
        hidden[static_cast<size_t>(i)] = h2;
        directions[static_cast<size_t>(i)] = select_action(q, epsilon_explore, rng);
    }
    return directions;
}

// Nearest candidate in B^i(s) by squared distance, ties to the lowest index.
inline int project_to_candidates(const TabularSaSG& game, int agent, int state, const Tensor& o) {
    const auto& cands = game.B[static_cast<size_t>(agent)][static_cast<size_t>(state)];
    int best = 0;
    double best_d = 0.0;
    for (int c = 0; c < static_cast<int>(cands.size()); ++c) {
        double d = 0.0;
        for (long k = 0; k < o.size(); ++k) {
            double diff = o.data[static_cast<size_t>(k)] - cands[static_cast<size_t>(c)].data[static_cast<size_t>(k)];
            d += diff * diff;
        }
        if (c == 0 || d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

// Uniform dispatch for training rollouts and the cross-attack matrix.
// Holds the director's recurrent state; call reset_episode() at episode start.
class Attacker {
public:
    AttackKind kind = AttackKind::None;
    PerturbSpec spec;
    std::optional<AdvPolicy> adversary;   // atla
    std::optional<QmixNets> director;     // paad
    double director_epsilon = 0.0;        // exploration during director training

    void reset_episode() {
        if (director)
            director_h_.assign(static_cast<size_t>(director->config().n_agents),
                               director->zero_hidden());
    }

    // victim_h: victim hidden states entering this step (used by gradient attacks)
    JointObs perturb(const QmixNets& victim, const JointObs& obs,
                     const std::vector<Tensor>& victim_h, Rng& rng, bool deterministic,
                     int tab_state = -1, std::vector<int>* out_directions = nullptr,
                     AdvAction* out_adv_action = nullptr) {
        JointObs out = obs;
        switch (kind) {
        case AttackKind::None:
            return out;
        case AttackKind::Fgsm:
            for (int i = 0; i < static_cast<int>(obs.size()); ++i)
                if (spec.is_attacked(i))
                    out[static_cast<size_t>(i)] =
                        fgsm_untargeted(victim, i, obs[static_cast<size_t>(i)],
                                        victim_h[static_cast<size_t>(i)], spec);
            break;
        case AttackKind::Atla: {
            if (!adversary) throw Error("attack: atla requires an adversary checkpoint");
            JointObs perturbed =
                atla_adversary_act(*adversary, obs, rng, spec, deterministic, out_adv_action);
            for (int i = 0; i < static_cast<int>(obs.size()); ++i)
                if (spec.is_attacked(i)) out[static_cast<size_t>(i)] = perturbed[static_cast<size_t>(i)];
            break;
        }
        case AttackKind::Paad: {
            if (!director) throw Error("attack: paad requires a director checkpoint");
            if (director_h_.empty()) reset_episode();
            std::vector<int> dirs = paad_director_act(*director, obs, director_h_,
                                                      deterministic ? 0.0 : director_epsilon, rng);
            if (out_directions) *out_directions = dirs;
            for (int i = 0; i < static_cast<int>(obs.size()); ++i)
                if (spec.is_attacked(i))
                    out[static_cast<size_t>(i)] =
                        fgsm_targeted(victim, i, obs[static_cast<size_t>(i)],
                                      victim_h[static_cast<size_t>(i)], dirs[static_cast<size_t>(i)],
                                      spec);
            break;
        }
        }
        if (spec.candidates && tab_state >= 0)
            for (int i = 0; i < static_cast<int>(obs.size()); ++i)
                if (spec.is_attacked(i)) {
                    int c = project_to_candidates(*spec.candidates, i, tab_state,
                                                  out[static_cast<size_t>(i)]);
                    out[static_cast<size_t>(i)] =
                        spec.candidates->B[static_cast<size_t>(i)][static_cast<size_t>(tab_state)]
                                          [static_cast<size_t>(c)];
                }
        return out;
    }

private:
    std::vector<Tensor> director_h_;
};

}  // namespace qmixlab
