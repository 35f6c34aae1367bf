#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qmixlab/attacks.hpp"
#include "qmixlab/env.hpp"
#include "qmixlab/oracle.hpp"
#include "qmixlab/qmix.hpp"

namespace qmixlab {

enum class TrainMethod { Vanilla, Fgsm, Reg, Atla, Paad };

inline const char* method_name(TrainMethod m) {
    switch (m) {
    case TrainMethod::Vanilla: return "vanilla";
    case TrainMethod::Fgsm: return "fgsm";
    case TrainMethod::Reg: return "reg";
    case TrainMethod::Atla: return "atla";
    case TrainMethod::Paad: return "paad";
    }
    return "?";
}

inline TrainMethod method_from_name(const std::string& s) {
    if (s == "vanilla") return TrainMethod::Vanilla;
    if (s == "fgsm") return TrainMethod::Fgsm;
    if (s == "reg") return TrainMethod::Reg;
    if (s == "atla") return TrainMethod::Atla;
    if (s == "paad") return TrainMethod::Paad;
    throw Error("unknown training method '" + s + "'");
}

struct TrainConfig {
    TrainMethod method = TrainMethod::Vanilla;
    long total_env_steps = 50000;
    double epsilon = 0.2;
    double kappa = 0.1;  // regularizer weight in the second half of training
    double hinge_c = 10.0;
    long alternation_interval = 5000;
    std::uint64_t seed = 0;
    double lr = 5e-4;
    double adv_lr = 3e-4;
    double gamma = 0.99;
    int buffer_capacity = 500;
    int batch_size = 8;
    long eval_interval = 5000;
    int eval_episodes = 16;
    int hidden = 32;
    int mix_hidden = 16;
    int adv_hidden = 32;
    int target_period = 200;
    double grad_clip = 10.0;
    double clip_ratio = 0.2;
    double explore_fraction = 0.25;  // epsilon anneal window as fraction of steps
    double explore_final = 0.05;
    int adv_update_episodes = 4;  // rollout episodes per adversary policy epoch
    int updates_per_episode = 1;  // gradient steps after each collected episode
    std::string pretrained;       // reg method: path to the vanilla checkpoint
    // atla/paad only: never update the victim, training the adversary against a
    // frozen (pretrained) policy
    bool freeze_victim = false;

    void validate() const {
        if (freeze_victim && method != TrainMethod::Atla && method != TrainMethod::Paad)
            throw Error("config: freeze_victim requires an alternating method");
        if (hinge_c <= 0.0) throw Error("config: hinge_c must be positive");
        if (kappa < 0.0) throw Error("config: kappa must be nonnegative");
        if (alternation_interval <= 0) throw Error("config: alternation_interval must be positive");
        if (epsilon < 0.0) throw Error("config: epsilon must be nonnegative");
        if (total_env_steps < 0) throw Error("config: total_env_steps must be nonnegative");
        if (updates_per_episode < 1) throw Error("config: updates_per_episode must be positive");
    }
};

// kappa = 0 for the first half of training, cfg.kappa afterwards
inline double kappa_at(const TrainConfig& cfg, long step) {
    return step < cfg.total_env_steps / 2 ? 0.0 : cfg.kappa;
}

inline double explore_eps_at(const TrainConfig& cfg, long step) {
    double window = cfg.explore_fraction * static_cast<double>(cfg.total_env_steps);
    if (window <= 0.0) return cfg.explore_final;
    double frac = static_cast<double>(step) / window;
    if (frac >= 1.0) return cfg.explore_final;
    return 1.0 + (cfg.explore_final - 1.0) * frac;
}

struct LogRecord {
    long step = 0;
    double mean_return = 0.0;
    double win_rate = 0.0;
    double loss = 0.0;
    double kappa = 0.0;
    double tv_rate = 0.0;
};

struct RegBatchStats {
    double tv_disagreement_rate = 0.0;
    double reg_loss = 0.0;
};

enum class RegInnerMax { FgsmStep, ExactCorners };

namespace detail {

// one FGSM ascent step on the action-gap objective
// gap(o~) = max_{a != a*} Q(o~, a) - Q(o~, a*), with a* fixed from the stored obs
inline Tensor reg_perturb(const QmixNets& nets, int agent, const Tensor& obs, const Tensor& h,
                          int a_star, const PerturbSpec& spec) {
    const QmixConfig& cfg = nets.config();
    ad::Graph g;
    AgentLeaves al = QmixNets::agent_leaves(g, nets.agent_prefix(agent), nets.in_dim(), cfg.hidden,
                                            cfg.n_actions);
    int o = g.leaf("obs_adv", {cfg.obs_dim});
    int x = cfg.share_params ? g.concat(o, g.constant(Tensor::onehot(cfg.n_agents, agent))) : o;
    auto [q, hn] = QmixNets::agent_fragment(g, al, x, g.constant(h));
    int masked = g.add(q, g.constant(Tensor::onehot(cfg.n_actions, a_star, -1e9)));
    g.set_output(g.sub(g.max_reduce(masked), g.dot(q, g.constant(Tensor::onehot(cfg.n_actions, a_star)))));
    ad::Bindings b;
    bind_params(b, nets.params());
    b["obs_adv"] = obs;
    Tensor grad = ad::grad(g, b, {"obs_adv"}).at("obs_adv");
    Tensor out = obs;
    for (long d = 0; d < obs.size(); ++d)
        out.data[static_cast<size_t>(d)] += spec.epsilon * sign0(grad.data[static_cast<size_t>(d)]);
    return spec.clamp(out);
}

inline double gap_value(const QmixNets& nets, int agent, const Tensor& obs, const Tensor& h,
                        int a_star) {
    auto [q, hn] = nets.agent_q(agent, obs, h);
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < static_cast<int>(q.size()); ++a)
        if (a != a_star) best = std::max(best, q.at(a));
    return best - q.at(a_star);
}

// exhaustive corner search over {-eps, 0, +eps}^d, clipped; ties keep the
// first maximizer in odometer order
inline Tensor reg_perturb_corners(const QmixNets& nets, int agent, const Tensor& obs,
                                  const Tensor& h, int a_star, const PerturbSpec& spec) {
    int d = static_cast<int>(obs.size());
    if (d > 8) throw Error("reg corners: obs_dim too large for exhaustive search");
    std::vector<int> odo(static_cast<size_t>(d), 0);
    Tensor best = obs;
    double best_gap = -std::numeric_limits<double>::infinity();
    while (true) {
        Tensor cand = obs;
        for (int k = 0; k < d; ++k)
            cand.data[static_cast<size_t>(k)] += (odo[static_cast<size_t>(k)] - 1) * spec.epsilon;
        cand = spec.clamp(cand);
        double gap = gap_value(nets, agent, cand, h, a_star);
        if (gap > best_gap) {
            best_gap = gap;
            best = cand;
        }
        size_t k = 0;
        while (k < odo.size() && ++odo[k] == 3) odo[k++] = 0;
        if (k == odo.size()) break;
    }
    return best;
}

// regularizer working set: per (episode, step, agent) the perturbed obs, the
// clean-state best action, and the hidden state entering the step
struct RegPoint {
    int episode, t, agent;
    Tensor obs_tilde;
    Tensor hidden;
    int a_star;
};

inline std::vector<RegPoint> reg_points(const QmixNets& nets, const EpisodeBatch& batch,
                                        const PerturbSpec& spec, RegInnerMax mode) {
    const QmixConfig& cfg = nets.config();
    std::vector<RegPoint> pts;
    for (int e = 0; e < static_cast<int>(batch.episodes.size()); ++e) {
        const Episode& ep = batch.episodes[static_cast<size_t>(e)];
        std::vector<Tensor> h(static_cast<size_t>(cfg.n_agents), nets.zero_hidden());
        for (int t = 0; t < ep.length(); ++t) {
            for (int i = 0; i < cfg.n_agents; ++i) {
                const Tensor& o = ep.obs[static_cast<size_t>(t)][static_cast<size_t>(i)];
                auto [q, h2] = nets.agent_q(i, o, h[static_cast<size_t>(i)]);
                RegPoint p;
                p.episode = e;
                p.t = t;
                p.agent = i;
                p.hidden = h[static_cast<size_t>(i)];
                p.a_star = ad::argmax(q);
                p.obs_tilde = mode == RegInnerMax::ExactCorners
                                  ? reg_perturb_corners(nets, i, o, p.hidden, p.a_star, spec)
                                  : reg_perturb(nets, i, o, p.hidden, p.a_star, spec);
                pts.push_back(std::move(p));
                h[static_cast<size_t>(i)] = h2;
            }
        }
    }
    return pts;
}

}  // namespace detail

// Hinge regularizer over a batch: per agent, sum the perturbed action gaps over
// the batch observations, floor at -c, and sum over agents.
inline std::pair<double, RegBatchStats> compute_reg_loss(const QmixNets& nets,
                                                         const EpisodeBatch& batch,
                                                         const PerturbSpec& spec, double c,
                                                         RegInnerMax mode = RegInnerMax::FgsmStep) {
    if (c <= 0.0) throw Error("reg loss: c must be positive");
    const QmixConfig& cfg = nets.config();
    auto pts = detail::reg_points(nets, batch, spec, mode);
    std::vector<double> per_agent(static_cast<size_t>(cfg.n_agents), 0.0);
    long flips = 0;
    for (const auto& p : pts) {
        auto [q, h2] = nets.agent_q(p.agent, p.obs_tilde, p.hidden);
        double best_other = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < cfg.n_actions; ++a)
            if (a != p.a_star) best_other = std::max(best_other, q.at(a));
        per_agent[static_cast<size_t>(p.agent)] += best_other - q.at(p.a_star);
        if (ad::argmax(q) != p.a_star) ++flips;
    }
    double loss = 0.0;
    for (double g : per_agent) loss += std::max(g, -c);
    RegBatchStats stats;
    stats.reg_loss = loss;
    stats.tv_disagreement_rate = pts.empty() ? 0.0 : static_cast<double>(flips) / static_cast<double>(pts.size());
    return {loss, stats};
}

namespace detail {

// Combined loss graph: masked mean squared TD error plus kappa times the hinge
// regularizer, sharing one set of parameter leaves and hidden-state chains.
struct VictimLoss {
    ad::Graph g;
    int loss_node = -1;
};

inline VictimLoss build_victim_loss(const QmixNets& nets, const ParamSet& target_params,
                                    const EpisodeBatch& batch, double gamma, double kappa,
                                    const PerturbSpec& spec, double hinge_c, RegInnerMax mode) {
    const QmixConfig& cfg = nets.config();
    VictimLoss vl;
    ad::Graph& g = vl.g;
    std::vector<AgentLeaves> agents;
    for (int i = 0; i < nets.agent_sets(); ++i)
        agents.push_back(QmixNets::agent_leaves(g, nets.agent_prefix(i), nets.in_dim(), cfg.hidden,
                                                cfg.n_actions));
    auto mixer = QmixNets::mixer_leaves(g, cfg.n_agents, cfg.mix_hidden, cfg.state_dim);

    std::vector<RegPoint> pts;
    if (kappa > 0.0) pts = reg_points(nets, batch, spec, mode);

    int td_total = -1;
    long count = 0;
    // reg gap accumulator per agent
    std::vector<int> gap_sum(static_cast<size_t>(cfg.n_agents), -1);
    size_t pt_idx = 0;

    for (int e = 0; e < static_cast<int>(batch.episodes.size()); ++e) {
        const Episode& ep = batch.episodes[static_cast<size_t>(e)];
        std::vector<double> tgt = target_qtot(nets, target_params, ep);
        std::vector<int> h(static_cast<size_t>(cfg.n_agents),
                           g.constant(Tensor::zeros({cfg.hidden})));
        for (int t = 0; t < ep.length(); ++t) {
            int qvec = -1;
            for (int i = 0; i < cfg.n_agents; ++i) {
                const AgentLeaves& al = agents[static_cast<size_t>(cfg.share_params ? 0 : i)];
                int x = g.constant(
                    nets.agent_input(i, ep.obs[static_cast<size_t>(t)][static_cast<size_t>(i)]));
                auto [q, h2] = QmixNets::agent_fragment(g, al, x, h[static_cast<size_t>(i)]);
                int chosen = g.dot(q, g.constant(Tensor::onehot(
                                          cfg.n_actions,
                                          ep.actions[static_cast<size_t>(t)][static_cast<size_t>(i)])));
                qvec = (qvec < 0) ? chosen : g.concat(qvec, chosen);

                if (kappa > 0.0) {
                    const RegPoint& p = pts[pt_idx++];
                    int xr = g.constant(nets.agent_input(i, p.obs_tilde));
                    auto [qr, hr] = QmixNets::agent_fragment(g, al, xr, h[static_cast<size_t>(i)]);
                    int masked =
                        g.add(qr, g.constant(Tensor::onehot(cfg.n_actions, p.a_star, -1e9)));
                    int gap = g.sub(g.max_reduce(masked),
                                    g.dot(qr, g.constant(Tensor::onehot(cfg.n_actions, p.a_star))));
                    int& acc = gap_sum[static_cast<size_t>(i)];
                    acc = acc < 0 ? gap : g.add(acc, gap);
                }
                h[static_cast<size_t>(i)] = h2;
            }
            if (cfg.n_agents == 1) qvec = g.reshape(qvec, {1});
            int st = g.constant(ep.states[static_cast<size_t>(t)]);
            int qtot = QmixNets::mixer_fragment(g, mixer, qvec, st, cfg.n_agents, cfg.mix_hidden);
            double bootstrap = ep.done[static_cast<size_t>(t)] ? 0.0 : tgt[static_cast<size_t>(t + 1)];
            double y = ep.rewards[static_cast<size_t>(t)] + gamma * bootstrap;
            int err = g.sub(g.constant(Tensor::scalar(y)), qtot);
            int sq = g.mul(err, err);
            td_total = (td_total < 0) ? sq : g.add(td_total, sq);
            ++count;
        }
    }
    if (td_total < 0) throw Error("train: batch has no transitions");
    int loss = g.scale(td_total, 1.0 / static_cast<double>(count));
    if (kappa > 0.0) {
        int reg = -1;
        for (int i = 0; i < cfg.n_agents; ++i) {
            int gi = gap_sum[static_cast<size_t>(i)];
            if (gi < 0) gi = g.constant(Tensor::scalar(0.0));
            int hinge = g.maximum(gi, g.constant(Tensor::scalar(-hinge_c)));
            reg = reg < 0 ? hinge : g.add(reg, hinge);
        }
        loss = g.add(loss, g.scale(reg, kappa));
    }
    vl.loss_node = loss;
    return vl;
}

}  // namespace detail

// L_tot = L_TD + kappa * L_reg on a fixed batch, without updating parameters.
inline double victim_loss_value(const QmixNets& nets, const ParamSet& target_params,
                                const EpisodeBatch& batch, double gamma, double kappa,
                                const PerturbSpec& spec, double hinge_c,
                                RegInnerMax mode = RegInnerMax::FgsmStep) {
    auto vl = detail::build_victim_loss(nets, target_params, batch, gamma, kappa, spec, hinge_c, mode);
    vl.g.set_output(vl.loss_node);
    ad::Bindings b;
    bind_params(b, nets.params());
    return ad::forward(vl.g, b).data[0];
}

struct TrainOutput {
    QmixNets victim;
    std::optional<AdvPolicy> adversary;
    std::optional<QmixNets> director;
    std::vector<LogRecord> log;
};

namespace detail {

class Trainer {
public:
    Trainer(TrainConfig cfg, Env& env, std::optional<QmixNets> pretrained)
        : cfg_(cfg), env_(env), rng_(mix_seed(cfg.seed, 0xA11CE)) {
        cfg_.validate();
        const auto& spec = env.spec();
        for (int c : spec.action_counts)
            if (c != spec.action_counts[0])
                throw Error("train: heterogeneous action counts are not supported");
        QmixConfig qc;
        qc.n_agents = spec.n_agents;
        qc.obs_dim = spec.obs_dim;
        qc.n_actions = spec.action_counts[0];
        qc.state_dim = env.state_dim();
        qc.hidden = cfg_.hidden;
        qc.mix_hidden = cfg_.mix_hidden;
        if (pretrained) {
            nets_ = std::move(*pretrained);
        } else {
            Rng init_rng(mix_seed(cfg_.seed, 0x1217));
            nets_ = QmixNets(qc, init_rng);
        }
        targets_ = sync_targets(nets_);
        opt_ = RmsProp(cfg_.lr);
        buffer_ = ReplayBuffer(cfg_.buffer_capacity);
        pspec_ = PerturbSpec::attack_all(spec, cfg_.epsilon);
        if (env.tabular()) pspec_.candidates = env.tabular();

        if (cfg_.method == TrainMethod::Atla) {
            AdvConfig ac;
            ac.n_agents = spec.n_agents;
            ac.obs_dim = spec.obs_dim;
            ac.hidden = cfg_.adv_hidden;
            ac.epsilon = cfg_.epsilon;
            Rng adv_rng(mix_seed(cfg_.seed, 0xADA));
            adversary_ = AdvPolicy(ac, adv_rng);
            adv_opt_ = RmsProp(cfg_.adv_lr);
        } else if (cfg_.method == TrainMethod::Paad) {
            Rng dir_rng(mix_seed(cfg_.seed, 0xD12));
            director_ = QmixNets(qc, dir_rng);
            dir_targets_ = sync_targets(*director_);
            dir_opt_ = RmsProp(cfg_.adv_lr);
            dir_buffer_ = ReplayBuffer(cfg_.buffer_capacity);
        }
    }

    TrainOutput run() {
        log_eval();
        while (steps_ < cfg_.total_env_steps) {
            bool victim_phase = cfg_.freeze_victim
                                    ? false
                                    : !alternating() ||
                                          (steps_ / cfg_.alternation_interval) % 2 == 0;
            run_episode(victim_phase);
            if (steps_ >= next_eval_) log_eval();
        }
        TrainOutput out;
        out.victim = nets_;
        out.adversary = adversary_;
        out.director = director_;
        out.log = log_;
        return out;
    }

private:
    bool alternating() const {
        return cfg_.method == TrainMethod::Atla || cfg_.method == TrainMethod::Paad;
    }

    Attacker make_attacker(bool victim_phase) {
        Attacker atk;
        atk.spec = pspec_;
        switch (cfg_.method) {
        case TrainMethod::Vanilla:
            atk.kind = AttackKind::None;
            break;
        case TrainMethod::Fgsm:
        case TrainMethod::Reg:
            atk.kind = AttackKind::Fgsm;
            break;
        case TrainMethod::Atla:
            atk.kind = AttackKind::Atla;
            atk.adversary = adversary_;
            break;
        case TrainMethod::Paad:
            atk.kind = AttackKind::Paad;
            atk.director = director_;
            atk.director_epsilon = victim_phase ? 0.0 : explore_eps_at(cfg_, steps_);
            break;
        }
        return atk;
    }

    void run_episode(bool victim_phase) {
        Attacker atk = make_attacker(victim_phase);
        const int n = nets_.config().n_agents;
        auto [state, obs] = env_.reset(mix_seed(cfg_.seed, 0xE9, static_cast<std::uint64_t>(episode_)));
        ++episode_;
        atk.reset_episode();

        Episode ep;       // victim view: perturbed observations
        Episode adv_ep_q; // director view: clean observations, directions, negated rewards
        AdvEpisode adv_ep;
        ep.states.push_back(state);
        adv_ep_q.states.push_back(state);

        std::vector<Tensor> h(static_cast<size_t>(n), nets_.zero_hidden());
        bool tab = env_.tabular() != nullptr;
        while (true) {
            double eps = victim_phase ? explore_eps_at(cfg_, steps_) : 0.0;
            std::vector<int> directions;
            AdvAction adv_act;
            JointObs tilde = atk.perturb(nets_, obs, h, rng_, /*deterministic=*/false,
                                         tab ? env_.current_state() : -1, &directions, &adv_act);
            std::vector<int> actions(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                Tensor hin = tab ? nets_.zero_hidden() : h[static_cast<size_t>(i)];
                auto [q, h2] = nets_.agent_q(i, tilde[static_cast<size_t>(i)], hin);
                if (!tab) h[static_cast<size_t>(i)] = h2;
                actions[static_cast<size_t>(i)] = select_action(q, eps, rng_);
            }
            StepResult res = env_.step(actions);
            ++steps_;

            ep.obs.push_back(tilde);
            ep.actions.push_back(actions);
            ep.rewards.push_back(res.team_reward);
            ep.done.push_back(res.done ? 1 : 0);
            ep.states.push_back(res.state);

            if (!victim_phase && cfg_.method == TrainMethod::Atla) {
                adv_ep.obs.push_back(obs);
                adv_ep.presquash.push_back(adv_act.presquash);
                adv_ep.logp.push_back(adv_act.logp);
                adv_ep.rewards.push_back(-res.team_reward);
            }
            if (!victim_phase && cfg_.method == TrainMethod::Paad) {
                adv_ep_q.obs.push_back(obs);
                adv_ep_q.actions.push_back(directions);
                adv_ep_q.rewards.push_back(-res.team_reward);
                adv_ep_q.done.push_back(res.done ? 1 : 0);
                adv_ep_q.states.push_back(res.state);
            }
            obs = res.obs;
            if (res.done) {
                ep.win = res.win;
                break;
            }
        }
        ep.obs.push_back(obs);  // final observation for bootstrapping
        if (!victim_phase && cfg_.method == TrainMethod::Paad) adv_ep_q.obs.push_back(obs);

        if (victim_phase) {
            buffer_.add(std::move(ep));
            if (buffer_.size() >= cfg_.batch_size)
                for (int k = 0; k < cfg_.updates_per_episode; ++k) victim_update();
        } else if (cfg_.method == TrainMethod::Atla) {
            adv_rollouts_.push_back(std::move(adv_ep));
            if (static_cast<int>(adv_rollouts_.size()) >= cfg_.adv_update_episodes) {
                atla_adversary_update(*adversary_, adv_rollouts_, adv_opt_, cfg_.clip_ratio,
                                      cfg_.gamma, cfg_.grad_clip);
                adv_rollouts_.clear();
            }
        } else if (cfg_.method == TrainMethod::Paad) {
            dir_buffer_.add(std::move(adv_ep_q));
            if (dir_buffer_.size() >= cfg_.batch_size) {
                EpisodeBatch batch = dir_buffer_.sample(cfg_.batch_size, rng_);
                td_update(*director_, dir_targets_, batch, cfg_.gamma, dir_opt_, cfg_.grad_clip);
                ++dir_updates_;
                if (dir_updates_ % cfg_.target_period == 0) dir_targets_ = sync_targets(*director_);
            }
        }
    }

    void victim_update() {
        EpisodeBatch batch = buffer_.sample(cfg_.batch_size, rng_);
        double kappa = cfg_.method == TrainMethod::Reg ? kappa_at(cfg_, steps_) : 0.0;
        last_kappa_ = kappa;
        if (kappa == 0.0) {
            last_loss_ = td_update(nets_, targets_, batch, cfg_.gamma, opt_, cfg_.grad_clip);
        } else {
            auto vl = detail::build_victim_loss(nets_, targets_, batch, cfg_.gamma, kappa, pspec_,
                                                cfg_.hinge_c, RegInnerMax::FgsmStep);
            vl.g.set_output(vl.loss_node);
            ad::Bindings b;
            bind_params(b, nets_.params());
            auto [loss, grads] = ad::value_and_grad(vl.g, b, param_names(nets_.params()));
            clip_global_norm(grads, cfg_.grad_clip);
            opt_.step(nets_.params(), grads);
            last_loss_ = loss;
        }
        ++updates_;
        if (updates_ % cfg_.target_period == 0) targets_ = sync_targets(nets_);
    }

    void log_eval() {
        next_eval_ += cfg_.eval_interval;
        Attacker none;
        none.kind = AttackKind::None;
        none.spec = pspec_;
        EvalStats clean = eval_under_adversary(env_, nets_, none, cfg_.eval_episodes, 1.0,
                                               mix_seed(cfg_.seed, 0xEA1, static_cast<std::uint64_t>(steps_)));
        Attacker fgsm;
        fgsm.kind = AttackKind::Fgsm;
        fgsm.spec = pspec_;
        EvalStats attacked = eval_under_adversary(env_, nets_, fgsm, cfg_.eval_episodes, 1.0,
                                                  mix_seed(cfg_.seed, 0xEA2, static_cast<std::uint64_t>(steps_)));
        LogRecord rec;
        rec.step = steps_;
        rec.mean_return = clean.mean_return;
        rec.win_rate = clean.win_rate;
        rec.loss = last_loss_;
        rec.kappa = cfg_.method == TrainMethod::Reg ? kappa_at(cfg_, steps_) : 0.0;
        rec.tv_rate = attacked.tv_rate;
        log_.push_back(rec);
    }

    TrainConfig cfg_;
    Env& env_;
    Rng rng_;
    QmixNets nets_;
    ParamSet targets_;
    RmsProp opt_{5e-4};
    ReplayBuffer buffer_{1};
    PerturbSpec pspec_;

    std::optional<AdvPolicy> adversary_;
    RmsProp adv_opt_{3e-4};
    std::vector<AdvEpisode> adv_rollouts_;

    std::optional<QmixNets> director_;
    ParamSet dir_targets_;
    RmsProp dir_opt_{3e-4};
    ReplayBuffer dir_buffer_{1};
    long dir_updates_ = 0;

    long steps_ = 0;
    long episode_ = 0;
    long updates_ = 0;
    long next_eval_ = 0;
    double last_loss_ = 0.0;
    double last_kappa_ = 0.0;
    std::vector<LogRecord> log_;
};

}  // namespace detail

inline TrainOutput run_training(const TrainConfig& cfg, Env& env,
                                std::optional<QmixNets> pretrained = std::nullopt) {
    if (cfg.method == TrainMethod::Reg && !pretrained)
        throw Error("train: method reg requires a pretrained vanilla checkpoint");
    if (cfg.freeze_victim && !pretrained)
        throw Error("train: freeze_victim requires a pretrained victim checkpoint");
    return detail::Trainer(cfg, env, std::move(pretrained)).run();
}

inline TrainOutput train_vanilla(const TrainConfig& cfg, Env& env) {
    if (cfg.method != TrainMethod::Vanilla) throw Error("train_vanilla: wrong method tag");
    return detail::Trainer(cfg, env, std::nullopt).run();
}

inline TrainOutput train_fgsm_adv(const TrainConfig& cfg, Env& env) {
    if (cfg.method != TrainMethod::Fgsm) throw Error("train_fgsm_adv: wrong method tag");
    return detail::Trainer(cfg, env, std::nullopt).run();
}

inline TrainOutput train_regularized(const TrainConfig& cfg, Env& env, QmixNets pretrained) {
    if (cfg.method != TrainMethod::Reg) throw Error("train_regularized: wrong method tag");
    return detail::Trainer(cfg, env, std::move(pretrained)).run();
}

inline TrainOutput train_atla(const TrainConfig& cfg, Env& env) {
    if (cfg.method != TrainMethod::Atla) throw Error("train_atla: wrong method tag");
    return detail::Trainer(cfg, env, std::nullopt).run();
}

inline TrainOutput train_paad(const TrainConfig& cfg, Env& env) {
    if (cfg.method != TrainMethod::Paad) throw Error("train_paad: wrong method tag");
    return detail::Trainer(cfg, env, std::nullopt).run();
}

}  // namespace qmixlab
