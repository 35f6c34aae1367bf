#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "qmixlab/attacks.hpp"
#include "qmixlab/env.hpp"
#include "qmixlab/qmix.hpp"

namespace qmixlab {

// Fixed victim behavior on a tabular game: (agent, state, candidate) -> action.
// Victims are evaluated feed-forward (hidden state reset each step) so the
// tabular policy is well defined.
struct VictimTabularPolicy {
    std::vector<std::vector<std::vector<int>>> action;

    int act(int agent, int state, int candidate) const {
        return action[static_cast<size_t>(agent)][static_cast<size_t>(state)]
                     [static_cast<size_t>(candidate)];
    }

    static VictimTabularPolicy from_table(std::vector<std::vector<std::vector<int>>> table) {
        return VictimTabularPolicy{std::move(table)};
    }

    static VictimTabularPolicy from_nets(const QmixNets& nets, const TabularSaSG& game) {
        VictimTabularPolicy v;
        v.action.resize(static_cast<size_t>(game.n_agents));
        for (int i = 0; i < game.n_agents; ++i) {
            v.action[static_cast<size_t>(i)].resize(static_cast<size_t>(game.n_states));
            for (int s = 0; s < game.n_states; ++s)
                for (const Tensor& cand : game.B[static_cast<size_t>(i)][static_cast<size_t>(s)]) {
                    auto [q, h2] = nets.agent_q(i, cand, nets.zero_hidden());
                    v.action[static_cast<size_t>(i)][static_cast<size_t>(s)].push_back(ad::argmax(q));
                }
        }
        return v;
    }

    void validate(const TabularSaSG& game) const {
        if (static_cast<int>(action.size()) != game.n_agents)
            throw Error("victim policy: must cover every agent");
        for (int i = 0; i < game.n_agents; ++i) {
            if (static_cast<int>(action[static_cast<size_t>(i)].size()) != game.n_states)
                throw Error("victim policy: must cover every state");
            for (int s = 0; s < game.n_states; ++s)
                if (action[static_cast<size_t>(i)][static_cast<size_t>(s)].size() !=
                    game.B[static_cast<size_t>(i)][static_cast<size_t>(s)].size())
                    throw Error("victim policy: must cover every candidate");
        }
    }
};

namespace detail {

// choices per state: product over attacked agents of |B^i(s)|, agent 0 most
// significant; non-attacked agents are pinned to the clean candidate 0
inline std::vector<int> decode_choice(const TabularSaSG& game, const std::vector<uint8_t>& attacked,
                                      int s, long code) {
    std::vector<int> cand(static_cast<size_t>(game.n_agents), 0);
    for (int i = game.n_agents - 1; i >= 0; --i) {
        if (!attacked[static_cast<size_t>(i)]) continue;
        long radix = static_cast<long>(game.B[static_cast<size_t>(i)][static_cast<size_t>(s)].size());
        cand[static_cast<size_t>(i)] = static_cast<int>(code % radix);
        code /= radix;
    }
    return cand;
}

inline long n_choices(const TabularSaSG& game, const std::vector<uint8_t>& attacked, int s) {
    long n = 1;
    for (int i = 0; i < game.n_agents; ++i)
        if (attacked[static_cast<size_t>(i)])
            n *= static_cast<long>(game.B[static_cast<size_t>(i)][static_cast<size_t>(s)].size());
    return n;
}

inline std::vector<int> victim_joint_action(const TabularSaSG& game,
                                            const VictimTabularPolicy& victim, int s,
                                            const std::vector<int>& cand) {
    std::vector<int> a(static_cast<size_t>(game.n_agents));
    for (int i = 0; i < game.n_agents; ++i)
        a[static_cast<size_t>(i)] = victim.act(i, s, cand[static_cast<size_t>(i)]);
    return a;
}

}  // namespace detail

struct OracleResult {
    double value = 0.0;
    // minimizing candidate per (time, state, agent); ties to the lowest code
    std::vector<std::vector<std::vector<int>>> adversary_table;
};

// Exact inner minimum over per-state candidate choices by backward induction
// over (time, state). Optimal over all (time-varying) Markov adversaries, and
// no history-dependent adversary can do better.
inline OracleResult worst_case_value(const TabularSaSG& game, const VictimTabularPolicy& victim,
                                     double gamma,
                                     const std::vector<uint8_t>* attacked_mask = nullptr) {
    victim.validate(game);
    std::vector<uint8_t> attacked =
        attacked_mask ? *attacked_mask : std::vector<uint8_t>(static_cast<size_t>(game.n_agents), 1);

    int S = game.n_states, H = game.horizon;
    std::vector<double> next(static_cast<size_t>(S), 0.0);
    OracleResult res;
    res.adversary_table.assign(static_cast<size_t>(H), {});
    for (int t = H - 1; t >= 0; --t) {
        std::vector<double> cur(static_cast<size_t>(S), 0.0);
        auto& row = res.adversary_table[static_cast<size_t>(t)];
        row.assign(static_cast<size_t>(S), {});
        for (int s = 0; s < S; ++s) {
            double best = std::numeric_limits<double>::infinity();
            std::vector<int> best_cand;
            long nc = detail::n_choices(game, attacked, s);
            for (long code = 0; code < nc; ++code) {
                std::vector<int> cand = detail::decode_choice(game, attacked, s, code);
                int ja = game.joint_index(detail::victim_joint_action(game, victim, s, cand));
                double v = game.R[static_cast<size_t>(s)][static_cast<size_t>(ja)];
                const auto& prow = game.P[static_cast<size_t>(s)][static_cast<size_t>(ja)];
                for (int sp = 0; sp < S; ++sp)
                    v += gamma * prow[static_cast<size_t>(sp)] * next[static_cast<size_t>(sp)];
                if (v < best) {
                    best = v;
                    best_cand = std::move(cand);
                }
            }
            cur[static_cast<size_t>(s)] = best;
            row[static_cast<size_t>(s)] = std::move(best_cand);
        }
        next = std::move(cur);
    }
    res.value = next[static_cast<size_t>(game.start_state)];
    return res;
}

// Exact expected discounted return of a fixed time-varying adversary table
// tau[t][s][agent] = candidate index.
inline double evaluate_adversary_table(const TabularSaSG& game, const VictimTabularPolicy& victim,
                                       const std::vector<std::vector<std::vector<int>>>& table,
                                       double gamma) {
    int S = game.n_states, H = game.horizon;
    std::vector<double> next(static_cast<size_t>(S), 0.0);
    for (int t = H - 1; t >= 0; --t) {
        std::vector<double> cur(static_cast<size_t>(S), 0.0);
        for (int s = 0; s < S; ++s) {
            const auto& cand = table[static_cast<size_t>(t)][static_cast<size_t>(s)];
            int ja = game.joint_index(detail::victim_joint_action(game, victim, s, cand));
            double v = game.R[static_cast<size_t>(s)][static_cast<size_t>(ja)];
            const auto& prow = game.P[static_cast<size_t>(s)][static_cast<size_t>(ja)];
            for (int sp = 0; sp < S; ++sp)
                v += gamma * prow[static_cast<size_t>(sp)] * next[static_cast<size_t>(sp)];
            cur[static_cast<size_t>(s)] = v;
        }
        next = std::move(cur);
    }
    return next[static_cast<size_t>(game.start_state)];
}

// Stationary (time-invariant) table: one candidate tuple per state.
inline double evaluate_stationary_table(const TabularSaSG& game, const VictimTabularPolicy& victim,
                                        const std::vector<std::vector<int>>& table, double gamma) {
    std::vector<std::vector<std::vector<int>>> expanded(
        static_cast<size_t>(game.horizon), table);
    return evaluate_adversary_table(game, victim, expanded, gamma);
}

// Brute-force minimum over every deterministic Markov adversary table
// (a candidate per (time, state, attacked agent)); must match the DP exactly.
inline double enumerate_adversaries(const TabularSaSG& game, const VictimTabularPolicy& victim,
                                    double gamma,
                                    const std::vector<uint8_t>* attacked_mask = nullptr,
                                    long guard = 1000000) {
    victim.validate(game);
    std::vector<uint8_t> attacked =
        attacked_mask ? *attacked_mask : std::vector<uint8_t>(static_cast<size_t>(game.n_agents), 1);

    int S = game.n_states, H = game.horizon;
    // decision slots in (t, s) order; each slot picks one joint candidate code
    std::vector<long> radix;
    double log_total = 0.0;
    for (int t = 0; t < H; ++t)
        for (int s = 0; s < S; ++s) {
            long nc = detail::n_choices(game, attacked, s);
            radix.push_back(nc);
            log_total += std::log(static_cast<double>(nc));
        }
    if (log_total > std::log(static_cast<double>(guard)))
        throw Error("enumerate_adversaries: search space exceeds guard of " +
                    std::to_string(guard) + " tables");

    std::vector<long> odo(radix.size(), 0);
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<std::vector<int>>> table(
        static_cast<size_t>(H),
        std::vector<std::vector<int>>(static_cast<size_t>(S)));
    while (true) {
        size_t slot = 0;
        for (int t = 0; t < H; ++t)
            for (int s = 0; s < S; ++s)
                table[static_cast<size_t>(t)][static_cast<size_t>(s)] =
                    detail::decode_choice(game, attacked, s, odo[slot++]);
        best = std::min(best, evaluate_adversary_table(game, victim, table, gamma));
        // odometer increment
        size_t k = 0;
        while (k < odo.size() && ++odo[k] == radix[k]) odo[k++] = 0;
        if (k == odo.size()) break;
    }
    return best;
}

// --- Empirical evaluation ------------------------------------------------------

struct EvalStats {
    double mean_discounted = 0.0;
    double mean_return = 0.0;
    double std_return = 0.0;
    double win_rate = 0.0;
    double tv_rate = 0.0;  // argmax flip rate clean vs perturbed, per agent-step
    int episodes = 0;
};

// Greedy victim under an attack; gamma = 1 gives the report reward convention.
inline EvalStats eval_under_adversary(Env& env, const QmixNets& victim, Attacker& attacker,
                                      int episodes, double gamma, std::uint64_t seed) {
    if (episodes < 1) throw Error("eval: episodes must be >= 1");
    bool tabular = env.tabular() != nullptr;
    int n = env.spec().n_agents;

    std::vector<double> returns;
    double disc_sum = 0.0;
    long wins = 0, flips = 0, decisions = 0;
    for (int e = 0; e < episodes; ++e) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(e), 1));
        auto [state, obs] = env.reset(mix_seed(seed, static_cast<std::uint64_t>(e)));
        attacker.reset_episode();
        std::vector<Tensor> h(static_cast<size_t>(n), victim.zero_hidden());
        double ret = 0.0, disc = 0.0, df = 1.0;
        bool win = false;
        while (true) {
            JointObs tilde =
                attacker.perturb(victim, obs, h, rng, /*deterministic=*/true,
                                 tabular ? env.current_state() : -1);
            std::vector<int> actions(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                Tensor hin = tabular ? victim.zero_hidden() : h[static_cast<size_t>(i)];
                auto [q, h2] = victim.agent_q(i, tilde[static_cast<size_t>(i)], hin);
                auto [q_clean, h2c] = victim.agent_q(i, obs[static_cast<size_t>(i)], hin);
                if (!tabular) h[static_cast<size_t>(i)] = h2;
                actions[static_cast<size_t>(i)] = ad::argmax(q);
                if (ad::argmax(q) != ad::argmax(q_clean)) ++flips;
                ++decisions;
            }
            StepResult res = env.step(actions);
            ret += res.team_reward;
            disc += df * res.team_reward;
            df *= gamma;
            obs = res.obs;
            if (res.done) {
                win = res.win;
                break;
            }
        }
        returns.push_back(ret);
        disc_sum += disc;
        if (win) ++wins;
    }

    EvalStats st;
    st.episodes = episodes;
    double sum = 0.0;
    for (double r : returns) sum += r;
    st.mean_return = sum / episodes;
    st.mean_discounted = disc_sum / episodes;
    double sq = 0.0;
    for (double r : returns) sq += (r - st.mean_return) * (r - st.mean_return);
    st.std_return = episodes > 1 ? std::sqrt(sq / (episodes - 1)) : 0.0;
    st.win_rate = static_cast<double>(wins) / episodes;
    st.tv_rate = decisions > 0 ? static_cast<double>(flips) / static_cast<double>(decisions) : 0.0;
    return st;
}

}  // namespace qmixlab
