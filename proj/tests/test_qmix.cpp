#include <gtest/gtest.h>

#include <cmath>

#include "qmixlab/qmix.hpp"

using namespace qmixlab;
using ad::Tensor;

namespace {

QmixNets small_nets(std::uint64_t seed, int n_agents = 2, int obs_dim = 4, int n_actions = 3,
                    int state_dim = 5, int hidden = 6, int mix_hidden = 4) {
    QmixConfig cfg;
    cfg.n_agents = n_agents;
    cfg.obs_dim = obs_dim;
    cfg.n_actions = n_actions;
    cfg.state_dim = state_dim;
    cfg.hidden = hidden;
    cfg.mix_hidden = mix_hidden;
    Rng rng(seed);
    return QmixNets(cfg, rng);
}

Tensor rand_vec(int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros({n});
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST(Mixer, MonotoneInEveryAgentQ) {
    // numeric partial derivatives of Q_tot w.r.t. each agent utility
    Rng rng(0xA07);
    const double h = 1e-6;
    for (int trial = 0; trial < 200; ++trial) {
        QmixNets nets = small_nets(mix_seed(11, static_cast<std::uint64_t>(trial)));
        Tensor q = rand_vec(2, rng, -3.0, 3.0);
        Tensor s = rand_vec(5, rng);
        for (int i = 0; i < 2; ++i) {
            Tensor qp = q, qm = q;
            qp.at(i) += h;
            qm.at(i) -= h;
            double d = (nets.mix(qp, s) - nets.mix(qm, s)) / (2.0 * h);
            EXPECT_GE(d, -1e-12);
        }
    }
}

TEST(Mixer, RejectsWrongArity) {
    QmixNets nets = small_nets(1);
    Rng rng(3);
    EXPECT_THROW(nets.mix(rand_vec(3, rng), rand_vec(5, rng)), Error);
}

TEST(AgentNet, SharedParamsDistinguishAgentsViaId) {
    QmixNets nets = small_nets(5);
    Rng rng(9);
    Tensor obs = rand_vec(4, rng);
    Tensor h = nets.zero_hidden();
    auto [q0, h0] = nets.agent_q(0, obs, h);
    auto [q1, h1] = nets.agent_q(1, obs, h);
    EXPECT_NE(q0.data, q1.data);  // one-hot id breaks the symmetry
}

TEST(AgentNet, HiddenStateCarriesInformation) {
    QmixNets nets = small_nets(6);
    Rng rng(1);
    Tensor obs = rand_vec(4, rng);
    auto [q1, h1] = nets.agent_q(0, obs, nets.zero_hidden());
    auto [q2, h2] = nets.agent_q(0, obs, h1);
    EXPECT_NE(q1.data, q2.data);
}

TEST(AgentNet, RejectsWrongObsDim) {
    QmixNets nets = small_nets(2);
    Rng rng(1);
    EXPECT_THROW(nets.agent_q(0, rand_vec(3, rng), nets.zero_hidden()), Error);
}

TEST(SelectAction, GreedyBreaksTiesLow) {
    Rng rng(0);
    Tensor q = Tensor::vec({1.0, 5.0, 5.0, 2.0});
    EXPECT_EQ(select_action(q, 0.0, rng), 1);
}

TEST(SelectAction, AvailabilityMaskRestricts) {
    Rng rng(0);
    Tensor q = Tensor::vec({9.0, 1.0, 2.0});
    std::vector<uint8_t> avail{0, 1, 1};
    EXPECT_EQ(select_action(q, 0.0, rng, &avail), 2);
    std::vector<uint8_t> none{0, 0, 0};
    EXPECT_THROW(select_action(q, 0.0, rng, &none), Error);
}

TEST(SelectAction, FullExplorationIsRoughlyUniform) {
    Rng rng(1234);
    Tensor q = Tensor::vec({100.0, 0.0, 0.0, 0.0});
    std::vector<int> counts(4, 0);
    const int N = 40000;
    for (int i = 0; i < N; ++i) ++counts[static_cast<size_t>(select_action(q, 1.0, rng))];
    for (int a = 0; a < 4; ++a) EXPECT_NEAR(counts[static_cast<size_t>(a)] / double(N), 0.25, 0.02);
}

TEST(Replay, CapacityEvictsOldest) {
    ReplayBuffer buf(2);
    Episode e;
    e.rewards = {1.0};
    buf.add(e);
    e.rewards = {2.0};
    buf.add(e);
    e.rewards = {3.0};
    buf.add(e);
    EXPECT_EQ(buf.size(), 2);
    Rng rng(0);
    // only rewards 2 and 3 survive
    for (int i = 0; i < 20; ++i) {
        auto b = buf.sample(1, rng);
        EXPECT_GE(b.episodes[0].rewards[0], 2.0);
    }
}

TEST(Replay, EmptySampleThrows) {
    ReplayBuffer buf(4);
    Rng rng(0);
    EXPECT_THROW(buf.sample(1, rng), Error);
}

TEST(Optim, GlobalNormClip) {
    std::map<std::string, Tensor> grads;
    grads["a"] = Tensor::vec({3.0, 4.0});  // norm 5
    grads["b"] = Tensor::vec({0.0, 12.0}); // joint norm 13
    EXPECT_DOUBLE_EQ(global_norm(grads), 13.0);
    clip_global_norm(grads, 10.0);
    EXPECT_NEAR(global_norm(grads), 10.0, 1e-12);
    EXPECT_NEAR(grads["a"].at(0), 3.0 * 10.0 / 13.0, 1e-12);

    std::map<std::string, Tensor> small;
    small["a"] = Tensor::vec({1.0, 0.0});
    clip_global_norm(small, 10.0);
    EXPECT_DOUBLE_EQ(small["a"].at(0), 1.0);  // under the cap: untouched
}

TEST(Optim, RmsPropSingleStep) {
    ParamSet p;
    p["w"] = Tensor::vec({1.0});
    std::map<std::string, Tensor> g;
    g["w"] = Tensor::vec({2.0});
    RmsProp opt(0.1, 0.99, 1e-5);
    opt.step(p, g);
    double acc = 0.01 * 4.0;
    double expect = 1.0 - 0.1 * 2.0 / (std::sqrt(acc) + 1e-5);
    EXPECT_NEAR(p["w"].at(0), expect, 1e-12);
}

TEST(Training, TdLossMatchesManualComputation) {
    QmixNets nets = small_nets(77);
    ParamSet targets = sync_targets(nets);
    Rng rng(5);

    Episode ep;
    ep.states = {rand_vec(5, rng), rand_vec(5, rng)};
    ep.obs = {{rand_vec(4, rng), rand_vec(4, rng)}, {rand_vec(4, rng), rand_vec(4, rng)}};
    ep.actions = {{1, 2}};
    ep.rewards = {0.7};
    ep.done = {0};
    EpisodeBatch batch;
    batch.episodes.push_back(ep);
    const double gamma = 0.9;

    // manual: y = r + gamma * Qtot_target(s1, argmax), err = y - Qtot(s0, a)
    Tensor h0 = nets.zero_hidden();
    Tensor chosen = Tensor::zeros({2});
    std::vector<Tensor> h(2, h0);
    for (int i = 0; i < 2; ++i) {
        auto [q, h2] = nets.agent_q(i, ep.obs[0][static_cast<size_t>(i)], h[static_cast<size_t>(i)]);
        chosen.at(i) = q.at(ep.actions[0][static_cast<size_t>(i)]);
        h[static_cast<size_t>(i)] = h2;
    }
    double qtot = nets.mix(chosen, ep.states[0]);

    QmixNets tgt = nets;
    tgt.params() = targets;
    std::vector<Tensor> ht(2, h0);
    Tensor maxq = Tensor::zeros({2});
    for (int t = 0; t <= 1; ++t)
        for (int i = 0; i < 2; ++i) {
            auto [q, h2] = tgt.agent_q(i, ep.obs[static_cast<size_t>(t)][static_cast<size_t>(i)],
                                       ht[static_cast<size_t>(i)]);
            ht[static_cast<size_t>(i)] = h2;
            if (t == 1) {
                double m = q.at(0);
                for (int a = 1; a < 3; ++a) m = std::max(m, q.at(a));
                maxq.at(i) = m;
            }
        }
    double y = 0.7 + gamma * tgt.mix(maxq, ep.states[1]);
    double manual = (y - qtot) * (y - qtot);

    auto [loss_node, lg] = build_td_loss(nets, targets, batch, gamma);
    lg.g.set_output(loss_node);
    ad::Bindings b;
    bind_params(b, nets.params());
    EXPECT_NEAR(ad::forward(lg.g, b).data[0], manual, 1e-9);
}

TEST(Training, TdUpdateReducesLossOnFixedBatch) {
    QmixNets nets = small_nets(123);
    ParamSet targets = sync_targets(nets);
    Rng rng(8);
    EpisodeBatch batch;
    for (int e = 0; e < 2; ++e) {
        Episode ep;
        for (int t = 0; t <= 3; ++t) {
            ep.states.push_back(rand_vec(5, rng));
            ep.obs.push_back({rand_vec(4, rng), rand_vec(4, rng)});
        }
        for (int t = 0; t < 3; ++t) {
            ep.actions.push_back({rng.uniform_int(3), rng.uniform_int(3)});
            ep.rewards.push_back(rng.uniform(-1.0, 1.0));
            ep.done.push_back(t == 2 ? 1 : 0);
        }
        batch.episodes.push_back(std::move(ep));
    }
    RmsProp opt(1e-3);
    double first = td_update(nets, targets, batch, 0.9, opt);
    double last = first;
    for (int k = 0; k < 30; ++k) last = td_update(nets, targets, batch, 0.9, opt);
    EXPECT_LT(last, first);
}

TEST(Training, SyncTargetsCopies) {
    QmixNets nets = small_nets(9);
    ParamSet t = sync_targets(nets);
    EXPECT_EQ(t.size(), nets.params().size());
    nets.params().begin()->second.data[0] += 1.0;
    EXPECT_NE(t.begin()->second.data[0], nets.params().begin()->second.data[0]);
}
