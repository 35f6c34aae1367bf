#include <gtest/gtest.h>

#include <set>

#include "qmixlab/env.hpp"

using namespace qmixlab;
using nlohmann::json;

namespace {

json minimal_game() {
    // 2 states, 1 agent with 2 actions; a0 keeps the state, a1 flips it
    json j;
    j["states"] = 2;
    j["actions_per_agent"] = {2};
    j["transitions"] = {{{1.0, 0.0}, {0.0, 1.0}}, {{0.0, 1.0}, {1.0, 0.0}}};
    j["rewards"] = {{1.0, 0.0}, {0.0, 2.0}};
    j["horizon"] = 3;
    j["perturbation_sets"] = {{{{0.0}, {1.0}}, {{2.0}}}};
    return j;
}

}  // namespace

TEST(CaptureGrid, ResetIsDeterministicAndDistinct) {
    CaptureGrid env(5, 5, 2, 50, 7);
    auto [s1, o1] = env.reset(42);
    std::set<std::pair<int, int>> cells{env.predator(0), env.predator(1), env.prey()};
    EXPECT_EQ(cells.size(), 3u);  // no overlapping spawn points

    CaptureGrid env2(5, 5, 2, 50, 7);
    auto [s2, o2] = env2.reset(42);
    EXPECT_EQ(s1.data, s2.data);
    for (int i = 0; i < 2; ++i) EXPECT_EQ(o1[i].data, o2[i].data);

    auto [s3, o3] = env2.reset(43);
    EXPECT_NE(s1.data, s3.data);
}

TEST(CaptureGrid, ObservationAndStateWithinBounds) {
    CaptureGrid env(5, 4, 3, 50, 1);
    EXPECT_EQ(env.spec().obs_dim, 4 + 2 * 2);
    EXPECT_EQ(env.state_dim(), 2 * 3 + 2);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto [s, obs] = env.reset(seed);
        for (const auto& o : obs)
            for (double v : o.data) {
                EXPECT_GE(v, -1.0);
                EXPECT_LE(v, 1.0);
            }
        for (double v : s.data) {
            EXPECT_GE(v, -1.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(CaptureGrid, CaptureTopsEpisodeReturnToTwenty) {
    CaptureGrid env(5, 5, 2, 50, 0);
    env.reset(0);
    env.set_positions({{1, 2}, {3, 2}}, {2, 2});
    // prey hemmed in horizontally; predators step onto adjacency
    double total = 0.0;
    StepResult res;
    for (int t = 0; t < 50; ++t) {
        // move both toward the prey column/row
        auto p0 = env.predator(0);
        auto p1 = env.predator(1);
        auto chase = [&](std::pair<int, int> p, std::pair<int, int> q) {
            if (q.first > p.first) return 2;   // east
            if (q.first < p.first) return 4;   // west
            if (q.second > p.second) return 1; // north
            if (q.second < p.second) return 3; // south
            return 0;
        };
        res = env.step({chase(p0, env.prey()), chase(p1, env.prey())});
        total += res.team_reward;
        if (res.done) break;
    }
    ASSERT_TRUE(res.win);
    EXPECT_NEAR(total, 20.0, 1e-12);
    EXPECT_NEAR(env.episode_return(), 20.0, 1e-12);
}

TEST(CaptureGrid, ShapingRewardIsNegativeAndBounded) {
    CaptureGrid env(5, 5, 2, 50, 0);
    env.reset(3);
    env.set_positions({{0, 0}, {4, 4}}, {2, 2});
    StepResult res = env.step({0, 0});
    EXPECT_LT(res.team_reward, 0.0);
    EXPECT_GE(res.team_reward, -0.01);  // -0.01 * sum/(N*(W+H)) >= -0.01
}

TEST(CaptureGrid, PreyFleesGreedilyWithFixedTieOrder) {
    CaptureGrid env(5, 5, 1, 50, 0);
    env.reset(0);
    env.set_positions({{0, 2}}, {2, 2});
    // N/E/S all reach distance 3 from (0,2); N wins as the first in candidate order
    env.step({0});
    EXPECT_EQ(env.prey(), std::make_pair(2, 3));
}

TEST(CaptureGrid, PreyCellBlocksPredatorMove) {
    CaptureGrid env(5, 5, 1, 50, 0);
    env.reset(0);
    env.set_positions({{1, 2}}, {2, 2});
    env.step({2});  // east into the prey cell: blocked
    EXPECT_EQ(env.predator(0), std::make_pair(1, 2));
}

TEST(CaptureGrid, StepLimitEndsEpisodeWithoutWin) {
    CaptureGrid env(4, 4, 1, 3, 0);
    env.reset(1);
    env.set_positions({{0, 0}}, {3, 3});
    StepResult res;
    for (int t = 0; t < 3; ++t) res = env.step({0});
    EXPECT_TRUE(res.done);
    EXPECT_FALSE(res.win);
    EXPECT_THROW(env.step({0}), Error);
}

TEST(CaptureGrid, InvalidConstructionAndActions) {
    EXPECT_THROW(CaptureGrid(1, 5, 2, 50, 0), Error);
    EXPECT_THROW(CaptureGrid(2, 2, 4, 50, 0), Error);  // too small for 4+1 pieces
    CaptureGrid env(5, 5, 2, 50, 0);
    env.reset(0);
    EXPECT_THROW(env.step({0}), Error);      // wrong arity
    EXPECT_THROW(env.step({0, 9}), Error);   // action out of range
}

TEST(TabularGame, JsonRoundTrip) {
    TabularSaSG g = build_tabular_sasg(minimal_game());
    EXPECT_EQ(g.n_states, 2);
    EXPECT_EQ(g.n_agents, 1);
    EXPECT_EQ(g.obs_dim, 1);
    TabularSaSG g2 = build_tabular_sasg(g.to_json());
    EXPECT_EQ(g2.to_json(), g.to_json());
}

TEST(TabularGame, UnknownKeyRejected) {
    json j = minimal_game();
    j["surprise"] = 1;
    EXPECT_THROW(build_tabular_sasg(j), Error);
}

TEST(TabularGame, MissingKeyRejected) {
    json j = minimal_game();
    j.erase("rewards");
    EXPECT_THROW(build_tabular_sasg(j), Error);
}

TEST(TabularGame, BadTransitionRowRejected) {
    json j = minimal_game();
    j["transitions"][0][0] = {0.5, 0.6};  // sums to 1.1
    EXPECT_THROW(build_tabular_sasg(j), Error);
    j = minimal_game();
    j["transitions"][0][0] = {-0.5, 1.5};
    EXPECT_THROW(build_tabular_sasg(j), Error);
}

TEST(TabularGame, StateCountGuard) {
    json j = minimal_game();
    j["states"] = 17;
    EXPECT_THROW(build_tabular_sasg(j), Error);
}

TEST(TabularGame, JointIndexRowMajor) {
    TabularSaSG g;
    g.action_counts = {3, 2};
    g.n_agents = 2;
    EXPECT_EQ(g.joint_index({0, 0}), 0);
    EXPECT_EQ(g.joint_index({0, 1}), 1);
    EXPECT_EQ(g.joint_index({1, 0}), 2);
    EXPECT_EQ(g.joint_index({2, 1}), 5);
    EXPECT_THROW(g.joint_index({3, 0}), Error);
}

TEST(TabularEnv, FixedStartStateAndCleanObservations) {
    TabularEnv env(build_tabular_sasg(minimal_game()));
    auto [s, obs] = env.reset(99);
    EXPECT_EQ(env.current_state(), 0);
    EXPECT_EQ(s.data, (std::vector<double>{1.0, 0.0}));
    EXPECT_EQ(obs[0].data, (std::vector<double>{0.0}));  // clean candidate of state 0

    // deterministic flip to state 1 under a1
    StepResult res = env.step({1});
    EXPECT_EQ(env.current_state(), 1);
    EXPECT_DOUBLE_EQ(res.team_reward, 0.0);
    EXPECT_EQ(res.obs[0].data, (std::vector<double>{2.0}));
}

TEST(TabularEnv, HorizonEndsEpisode) {
    TabularEnv env(build_tabular_sasg(minimal_game()));
    env.reset(0);
    StepResult res;
    for (int t = 0; t < 3; ++t) res = env.step({0});
    EXPECT_TRUE(res.done);
    EXPECT_THROW(env.step({0}), Error);
}
