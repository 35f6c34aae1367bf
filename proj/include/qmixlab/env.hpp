#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qmixlab/rng.hpp"
#include "qmixlab/tensor.hpp"

namespace qmixlab {

using ad::Tensor;
using JointObs = std::vector<Tensor>;

// Tuple-level description of a state-adversarial Dec-POMDP.
struct SaDecPomdpSpec {
    int n_agents = 0;
    int n_attacked = 0;
    std::vector<int> action_counts;  // |A^i| per agent
    int obs_dim = 0;
    double gamma = 1.0;
    std::vector<double> obs_lower, obs_upper;

    void validate() const {
        if (n_agents <= 0) throw Error("spec: n_agents must be positive");
        if (n_attacked <= 0 || n_attacked > n_agents)
            throw Error("spec: n_attacked must satisfy 0 < M <= N");
        if (gamma < 0.0 || gamma > 1.0) throw Error("spec: gamma must lie in [0,1]");
        if (static_cast<int>(obs_lower.size()) != obs_dim ||
            static_cast<int>(obs_upper.size()) != obs_dim)
            throw Error("spec: observation bounds must have obs_dim entries");
        for (int d = 0; d < obs_dim; ++d)
            if (!(obs_lower[static_cast<size_t>(d)] < obs_upper[static_cast<size_t>(d)]))
                throw Error("spec: obs_lower must be componentwise below obs_upper");
    }
};

struct StepResult {
    Tensor state;
    JointObs obs;
    double team_reward = 0.0;
    bool done = false;
    bool win = false;
};

struct TabularSaSG;

class Env {
public:
    virtual ~Env() = default;
    virtual const SaDecPomdpSpec& spec() const = 0;
    virtual int state_dim() const = 0;
    virtual std::pair<Tensor, JointObs> reset(std::uint64_t seed) = 0;
    virtual StepResult step(const std::vector<int>& joint_action) = 0;
    virtual const char* name() const = 0;
    // Tabular games expose their table and current state id for oracle work.
    virtual const TabularSaSG* tabular() const { return nullptr; }
    virtual int current_state() const { return -1; }
};

// --- Cooperative capture gridworld -----------------------------------------
//
// N predators chase one scripted fleeing prey on a width x height grid.
// The team wins when every predator is 4-adjacent to the prey. A won episode's
// cumulative return is exactly 20; otherwise only the (negative) per-step
// shaping reward accrues, so every episode return is <= 20.
class CaptureGrid final : public Env {
public:
    CaptureGrid(int width, int height, int n_agents, int step_limit, std::uint64_t seed_layout)
        : w_(width), h_(height), n_(n_agents), step_limit_(step_limit), seed_layout_(seed_layout) {
        if (width < 2 || height < 2 || n_agents < 1 || step_limit < 1)
            throw Error("capture_grid: invalid dimensions");
        if (static_cast<long>(width) * height < n_agents + 1)
            throw Error("capture_grid: grid too small for agents plus prey");
        spec_.n_agents = n_;
        spec_.n_attacked = n_;
        spec_.action_counts.assign(static_cast<size_t>(n_), kActions);
        spec_.obs_dim = 4 + 2 * (n_ - 1);
        spec_.gamma = 1.0;
        spec_.obs_lower.assign(static_cast<size_t>(spec_.obs_dim), -1.0);
        spec_.obs_upper.assign(static_cast<size_t>(spec_.obs_dim), 1.0);
        spec_.validate();
    }

    static constexpr int kActions = 5;  // stay, north, east, south, west

    const SaDecPomdpSpec& spec() const override { return spec_; }
    int state_dim() const override { return 2 * n_ + 2; }
    const char* name() const override { return "capture_grid"; }
    int width() const { return w_; }
    int height() const { return h_; }
    int step_limit() const { return step_limit_; }

    std::pair<Tensor, JointObs> reset(std::uint64_t seed) override {
        Rng rng(mix_seed(seed_layout_, seed));
        std::vector<int> cells(static_cast<size_t>(w_ * h_));
        for (size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
        // partial Fisher-Yates: first n_+1 cells are the distinct spawn points
        for (int i = 0; i <= n_; ++i) {
            int j = i + rng.uniform_int(static_cast<int>(cells.size()) - i);
            std::swap(cells[static_cast<size_t>(i)], cells[static_cast<size_t>(j)]);
        }
        preds_.resize(static_cast<size_t>(n_));
        for (int i = 0; i < n_; ++i)
            preds_[static_cast<size_t>(i)] = {cells[static_cast<size_t>(i)] % w_,
                                              cells[static_cast<size_t>(i)] / w_};
        prey_ = {cells[static_cast<size_t>(n_)] % w_, cells[static_cast<size_t>(n_)] / w_};
        t_ = 0;
        cum_ = 0.0;
        done_ = false;
        return {state(), observations()};
    }

    StepResult step(const std::vector<int>& joint_action) override {
        if (done_) throw Error("capture_grid: step after episode end");
        if (static_cast<int>(joint_action.size()) != n_)
            throw Error("capture_grid: joint action must have one entry per agent");
        for (int a : joint_action)
            if (a < 0 || a >= kActions)
                throw Error("capture_grid: action index " + std::to_string(a) + " out of range");

        for (int i = 0; i < n_; ++i) {
            auto [x, y] = preds_[static_cast<size_t>(i)];
            auto [nx, ny] = moved(x, y, joint_action[static_cast<size_t>(i)]);
            if (nx == prey_.first && ny == prey_.second) continue;  // prey cell blocks
            preds_[static_cast<size_t>(i)] = {nx, ny};
        }

        StepResult res;
        if (captured()) {
            res.team_reward = 20.0 - cum_;
            cum_ = 20.0;
            res.done = true;
            res.win = true;
        } else {
            move_prey();
            double sumdist = 0.0;
            for (const auto& p : preds_) sumdist += dist(p, prey_);
            res.team_reward = -0.01 * sumdist / (n_ * (w_ + h_));
            cum_ += res.team_reward;
            ++t_;
            res.done = t_ >= step_limit_;
            res.win = false;
        }
        done_ = res.done;
        res.state = state();
        res.obs = observations();
        return res;
    }

    double episode_return() const { return cum_; }

    std::pair<int, int> predator(int i) const { return preds_[static_cast<size_t>(i)]; }
    std::pair<int, int> prey() const { return prey_; }

    // test hook: place pieces explicitly
    void set_positions(std::vector<std::pair<int, int>> preds, std::pair<int, int> prey) {
        preds_ = std::move(preds);
        prey_ = prey;
        t_ = 0;
        cum_ = 0.0;
        done_ = false;
    }

private:
    static int dist(std::pair<int, int> a, std::pair<int, int> b) {
        return std::abs(a.first - b.first) + std::abs(a.second - b.second);
    }
    std::pair<int, int> moved(int x, int y, int action) const {
        static constexpr int dx[kActions] = {0, 0, 1, 0, -1};
        static constexpr int dy[kActions] = {0, 1, 0, -1, 0};
        int nx = std::clamp(x + dx[action], 0, w_ - 1);
        int ny = std::clamp(y + dy[action], 0, h_ - 1);
        return {nx, ny};
    }
    bool captured() const {
        for (const auto& p : preds_)
            if (dist(p, prey_) > 1) return false;
        return true;
    }
    bool occupied_by_predator(int x, int y) const {
        for (const auto& p : preds_)
            if (p.first == x && p.second == y) return true;
        return false;
    }
    // flee: candidate order stay, N, E, S, W; keep the first maximizer of the
    // Manhattan distance to the nearest predator
    void move_prey() {
        static constexpr int dx[kActions] = {0, 0, 1, 0, -1};
        static constexpr int dy[kActions] = {0, 1, 0, -1, 0};
        std::pair<int, int> best = prey_;
        int best_score = -1;
        for (int c = 0; c < kActions; ++c) {
            int nx = prey_.first + dx[c];
            int ny = prey_.second + dy[c];
            if (nx < 0 || nx >= w_ || ny < 0 || ny >= h_) continue;
            if (c != 0 && occupied_by_predator(nx, ny)) continue;
            int score = w_ + h_;
            for (const auto& p : preds_) score = std::min(score, dist(p, {nx, ny}));
            if (score > best_score) {
                best_score = score;
                best = {nx, ny};
            }
        }
        prey_ = best;
    }

    double sx(int x) const { return w_ > 1 ? 2.0 * x / (w_ - 1) - 1.0 : 0.0; }
    double sy(int y) const { return h_ > 1 ? 2.0 * y / (h_ - 1) - 1.0 : 0.0; }
    double sdx(int d) const { return static_cast<double>(d) / (w_ - 1); }
    double sdy(int d) const { return static_cast<double>(d) / (h_ - 1); }

    Tensor state() const {
        std::vector<double> v;
        v.reserve(static_cast<size_t>(state_dim()));
        for (const auto& p : preds_) {
            v.push_back(sx(p.first));
            v.push_back(sy(p.second));
        }
        v.push_back(sx(prey_.first));
        v.push_back(sy(prey_.second));
        return Tensor::vec(std::move(v));
    }

    JointObs observations() const {
        JointObs obs;
        obs.reserve(static_cast<size_t>(n_));
        for (int i = 0; i < n_; ++i) {
            const auto& me = preds_[static_cast<size_t>(i)];
            std::vector<double> v;
            v.reserve(static_cast<size_t>(spec_.obs_dim));
            v.push_back(sx(me.first));
            v.push_back(sy(me.second));
            v.push_back(sdx(prey_.first - me.first));
            v.push_back(sdy(prey_.second - me.second));
            for (int j = 0; j < n_; ++j) {
                if (j == i) continue;
                const auto& other = preds_[static_cast<size_t>(j)];
                v.push_back(sdx(other.first - me.first));
                v.push_back(sdy(other.second - me.second));
            }
            obs.push_back(Tensor::vec(std::move(v)));
        }
        return obs;
    }

    int w_, h_, n_, step_limit_;
    std::uint64_t seed_layout_;
    SaDecPomdpSpec spec_;
    std::vector<std::pair<int, int>> preds_;
    std::pair<int, int> prey_{0, 0};
    int t_ = 0;
    double cum_ = 0.0;
    bool done_ = true;
};

inline std::unique_ptr<CaptureGrid> build_capture_grid(int width, int height, int n_agents,
                                                       int step_limit,
                                                       std::uint64_t seed_layout = 0) {
    return std::make_unique<CaptureGrid>(width, height, n_agents, step_limit, seed_layout);
}

// --- Tabular state-adversarial stochastic game ------------------------------

struct TabularSaSG {
    int n_states = 0;
    int n_agents = 0;
    std::vector<int> action_counts;
    int start_state = 0;
    int horizon = 0;
    double gamma = 1.0;
    int obs_dim = 0;
    // P[s][joint_a][s'], R[s][joint_a]
    std::vector<std::vector<std::vector<double>>> P;
    std::vector<std::vector<double>> R;
    // B[agent][s] = candidate observations; index 0 is the clean observation
    std::vector<std::vector<std::vector<Tensor>>> B;
    // optional explicit victim policy: [agent][s][candidate] -> action
    std::vector<std::vector<std::vector<int>>> victim_policy;

    int n_joint_actions() const {
        int m = 1;
        for (int c : action_counts) m *= c;
        return m;
    }
    int joint_index(const std::vector<int>& a) const {
        int idx = 0;
        for (int i = 0; i < n_agents; ++i) {
            int ai = a[static_cast<size_t>(i)];
            if (ai < 0 || ai >= action_counts[static_cast<size_t>(i)])
                throw Error("tabular: action index out of range for agent " + std::to_string(i));
            idx = idx * action_counts[static_cast<size_t>(i)] + ai;
        }
        return idx;
    }

    void validate() const {
        if (n_states <= 0 || n_states > 16) throw Error("tabular: state count must be in [1,16]");
        if (n_agents <= 0) throw Error("tabular: n_agents must be positive");
        if (static_cast<int>(action_counts.size()) != n_agents)
            throw Error("tabular: actions_per_agent must have one entry per agent");
        if (horizon <= 0) throw Error("tabular: horizon must be positive");
        if (start_state < 0 || start_state >= n_states) throw Error("tabular: bad start state");
        int ja = n_joint_actions();
        if (static_cast<int>(P.size()) != n_states || static_cast<int>(R.size()) != n_states)
            throw Error("tabular: transition/reward tables must have one row block per state");
        for (int s = 0; s < n_states; ++s) {
            if (static_cast<int>(P[static_cast<size_t>(s)].size()) != ja ||
                static_cast<int>(R[static_cast<size_t>(s)].size()) != ja)
                throw Error("tabular: state " + std::to_string(s) +
                            " tables must cover every joint action");
            for (int a = 0; a < ja; ++a) {
                const auto& row = P[static_cast<size_t>(s)][static_cast<size_t>(a)];
                if (static_cast<int>(row.size()) != n_states)
                    throw Error("tabular: transition row length mismatch");
                double sum = 0.0;
                for (double p : row) {
                    if (p < 0.0) throw Error("tabular: negative transition probability");
                    sum += p;
                }
                if (std::fabs(sum - 1.0) > 1e-12)
                    throw Error("tabular: transition row (s=" + std::to_string(s) +
                                ", a=" + std::to_string(a) + ") sums to " + std::to_string(sum));
            }
        }
        if (static_cast<int>(B.size()) != n_agents)
            throw Error("tabular: perturbation_sets must cover every agent");
        for (int i = 0; i < n_agents; ++i) {
            if (static_cast<int>(B[static_cast<size_t>(i)].size()) != n_states)
                throw Error("tabular: perturbation_sets must cover every state");
            for (int s = 0; s < n_states; ++s) {
                const auto& cands = B[static_cast<size_t>(i)][static_cast<size_t>(s)];
                if (cands.empty())
                    throw Error("tabular: empty perturbation set for agent " + std::to_string(i) +
                                " at state " + std::to_string(s));
                for (const auto& c : cands)
                    if (static_cast<int>(c.size()) != obs_dim)
                        throw Error("tabular: candidate observation dimension mismatch");
            }
        }
        if (!victim_policy.empty()) {
            if (static_cast<int>(victim_policy.size()) != n_agents)
                throw Error("tabular: victim_policy must cover every agent");
            for (int i = 0; i < n_agents; ++i)
                for (int s = 0; s < n_states; ++s) {
                    const auto& per_state = victim_policy[static_cast<size_t>(i)];
                    if (static_cast<int>(per_state.size()) != n_states ||
                        per_state[static_cast<size_t>(s)].size() !=
                            B[static_cast<size_t>(i)][static_cast<size_t>(s)].size())
                        throw Error("tabular: victim_policy must map every (state, candidate)");
                    for (int a : per_state[static_cast<size_t>(s)])
                        if (a < 0 || a >= action_counts[static_cast<size_t>(i)])
                            throw Error("tabular: victim_policy action out of range");
                }
        }
    }

    static TabularSaSG from_json(const nlohmann::json& j) {
        static const std::vector<std::string> known = {
            "states",  "actions_per_agent", "transitions",   "rewards",
            "horizon", "perturbation_sets", "start_state",   "gamma",
            "victim_policy"};
        for (auto it = j.begin(); it != j.end(); ++it)
            if (std::find(known.begin(), known.end(), it.key()) == known.end())
                throw Error("tabular: unknown key '" + it.key() + "'");
        for (const char* req : {"states", "actions_per_agent", "transitions", "rewards",
                                "horizon", "perturbation_sets"})
            if (!j.contains(req)) throw Error(std::string("tabular: missing key '") + req + "'");

        TabularSaSG g;
        g.n_states = j.at("states").get<int>();
        g.action_counts = j.at("actions_per_agent").get<std::vector<int>>();
        g.n_agents = static_cast<int>(g.action_counts.size());
        g.horizon = j.at("horizon").get<int>();
        g.start_state = j.value("start_state", 0);
        g.gamma = j.value("gamma", 1.0);
        g.P = j.at("transitions").get<std::vector<std::vector<std::vector<double>>>>();
        g.R = j.at("rewards").get<std::vector<std::vector<double>>>();
        auto raw = j.at("perturbation_sets")
                       .get<std::vector<std::vector<std::vector<std::vector<double>>>>>();
        g.B.resize(raw.size());
        for (size_t i = 0; i < raw.size(); ++i) {
            g.B[i].resize(raw[i].size());
            for (size_t s = 0; s < raw[i].size(); ++s)
                for (auto& cand : raw[i][s]) {
                    if (g.obs_dim == 0) g.obs_dim = static_cast<int>(cand.size());
                    g.B[i][s].push_back(Tensor::vec(cand));
                }
        }
        if (j.contains("victim_policy"))
            g.victim_policy = j.at("victim_policy").get<std::vector<std::vector<std::vector<int>>>>();
        g.validate();
        return g;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["states"] = n_states;
        j["actions_per_agent"] = action_counts;
        j["transitions"] = P;
        j["rewards"] = R;
        j["horizon"] = horizon;
        j["start_state"] = start_state;
        j["gamma"] = gamma;
        std::vector<std::vector<std::vector<std::vector<double>>>> raw(B.size());
        for (size_t i = 0; i < B.size(); ++i) {
            raw[i].resize(B[i].size());
            for (size_t s = 0; s < B[i].size(); ++s)
                for (const auto& c : B[i][s]) raw[i][s].push_back(c.data);
        }
        j["perturbation_sets"] = raw;
        if (!victim_policy.empty()) j["victim_policy"] = victim_policy;
        return j;
    }
};

inline TabularSaSG build_tabular_sasg(const nlohmann::json& j) { return TabularSaSG::from_json(j); }

class TabularEnv final : public Env {
public:
    explicit TabularEnv(TabularSaSG game) : game_(std::move(game)), rng_(0) {
        game_.validate();
        spec_.n_agents = game_.n_agents;
        spec_.n_attacked = game_.n_agents;
        spec_.action_counts = game_.action_counts;
        spec_.obs_dim = game_.obs_dim;
        spec_.gamma = game_.gamma;
        // bounds are the componentwise envelope of all candidate observations,
        // padded slightly so candidates are interior points
        spec_.obs_lower.assign(static_cast<size_t>(game_.obs_dim), 0.0);
        spec_.obs_upper.assign(static_cast<size_t>(game_.obs_dim), 0.0);
        bool first = true;
        for (const auto& per_agent : game_.B)
            for (const auto& per_state : per_agent)
                for (const auto& cand : per_state)
                    for (int d = 0; d < game_.obs_dim; ++d) {
                        double v = cand.at(d);
                        if (first || v < spec_.obs_lower[static_cast<size_t>(d)])
                            spec_.obs_lower[static_cast<size_t>(d)] = v;
                        if (first || v > spec_.obs_upper[static_cast<size_t>(d)])
                            spec_.obs_upper[static_cast<size_t>(d)] = v;
                        if (d == game_.obs_dim - 1) first = false;
                    }
        for (int d = 0; d < game_.obs_dim; ++d) {
            spec_.obs_lower[static_cast<size_t>(d)] -= 1.0;
            spec_.obs_upper[static_cast<size_t>(d)] += 1.0;
        }
        spec_.validate();
    }

    const SaDecPomdpSpec& spec() const override { return spec_; }
    int state_dim() const override { return game_.n_states; }
    const char* name() const override { return "tabular"; }
    const TabularSaSG* tabular() const override { return &game_; }
    int current_state() const override { return s_; }

    std::pair<Tensor, JointObs> reset(std::uint64_t seed) override {
        rng_ = Rng(seed);
        s_ = game_.start_state;  // designated start state regardless of seed
        t_ = 0;
        done_ = false;
        return {state(), observations()};
    }

    StepResult step(const std::vector<int>& joint_action) override {
        if (done_) throw Error("tabular: step after episode end");
        int ja = game_.joint_index(joint_action);
        StepResult res;
        res.team_reward = game_.R[static_cast<size_t>(s_)][static_cast<size_t>(ja)];
        const auto& row = game_.P[static_cast<size_t>(s_)][static_cast<size_t>(ja)];
        double u = rng_.uniform();
        double acc = 0.0;
        int next = game_.n_states - 1;
        for (int sp = 0; sp < game_.n_states; ++sp) {
            acc += row[static_cast<size_t>(sp)];
            if (u < acc) {
                next = sp;
                break;
            }
        }
        s_ = next;
        ++t_;
        res.done = t_ >= game_.horizon;
        res.win = false;
        done_ = res.done;
        res.state = state();
        res.obs = observations();
        return res;
    }

private:
    Tensor state() const { return Tensor::onehot(game_.n_states, s_); }
    JointObs observations() const {
        JointObs obs;
        for (int i = 0; i < game_.n_agents; ++i)
            obs.push_back(game_.B[static_cast<size_t>(i)][static_cast<size_t>(s_)][0]);
        return obs;
    }

    TabularSaSG game_;
    SaDecPomdpSpec spec_;
    Rng rng_;
    int s_ = 0;
    int t_ = 0;
    bool done_ = true;
};

}  // namespace qmixlab
