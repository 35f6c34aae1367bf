#pragma once

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmixlab/checkpoint.hpp"
#include "qmixlab/env.hpp"
#include "qmixlab/training.hpp"

namespace qmixlab {

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known,
                           const std::string& where) {
    if (!j.is_object()) throw Error("config: " + where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw Error("config: unknown key '" + it.key() + "' in " + where);
}

}  // namespace detail

// Builds an environment from a config env block:
//   {"name": "capture_grid", "width", "height", "agents", "step_limit", "layout_seed"}
//   {"name": "tabular", "game": <path or inline game object>}
inline std::unique_ptr<Env> make_env(const nlohmann::json& env_block) {
    if (!env_block.is_object() || !env_block.contains("name"))
        throw Error("config: env block must name an environment");
    std::string name = env_block.at("name").get<std::string>();
    if (name == "capture_grid") {
        detail::reject_unknown(env_block,
                               {"name", "width", "height", "agents", "step_limit", "layout_seed"},
                               "env");
        return build_capture_grid(env_block.value("width", 5), env_block.value("height", 5),
                                  env_block.value("agents", 2), env_block.value("step_limit", 50),
                                  env_block.value("layout_seed", std::uint64_t{0}));
    }
    if (name == "tabular") {
        detail::reject_unknown(env_block, {"name", "game"}, "env");
        if (!env_block.contains("game")) throw Error("config: tabular env needs a 'game' entry");
        const auto& game = env_block.at("game");
        if (game.is_string()) {
            std::ifstream f(game.get<std::string>());
            if (!f) throw Error("config: cannot open game file " + game.get<std::string>());
            nlohmann::json j;
            try {
                f >> j;
            } catch (const nlohmann::json::exception& e) {
                throw Error("config: malformed game file: " + std::string(e.what()));
            }
            return std::make_unique<TabularEnv>(build_tabular_sasg(j));
        }
        return std::make_unique<TabularEnv>(build_tabular_sasg(game));
    }
    throw Error("config: unknown environment '" + name + "'");
}

struct RunConfig {
    nlohmann::json env_block;
    TrainConfig train;
    int eval_episodes = 32;
    std::vector<std::string> eval_attacks = {"none", "fgsm"};
    std::string out_dir = ".";
    std::string checkpoint;           // victim output path; default {out_dir}/{method}.json
    std::string attacker_checkpoint;  // atla/paad attacker output path
    std::string log_path;             // default {out_dir}/{method}_log.jsonl
};

inline TrainConfig parse_train_block(const nlohmann::json& j) {
    detail::reject_unknown(
        j,
        {"method",        "total_env_steps", "epsilon",          "kappa",
         "hinge_c",       "alternation_interval", "seed",        "lr",
         "adv_lr",        "gamma",           "buffer_capacity",  "batch_size",
         "eval_interval", "eval_episodes",   "hidden",           "mix_hidden",
         "adv_hidden",    "target_period",   "grad_clip",        "clip_ratio",
         "explore_fraction", "explore_final", "adv_update_episodes", "pretrained",
         "freeze_victim", "updates_per_episode"},
        "train block");
    TrainConfig t;
    if (!j.contains("method")) throw Error("config: train block must set 'method'");
    t.method = method_from_name(j.at("method").get<std::string>());
    t.total_env_steps = j.value("total_env_steps", t.total_env_steps);
    t.epsilon = j.value("epsilon", t.epsilon);
    t.kappa = j.value("kappa", t.kappa);
    t.hinge_c = j.value("hinge_c", t.hinge_c);
    t.alternation_interval = j.value("alternation_interval", t.alternation_interval);
    t.seed = j.value("seed", t.seed);
    t.lr = j.value("lr", t.lr);
    t.adv_lr = j.value("adv_lr", t.adv_lr);
    t.gamma = j.value("gamma", t.gamma);
    t.buffer_capacity = j.value("buffer_capacity", t.buffer_capacity);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.eval_interval = j.value("eval_interval", t.eval_interval);
    t.eval_episodes = j.value("eval_episodes", t.eval_episodes);
    t.hidden = j.value("hidden", t.hidden);
    t.mix_hidden = j.value("mix_hidden", t.mix_hidden);
    t.adv_hidden = j.value("adv_hidden", t.adv_hidden);
    t.target_period = j.value("target_period", t.target_period);
    t.grad_clip = j.value("grad_clip", t.grad_clip);
    t.clip_ratio = j.value("clip_ratio", t.clip_ratio);
    t.explore_fraction = j.value("explore_fraction", t.explore_fraction);
    t.explore_final = j.value("explore_final", t.explore_final);
    t.adv_update_episodes = j.value("adv_update_episodes", t.adv_update_episodes);
    t.updates_per_episode = j.value("updates_per_episode", t.updates_per_episode);
    t.pretrained = j.value("pretrained", t.pretrained);
    t.freeze_victim = j.value("freeze_victim", t.freeze_victim);
    t.validate();
    if (t.method == TrainMethod::Reg && t.pretrained.empty())
        throw Error("config: method 'reg' requires train.pretrained (vanilla checkpoint path)");
    if (t.freeze_victim && t.pretrained.empty())
        throw Error("config: freeze_victim requires train.pretrained");
    return t;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
    detail::reject_unknown(j, {"env", "train", "eval", "io"}, "config");
    if (!j.contains("env") || !j.contains("train"))
        throw Error("config: 'env' and 'train' blocks are required");
    RunConfig rc;
    rc.env_block = j.at("env");
    make_env(rc.env_block);  // validate eagerly for schema diagnostics
    rc.train = parse_train_block(j.at("train"));
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::reject_unknown(e, {"episodes", "attacks"}, "eval block");
        rc.eval_episodes = e.value("episodes", rc.eval_episodes);
        if (e.contains("attacks")) {
            rc.eval_attacks = e.at("attacks").get<std::vector<std::string>>();
            for (const auto& a : rc.eval_attacks) attack_from_name(a);
        }
    }
    if (j.contains("io")) {
        const auto& io = j.at("io");
        detail::reject_unknown(io, {"out_dir", "checkpoint", "attacker_checkpoint", "log"}, "io block");
        rc.out_dir = io.value("out_dir", rc.out_dir);
        rc.checkpoint = io.value("checkpoint", rc.checkpoint);
        rc.attacker_checkpoint = io.value("attacker_checkpoint", rc.attacker_checkpoint);
        rc.log_path = io.value("log", rc.log_path);
    }
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("config: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("config: malformed JSON in " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

// --- checkpoint <-> network reconstruction ----------------------------------

inline nlohmann::json qmix_meta(const QmixConfig& cfg) {
    return {{"n_agents", cfg.n_agents},   {"obs_dim", cfg.obs_dim},
            {"n_actions", cfg.n_actions}, {"state_dim", cfg.state_dim},
            {"hidden", cfg.hidden},       {"mix_hidden", cfg.mix_hidden},
            {"share_params", cfg.share_params}};
}

inline nlohmann::json adv_meta(const AdvConfig& cfg) {
    return {{"n_agents", cfg.n_agents},
            {"obs_dim", cfg.obs_dim},
            {"hidden", cfg.hidden},
            {"epsilon", cfg.epsilon}};
}

namespace detail {

inline void check_param_compat(const ParamSet& expected, const ParamSet& loaded,
                               const std::string& what) {
    if (expected.size() != loaded.size())
        throw Error("checkpoint: " + what + " has " + std::to_string(loaded.size()) +
                    " tensors, network needs " + std::to_string(expected.size()));
    for (const auto& [name, t] : expected) {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw Error("checkpoint: " + what + " is missing tensor " + name);
        if (it->second.shape != t.shape)
            throw Error("checkpoint: " + what + " tensor " + name + " has shape " +
                        ad::shape_str(it->second.shape) + ", network needs " +
                        ad::shape_str(t.shape));
    }
}

}  // namespace detail

inline QmixNets nets_from_checkpoint(const Checkpoint& ck) {
    if (!ck.meta.contains("net")) throw Error("checkpoint: manifest lacks a 'net' block");
    const auto& m = ck.meta.at("net");
    QmixConfig cfg;
    cfg.n_agents = m.at("n_agents").get<int>();
    cfg.obs_dim = m.at("obs_dim").get<int>();
    cfg.n_actions = m.at("n_actions").get<int>();
    cfg.state_dim = m.at("state_dim").get<int>();
    cfg.hidden = m.at("hidden").get<int>();
    cfg.mix_hidden = m.at("mix_hidden").get<int>();
    cfg.share_params = m.value("share_params", true);
    Rng rng(0);
    QmixNets nets(cfg, rng);
    detail::check_param_compat(nets.params(), ck.params, "qmix network");
    nets.params() = ck.params;
    return nets;
}

inline AdvPolicy adv_from_checkpoint(const Checkpoint& ck) {
    if (!ck.meta.contains("adv")) throw Error("checkpoint: manifest lacks an 'adv' block");
    const auto& m = ck.meta.at("adv");
    AdvConfig cfg;
    cfg.n_agents = m.at("n_agents").get<int>();
    cfg.obs_dim = m.at("obs_dim").get<int>();
    cfg.hidden = m.at("hidden").get<int>();
    cfg.epsilon = m.at("epsilon").get<double>();
    Rng rng(0);
    AdvPolicy adv(cfg, rng);
    detail::check_param_compat(adv.params(), ck.params, "adversary policy");
    adv.params() = ck.params;
    return adv;
}

}  // namespace qmixlab
