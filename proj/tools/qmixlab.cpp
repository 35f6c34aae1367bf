// qmixlab CLI: train victims, evaluate under attacks, emit the cross-attack
// matrix, and run the exact worst-case oracle on tabular games.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "qmixlab/config.hpp"
#include "qmixlab/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qmixlab;

namespace {

void write_text(const std::string& path, const std::string& text) {
    if (!fs::path(path).parent_path().empty()) fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    if (!f) throw Error("cannot write " + path);
    f << text;
}

std::string log_to_jsonl(const std::vector<LogRecord>& log) {
    std::string out;
    for (const auto& rec : log) {
        json j = {{"step", rec.step},
                  {"mean_return", rec.mean_return},
                  {"win_rate", rec.win_rate},
                  {"loss", rec.loss},
                  {"kappa", rec.kappa},
                  {"tv_disagreement_rate", rec.tv_rate}};
        out += j.dump() + "\n";
    }
    return out;
}

int cmd_train(const std::string& config_path) {
    RunConfig rc = load_run_config(config_path);
    auto env = make_env(rc.env_block);
    const std::string method = method_name(rc.train.method);

    std::optional<QmixNets> pretrained;
    if (!rc.train.pretrained.empty())
        pretrained = nets_from_checkpoint(load_checkpoint(rc.train.pretrained));

    TrainOutput out = run_training(rc.train, *env, std::move(pretrained));

    std::string victim_path = rc.checkpoint.empty()
                                  ? (fs::path(rc.out_dir) / (method + ".json")).string()
                                  : rc.checkpoint;
    Checkpoint ck;
    ck.kind = "qmix";
    ck.method = method;
    ck.epsilon = rc.train.epsilon;
    ck.meta = {{"env", rc.env_block}, {"net", qmix_meta(out.victim.config())}};
    ck.params = out.victim.params();
    if (!fs::path(victim_path).parent_path().empty())
        fs::create_directories(fs::path(victim_path).parent_path());
    save_checkpoint(ck, victim_path);
    std::cout << "victim checkpoint: " << victim_path << "\n";

    if (out.adversary) {
        std::string path = rc.attacker_checkpoint.empty()
                               ? (fs::path(rc.out_dir) / (method + "_adversary.json")).string()
                               : rc.attacker_checkpoint;
        Checkpoint ak;
        ak.kind = "atla";
        ak.method = method;
        ak.epsilon = rc.train.epsilon;
        ak.meta = {{"env", rc.env_block}, {"adv", adv_meta(out.adversary->config())}};
        ak.params = out.adversary->params();
        save_checkpoint(ak, path);
        std::cout << "adversary checkpoint: " << path << "\n";
    }
    if (out.director) {
        std::string path = rc.attacker_checkpoint.empty()
                               ? (fs::path(rc.out_dir) / (method + "_director.json")).string()
                               : rc.attacker_checkpoint;
        Checkpoint dk;
        dk.kind = "paad";
        dk.method = method;
        dk.epsilon = rc.train.epsilon;
        dk.meta = {{"env", rc.env_block}, {"net", qmix_meta(out.director->config())}};
        dk.params = out.director->params();
        save_checkpoint(dk, path);
        std::cout << "director checkpoint: " << path << "\n";
    }

    std::string log_path = rc.log_path.empty()
                               ? (fs::path(rc.out_dir) / (method + "_log.jsonl")).string()
                               : rc.log_path;
    write_text(log_path, log_to_jsonl(out.log));
    std::cout << "log: " << log_path << "\n";
    return 0;
}

Attacker make_cli_attacker(AttackKind kind, const std::string& attacker_path, Env& env,
                           double epsilon) {
    Attacker atk;
    atk.kind = kind;
    atk.spec = PerturbSpec::attack_all(env.spec(), epsilon);
    if (env.tabular()) atk.spec.candidates = env.tabular();
    if (kind == AttackKind::Atla) {
        if (attacker_path.empty()) throw Error("eval: attack 'atla' needs --attacker");
        atk.adversary = adv_from_checkpoint(load_checkpoint(attacker_path));
    } else if (kind == AttackKind::Paad) {
        if (attacker_path.empty()) throw Error("eval: attack 'paad' needs --attacker");
        atk.director = nets_from_checkpoint(load_checkpoint(attacker_path));
    }
    return atk;
}

int cmd_eval(const std::string& victim_path, const std::string& attack,
             const std::string& attacker_path, int episodes, std::uint64_t seed,
             const std::string& out_path) {
    Checkpoint ck = load_checkpoint(victim_path);
    QmixNets victim = nets_from_checkpoint(ck);
    if (!ck.meta.contains("env")) throw Error("eval: victim checkpoint lacks an env block");
    auto env = make_env(ck.meta.at("env"));

    AttackKind kind = attack_from_name(attack);
    Attacker atk = make_cli_attacker(kind, attacker_path, *env, ck.epsilon);
    EvalStats st = eval_under_adversary(*env, victim, atk, episodes, 1.0, seed);

    std::cout << "victim      " << ck.method << "\n"
              << "attack      " << attack << " (eps=" << ck.epsilon << ")\n"
              << "episodes    " << episodes << "\n"
              << "win_rate    " << fmt_fixed(st.win_rate, 2) << "\n"
              << "reward      " << fmt_fixed(st.mean_return, 4) << " +/- "
              << fmt_fixed(st.std_return, 4) << "\n"
              << "tv_rate     " << fmt_fixed(st.tv_rate, 4) << "\n";

    json j = {{"env", env->name()},      {"train_method", ck.method},
              {"attack", attack},        {"win_rate", st.win_rate},
              {"reward_mean", st.mean_return}, {"reward_std", st.std_return},
              {"episodes", episodes},    {"seed", seed},
              {"epsilon", ck.epsilon},   {"tv_rate", st.tv_rate}};
    if (out_path.empty())
        std::cout << j.dump() << "\n";
    else
        write_text(out_path, j.dump(2) + "\n");
    return 0;
}

int cmd_matrix(const std::string& dir, const std::string& env_name, std::uint64_t seed,
               const std::string& out_path, int episodes, bool per_victim) {
    std::map<std::string, MatrixEntry> entries;
    std::unique_ptr<Env> env;

    // default cross-attackers: the adversary/director trained against the
    // vanilla victim ({dir}/atla_adversary.json, {dir}/paad_director.json);
    // --per-victim switches to {dir}/{method}_adversary.json etc. when present
    auto attacker_file = [&](const std::string& method, const std::string& suffix) {
        if (per_victim) {
            fs::path p = fs::path(dir) / (method + "_" + suffix + ".json");
            if (fs::exists(p)) return p.string();
        }
        return (fs::path(dir) / ("atla" == suffix.substr(0, 4) ? "atla_adversary.json"
                                                               : "paad_director.json"))
            .string();
    };

    bool failed = false;
    for (const std::string& method : matrix_methods()) {
        fs::path vp = fs::path(dir) / (method + ".json");
        if (!fs::exists(vp)) {
            std::cerr << "matrix: missing victim checkpoint " << vp.string() << "\n";
            failed = true;
            continue;
        }
        Checkpoint ck = load_checkpoint(vp.string());
        MatrixEntry e;
        e.victim = nets_from_checkpoint(ck);
        e.epsilon = ck.epsilon;
        if (!env) {
            if (!ck.meta.contains("env")) throw Error("matrix: checkpoint lacks an env block");
            env = make_env(ck.meta.at("env"));
            if (env->name() != env_name)
                throw Error("matrix: checkpoints were trained on '" + std::string(env->name()) +
                            "', requested env '" + env_name + "'");
        }
        std::string ap = attacker_file(method, "atla_adversary");
        if (fs::exists(ap)) e.atla_adversary = adv_from_checkpoint(load_checkpoint(ap));
        std::string dp = attacker_file(method, "paad_director");
        if (fs::exists(dp)) e.paad_director = nets_from_checkpoint(load_checkpoint(dp));
        entries.emplace(method, std::move(e));
    }
    if (failed) return 1;

    CrossAttackReport rep = run_matrix(*env, entries, episodes, seed);
    write_text(out_path, rep.to_csv());
    fs::path jp = fs::path(out_path);
    jp.replace_extension(".json");
    write_text(jp.string(), rep.to_json().dump(2) + "\n");
    std::cout << rep.to_csv();
    return 0;
}

int cmd_oracle(const std::string& game_path, const std::string& victim_path) {
    std::ifstream f(game_path);
    if (!f) throw Error("oracle: cannot open " + game_path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw Error("oracle: malformed game file: " + std::string(e.what()));
    }
    TabularSaSG game = build_tabular_sasg(j);

    VictimTabularPolicy victim;
    if (!victim_path.empty()) {
        QmixNets nets = nets_from_checkpoint(load_checkpoint(victim_path));
        victim = VictimTabularPolicy::from_nets(nets, game);
    } else if (!game.victim_policy.empty()) {
        victim = VictimTabularPolicy::from_table(game.victim_policy);
    } else {
        throw Error("oracle: no victim (pass --victim or add victim_policy to the game file)");
    }

    OracleResult res = worst_case_value(game, victim, game.gamma);
    json out = {{"value", res.value}, {"adversary_table", res.adversary_table}};
    try {
        out["cross_check_value"] = enumerate_adversaries(game, victim, game.gamma);
    } catch (const Error& e) {
        out["cross_check_value"] = nullptr;
        out["cross_check_error"] = e.what();
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"state-adversarial QMIX laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    auto* train = app.add_subcommand("train", "train a victim (and attacker) from a JSON config");
    train->add_option("--config", config_path, "run config JSON")->required();

    std::string victim_path, attack = "none", attacker_path, eval_out;
    int episodes = 32;
    std::uint64_t seed = 0;
    auto* ev = app.add_subcommand("eval", "evaluate a victim checkpoint under an attack");
    ev->add_option("--victim", victim_path, "victim checkpoint")->required();
    ev->add_option("--attack", attack, "none|fgsm|atla|paad")->required();
    ev->add_option("--attacker", attacker_path, "attacker checkpoint (atla/paad)");
    ev->add_option("--episodes", episodes, "episode count");
    ev->add_option("--seed", seed, "evaluation seed");
    ev->add_option("--out", eval_out, "write the report row JSON here");

    std::string mx_dir, mx_env, mx_out;
    int mx_episodes = 32;
    std::uint64_t mx_seed = 0;
    bool per_victim = false;
    auto* mx = app.add_subcommand("matrix", "cross-attack matrix over a checkpoint directory");
    mx->add_option("--dir", mx_dir, "checkpoint directory")->required();
    mx->add_option("--env", mx_env, "environment name")->required();
    mx->add_option("--seed", mx_seed, "base seed");
    mx->add_option("--out", mx_out, "output CSV path")->required();
    mx->add_option("--episodes", mx_episodes, "episodes per row");
    mx->add_flag("--per-victim", per_victim, "use per-victim adversary checkpoints when present");

    std::string game_path, oracle_victim;
    auto* orc = app.add_subcommand("oracle", "exact worst-case value of a tabular game");
    orc->add_option("--game", game_path, "tabular game JSON")->required();
    orc->add_option("--victim", oracle_victim, "victim checkpoint");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path);
        if (ev->parsed())
            return cmd_eval(victim_path, attack, attacker_path, episodes, seed, eval_out);
        if (mx->parsed())
            return cmd_matrix(mx_dir, mx_env, mx_seed, mx_out, mx_episodes, per_victim);
        if (orc->parsed()) return cmd_oracle(game_path, oracle_victim);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
