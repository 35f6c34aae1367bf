#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmixlab/config.hpp"
#include "qmixlab/oracle.hpp"

namespace qmixlab {

// full-precision decimal rendering; reparses to the same double
inline std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// display convention: win rates to 2 decimals, rewards to 4
inline std::string fmt_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

struct ReportRow {
    std::string env;
    std::string train_method;
    std::string attack;
    double win_rate = 0.0;
    double reward_mean = 0.0;
    double reward_std = 0.0;
    int episodes = 0;
    std::uint64_t seed = 0;
    double epsilon = 0.0;
};

struct CrossAttackReport {
    std::vector<ReportRow> rows;

    static const char* csv_header() {
        return "env,train_method,attack,win_rate,reward_mean,reward_std,episodes,seed,epsilon";
    }

    std::string to_csv() const {
        std::string out = csv_header();
        out += "\n";
        for (const auto& r : rows) {
            out += r.env + "," + r.train_method + "," + r.attack + "," + fmt_g17(r.win_rate) +
                   "," + fmt_g17(r.reward_mean) + "," + fmt_g17(r.reward_std) + "," +
                   std::to_string(r.episodes) + "," + std::to_string(r.seed) + "," +
                   fmt_g17(r.epsilon) + "\n";
        }
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : rows)
            arr.push_back({{"env", r.env},
                           {"train_method", r.train_method},
                           {"attack", r.attack},
                           {"win_rate", r.win_rate},
                           {"reward_mean", r.reward_mean},
                           {"reward_std", r.reward_std},
                           {"episodes", r.episodes},
                           {"seed", r.seed},
                           {"epsilon", r.epsilon}});
        return {{"rows", arr}};
    }

    static CrossAttackReport from_csv(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        if (!std::getline(in, line) || line != csv_header())
            throw Error("report: bad CSV header");
        CrossAttackReport rep;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string field;
            std::vector<std::string> f;
            while (std::getline(ls, field, ',')) f.push_back(field);
            if (f.size() != 9) throw Error("report: CSV row has " + std::to_string(f.size()) +
                                           " fields, expected 9");
            ReportRow r;
            r.env = f[0];
            r.train_method = f[1];
            r.attack = f[2];
            r.win_rate = std::stod(f[3]);
            r.reward_mean = std::stod(f[4]);
            r.reward_std = std::stod(f[5]);
            r.episodes = std::stoi(f[6]);
            r.seed = std::stoull(f[7]);
            r.epsilon = std::stod(f[8]);
            rep.rows.push_back(std::move(r));
        }
        return rep;
    }
};

// one victim checkpoint plus (optionally) the adversaries that attack it
struct MatrixEntry {
    QmixNets victim;
    double epsilon = 0.0;
    std::optional<AdvPolicy> atla_adversary;
    std::optional<QmixNets> paad_director;
};

inline const std::vector<std::string>& matrix_methods() {
    static const std::vector<std::string> m = {"vanilla", "fgsm", "reg", "atla", "paad"};
    return m;
}

inline const std::vector<AttackKind>& matrix_attacks() {
    static const std::vector<AttackKind> a = {AttackKind::None, AttackKind::Fgsm, AttackKind::Atla,
                                              AttackKind::Paad};
    return a;
}

// Evaluates every (train_method, attack) pair. Per-row evaluation seeds derive
// from (base seed, row index); rows are a pure function of inputs.
inline CrossAttackReport run_matrix(Env& env, const std::map<std::string, MatrixEntry>& entries,
                                    int episodes, std::uint64_t seed) {
    CrossAttackReport rep;
    int row = 0;
    for (const auto& method : matrix_methods()) {
        auto it = entries.find(method);
        if (it == entries.end()) throw Error("matrix: missing checkpoint for method " + method);
        const MatrixEntry& entry = it->second;
        for (AttackKind kind : matrix_attacks()) {
            Attacker atk;
            atk.kind = kind;
            atk.spec = PerturbSpec::attack_all(env.spec(), entry.epsilon);
            if (env.tabular()) atk.spec.candidates = env.tabular();
            if (kind == AttackKind::Atla) {
                if (!entry.atla_adversary)
                    throw Error("matrix: missing atla adversary checkpoint for victim " + method);
                atk.adversary = entry.atla_adversary;
            }
            if (kind == AttackKind::Paad) {
                if (!entry.paad_director)
                    throw Error("matrix: missing paad director checkpoint for victim " + method);
                atk.director = entry.paad_director;
            }
            EvalStats st = eval_under_adversary(env, entry.victim, atk, episodes, 1.0,
                                                mix_seed(seed, static_cast<std::uint64_t>(row)));
            ReportRow r;
            r.env = env.name();
            r.train_method = method;
            r.attack = attack_name(kind);
            r.win_rate = st.win_rate;
            r.reward_mean = st.mean_return;
            r.reward_std = st.std_return;
            r.episodes = episodes;
            r.seed = seed;
            r.epsilon = entry.epsilon;
            rep.rows.push_back(std::move(r));
            ++row;
        }
    }
    return rep;
}

}  // namespace qmixlab
