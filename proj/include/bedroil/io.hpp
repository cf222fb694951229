#pragma once

#include "bedroil/error.hpp"
#include "bedroil/mdp.hpp"
#include "bedroil/perturb.hpp"
#include "bedroil/robust.hpp"
#include "bedroil/solver.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace bedroil {

using Json = nlohmann::ordered_json;

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& what) {
    if (!j.is_object() || !j.contains(key)) throw FormatError(what + ": missing \"" + key + "\"");
    return j.at(key);
}

inline void only_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& what) {
    if (!j.is_object()) throw FormatError(what + ": expected an object");
    for (const auto& [k, _] : j.items())
        if (std::find_if(keys.begin(), keys.end(), [&](const char* x) { return k == x; }) == keys.end())
            throw FormatError(what + ": unknown key \"" + k + "\"");
}

template <class T>
T get_as(const nlohmann::json& j, const std::string& what) {
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(what + ": " + e.what());
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// MDP: {num_states, num_actions, kernel[s][a][s'], initial_dist, discount}

inline Json mdp_to_json(const TabularMdp& mdp) {
    Json kernel = Json::array();
    for (int s = 0; s < mdp.num_states; ++s) {
        Json rows = Json::array();
        for (int a = 0; a < mdp.num_actions; ++a) {
            const auto r = mdp.row(s, a);
            rows.push_back(std::vector<double>(r.begin(), r.end()));
        }
        kernel.push_back(std::move(rows));
    }
    Json j;
    j["num_states"] = mdp.num_states;
    j["num_actions"] = mdp.num_actions;
    j["kernel"] = std::move(kernel);
    j["initial_dist"] = mdp.initial_dist;
    j["discount"] = mdp.discount;
    return j;
}

inline TabularMdp mdp_from_json(const nlohmann::json& j) {
    const std::string what = "mdp";
    detail::only_keys(j, {"num_states", "num_actions", "kernel", "initial_dist", "discount"}, what);
    TabularMdp m;
    m.num_states = detail::get_as<int>(detail::require(j, "num_states", what), what);
    m.num_actions = detail::get_as<int>(detail::require(j, "num_actions", what), what);
    if (m.num_states <= 0 || m.num_actions <= 0) throw FormatError("mdp: sizes must be positive");
    const auto kernel =
        detail::get_as<std::vector<std::vector<std::vector<double>>>>(detail::require(j, "kernel", what), what);
    if (static_cast<int>(kernel.size()) != m.num_states) throw FormatError("mdp: kernel has wrong number of states");
    m.kernel.reserve(m.triplet_count());
    for (const auto& rows : kernel) {
        if (static_cast<int>(rows.size()) != m.num_actions) throw FormatError("mdp: kernel has wrong number of actions");
        for (const auto& r : rows) {
            if (static_cast<int>(r.size()) != m.num_states) throw FormatError("mdp: kernel row has wrong length");
            m.kernel.insert(m.kernel.end(), r.begin(), r.end());
        }
    }
    m.initial_dist = detail::get_as<std::vector<double>>(detail::require(j, "initial_dist", what), what);
    m.discount = detail::get_as<double>(detail::require(j, "discount", what), what);
    validate_mdp(m);
    return m;
}

// ---------------------------------------------------------------------------
// Policy: {num_states, num_actions, probs[s][a]}

inline Json policy_to_json(const StochasticPolicy& p) {
    Json probs = Json::array();
    for (int s = 0; s < p.num_states; ++s) {
        const auto r = p.row(s);
        probs.push_back(std::vector<double>(r.begin(), r.end()));
    }
    Json j;
    j["num_states"] = p.num_states;
    j["num_actions"] = p.num_actions;
    j["probs"] = std::move(probs);
    return j;
}

inline StochasticPolicy policy_from_json(const nlohmann::json& j) {
    const std::string what = "policy";
    detail::only_keys(j, {"num_states", "num_actions", "probs"}, what);
    const int S = detail::get_as<int>(detail::require(j, "num_states", what), what);
    const int A = detail::get_as<int>(detail::require(j, "num_actions", what), what);
    const auto rows = detail::get_as<std::vector<std::vector<double>>>(detail::require(j, "probs", what), what);
    if (S <= 0 || A <= 0 || static_cast<int>(rows.size()) != S) throw FormatError("policy: shape mismatch");
    std::vector<double> flat;
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != A) throw FormatError("policy: shape mismatch");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    StochasticPolicy p(S, A, std::move(flat));
    validate_policy(p, S, A);
    return p;
}

// ---------------------------------------------------------------------------
// Checkpoint: {logits, q_table, tau, config, iteration}

struct Checkpoint {
    SoftmaxPolicy policy;
    DualState dual;
    Json config;
    int iteration = 0;
};

inline Json checkpoint_to_json(const Checkpoint& c) {
    Json logits = Json::array(), q = Json::array();
    for (int s = 0; s < c.policy.num_states; ++s) {
        std::vector<double> lr, qr;
        for (int a = 0; a < c.policy.num_actions; ++a) {
            lr.push_back(c.policy.logit(s, a));
            qr.push_back(c.dual.q_table[static_cast<std::size_t>(s) * c.policy.num_actions + a]);
        }
        logits.push_back(std::move(lr));
        q.push_back(std::move(qr));
    }
    Json j;
    j["logits"] = std::move(logits);
    j["q_table"] = std::move(q);
    j["tau"] = c.dual.tau;
    j["config"] = c.config;
    j["iteration"] = c.iteration;
    return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    const std::string what = "checkpoint";
    detail::only_keys(j, {"logits", "q_table", "tau", "config", "iteration"}, what);
    const auto logits = detail::get_as<std::vector<std::vector<double>>>(detail::require(j, "logits", what), what);
    const auto q = detail::get_as<std::vector<std::vector<double>>>(detail::require(j, "q_table", what), what);
    if (logits.empty() || logits.size() != q.size()) throw FormatError("checkpoint: shape mismatch");
    const int S = static_cast<int>(logits.size()), A = static_cast<int>(logits.front().size());
    Checkpoint c;
    c.policy = SoftmaxPolicy(S, A);
    c.dual = DualState(S, A, detail::get_as<double>(detail::require(j, "tau", what), what));
    for (int s = 0; s < S; ++s) {
        if (static_cast<int>(logits[s].size()) != A || static_cast<int>(q[s].size()) != A)
            throw FormatError("checkpoint: shape mismatch");
        for (int a = 0; a < A; ++a) {
            c.policy.logit(s, a) = logits[s][a];
            c.dual.q_table[static_cast<std::size_t>(s) * A + a] = q[s][a];
        }
    }
    c.config = detail::require(j, "config", what);
    c.iteration = detail::get_as<int>(detail::require(j, "iteration", what), what);
    return c;
}

// ---------------------------------------------------------------------------
// History CSV.

inline void write_history_csv(std::ostream& os, const TrainingHistory& h) {
    os << "iteration,dual_objective,policy_loss,tau,mean_weight,max_weight,balance_residual\n";
    for (const auto& r : h.records)
        os << r.iteration << ',' << format_double(r.dual_objective) << ',' << format_double(r.policy_loss) << ','
           << format_double(r.tau) << ',' << format_double(r.mean_weight) << ',' << format_double(r.max_weight) << ','
           << format_double(r.balance_residual) << '\n';
}

// ---------------------------------------------------------------------------
// Files.

inline std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os << text;
    if (!os) throw FormatError("write failed: " + path);
}

inline nlohmann::json read_json_file(const std::string& path) {
    try {
        return nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path + ": invalid JSON (" + e.what() + ")");
    }
}

inline std::string to_json_text(const Json& j) { return j.dump(2) + "\n"; }

} // namespace bedroil
