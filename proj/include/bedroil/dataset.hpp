#pragma once

#include "bedroil/error.hpp"
#include "bedroil/mdp.hpp"
#include "bedroil/rng.hpp"
#include "bedroil/robust.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace bedroil {

/// Expert demonstrations collected under the nominal kernel.
struct Dataset {
    std::vector<Trajectory> trajectories;

    bool empty() const { return trajectories.empty(); }
    std::size_t num_transitions() const {
        std::size_t n = 0;
        for (const auto& t : trajectories) n += t.length();
        return n;
    }
    std::vector<int> initial_states() const {
        std::vector<int> out;
        for (const auto& t : trajectories)
            if (!t.states.empty()) out.push_back(t.states.front());
        return out;
    }
    bool operator==(const Dataset&) const = default;
};

struct Transition {
    int s = 0;
    int a = 0;
    int next = 0;
    int next_action = -1;  ///< successor action in the same trajectory, -1 at the end
};

inline std::vector<Transition> extract_transitions(const Dataset& ds) {
    std::vector<Transition> out;
    out.reserve(ds.num_transitions());
    for (const auto& traj : ds.trajectories)
        for (std::size_t t = 0; t < traj.actions.size(); ++t)
            out.push_back({traj.states[t], traj.actions[t], traj.states[t + 1],
                           t + 1 < traj.actions.size() ? traj.actions[t + 1] : -1});
    return out;
}

/// Shape and range checks: len(states) = len(actions) + 1 and indices in range.
inline void validate_dataset(const Dataset& ds, int num_states, int num_actions) {
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        const auto& t = ds.trajectories[i];
        const std::string where = "trajectory " + std::to_string(i);
        if (t.states.size() != t.actions.size() + 1)
            throw FormatError(where + ": len(states) must equal len(actions) + 1");
        for (int s : t.states)
            if (s < 0 || s >= num_states) throw FormatError(where + ": state " + std::to_string(s) + " out of range");
        for (int a : t.actions)
            if (a < 0 || a >= num_actions)
                throw FormatError(where + ": action " + std::to_string(a) + " out of range");
    }
}

/// Rollouts of the expert under the nominal kernel, one child seed per trajectory.
inline Dataset generate_dataset(const TabularMdp& mdp, const StochasticPolicy& expert, int num_trajectories,
                                const HorizonMode& horizon, std::uint64_t seed) {
    validate_mdp(mdp);
    validate_policy(expert, mdp.num_states, mdp.num_actions);
    if (num_trajectories < 0) throw ModelError("generate_dataset: negative size");
    if (const auto* fixed = std::get_if<FixedHorizon>(&horizon); fixed && fixed->length < 0)
        throw ModelError("generate_dataset: negative horizon");
    Dataset ds;
    ds.trajectories.reserve(num_trajectories);
    for (int i = 0; i < num_trajectories; ++i) {
        Rng rng = make_rng(child_seed(seed, "trajectory", static_cast<std::uint64_t>(i)));
        ds.trajectories.push_back(sample_trajectory(mdp, expert, rng, horizon));
    }
    return ds;
}

/// Fixed-horizon rollouts (the default for demonstration files).
inline Dataset generate_dataset(const TabularMdp& mdp, const StochasticPolicy& expert, int num_trajectories,
                                int horizon, std::uint64_t seed) {
    return generate_dataset(mdp, expert, num_trajectories, HorizonMode{FixedHorizon{horizon}}, seed);
}

/// Empirical distribution over every state visited in any trajectory, each
/// visited state treated as an effective initial state. Trajectories without
/// actions are skipped with a warning.
inline std::vector<double> effective_initial_states(const Dataset& ds, int num_states,
                                                    std::vector<std::string>* warnings = nullptr) {
    std::vector<double> out(num_states, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        const auto& t = ds.trajectories[i];
        if (t.actions.empty()) {
            if (warnings) warnings->push_back("trajectory " + std::to_string(i) + " is empty; skipped");
            continue;
        }
        for (int s : t.states) {
            out[s] += 1.0;
            total += 1.0;
        }
    }
    if (total == 0.0) throw ModelError("effective_initial_states: dataset has no transitions");
    for (double& v : out) v /= total;
    return out;
}

/// Action frequencies per state; uniform where a state has no logged action.
inline StochasticPolicy empirical_policy(const Dataset& ds, int num_states, int num_actions) {
    std::vector<double> counts(static_cast<std::size_t>(num_states) * num_actions, 0.0);
    for (const auto& t : ds.trajectories)
        for (std::size_t k = 0; k < t.actions.size(); ++k)
            counts[static_cast<std::size_t>(t.states[k]) * num_actions + t.actions[k]] += 1.0;
    for (int s = 0; s < num_states; ++s) {
        double* row = counts.data() + static_cast<std::size_t>(s) * num_actions;
        double n = 0.0;
        for (int a = 0; a < num_actions; ++a) n += row[a];
        for (int a = 0; a < num_actions; ++a) row[a] = n > 0.0 ? row[a] / n : 1.0 / num_actions;
    }
    return {num_states, num_actions, std::move(counts)};
}

/// Empirical nominal data: each transition carries mass 1/N; the initial term
/// uses the effective initial states with the expert's (or the empirical)
/// action distribution.
inline NominalData dataset_nominal_data(const Dataset& ds, int num_states, int num_actions, double discount,
                                        const std::optional<StochasticPolicy>& expert = std::nullopt,
                                        std::vector<std::string>* warnings = nullptr) {
    validate_dataset(ds, num_states, num_actions);
    const auto transitions = extract_transitions(ds);
    if (transitions.empty()) throw ModelError("dataset has no transitions");
    NominalData data;
    data.num_states = num_states;
    data.num_actions = num_actions;
    data.discount = discount;
    const double mass = 1.0 / static_cast<double>(transitions.size());
    data.transitions.reserve(transitions.size());
    for (const auto& t : transitions) data.transitions.push_back({t.s, t.a, t.next, t.next_action, mass});
    data.expert = expert;
    data.behavior = expert ? *expert : empirical_policy(ds, num_states, num_actions);
    const auto init = effective_initial_states(ds, num_states, warnings);
    data.initial_sa.resize(static_cast<std::size_t>(num_states) * num_actions);
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a)
            data.initial_sa[static_cast<std::size_t>(s) * num_actions + a] = init[s] * data.behavior.prob(s, a);
    return data;
}

// ---------------------------------------------------------------------------
// JSON-lines: one {"states":[...],"actions":[...]} record per trajectory.

inline std::string trajectory_to_json_line(const Trajectory& t) {
    nlohmann::ordered_json j;
    j["states"] = t.states;
    j["actions"] = t.actions;
    return j.dump();
}

inline void write_dataset(std::ostream& os, const Dataset& ds) {
    for (const auto& t : ds.trajectories) os << trajectory_to_json_line(t) << '\n';
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write_dataset(os, ds);
}

inline Dataset read_dataset(std::istream& is, std::vector<std::string>* warnings = nullptr) {
    Dataset ds;
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& why) {
        throw FormatError("dataset line " + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(std::string("invalid JSON (") + e.what() + ")");
        }
        if (!j.is_object()) fail("record is not an object");
        for (const auto& [key, _] : j.items())
            if (key != "states" && key != "actions") fail("unknown field \"" + key + "\"");
        for (const char* key : {"states", "actions"}) {
            if (!j.contains(key)) fail(std::string("missing \"") + key + "\"");
            if (!j[key].is_array()) fail(std::string("\"") + key + "\" is not an array");
            for (const auto& v : j[key])
                if (!v.is_number_integer()) fail(std::string("\"") + key + "\" holds a non-integer");
        }
        Trajectory t{j["states"].get<std::vector<int>>(), j["actions"].get<std::vector<int>>()};
        if (t.states.size() != t.actions.size() + 1) fail("len(states) must equal len(actions) + 1");
        ds.trajectories.push_back(std::move(t));
    }
    if (ds.empty() && warnings) warnings->push_back("dataset is empty");
    return ds;
}

inline Dataset load_dataset(const std::string& path, std::vector<std::string>* warnings = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    return read_dataset(is, warnings);
}

} // namespace bedroil
