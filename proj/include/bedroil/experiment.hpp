#pragma once

#include "bedroil/baselines.hpp"
#include "bedroil/dataset.hpp"
#include "bedroil/io.hpp"
#include "bedroil/oracle.hpp"
#include "bedroil/perturb.hpp"
#include "bedroil/solver.hpp"

#include <cstdio>
#include <string>
#include <vector>

namespace bedroil {

inline constexpr const char* kVersion = "0.1.0";

struct EnvConfig {
    GridworldSpec grid = [] {
        GridworldSpec g;
        g.walls = {{2, 1}, {2, 2}, {2, 3}};
        g.goal = {4, 0};
        g.start = Cell{0, 4};
        g.slip_prob = 0.1;
        g.discount = 0.9;
        return g;
    }();
    double expert_temperature = 0.1;
};

struct DatasetConfig {
    int num_trajectories = 100;
    int horizon = 20;
    std::string horizon_mode = "fixed";  ///< fixed | geometric (continuation = discount)
    std::uint64_t seed = 0;
    std::string mode = "dataset";        ///< dataset | exact
};

struct TrainConfig {
    std::string algo = "bedroil";  ///< bedroil | bc | bedroil_rho0
    SolverConfig solver = [] {
        SolverConfig c;
        c.steps = 3000;
        c.log_every = 10;
        return c;
    }();
};

struct SweepConfig {
    std::string param = "slip_prob";
    std::vector<double> values{0.0, 0.1, 0.2, 0.3};
    int samples_per_value = 1;
    int rollouts = 100;
    std::uint64_t seed = 0;
};

struct VerifyConfig {
    std::uint64_t seed = 7;
    std::string suite = "all";
    // occupancy TV bounds
    int num_mdps = 5;
    int max_states = 6;
    int max_actions = 3;
    std::vector<double> discounts{0.5, 0.9, 0.99};
    std::vector<double> rho_primes{0.05, 0.1, 0.2};
    int kernel_samples = 1000;
    // closed-form weights
    int prop1_cases = 1000;
    // generator dominance
    int dominance_points = 100'000;
    int dominance_pairs = 1000;
    // duality
    int duality_instances = 10;
    std::vector<double> duality_radii{0.0, 0.05, 0.1};
    // relaxation sandwich
    int sandwich_instances = 20;
    double sandwich_rho_prime = 0.05;
};

struct ExperimentConfig {
    EnvConfig env;
    DatasetConfig dataset;
    TrainConfig train;
    SweepConfig sweep;
    VerifyConfig verify;
};

inline const std::vector<std::string>& verify_suite_names() {
    static const std::vector<std::string> names{"occupancy_tv_bounds", "prop1_scalar", "generator_dominance",
                                                "duality", "relaxation_sandwich"};
    return names;
}

// ---------------------------------------------------------------------------
// JSON <-> config. Every section and key is optional; unknown keys are errors.

namespace detail {

inline Json cell_json(Cell c) { return Json::array({c.x, c.y}); }

inline Cell cell_from(const nlohmann::json& j, const std::string& what) {
    const auto v = get_as<std::vector<int>>(j, what);
    if (v.size() != 2) throw FormatError(what + ": a cell is [x, y]");
    return {v[0], v[1]};
}

/// Visits the keys of a section, rejecting anything not handled.
class Section {
public:
    Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw FormatError("config section \"" + name_ + "\" must be an object");
    }
    template <class T>
    void read(const char* key, T& out) {
        seen_.push_back(key);
        if (j_.contains(key)) out = get_as<T>(j_.at(key), name_ + "." + key);
    }
    bool has(const char* key) {
        seen_.push_back(key);
        return j_.contains(key);
    }
    const nlohmann::json& at(const char* key) const { return j_.at(key); }
    std::string where(const char* key) const { return name_ + "." + key; }
    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
                throw FormatError("config: unknown key \"" + name_ + "." + k + "\"");
    }

private:
    const nlohmann::json& j_;
    std::string name_;
    std::vector<std::string> seen_;
};

} // namespace detail

inline Json config_to_json(const ExperimentConfig& c) {
    Json env;
    const GridworldSpec& g = c.env.grid;
    env["width"] = g.width;
    env["height"] = g.height;
    Json walls = Json::array();
    for (const Cell& w : g.walls) walls.push_back(detail::cell_json(w));
    env["walls"] = walls;
    env["goal"] = detail::cell_json(g.goal);
    env["start"] = g.start ? detail::cell_json(*g.start) : Json(nullptr);
    env["slip_prob"] = g.slip_prob;
    env["wind"] = g.wind;
    env["wind_scale"] = g.wind_scale;
    env["discount"] = g.discount;
    env["step_noise_seed"] = g.step_noise_seed;
    env["expert_temperature"] = c.env.expert_temperature;

    Json ds;
    ds["num_trajectories"] = c.dataset.num_trajectories;
    ds["horizon"] = c.dataset.horizon;
    ds["horizon_mode"] = c.dataset.horizon_mode;
    ds["seed"] = c.dataset.seed;
    ds["mode"] = c.dataset.mode;

    const SolverConfig& s = c.train.solver;
    Json solver;
    solver["algo"] = c.train.algo;
    solver["rho"] = s.rho;
    solver["generator"] = s.generator;
    solver["saturation_weight"] = s.saturation_weight;
    solver["lr_dual"] = s.lr_dual;
    solver["lr_policy"] = s.lr_policy;
    solver["steps"] = s.steps;
    solver["policy_updates"] = s.policy_updates;
    solver["dual_updates"] = s.dual_updates;
    solver["batch_size"] = s.batch_size == 0 ? Json("exact") : Json(s.batch_size);
    solver["seed"] = s.seed;
    solver["tau_init"] = s.tau_init;
    solver["tau_min"] = s.tau_min;
    solver["loss_mode"] = std::string(to_string(s.loss_mode));
    solver["f_coefficient"] = s.f_coefficient == FCoefficient::tau ? "tau" : "rho";
    solver["order"] = s.order == StageOrder::dual_first ? "dual_first" : "policy_first";
    solver["log_every"] = s.log_every;

    Json sweep;
    sweep["param"] = c.sweep.param;
    sweep["values"] = c.sweep.values;
    sweep["samples_per_value"] = c.sweep.samples_per_value;
    sweep["rollouts"] = c.sweep.rollouts;
    sweep["seed"] = c.sweep.seed;

    const VerifyConfig& v = c.verify;
    Json verify;
    verify["seed"] = v.seed;
    verify["suite"] = v.suite;
    verify["num_mdps"] = v.num_mdps;
    verify["max_states"] = v.max_states;
    verify["max_actions"] = v.max_actions;
    verify["discounts"] = v.discounts;
    verify["rho_primes"] = v.rho_primes;
    verify["kernel_samples"] = v.kernel_samples;
    verify["prop1_cases"] = v.prop1_cases;
    verify["dominance_points"] = v.dominance_points;
    verify["dominance_pairs"] = v.dominance_pairs;
    verify["duality_instances"] = v.duality_instances;
    verify["duality_radii"] = v.duality_radii;
    verify["sandwich_instances"] = v.sandwich_instances;
    verify["sandwich_rho_prime"] = v.sandwich_rho_prime;

    Json j;
    j["env"] = env;
    j["dataset"] = ds;
    j["solver"] = solver;
    j["sweep"] = sweep;
    j["verify"] = verify;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    detail::only_keys(j, {"env", "dataset", "solver", "sweep", "verify"}, "config");

    if (j.contains("env")) {
        detail::Section sec(j.at("env"), "env");
        GridworldSpec& g = c.env.grid;
        sec.read("width", g.width);
        sec.read("height", g.height);
        if (sec.has("walls")) {
            g.walls.clear();
            for (const auto& w : sec.at("walls")) g.walls.push_back(detail::cell_from(w, sec.where("walls")));
        }
        if (sec.has("goal")) g.goal = detail::cell_from(sec.at("goal"), sec.where("goal"));
        if (sec.has("start")) {
            const auto& s = sec.at("start");
            g.start = s.is_null() ? std::nullopt : std::optional<Cell>(detail::cell_from(s, sec.where("start")));
        }
        sec.read("slip_prob", g.slip_prob);
        sec.read("wind", g.wind);
        sec.read("wind_scale", g.wind_scale);
        sec.read("discount", g.discount);
        sec.read("step_noise_seed", g.step_noise_seed);
        sec.read("expert_temperature", c.env.expert_temperature);
        sec.finish();
        g.validate();
        if (!(c.env.expert_temperature > 0.0)) throw ModelError("env.expert_temperature must be positive");
    }
    if (j.contains("dataset")) {
        detail::Section sec(j.at("dataset"), "dataset");
        sec.read("num_trajectories", c.dataset.num_trajectories);
        sec.read("horizon", c.dataset.horizon);
        sec.read("horizon_mode", c.dataset.horizon_mode);
        sec.read("seed", c.dataset.seed);
        sec.read("mode", c.dataset.mode);
        sec.finish();
        if (c.dataset.num_trajectories <= 0 || c.dataset.horizon <= 0)
            throw ModelError("dataset: num_trajectories and horizon must be positive");
        if (c.dataset.horizon_mode != "fixed" && c.dataset.horizon_mode != "geometric")
            throw ModelError("dataset.horizon_mode must be fixed or geometric");
        if (c.dataset.mode != "dataset" && c.dataset.mode != "exact")
            throw ModelError("dataset.mode must be dataset or exact");
    }
    if (j.contains("solver")) {
        detail::Section sec(j.at("solver"), "solver");
        SolverConfig& s = c.train.solver;
        sec.read("algo", c.train.algo);
        sec.read("rho", s.rho);
        sec.read("generator", s.generator);
        sec.read("saturation_weight", s.saturation_weight);
        sec.read("lr_dual", s.lr_dual);
        sec.read("lr_policy", s.lr_policy);
        sec.read("steps", s.steps);
        sec.read("policy_updates", s.policy_updates);
        sec.read("dual_updates", s.dual_updates);
        if (sec.has("batch_size")) {
            const auto& b = sec.at("batch_size");
            if (b.is_string()) {
                if (b.get<std::string>() != "exact") throw FormatError("solver.batch_size: integer or \"exact\"");
                s.batch_size = 0;
            } else {
                s.batch_size = detail::get_as<int>(b, "solver.batch_size");
                if (s.batch_size <= 0) throw FormatError("solver.batch_size: integer must be positive");
            }
        }
        sec.read("seed", s.seed);
        sec.read("tau_init", s.tau_init);
        sec.read("tau_min", s.tau_min);
        std::string loss = std::string(to_string(s.loss_mode)), coef = "tau", order = "dual_first";
        sec.read("loss_mode", loss);
        sec.read("f_coefficient", coef);
        sec.read("order", order);
        sec.read("log_every", s.log_every);
        sec.finish();
        s.loss_mode = parse_loss_mode(loss);
        if (coef != "tau" && coef != "rho") throw ModelError("solver.f_coefficient must be tau or rho");
        s.f_coefficient = coef == "tau" ? FCoefficient::tau : FCoefficient::rho;
        if (order != "dual_first" && order != "policy_first")
            throw ModelError("solver.order must be dual_first or policy_first");
        s.order = order == "dual_first" ? StageOrder::dual_first : StageOrder::policy_first;
        if (c.train.algo != "bedroil" && c.train.algo != "bc" && c.train.algo != "bedroil_rho0")
            throw ModelError("solver.algo must be bedroil, bc or bedroil_rho0");
        s.validate();
    }
    if (j.contains("sweep")) {
        detail::Section sec(j.at("sweep"), "sweep");
        sec.read("param", c.sweep.param);
        sec.read("values", c.sweep.values);
        sec.read("samples_per_value", c.sweep.samples_per_value);
        sec.read("rollouts", c.sweep.rollouts);
        sec.read("seed", c.sweep.seed);
        sec.finish();
        parse_sweep_param(c.sweep.param);
    }
    if (j.contains("verify")) {
        detail::Section sec(j.at("verify"), "verify");
        VerifyConfig& v = c.verify;
        sec.read("seed", v.seed);
        sec.read("suite", v.suite);
        sec.read("num_mdps", v.num_mdps);
        sec.read("max_states", v.max_states);
        sec.read("max_actions", v.max_actions);
        sec.read("discounts", v.discounts);
        sec.read("rho_primes", v.rho_primes);
        sec.read("kernel_samples", v.kernel_samples);
        sec.read("prop1_cases", v.prop1_cases);
        sec.read("dominance_points", v.dominance_points);
        sec.read("dominance_pairs", v.dominance_pairs);
        sec.read("duality_instances", v.duality_instances);
        sec.read("duality_radii", v.duality_radii);
        sec.read("sandwich_instances", v.sandwich_instances);
        sec.read("sandwich_rho_prime", v.sandwich_rho_prime);
        sec.finish();
    }
    return c;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// FNV-1a of the canonical (fully resolved) config dump.
inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(config_to_json(c).dump())); }

// ---------------------------------------------------------------------------
// Pipeline pieces shared by the CLI and the acceptance run.

struct Environment {
    Gridworld world;
    StochasticPolicy expert;
};

inline Environment make_environment(const EnvConfig& env) {
    Environment e{build_gridworld(env.grid), {}};
    e.expert = make_expert(e.world.mdp, e.world.reward, env.expert_temperature);
    return e;
}

inline Dataset make_dataset(const Environment& env, const DatasetConfig& cfg) {
    const HorizonMode horizon = cfg.horizon_mode == "geometric"
                                    ? HorizonMode{GeometricHorizon{env.world.mdp.discount}}
                                    : HorizonMode{FixedHorizon{cfg.horizon}};
    return generate_dataset(env.world.mdp, env.expert, cfg.num_trajectories, horizon, cfg.seed);
}

/// Nominal data for training: the exact occupancy in exact mode, otherwise the
/// dataset transitions. The expert is attached whenever the loss needs it.
inline NominalData make_nominal_data(const Environment& env, const Dataset* ds, const DatasetConfig& cfg,
                                     LossMode loss, std::vector<std::string>* warnings = nullptr) {
    if (cfg.mode == "exact") return exact_nominal_data(env.world.mdp, env.expert);
    if (!ds) throw ModelError("dataset mode needs a dataset");
    std::optional<StochasticPolicy> expert;
    if (loss == LossMode::exact_kl) expert = env.expert;
    return dataset_nominal_data(*ds, env.world.mdp.num_states, env.world.mdp.num_actions, env.world.mdp.discount,
                                expert, warnings);
}

inline TrainResult train_algo(const std::string& algo, const NominalData& data, const SolverConfig& cfg) {
    if (algo == "bedroil") return train_bedroil(data, cfg);
    return run_baseline(algo, data, cfg);
}

inline PerturbationSweep make_sweep(const SweepConfig& cfg) {
    PerturbationSweep s;
    s.param = parse_sweep_param(cfg.param);
    s.values = cfg.values;
    s.samples_per_value = cfg.samples_per_value;
    s.rollouts = cfg.rollouts;
    s.seed = cfg.seed;
    return s;
}

// ---------------------------------------------------------------------------
// Verification suites. Each suite draws from its own child seed, so running a
// subset or reordering them cannot change any report.

namespace detail {

inline void merge_into(SuiteReport& total, const SuiteReport& part, const std::string& key) {
    total.cases += part.cases;
    total.max_violation = std::max(total.max_violation, part.max_violation);
    total.pass = total.pass && part.pass;
    total.details[key] = part.details;
    total.details[key]["pass"] = part.pass;
}

} // namespace detail

inline SuiteReport run_verify_suite(const std::string& name, const VerifyConfig& cfg) {
    Rng rng = make_rng(child_seed(cfg.seed, name));
    if (name == "occupancy_tv_bounds") {
        SuiteReport total;
        total.suite = name;
        for (int m = 0; m < cfg.num_mdps; ++m) {
            const int S = 2 + uniform_index(rng, std::max(1, cfg.max_states - 1));
            const int A = 1 + uniform_index(rng, std::max(1, cfg.max_actions));
            for (double g : cfg.discounts) {
                const TabularMdp mdp = random_mdp(rng, S, A, g);
                const StochasticPolicy pi = random_policy(rng, S, A);
                for (double rp : cfg.rho_primes) {
                    const SuiteReport r = verify_occupancy_tv_bounds(mdp, pi, rp, cfg.kernel_samples, rng);
                    char key[96];
                    std::snprintf(key, sizeof key, "mdp%d_S%d_A%d_gamma%g_rho%g", m, S, A, g, rp);
                    detail::merge_into(total, r, key);
                }
            }
        }
        return total;
    }
    if (name == "prop1_scalar") {
        SuiteReport total;
        total.suite = name;
        for (const char* g : {"soft_tv", "kl", "chi2", "soft_chi2"})
            detail::merge_into(total, verify_prop1_scalar(make_generator(g), cfg.prop1_cases, rng), g);
        return total;
    }
    if (name == "generator_dominance") return verify_generator_dominance(cfg.dominance_points, cfg.dominance_pairs, 4, rng);
    if (name == "duality") return verify_duality(cfg.duality_instances, cfg.duality_radii, rng);
    if (name == "relaxation_sandwich")
        return verify_relaxation_sandwich(cfg.sandwich_instances, cfg.sandwich_rho_prime, rng);
    throw ModelError("unknown verify suite: " + name);
}

inline std::vector<SuiteReport> run_verify(const VerifyConfig& cfg) {
    std::vector<std::string> names;
    if (cfg.suite == "all") {
        names = verify_suite_names();
    } else {
        if (std::find(verify_suite_names().begin(), verify_suite_names().end(), cfg.suite) ==
            verify_suite_names().end())
            throw ModelError("unknown verify suite: " + cfg.suite);
        names = {cfg.suite};
    }
    std::vector<SuiteReport> out;
    for (const auto& n : names) out.push_back(run_verify_suite(n, cfg));
    return out;
}

} // namespace bedroil
