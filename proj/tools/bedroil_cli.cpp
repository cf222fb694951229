#include "bedroil/experiment.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace bedroil;

namespace {

std::string utc_now() {
    std::time_t t;
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"))
        t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
    else
        t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string file_hash(const std::string& path) { return hex64(fnv1a(read_text(path))); }

Json versions() {
    Json v;
    v["bedroil"] = kVersion;
#if defined(__VERSION__)
    v["compiler"] = __VERSION__;
#endif
    v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    v["boost"] = BOOST_LIB_VERSION;
    v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                         std::to_string(NLOHMANN_JSON_VERSION_PATCH);
    return v;
}

/// One command invocation: resolves the run directory, collects outputs and
/// writes the run metadata.
class Run {
public:
    Run(std::string command, const ExperimentConfig& cfg, const std::string& out_root, std::uint64_t seed)
        : command_(std::move(command)), cfg_(cfg), seed_(seed), started_(utc_now()) {
        hash_ = config_hash(cfg_);
        dir_ = fs::path(out_root) / hash_;
        fs::create_directories(dir_);
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    void add_input(const std::string& p) { inputs_.push_back({{"path", p}, {"fnv1a", file_hash(p)}}); }

    void write(const std::string& name, const std::string& text) {
        write_text(path(name), text);
        outputs_.push_back({{"file", name}, {"fnv1a", hex64(fnv1a(text))}});
        std::cout << path(name) << '\n';
    }

    void warn(const std::string& w) {
        warnings_.push_back(w);
        std::cerr << "warning: " << w << '\n';
    }

    void finish(const std::vector<std::string>& args) {
        Json meta;
        meta["command"] = command_;
        meta["arguments"] = args;
        meta["config_hash"] = hash_;
        meta["seed"] = seed_;
        meta["config"] = config_to_json(cfg_);
        meta["versions"] = versions();
        meta["inputs"] = inputs_;
        meta["outputs"] = outputs_;
        meta["warnings"] = warnings_;
        meta["started_at"] = started_;
        meta["finished_at"] = utc_now();
        write_text(path(command_ + ".metadata.json"), to_json_text(meta));
    }

private:
    std::string command_;
    ExperimentConfig cfg_;
    std::uint64_t seed_;
    std::string started_;
    std::string hash_;
    fs::path dir_;
    Json inputs_ = Json::array(), outputs_ = Json::array();
    std::vector<std::string> warnings_;
};

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw ModelError("--values: cannot parse \"" + item + "\"");
        out.push_back(v);
    }
    if (out.empty()) throw ModelError("--values: empty list");
    return out;
}

struct Options {
    std::string config_path;
    std::string out = "runs";
    // train / sweep
    std::string algo;
    std::optional<double> rho;
    std::optional<std::uint64_t> seed;
    std::optional<int> steps;
    std::string data_path;
    // eval / sweep
    std::string checkpoint_path;
    bool use_expert = false;
    std::string param;
    std::string values;
    // verify
    std::string suite;
};

ExperimentConfig load_config(const Options& o, const std::string& fallback_checkpoint = {}) {
    if (!o.config_path.empty()) return config_from_json(read_json_file(o.config_path));
    if (!fallback_checkpoint.empty()) return config_from_json(checkpoint_from_json(read_json_file(fallback_checkpoint)).config);
    return {};
}

void apply_train_overrides(ExperimentConfig& cfg, const Options& o) {
    if (!o.algo.empty()) cfg.train.algo = o.algo;
    if (o.rho) cfg.train.solver.rho = *o.rho;
    if (o.seed) cfg.train.solver.seed = *o.seed;
    if (o.steps) cfg.train.solver.steps = *o.steps;
    if (cfg.train.algo != "bedroil" && cfg.train.algo != "bc" && cfg.train.algo != "bedroil_rho0")
        throw ModelError("--algo must be bedroil, bc or bedroil_rho0");
    cfg.train.solver.validate();
}

/// Trains per config, reading the dataset from --data when given.
TrainResult train_from(const ExperimentConfig& cfg, const Environment& env, const Options& o, Run& run) {
    std::optional<Dataset> ds;
    if (cfg.dataset.mode == "dataset") {
        if (!o.data_path.empty()) {
            std::vector<std::string> warnings;
            ds = load_dataset(o.data_path, &warnings);
            for (const auto& w : warnings) run.warn(w);
            run.add_input(o.data_path);
        } else {
            ds = make_dataset(env, cfg.dataset);
        }
    }
    std::vector<std::string> warnings;
    const NominalData data =
        make_nominal_data(env, ds ? &*ds : nullptr, cfg.dataset, cfg.train.solver.loss_mode, &warnings);
    for (const auto& w : warnings) run.warn(w);
    return train_algo(cfg.train.algo, data, cfg.train.solver);
}

std::string shift_csv(const ShiftTable& t) {
    std::ostringstream os;
    write_shift_csv(os, t);
    return os.str();
}

int cmd_gen_env(const Options& o, const std::vector<std::string>& args) {
    const ExperimentConfig cfg = load_config(o);
    Run run("gen-env", cfg, o.out, cfg.env.grid.step_noise_seed);
    const Environment env = make_environment(cfg.env);
    for (const auto& w : env.world.warnings) run.warn(w);
    run.write("mdp.json", to_json_text(mdp_to_json(env.world.mdp)));
    run.write("expert.json", to_json_text(policy_to_json(env.expert)));
    Json reward;
    reward["reward"] = env.world.reward;
    run.write("reward.json", to_json_text(reward));
    run.finish(args);
    return 0;
}

int cmd_gen_data(const Options& o, const std::vector<std::string>& args) {
    ExperimentConfig cfg = load_config(o);
    if (o.seed) cfg.dataset.seed = *o.seed;
    Run run("gen-data", cfg, o.out, cfg.dataset.seed);
    const Environment env = make_environment(cfg.env);
    std::ostringstream os;
    write_dataset(os, make_dataset(env, cfg.dataset));
    run.write("dataset.jsonl", os.str());
    run.finish(args);
    return 0;
}

int cmd_train(const Options& o, const std::vector<std::string>& args) {
    ExperimentConfig cfg = load_config(o);
    apply_train_overrides(cfg, o);
    Run run("train", cfg, o.out, cfg.train.solver.seed);
    const Environment env = make_environment(cfg.env);
    const TrainResult r = train_from(cfg, env, o, run);
    Checkpoint ck{r.policy, r.dual, config_to_json(cfg), cfg.train.solver.steps};
    run.write("checkpoint.json", to_json_text(checkpoint_to_json(ck)));
    std::ostringstream hist;
    write_history_csv(hist, r.history);
    run.write("history.csv", hist.str());
    run.finish(args);
    return 0;
}

StochasticPolicy policy_for_eval(const Options& o, const Environment& env, Run& run) {
    if (o.use_expert) return env.expert;
    run.add_input(o.checkpoint_path);
    const Checkpoint ck = checkpoint_from_json(read_json_file(o.checkpoint_path));
    if (ck.policy.num_states != env.world.mdp.num_states || ck.policy.num_actions != env.world.mdp.num_actions)
        throw ModelError("checkpoint does not match the environment");
    return ck.policy.materialize();
}

int cmd_eval(const Options& o, const std::vector<std::string>& args) {
    if (o.checkpoint_path.empty() && !o.use_expert) throw ModelError("eval needs --checkpoint or --expert");
    const ExperimentConfig cfg = load_config(o, o.checkpoint_path);
    Run run("eval", cfg, o.out, cfg.sweep.seed);
    const Environment env = make_environment(cfg.env);
    const StochasticPolicy pi = policy_for_eval(o, env, run);
    const ShiftTable t = evaluate_under_shift(pi, cfg.env.grid, make_sweep(cfg.sweep), env.expert);
    for (const auto& s : t.skipped) run.warn("skipped " + s);
    run.write("eval.csv", shift_csv(t));
    run.finish(args);
    return 0;
}

int cmd_sweep(const Options& o, const std::vector<std::string>& args) {
    ExperimentConfig cfg = load_config(o, o.checkpoint_path);
    if (!o.param.empty()) cfg.sweep.param = o.param;
    if (!o.values.empty()) cfg.sweep.values = parse_values(o.values);
    apply_train_overrides(cfg, o);
    Run run("sweep", cfg, o.out, cfg.sweep.seed);
    const Environment env = make_environment(cfg.env);
    StochasticPolicy pi;
    if (!o.checkpoint_path.empty() || o.use_expert)
        pi = policy_for_eval(o, env, run);
    else
        pi = train_from(cfg, env, o, run).policy.materialize();
    const ShiftTable t = evaluate_under_shift(pi, cfg.env.grid, make_sweep(cfg.sweep), env.expert);
    for (const auto& s : t.skipped) run.warn("skipped " + s);
    run.write("sweep.csv", shift_csv(t));
    run.finish(args);
    return 0;
}

int cmd_verify(const Options& o, const std::vector<std::string>& args) {
    ExperimentConfig cfg = load_config(o);
    if (o.seed) cfg.verify.seed = *o.seed;
    if (!o.suite.empty()) cfg.verify.suite = o.suite;
    Run run("verify", cfg, o.out, cfg.verify.seed);
    const auto reports = run_verify(cfg.verify);
    Json all = Json::array();
    bool ok = true;
    for (const auto& r : reports) {
        Json brief;
        brief["suite"] = r.suite;
        brief["cases"] = r.cases;
        brief["max_violation"] = r.max_violation;
        brief["pass"] = r.pass;
        std::cout << brief.dump() << '\n';
        all.push_back(r.to_json());
        ok = ok && r.pass;
    }
    run.write("verify.json", to_json_text(all));
    run.finish(args);
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Balance-equation robust offline imitation learning on tabular MDPs"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--config", o.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--out", o.out, "root of the run directories")->capture_default_str();

    auto* gen_env = app.add_subcommand("gen-env", "write the gridworld MDP and its expert policy");
    auto* gen_data = app.add_subcommand("gen-data", "sample expert demonstrations (JSON lines)");
    gen_data->add_option("--seed", o.seed, "dataset seed");
    auto* train = app.add_subcommand("train", "train a policy; writes checkpoint and history");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over the configured sweep");
    auto* sweep = app.add_subcommand("sweep", "train (or load) a policy and evaluate it over a perturbation sweep");
    for (auto* sub : {train, sweep}) {
        sub->add_option("--algo", o.algo, "bedroil | bc | bedroil_rho0");
        sub->add_option("--rho", o.rho, "occupancy divergence radius");
        sub->add_option("--seed", o.seed, "solver seed");
        sub->add_option("--steps", o.steps, "training steps");
        sub->add_option("--data", o.data_path, "dataset file instead of sampling one")->check(CLI::ExistingFile);
    }
    for (auto* sub : {eval, sweep}) {
        sub->add_option("--checkpoint", o.checkpoint_path, "checkpoint to evaluate")->check(CLI::ExistingFile);
        sub->add_flag("--expert", o.use_expert, "evaluate the expert policy");
    }
    sweep->add_option("--param", o.param, "slip_prob | wind_scale | kernel_tv_random");
    sweep->add_option("--values", o.values, "comma-separated ascending values");
    auto* verify = app.add_subcommand("verify", "run the property suites; nonzero exit on any failure");
    verify->add_option("--suite", o.suite, "all | occupancy_tv_bounds | prop1_scalar | generator_dominance | "
                                           "duality | relaxation_sandwich");
    verify->add_option("--seed", o.seed, "verification seed");

    CLI11_PARSE(app, argc, argv);
    const std::vector<std::string> args(argv + 1, argv + argc);
    try {
        if (*gen_env) return cmd_gen_env(o, args);
        if (*gen_data) return cmd_gen_data(o, args);
        if (*train) return cmd_train(o, args);
        if (*eval) return cmd_eval(o, args);
        if (*sweep) return cmd_sweep(o, args);
        if (*verify) return cmd_verify(o, args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
