#include "bedroil/baselines.hpp"
#include "bedroil/experiment.hpp"

#include <gtest/gtest.h>

using namespace bedroil;

namespace {

NominalData grid_data(std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.dataset.seed = seed;
    const Environment env = make_environment(cfg.env);
    const Dataset ds = make_dataset(env, cfg.dataset);
    return make_nominal_data(env, &ds, cfg.dataset, cfg.train.solver.loss_mode);
}

} // namespace

TEST(Baselines, BcRecoversExpertOnExactProblem) {
    Rng rng = make_rng(1);
    const TabularMdp m = random_mdp(rng, 5, 3, 0.9, 0.05);
    const StochasticPolicy expert = random_policy(rng, 5, 3, 0.05);
    SolverConfig cfg;
    cfg.steps = 20'000;
    const TrainResult r = run_baseline("bc", exact_nominal_data(m, expert), cfg);
    EXPECT_LE(max_state_kl(expert, r.policy.materialize()), 1e-3);
}

TEST(Baselines, RhoZeroAndBcAgreeOnGridworld) {
    const NominalData data = grid_data(0);
    const SolverConfig cfg = ExperimentConfig{}.train.solver;
    const TrainResult bc = run_baseline("bc", data, cfg), rho0 = run_baseline("bedroil_rho0", data, cfg);
    EXPECT_LE(max_state_tv(bc.policy.materialize(), rho0.policy.materialize()), 0.05);
}

TEST(Baselines, RhoZeroIgnoresConfiguredRadius) {
    const NominalData data = grid_data(1);
    SolverConfig cfg;
    cfg.steps = 200;
    cfg.rho = 0.3;
    const TrainResult a = run_baseline("bedroil_rho0", data, cfg);
    cfg.rho = 0.0;
    const TrainResult b = train_bedroil(data, cfg);
    EXPECT_EQ(a.history, b.history);
}

TEST(Baselines, DeterministicPerSeed) {
    const NominalData data = grid_data(2);
    SolverConfig cfg;
    cfg.steps = 200;
    cfg.batch_size = 64;
    cfg.seed = 4;
    for (const char* name : {"bc", "bedroil_rho0"}) {
        const TrainResult a = run_baseline(name, data, cfg), b = run_baseline(name, data, cfg);
        EXPECT_EQ(a.history, b.history) << name;
        EXPECT_EQ(a.policy.logits, b.policy.logits) << name;
    }
}

TEST(Baselines, HistoriesShareSchema) {
    const NominalData data = grid_data(3);
    SolverConfig cfg;
    cfg.steps = 50;
    cfg.log_every = 7;
    const TrainResult bc = run_baseline("bc", data, cfg), rho0 = run_baseline("bedroil_rho0", data, cfg);
    ASSERT_EQ(bc.history.records.size(), rho0.history.records.size());
    for (std::size_t i = 0; i < bc.history.records.size(); ++i)
        EXPECT_EQ(bc.history.records[i].iteration, rho0.history.records[i].iteration);
}

TEST(Baselines, UnknownName) {
    EXPECT_THROW(run_baseline("drbc", grid_data(0), SolverConfig{}), ModelError);
}
