#include "bedroil/experiment.hpp"
#include "bedroil/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bedroil;

namespace {

TabularMdp two_state_mdp() {
    // action 0 stays, action 1 switches; a little noise keeps both states visited
    TabularMdp m{2, 2, {0.9, 0.1, 0.2, 0.8, 0.1, 0.9, 0.7, 0.3}, {0.6, 0.4}, 0.9};
    return m;
}

const StochasticPolicy kTwoStateExpert{2, 2, {0.8, 0.2, 0.3, 0.7}};

SolverConfig quick_config(int steps) {
    SolverConfig c;
    c.steps = steps;
    return c;
}

struct GridSetup {
    Environment env;
    NominalData data;
};

const GridSetup& acceptance_grid() {
    static const GridSetup setup = [] {
        ExperimentConfig cfg;
        GridSetup g{make_environment(cfg.env), {}};
        const Dataset ds = make_dataset(g.env, cfg.dataset);
        g.data = make_nominal_data(g.env, &ds, cfg.dataset, cfg.train.solver.loss_mode);
        return g;
    }();
    return setup;
}

} // namespace

TEST(TrainBedroil, RhoZeroRecoversExpertOnTwoStates) {
    const NominalData data = exact_nominal_data(two_state_mdp(), kTwoStateExpert);
    SolverConfig cfg = quick_config(20'000);
    cfg.rho = 0.0;
    const TrainResult r = train_bedroil(data, cfg);
    EXPECT_LE(max_state_kl(kTwoStateExpert, r.policy.materialize()), 1e-3);
}

TEST(TrainBc, RecoversExpertInExactMode) {
    Rng rng = make_rng(3);
    for (int rep = 0; rep < 3; ++rep) {
        const TabularMdp m = random_mdp(rng, 4, 3, 0.8, 0.05);
        const StochasticPolicy expert = random_policy(rng, 4, 3, 0.05);
        const TrainResult r = train_bc(exact_nominal_data(m, expert), quick_config(20'000));
        EXPECT_LE(max_state_kl(expert, r.policy.materialize()), 1e-3) << "rep " << rep;
    }
}

TEST(TrainBedroil, FixedSeedIsBitIdentical) {
    const NominalData data = exact_nominal_data(two_state_mdp(), kTwoStateExpert);
    SolverConfig cfg = quick_config(300);
    cfg.batch_size = 16;
    cfg.seed = 5;
    const TrainResult a = train_bedroil(data, cfg), b = train_bedroil(data, cfg);
    EXPECT_EQ(a.history, b.history);
    EXPECT_EQ(a.policy.logits, b.policy.logits);
    EXPECT_EQ(a.dual, b.dual);
    cfg.seed = 6;
    EXPECT_NE(train_bedroil(data, cfg).history, a.history);
}

TEST(TrainBc, FixedSeedIsBitIdentical) {
    const NominalData data = exact_nominal_data(two_state_mdp(), kTwoStateExpert);
    SolverConfig cfg = quick_config(300);
    cfg.batch_size = 16;
    EXPECT_EQ(train_bc(data, cfg).history, train_bc(data, cfg).history);
}

TEST(TrainBc, EqualsBedroilWithUnitWeights) {
    const NominalData exact = exact_nominal_data(two_state_mdp(), kTwoStateExpert);
    for (int batch : {0, 8}) {
        for (StageOrder order : {StageOrder::dual_first, StageOrder::policy_first}) {
            SolverConfig cfg = quick_config(500);
            cfg.batch_size = batch;
            cfg.order = order;
            cfg.seed = 11;
            const TrainResult bc = train_bc(exact, cfg);
            cfg.force_unit_weights = true;
            const TrainResult forced = train_bedroil(exact, cfg);
            ASSERT_EQ(bc.history.records.size(), forced.history.records.size());
            for (std::size_t i = 0; i < bc.history.records.size(); ++i)
                EXPECT_NEAR(bc.history.records[i].policy_loss, forced.history.records[i].policy_loss, 1e-9)
                    << "batch " << batch << " record " << i;
        }
    }
}

TEST(TrainBedroil, HistoryInvariants) {
    const GridSetup& g = acceptance_grid();
    SolverConfig cfg = quick_config(400);
    cfg.log_every = 1;
    cfg.rho = 0.5;
    const TrainResult r = train_bedroil(g.data, cfg);
    ASSERT_EQ(r.history.records.size(), 400u);
    for (const auto& rec : r.history.records) {
        EXPECT_GE(rec.tau, cfg.tau_min);
        EXPECT_GE(rec.mean_weight, 0.0);
        EXPECT_LE(rec.max_weight, cfg.saturation_weight);
        EXPECT_TRUE(std::isfinite(rec.dual_objective));
    }
    EXPECT_GE(r.dual.tau, cfg.tau_min);
}

TEST(TrainBedroil, TauStaysAboveFloorUnderAggressiveSteps) {
    const NominalData data = exact_nominal_data(two_state_mdp(), kTwoStateExpert);
    SolverConfig cfg = quick_config(200);
    cfg.rho = 5.0;  // pushes tau down hard
    cfg.lr_dual = 1.0;
    cfg.tau_min = 1e-3;
    for (const auto& rec : train_bedroil(data, cfg).history.records) EXPECT_GE(rec.tau, 1e-3);
}

TEST(TrainBedroil, LogEveryKeepsFinalIteration) {
    const NominalData data = exact_nominal_data(two_state_mdp(), kTwoStateExpert);
    SolverConfig cfg = quick_config(95);
    cfg.log_every = 10;
    const auto& recs = train_bedroil(data, cfg).history.records;
    ASSERT_EQ(recs.size(), 11u);
    EXPECT_EQ(recs.front().iteration, 0);
    EXPECT_EQ(recs.back().iteration, 94);
}

TEST(TrainBedroil, NonFiniteObjectiveAbortsWithIteration) {
    NominalData data = exact_nominal_data(two_state_mdp(), kTwoStateExpert);
    data.transitions.front().mass = std::numeric_limits<double>::quiet_NaN();
    try {
        train_bedroil(data, quick_config(10));
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("iteration 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("tau="), std::string::npos) << msg;
    }
}

TEST(SolverConfig, RejectsInvalidSettings) {
    const NominalData data = exact_nominal_data(two_state_mdp(), kTwoStateExpert);
    SolverConfig c = quick_config(10);
    c.rho = -0.1;
    EXPECT_THROW(train_bedroil(data, c), ModelError);
    c = quick_config(0);
    EXPECT_THROW(train_bc(data, c), ModelError);
    c = quick_config(10);
    c.lr_policy = 0.0;
    EXPECT_THROW(train_bedroil(data, c), ModelError);
    c = quick_config(10);
    c.generator = "tv";
    EXPECT_THROW(train_bedroil(data, c), ModelError);
    EXPECT_THROW(train_bedroil(NominalData{}, quick_config(10)), ModelError);
}

TEST(TrainBedroil, DualGradientCheckDuringSmokeRun) {
    const GridSetup& g = acceptance_grid();
    const FGenerator gen = make_generator("soft_tv");
    const double h = 1e-5;
    // Rarely visited states have gradients near 1e-9, below the ~1e-9 roundoff of
    // differencing a 2000-term sum, so the relative error is floored at 1e-4.
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4}); };
    for (int steps : {1, 150, 300}) {
        SolverConfig cfg = quick_config(steps);
        const TrainResult r = train_bedroil(g.data, cfg);
        const StochasticPolicy pi = r.policy.materialize();
        const DualEvaluation ev = dual_objective(r.dual, pi, g.data, gen, cfg.rho);
        Rng rng = make_rng(static_cast<std::uint64_t>(steps));
        for (int probe = 0; probe < 10; ++probe) {
            const std::size_t k = static_cast<std::size_t>(uniform_index(rng, static_cast<int>(ev.grad_q.size())));
            DualState up = r.dual, dn = r.dual;
            up.q_table[k] += h;
            dn.q_table[k] -= h;
            const double fd =
                (dual_objective(up, pi, g.data, gen, cfg.rho).value - dual_objective(dn, pi, g.data, gen, cfg.rho).value) /
                (2 * h);
            EXPECT_LE(rel(fd, ev.grad_q[k]), 1e-4)
                << "steps " << steps << " q" << k;
        }
        DualState up = r.dual, dn = r.dual;
        up.tau += h;
        dn.tau -= h;
        const double fd =
            (dual_objective(up, pi, g.data, gen, cfg.rho).value - dual_objective(dn, pi, g.data, gen, cfg.rho).value) /
            (2 * h);
        EXPECT_LE(rel(fd, ev.grad_tau), 1e-4)
            << "steps " << steps << " tau";
    }
}

TEST(TrainBedroil, SmoothedDualNonIncreasingOverSecondHalf) {
    const GridSetup& g = acceptance_grid();
    SolverConfig cfg = ExperimentConfig{}.train.solver;
    cfg.log_every = 1;
    const auto& recs = train_bedroil(g.data, cfg).history.records;
    const int window = 100;
    std::vector<double> smooth;
    double acc = 0.0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        acc += recs[i].dual_objective;
        if (i >= static_cast<std::size_t>(window)) acc -= recs[i - window].dual_objective;
        if (i + 1 >= static_cast<std::size_t>(window)) smooth.push_back(acc / window);
    }
    // each smoothed value may exceed the running minimum by at most 5% of the scale
    const std::size_t start = recs.size() / 2 - window + 1;
    double running_min = smooth[start];
    for (std::size_t i = start; i < smooth.size(); ++i) {
        EXPECT_LE(smooth[i], running_min + 0.05 * std::abs(running_min)) << "record " << i + window - 1;
        running_min = std::min(running_min, smooth[i]);
    }
}

TEST(EffectiveInitialStates, CountsEveryVisitedState) {
    Dataset ds;
    ds.trajectories.push_back({{0, 1, 1}, {0, 1}});
    const auto d = effective_initial_states(ds, 2);
    EXPECT_NEAR(d[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(d[1], 2.0 / 3.0, 1e-15);
}

TEST(EffectiveInitialStates, EmptyTrajectoryFilteredWithWarning) {
    Dataset ds;
    ds.trajectories.push_back({{1}, {}});
    ds.trajectories.push_back({{0, 0}, {1}});
    std::vector<std::string> warnings;
    const auto d = effective_initial_states(ds, 2, &warnings);
    EXPECT_EQ(d, (std::vector<double>{1.0, 0.0}));
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("empty"), std::string::npos);
}

TEST(EffectiveInitialStates, ExactModeUsesTrueInitialDistribution) {
    const TabularMdp m = two_state_mdp();
    const auto init = exact_nominal_data(m, kTwoStateExpert).initial_states();
    for (int s = 0; s < 2; ++s) EXPECT_NEAR(init[s], m.initial_dist[s], 1e-15);
}
