#include "bedroil/experiment.hpp"
#include "bedroil/io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace bedroil;

namespace {

std::string config_error(const std::string& text) {
    try {
        config_from_json(nlohmann::json::parse(text));
    } catch (const std::runtime_error& e) {
        return e.what();
    }
    return {};
}

} // namespace

TEST(MdpJson, RoundTripIsExact) {
    Rng rng = make_rng(1);
    const TabularMdp m = random_mdp(rng, 4, 3, 0.93);
    const TabularMdp back = mdp_from_json(nlohmann::json::parse(mdp_to_json(m).dump()));
    EXPECT_EQ(back.kernel, m.kernel);
    EXPECT_EQ(back.initial_dist, m.initial_dist);
    EXPECT_EQ(back.discount, m.discount);
    EXPECT_EQ(back.num_states, 4);
    EXPECT_EQ(back.num_actions, 3);
}

TEST(MdpJson, NestedKernelLayout) {
    const TabularMdp m{2, 1, {0.0, 1.0, 0.0, 1.0}, {1.0, 0.0}, 0.5};
    EXPECT_EQ(mdp_to_json(m).dump(),
              "{\"num_states\":2,\"num_actions\":1,\"kernel\":[[[0.0,1.0]],[[0.0,1.0]]],\"initial_dist\":[1.0,0.0],"
              "\"discount\":0.5}");
}

TEST(MdpJson, RejectsBadDocuments) {
    const TabularMdp m{2, 1, {0.0, 1.0, 0.0, 1.0}, {1.0, 0.0}, 0.5};
    auto j = nlohmann::json::parse(mdp_to_json(m).dump());
    auto extra = j;
    extra["reward"] = 1;
    EXPECT_THROW(mdp_from_json(extra), FormatError);
    auto missing = j;
    missing.erase("discount");
    EXPECT_THROW(mdp_from_json(missing), FormatError);
    auto shape = j;
    shape["kernel"][0][0] = {1.0};
    EXPECT_THROW(mdp_from_json(shape), FormatError);
    auto bad = j;
    bad["kernel"][0][0] = {0.5, 0.4};
    EXPECT_THROW(mdp_from_json(bad), ModelError);
    auto wrong_type = j;
    wrong_type["discount"] = "high";
    EXPECT_THROW(mdp_from_json(wrong_type), FormatError);
}

TEST(PolicyJson, RoundTrip) {
    Rng rng = make_rng(2);
    const StochasticPolicy p = random_policy(rng, 3, 4);
    const StochasticPolicy back = policy_from_json(nlohmann::json::parse(policy_to_json(p).dump()));
    EXPECT_EQ(back.probs, p.probs);
    auto j = nlohmann::json::parse(policy_to_json(p).dump());
    j["probs"][0] = {0.5, 0.5, 0.5, 0.5};
    EXPECT_THROW(policy_from_json(j), ModelError);
}

TEST(CheckpointJson, RoundTrip) {
    Checkpoint c;
    c.policy = SoftmaxPolicy(2, 3);
    c.policy.logits = {0.1, -2.0, 3.5, 1.0 / 3.0, 0.0, -1e-300};
    c.dual = DualState(2, 3, 0.37);
    c.dual.q_table = {1, 2, 3, 4, 5, 6.25};
    c.config = config_to_json(ExperimentConfig{});
    c.iteration = 3000;
    const Checkpoint back = checkpoint_from_json(Json::parse(to_json_text(checkpoint_to_json(c))));
    EXPECT_EQ(back.policy.logits, c.policy.logits);
    EXPECT_EQ(back.dual, c.dual);
    EXPECT_EQ(back.iteration, 3000);
    EXPECT_EQ(config_to_json(config_from_json(back.config)).dump(), c.config.dump());
    const auto keys = checkpoint_to_json(c);
    std::vector<std::string> names;
    for (const auto& [k, _] : keys.items()) names.push_back(k);
    EXPECT_EQ(names, (std::vector<std::string>{"logits", "q_table", "tau", "config", "iteration"}));
}

TEST(HistoryCsv, HeaderAndFormatting) {
    TrainingHistory h;
    HistoryRecord r;
    r.iteration = 2;
    r.dual_objective = 0.1;
    r.policy_loss = 1.0;
    r.tau = 2.0;
    h.records.push_back(r);
    std::ostringstream os;
    write_history_csv(os, h);
    EXPECT_EQ(os.str(),
              "iteration,dual_objective,policy_loss,tau,mean_weight,max_weight,balance_residual\n"
              "2,0.10000000000000001,1,2,1,1,nan\n");
}

TEST(ConfigJson, DefaultsRoundTrip) {
    const ExperimentConfig c;
    const Json j = config_to_json(c);
    EXPECT_EQ(config_to_json(config_from_json(nlohmann::json::parse(j.dump()))).dump(), j.dump());
    EXPECT_EQ(j["solver"]["batch_size"], "exact");
}

TEST(ConfigJson, PartialSectionsKeepDefaults) {
    const ExperimentConfig c = config_from_json(nlohmann::json::parse(R"({"solver": {"rho": 0.3, "batch_size": 32}})"));
    EXPECT_EQ(c.train.solver.rho, 0.3);
    EXPECT_EQ(c.train.solver.batch_size, 32);
    EXPECT_EQ(c.env.grid.width, 5);
    EXPECT_EQ(c.sweep.values, (std::vector<double>{0.0, 0.1, 0.2, 0.3}));
}

TEST(ConfigJson, UnknownKeysRejected) {
    EXPECT_NE(config_error(R"({"envv": {}})").find("unknown key"), std::string::npos);
    EXPECT_NE(config_error(R"({"solver": {"learning_rate": 1}})").find("solver.learning_rate"), std::string::npos);
    EXPECT_NE(config_error(R"({"verify": {"suite": "all", "x": 1}})").find("verify.x"), std::string::npos);
}

TEST(ConfigJson, SchemaViolations) {
    EXPECT_FALSE(config_error(R"({"solver": {"rho": "big"}})").empty());
    EXPECT_FALSE(config_error(R"({"solver": {"rho": -1}})").empty());
    EXPECT_FALSE(config_error(R"({"solver": {"batch_size": "all"}})").empty());
    EXPECT_FALSE(config_error(R"({"solver": {"batch_size": 0}})").empty());
    EXPECT_FALSE(config_error(R"({"solver": {"algo": "drbc"}})").empty());
    EXPECT_FALSE(config_error(R"({"solver": {"loss_mode": "mse"}})").empty());
    EXPECT_FALSE(config_error(R"({"env": {"goal": [2, 1]}})").empty());  // a wall
    EXPECT_FALSE(config_error(R"({"env": {"goal": [1]}})").empty());
    EXPECT_FALSE(config_error(R"({"dataset": {"mode": "online"}})").empty());
    EXPECT_FALSE(config_error(R"({"sweep": {"param": "gravity"}})").empty());
    EXPECT_FALSE(config_error(R"({"env": 3})").empty());
}

TEST(ConfigHash, StableAndSensitive) {
    ExperimentConfig a, b;
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
    b.train.solver.seed = 1;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Files, TextRoundTripAndErrors) {
    const auto path = (std::filesystem::temp_directory_path() / "bedroil_io_test.json").string();
    write_text(path, "{\"a\": 1}\n");
    EXPECT_EQ(read_text(path), "{\"a\": 1}\n");
    EXPECT_EQ(read_json_file(path)["a"], 1);
    write_text(path, "{oops");
    EXPECT_THROW(read_json_file(path), FormatError);
    std::filesystem::remove(path);
    EXPECT_THROW(read_text("/nonexistent/x.json"), FormatError);
}
