#include "bedroil/dataset.hpp"
#include "bedroil/io.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int exit_code = -1;
    std::string out;
};

Outcome run_cli(const std::string& args) {
    const std::string cmd = "SOURCE_DATE_EPOCH=1700000000 \"" BEDROIL_CLI_PATH "\" " + args + " 2>/dev/null";
    Outcome r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        out.push_back(text.substr(pos, nl - pos));
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return out;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() /
                ("bedroil_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    void TearDown() override { fs::remove_all(root_); }

    std::string out(const std::string& sub) const { return "--out \"" + (root_ / sub).string() + "\""; }

    std::string write_config(const std::string& text) const {
        const auto p = (root_ / "config.json").string();
        bedroil::write_text(p, text);
        return p;
    }

    fs::path root_;
};

/// Reads every file under `dir` into a map keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = bedroil::read_text(e.path().string());
    return files;
}

} // namespace

TEST_F(CliTest, GenEnvWritesMdpAndMetadata) {
    const Outcome r = run_cli("gen-env " + out("a"));
    ASSERT_EQ(r.exit_code, 0);
    const auto lines = lines_of(r.out);
    ASSERT_EQ(lines.size(), 3u);
    const auto mdp = bedroil::mdp_from_json(bedroil::read_json_file(lines[0]));
    EXPECT_EQ(mdp.num_states, 22);  // 25 cells minus 3 walls
    EXPECT_EQ(mdp.num_actions, 4);
    const fs::path dir = fs::path(lines[0]).parent_path();
    const auto meta = bedroil::read_json_file((dir / "gen-env.metadata.json").string());
    for (const char* k : {"command", "arguments", "config_hash", "seed", "config", "versions", "inputs", "outputs",
                          "warnings", "started_at", "finished_at"})
        EXPECT_TRUE(meta.contains(k)) << k;
    EXPECT_EQ(meta["config_hash"], dir.filename().string());
    EXPECT_EQ(meta["started_at"], "2023-11-14T22:13:20Z");
}

TEST_F(CliTest, GenDataThenTrainOnFile) {
    const Outcome g = run_cli("gen-data --seed 3 " + out("a"));
    ASSERT_EQ(g.exit_code, 0);
    const std::string data = lines_of(g.out).at(0);
    EXPECT_EQ(bedroil::load_dataset(data).trajectories.size(), 100u);
    const Outcome t = run_cli("train --algo bc --steps 50 --data \"" + data + "\" " + out("b"));
    ASSERT_EQ(t.exit_code, 0);
    const auto lines = lines_of(t.out);
    ASSERT_EQ(lines.size(), 2u);
    const auto ck = bedroil::checkpoint_from_json(bedroil::read_json_file(lines[0]));
    EXPECT_EQ(ck.iteration, 50);
    EXPECT_EQ(lines_of(bedroil::read_text(lines[1])).front(),
              "iteration,dual_objective,policy_loss,tau,mean_weight,max_weight,balance_residual");
    const auto meta = bedroil::read_json_file((fs::path(lines[0]).parent_path() / "train.metadata.json").string());
    ASSERT_EQ(meta["inputs"].size(), 1u);
    EXPECT_EQ(meta["inputs"][0]["path"], data);
}

TEST_F(CliTest, RepeatedTrainGivesIdenticalCheckpoint) {
    const Outcome a = run_cli("train --algo bedroil --rho 0.1 " + out("a"));
    ASSERT_EQ(a.exit_code, 0);
    const auto first = snapshot(root_ / "a");
    const Outcome b = run_cli("train --algo bedroil --rho 0.1 " + out("a"));
    ASSERT_EQ(b.exit_code, 0);
    EXPECT_EQ(first, snapshot(root_ / "a"));
    const Outcome c = run_cli("train --algo bedroil --rho 0.2 " + out("a"));
    EXPECT_NE(lines_of(c.out).at(0), lines_of(a.out).at(0));  // different config, different run directory
}

TEST_F(CliTest, SweepRowCount) {
    const Outcome r = run_cli("sweep --param slip_prob --values 0,0.1,0.2,0.3 --steps 200 " + out("a"));
    ASSERT_EQ(r.exit_code, 0);
    const auto rows = lines_of(bedroil::read_text(lines_of(r.out).at(0)));
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0], "param,value,exact_return,mc_return_mean,mc_return_std,exact_imitation_loss,kernel_tv_radius");
    EXPECT_EQ(rows[4].rfind("slip_prob,0.29999999999999999,", 0), 0u) << rows[4];

    const std::string cfg = write_config(R"({"sweep": {"samples_per_value": 3}, "solver": {"steps": 100}})");
    const Outcome r3 = run_cli("sweep --config \"" + cfg + "\" --param kernel_tv_random --values 0,0.1 " + out("b"));
    ASSERT_EQ(r3.exit_code, 0);
    EXPECT_EQ(lines_of(bedroil::read_text(lines_of(r3.out).at(0))).size(), 7u);
}

TEST_F(CliTest, EvalCheckpointAndExpert) {
    const Outcome t = run_cli("train --steps 100 " + out("a"));
    ASSERT_EQ(t.exit_code, 0);
    const Outcome e = run_cli("eval --checkpoint \"" + lines_of(t.out).at(0) + "\" " + out("b"));
    ASSERT_EQ(e.exit_code, 0);
    EXPECT_EQ(lines_of(bedroil::read_text(lines_of(e.out).at(0))).size(), 5u);
    const Outcome x = run_cli("eval --expert " + out("c"));
    ASSERT_EQ(x.exit_code, 0);
    EXPECT_EQ(run_cli("eval " + out("d")).exit_code, 2);
}

TEST_F(CliTest, VerifyDefaultsPassAllFiveSuites) {
    const Outcome r = run_cli("verify --suite all --seed 7 " + out("a"));
    ASSERT_EQ(r.exit_code, 0) << r.out;
    const auto lines = lines_of(r.out);
    ASSERT_EQ(lines.size(), 6u);
    const auto reports = bedroil::read_json_file(lines.back());
    ASSERT_EQ(reports.size(), 5u);
    for (const auto& rep : reports) EXPECT_TRUE(rep["pass"].get<bool>()) << rep["suite"];
}

TEST_F(CliTest, VerifySingleSuite) {
    const std::string cfg = write_config(R"({"verify": {"prop1_cases": 50}})");
    const Outcome r = run_cli("verify --config \"" + cfg + "\" --suite prop1_scalar " + out("a"));
    ASSERT_EQ(r.exit_code, 0);
    EXPECT_EQ(bedroil::read_json_file(lines_of(r.out).back()).size(), 1u);
    EXPECT_EQ(run_cli("verify --suite bogus " + out("b")).exit_code, 2);
}

TEST_F(CliTest, ErrorsExitNonzero) {
    EXPECT_NE(run_cli("train --config /nonexistent/cfg.json " + out("a")).exit_code, 0);
    EXPECT_EQ(run_cli("train --algo drbc " + out("a")).exit_code, 2);
    EXPECT_EQ(run_cli("train --config \"" + write_config(R"({"solver": {"learnrate": 1}})") + "\" " + out("a")).exit_code,
              2);
    EXPECT_EQ(run_cli("train --config \"" + write_config("{not json") + "\" " + out("a")).exit_code, 2);
    EXPECT_EQ(run_cli("sweep --values 0,abc " + out("a")).exit_code, 2);
    EXPECT_NE(run_cli("").exit_code, 0);
}
