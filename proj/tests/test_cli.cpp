#include <cesim/cli.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "cesim");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cesim::cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

class TempDir {
public:
    TempDir()
        : path_(fs::temp_directory_path() /
                ("cesim_cli_" + std::to_string(::getpid()) + "_" +
                 ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

// Value printed after `key,` on its own line.
double value_of(const std::string& text, const std::string& key) {
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line))
        if (line.rfind(key + ",", 0) == 0) return std::stod(line.substr(key.size() + 1));
    ADD_FAILURE() << "no line " << key << " in\n" << text;
    return NAN;
}

}  // namespace

TEST(Cli, HelpListsEverySubcommand) {
    const auto r = run({"--help"});
    EXPECT_EQ(r.code, 0);
    for (const auto& [name, desc] : cesim::cli::subcommands()) EXPECT_NE(r.out.find(name), std::string::npos) << name;
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"fig2b", "--no-such-flag"}).code, 2);
    EXPECT_EQ(run({"fig2b", "--grid", "1:2"}).code, 2);
    EXPECT_EQ(run({"fig2b", "--grid", "a:b:c"}).code, 2);
    EXPECT_EQ(run({"fig2b", "--grid", "-1e6:1e6:1e5", "--uniform", "-1e6:1e6"}).code, 2);
    EXPECT_EQ(run({"fig2b", "--mode", "sometimes"}).code, 2);
    EXPECT_EQ(run({"fig2b", "--delta-hz", "-5"}).code, 2);
    EXPECT_EQ(run({"local", "--sweep-deg", "0:90:5"}).code, 2);
    const auto r = run({"frobnicate"});
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, CorrelationAtCrossedAnalyzersIsZero) {
    const auto r = run({"--xi-deg", "45", "--theta-deg", "45", "correlation"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "xi_deg,theta_deg,tau_si_s,r_normalized\n45,45,0,0\n");
}

TEST(Cli, CorrelationDefaultsToThePeak) {
    const auto r = run({"correlation"});
    EXPECT_EQ(r.out, "xi_deg,theta_deg,tau_si_s,r_normalized\n0,0,0,1\n");
}

TEST(Cli, CorrelationRawAndEnvelope) {
    EXPECT_EQ(run({"correlation", "--raw"}).out, "xi_deg,theta_deg,tau_si_s,r_raw\n0,0,0,0.0625\n");
    const auto r = run({"correlation", "--tau-si-s", "1e-6", "--xi-deg", "22.5", "--theta-deg", "22.5"});
    EXPECT_NE(r.out.find(cesim::format_number(0.5 * std::exp(-2.0))), std::string::npos) << r.out;
}

TEST(Cli, Fig2bDefaultMatchesGolden) {
    const auto r = run({"fig2b", "--mode", "analytic"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, slurp(fs::path(CESIM_GOLDEN_DIR) / "fig2b.csv"));
}

TEST(Cli, Fig2bSweepFlag) {
    const auto r = run({"fig2b", "--sweep-deg", "0:90:45", "--theta-deg", "0"});
    EXPECT_EQ(r.code, 0);
    std::stringstream ss(r.out);
    std::string line;
    int n = 0;
    while (std::getline(ss, line)) ++n;
    EXPECT_EQ(n, 4);
}

TEST(Cli, ChshDefaultsToCanonicalAngles) {
    const auto r = run({"chsh"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NEAR(value_of(r.out, "S_analytic"), 2.0 * std::numbers::sqrt2, 1e-9);
}

TEST(Cli, ChshBothMode) {
    const auto r = run({"chsh", "--mode", "both", "--pairs", "100000", "--threads", "4"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(value_of(r.out, "S_mc"), 2.0 * std::numbers::sqrt2, 0.1);
}

TEST(Cli, LocalAndDephasingRun) {
    auto r = run({"local"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out.rfind("xi_deg,theta_deg,tau_s,delta_f_hz,phase_rad,I_A,I_B,I_s,I_i\n", 0), 0u);
    r = run({"dephasing", "--samples", "2000", "--tau-s", "1e-4"});
    EXPECT_EQ(r.code, 0);
}

TEST(Cli, BothModeFig2aPasses) {
    const auto r = run({"fig2a", "--mode", "both", "--pairs", "50000", "--grid", "-1e6:1e6:1e6", "--xi-deg", "20"});
    EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, ConfigFileWithCommandLineOverride) {
    TempDir dir;
    const auto cfg = dir / "run.conf";
    std::ofstream(cfg) << "xi-deg=30\ntheta-deg=15\n";
    auto r = run({"correlation", "--config", cfg.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("\n30,15,0,"), std::string::npos) << r.out;
    r = run({"correlation", "--config", cfg.string(), "--xi-deg", "45", "--theta-deg", "45"});
    EXPECT_NE(r.out.find("\n45,45,0,0\n"), std::string::npos) << r.out;
    EXPECT_EQ(run({"correlation", "--config", (dir / "missing.conf").string()}).code, 2);
}

TEST(Cli, SeedPrecedence) {
    const std::vector<std::string> base{"correlation", "--mode", "mc", "--pairs", "70000", "--xi-deg", "30"};
    auto with = [&](std::vector<std::string> extra) {
        auto a = base;
        a.insert(a.end(), extra.begin(), extra.end());
        return run(a).out;
    };
    const auto s5 = with({"--seed", "5"});
    const auto s6 = with({"--seed", "6"});
    ASSERT_NE(s5, s6);
    ::setenv("CESIM_SEED", "6", 1);
    EXPECT_EQ(with({}), s6);
    EXPECT_EQ(with({"--seed", "5"}), s5);
    ::setenv("CESIM_SEED", "junk", 1);
    EXPECT_EQ(run(base).code, 2);
    ::unsetenv("CESIM_SEED");
}

TEST(Cli, IdenticalInvocationsGiveIdenticalFiles) {
    TempDir dir;
    for (const char* name : {"a.csv", "b.csv"})
        ASSERT_EQ(run({"fig2b", "--mode", "mc", "--pairs", "70000", "--seed", "9", "--out", (dir / name).string()}).code,
                  0);
    EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
    EXPECT_FALSE(slurp(dir / "a.csv").empty());
}

TEST(Cli, EventsGenerateThenMatch) {
    TempDir dir;
    const auto bin = dir / "s.bin";
    auto g = run({"events-generate", "--pairs", "100000", "--seed", "3", "--out", bin.string()});
    ASSERT_EQ(g.code, 0) << g.err;
    EXPECT_NEAR(value_of(g.out, "selection_efficiency"), 0.25, 0.006);

    const auto m = run({"events-match", "--in", bin.string(), "--out", (dir / "c.csv").string(), "--hist",
                        (dir / "h.csv").string(), "--bin-ps", "100"});
    ASSERT_EQ(m.code, 0) << m.err;
    EXPECT_GE(value_of(m.out, "recovery_rate"), 0.999);
    EXPECT_NEAR(value_of(m.out, "accepted_per_pair"), 0.25, 0.006);
    EXPECT_EQ(slurp(dir / "h.csv").rfind("bin_lo_ps,bin_hi_ps,count\n", 0), 0u);
    EXPECT_EQ(slurp(dir / "c.csv").rfind("t1_ps,t2_ps,tau_si_ps,accepted,reject_reason,pair_id1,pair_id2\n", 0), 0u);
}

TEST(Cli, EventsNeedPaths) {
    EXPECT_EQ(run({"events-generate"}).code, 2);
    EXPECT_EQ(run({"events-match"}).code, 2);
}

TEST(Cli, IoErrorsNameThePath) {
    const auto r = run({"events-match", "--in", "/nonexistent/stream.bin"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("/nonexistent/stream.bin"), std::string::npos);
    EXPECT_NE(r.err.find("No such file"), std::string::npos) << r.err;

    TempDir dir;
    const auto bad = dir / "bad.bin";
    std::ofstream(bad) << "NOTASTREAM";
    const auto d = run({"events-match", "--in", bad.string()});
    EXPECT_EQ(d.code, 1);
    EXPECT_NE(d.err.find("magic"), std::string::npos);
}

TEST(Cli, Selftest) {
    const auto r = run({"selftest", "--threads", "4"});
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}
