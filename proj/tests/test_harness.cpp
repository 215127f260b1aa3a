#include <gtest/gtest.h>
#include <json.hpp>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "reslab/harness.hpp"

using namespace reslab;
using namespace reslab::harness;
namespace fs = std::filesystem;

namespace {

bool g_bless = false;

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::path(testing::TempDir()) / "reslab_harness" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct CliRun {
  int code = -1;
  std::string out, err;
};

// Runs the CLI with stdout and stderr captured to files in dir.
CliRun cli(const std::string& args, const fs::path& dir, const std::string& env = "") {
  fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
  std::string cmd = env + (env.empty() ? "" : " ") + std::string(RESLAB_CLI_PATH) + " " + args + " > " + o.string() +
                    " 2> " + e.string();
  int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

// Field-by-field comparison: numbers to a relative tolerance, everything else exactly.
void expect_matches_golden(const std::string& actual, const std::string& name, double rel = 1e-8) {
  fs::path golden = fs::path(RESLAB_GOLDEN_DIR) / name;
  if (g_bless) {
    std::ofstream(golden) << actual;
    return;
  }
  ASSERT_TRUE(fs::exists(golden)) << golden << " missing; run test_harness --bless";
  auto want = split(slurp(golden), '\n'), got = split(actual, '\n');
  ASSERT_EQ(want.size(), got.size()) << name;
  for (size_t i = 0; i < want.size(); ++i) {
    auto a = split(want[i], ','), b = split(got[i], ',');
    ASSERT_EQ(a.size(), b.size()) << name << " line " << i;
    for (size_t j = 0; j < a.size(); ++j) {
      char* end1 = nullptr;
      char* end2 = nullptr;
      double x = std::strtod(a[j].c_str(), &end1), y = std::strtod(b[j].c_str(), &end2);
      if (!a[j].empty() && *end1 == '\0' && !b[j].empty() && *end2 == '\0') {
        EXPECT_LE(std::abs(x - y), rel * std::max(1.0, std::abs(x))) << name << " line " << i << " field " << j;
      } else {
        EXPECT_EQ(a[j], b[j]) << name << " line " << i << " field " << j;
      }
    }
  }
}

RunConfig sample_config() {
  RunConfig c;
  c.subcommand = "montecarlo";
  c.master_seed = 18446744073709551615ull;
  c.output_prefix = "runs/a";
  c.set("potential.kind", "smooth_bump");
  c.set("potential.support", "-1,1");
  c.set("potential.v0", "2");
  c.set("window.a", "0.5");
  c.set("window.b", "2");
  c.set("window.c", "1.0");
  c.set("h", "0.05");
  c.set("perturb.s", "1");
  c.set("perturb.eps", "0.25");
  c.set("perturb.theta", "0.25");
  c.set("perturb.alpha", "3.5");
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------------------------

TEST(Config, RoundTripIsByteIdentical) {
  RunConfig c = sample_config();
  std::string text = c.to_text();
  RunConfig d = RunConfig::parse(text);
  EXPECT_EQ(c, d);
  EXPECT_EQ(d.to_text(), text);
  EXPECT_NE(text.find("seed = 18446744073709551615\n"), std::string::npos);
}

TEST(Config, CommentsAndSpacingNormalise) {
  std::string loose = "# run\n\n   h=0.1\nwindow.a =0.5  \nseed= 7\n";
  RunConfig c = RunConfig::parse(loose);
  EXPECT_EQ(c.master_seed, 7u);
  EXPECT_EQ(c.get("h", ""), "0.1");
  std::string canon = c.to_text();
  EXPECT_EQ(canon, "h = 0.1\noutput_prefix = out\nseed = 7\nwindow.a = 0.5\n");
  EXPECT_EQ(RunConfig::parse(canon).to_text(), canon);
}

TEST(Config, RejectsBadInput) {
  auto kind = [](const std::string& text) {
    try {
      RunConfig::parse(text);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::validation;
    }
    return false;
  };
  EXPECT_TRUE(kind("colour = red\n"));
  EXPECT_TRUE(kind("h = 0.1\nh = 0.2\n"));
  EXPECT_TRUE(kind("h 0.1\n"));
  EXPECT_TRUE(kind("seed = -3\n"));
  EXPECT_TRUE(kind("seed = 12abc\n"));
  EXPECT_TRUE(kind("h =\n"));
  RunConfig c = RunConfig::parse("h = abc\n");
  EXPECT_THROW(c.number("h", 0), Error);
}

TEST(Config, SeedEnvironmentOverride) {
  RunConfig c = sample_config();
  ::setenv("RESLAB_SEED", "42", 1);
  apply_seed_env(c);
  ::unsetenv("RESLAB_SEED");
  EXPECT_EQ(c.master_seed, 42u);
  apply_seed_env(c);
  EXPECT_EQ(c.master_seed, 42u);
}

TEST(Config, WindowAndPotential) {
  RunConfig c = sample_config();
  SpectralWindow w = window_from(c);
  EXPECT_DOUBLE_EQ(w.h, 0.05);
  EXPECT_DOUBLE_EQ(w.b, 2.0);
  PotentialSpec V = potential_from(c);
  EXPECT_EQ(V.kind, PotentialKind::smooth_bump);
  EXPECT_EQ(V.v0, 2);
  RunConfig bad = c;
  bad.set("window.c", "5");
  EXPECT_THROW(window_from(bad), Error);
  RunConfig noh = RunConfig::parse("window.a = 0.5\n");
  EXPECT_THROW(window_from(noh), Error);
}

// ---------------------------------------------------------------------------------------------

TEST(Zworski, SquareWellSlope) {
  auto rep = zworski_density(square_well(1.0, {-1.0, 1.0}), 40.0);
  EXPECT_FALSE(rep.empty);
  EXPECT_NEAR(rep.target, 4.0 / pi, 1e-15);
  EXPECT_LT(rep.rel_error, 0.1);
  EXPECT_GE(rep.k.size(), 40u);
  for (size_t i = 1; i < rep.N.size(); ++i) EXPECT_GE(rep.N[i], rep.N[i - 1]);
}

TEST(Zworski, PolesAreZerosOfTheRungeKuttaJostFunction) {
  PotentialSpec V = square_well(1.0, {-1.0, 1.0});
  auto rep = zworski_density(V, 15.0);
  int checked = 0;
  for (cplx k : rep.k) {
    if (k.real() <= 0.5) continue;
    // Independent oracle: RK4 in the z-plane, where sqrt(k^2) = k for Re k > 0.
    cplx f = jost_1d(V, 1.0, k * k, 20000);
    cplx scale = jost_1d(V, 1.0, (k + 0.05) * (k + 0.05), 20000);
    EXPECT_LT(std::abs(f), 1e-6 * std::abs(scale)) << k;
    // Closed form for the well: (q^2 + k^2) sin(2q) + 2 i k q cos(2q) = 0, q^2 = k^2 + 1.
    cplx q = std::sqrt(k * k + 1.0);
    cplx g = (q * q + k * k) * std::sin(2.0 * q) + 2.0 * I * k * q * std::cos(2.0 * q);
    EXPECT_LT(std::abs(g), 1e-9 * std::abs(k * k * std::cos(2.0 * q))) << k;
    ++checked;
  }
  EXPECT_GE(checked, 5);
}

TEST(Zworski, ZeroPotentialIsEmpty) {
  PotentialSpec V = square_well(0.0, {-1.0, 1.0});
  auto rep = zworski_density(V, 40.0);
  EXPECT_TRUE(rep.empty);
  EXPECT_TRUE(rep.k.empty());
}

TEST(Zworski, DoublingSupportDoublesSlope) {
  auto one = zworski_density(square_well(1.0, {-1.0, 1.0}), 40.0);
  auto two = zworski_density(square_well(1.0, {-2.0, 2.0}), 40.0);
  EXPECT_NEAR(two.slope / one.slope, 2.0, 0.2);
}

TEST(Zworski, TooFewResonances) {
  EXPECT_THROW(zworski_density(square_well(1.0, {-1.0, 1.0}), 3.0), Error);
  EXPECT_THROW(zworski_density(square_well(1.0, {-1.0, 1.0}), -1.0), Error);
}

TEST(Zworski, SmoothPotentialUsesIntegrator) {
  // Exact transfer and RK4 agree on the well when the kind is hidden.
  PotentialSpec V = square_well(1.0, {-1.0, 1.0});
  PotentialSpec W = V;
  W.kind = PotentialKind::tabulated;
  for (cplx k : {cplx(2.0, -0.5), cplx(7.0, -2.0), cplx(-3.0, -1.0)})
    EXPECT_LT(std::abs(jost_k(V, 1.0, k) - jost_k(W, 1.0, k, 2000)), 1e-7 * std::abs(jost_k(V, 1.0, k)));
}

// ---------------------------------------------------------------------------------------------

TEST(DetCheck, TrialsPass) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    auto d = det_trial(rng, 8);
    EXPECT_TRUE(d.multiplicities_match);
    EXPECT_TRUE(d.additive);
    EXPECT_LT(d.logdet_error, 1e-6);
    EXPECT_LE(d.n, 8);
  }
}

// ---------------------------------------------------------------------------------------------
// Command line.

TEST(Cli, ResonancesExample) {
  auto dir = scratch("resonances");
  auto r = cli("resonances --potential square_well --h 0.1 --window 0.5,2,1.0 --method both --out " +
                   (dir / "res.csv").string(),
               dir);
  ASSERT_EQ(r.code, 0) << r.err;
  std::string csv = slurp(dir / "res.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "re_z,im_z,multiplicity,method,h");
  expect_matches_golden(csv, "resonances_square_well.csv", 1e-6);
}

TEST(Cli, ValidationErrorsExitTwo) {
  auto dir = scratch("validation");
  EXPECT_EQ(cli("resonances --potential square_well --window 0.5,2,1.0", dir).code, 2);
  EXPECT_EQ(cli("resonances --h 0.1 --frobnicate 3", dir).code, 2);
  EXPECT_EQ(cli("teleport", dir).code, 2);
  EXPECT_EQ(cli("", dir).code, 2);
  EXPECT_EQ(cli("resonances --h 0.1 --window 0.5,2", dir).code, 2);
  EXPECT_EQ(cli("resonances --h 0.1 --method guess", dir).code, 2);
  std::ofstream(dir / "bad.cfg") << "colour = red\n";
  EXPECT_EQ(cli("montecarlo --config " + (dir / "bad.cfg").string(), dir).code, 2);
  EXPECT_EQ(cli("zworski-density --rmax 2", dir).code, 2);
  EXPECT_EQ(cli("resonances --help", dir).code, 0);
}

TEST(Cli, WkbAndDetCheck) {
  auto dir = scratch("checks");
  auto w = cli("wkb-check --h 0.05 --order 1", dir);
  ASSERT_EQ(w.code, 0) << w.err;
  EXPECT_EQ(w.out.substr(0, w.out.find('\n')), "node,re_x,re_remainder,im_remainder,oracle_abs,bound");
  auto d = cli("det-check --trials 5 --size 6 --seed 11", dir);
  ASSERT_EQ(d.code, 0) << d.err;
  expect_matches_golden(d.out, "det_check.csv", 1e-4);
}

TEST(Cli, PerturbJsonLines) {
  auto dir = scratch("perturb");
  auto r = cli("perturb --h 0.1 --count 4 --seed 9", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  auto lines = split(r.out, '\n');
  ASSERT_EQ(lines.size(), 4u);
  for (const auto& l : lines) {
    auto j = nlohmann::json::parse(l);
    for (const char* k : {"seed", "R", "alpha_norm", "q_sup", "W_sup", "dim"}) EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_LE(j["alpha_norm"].get<double>(), j["R"].get<double>());
    EXPECT_LE(j["W_sup"].get<double>(), 0.5 * 0.1 + 1e-12);
  }
  // Worker count does not change the draws.
  auto again = cli("perturb --h 0.1 --count 4 --seed 9", dir);
  EXPECT_EQ(again.out, r.out);
  std::string csvish;
  for (const auto& l : lines) {
    auto j = nlohmann::json::parse(l);
    std::ostringstream os;
    os.precision(12);
    os << j["seed"].get<std::uint64_t>() << ',' << j["R"].get<double>() << ',' << j["alpha_norm"].get<double>() << ','
       << j["W_sup"].get<double>() << ',' << j["dim"].get<int>() << '\n';
    csvish += os.str();
  }
  expect_matches_golden(csvish, "perturb_draws.csv", 1e-9);
}

TEST(Cli, MonteCarloOutputsAndSeeds) {
  auto dir = scratch("montecarlo");
  std::ofstream(dir / "run.cfg") << "h = 0.2\nsamples = 3\nseed = 5\n";
  auto r = cli("montecarlo --config " + (dir / "run.cfg").string() + " --out " + (dir / "a").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  auto records = slurp(dir / "a" / "records.csv");
  EXPECT_EQ(records.substr(0, records.find('\n')),
            "index,seed,n_res,n0_ab,boundary_terms,discrepancy,bound,method_gap,within,discarded");
  auto j = nlohmann::json::parse(slurp(dir / "a" / "summary.json"));
  for (const char* k : {"h", "window", "samples", "frac_within_bound", "mean_discrepancy", "mean_n0", "seed"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["seed"].get<std::uint64_t>(), 5u);
  EXPECT_DOUBLE_EQ(j["h"].get<double>(), 0.2);
  EXPECT_TRUE(j["window"].contains("a") && j["window"].contains("b") && j["window"].contains("c"));
  // The written config reproduces the run bit for bit.
  auto again = cli("montecarlo --config " + (dir / "a" / "config.txt").string() + " --out " + (dir / "b").string(), dir);
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(slurp(dir / "b" / "records.csv"), records);
  // The environment seed replaces the configured one; an explicit flag wins over both.
  auto env = cli("montecarlo --config " + (dir / "run.cfg").string() + " --out " + (dir / "c").string(), dir,
                 "RESLAB_SEED=77");
  ASSERT_EQ(env.code, 0) << env.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "c" / "summary.json"))["seed"].get<std::uint64_t>(), 77u);
  auto flag = cli("montecarlo --config " + (dir / "run.cfg").string() + " --seed 8 --out " + (dir / "d").string(),
                  dir, "RESLAB_SEED=77");
  ASSERT_EQ(flag.code, 0) << flag.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "d" / "summary.json"))["seed"].get<std::uint64_t>(), 8u);
  expect_matches_golden(records, "montecarlo_records.csv", 1e-6);
}

TEST(Cli, ZworskiDensity) {
  auto dir = scratch("zworski");
  auto r = cli("zworski-density --rmax 40 --out " + (dir / "z").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("slope"), std::string::npos);
  expect_matches_golden(slurp(dir / "z" / "counting.csv"), "zworski_counting.csv", 0.0);
  auto zero = cli("zworski-density --height 0 --out " + (dir / "y").string(), dir);
  EXPECT_EQ(zero.code, 0);
  EXPECT_NE(zero.out.find("no resonances"), std::string::npos);
}

int main(int argc, char** argv) {
  std::vector<char*> args;
  for (int i = 0; i < argc; ++i) {
    if (std::string(argv[i]) == "--bless")
      g_bless = true;
    else
      args.push_back(argv[i]);
  }
  int n = int(args.size());
  testing::InitGoogleTest(&n, args.data());
  return RUN_ALL_TESTS();
}
