#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "reslab/counting.hpp"
#include "reslab/harness.hpp"
#include "reslab/perturb.hpp"
#include "reslab/resonance.hpp"
#include "reslab/wkb.hpp"

using namespace reslab;
using namespace reslab::harness;
namespace fs = std::filesystem;

namespace {

// Flag values captured as text and copied into the RunConfig when given.
struct Flags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    options[key] = app->add_option(flag, values[key], help);
  }
  void apply(RunConfig& cfg) const {
    for (const auto& [key, opt] : options) {
      if (opt->count() == 0) continue;
      const std::string& v = values.at(key);
      if (key == "window") {
        parse_list("window", v, 3);
        std::stringstream ss(v);
        std::string item;
        for (const char* k : {"window.a", "window.b", "window.c"}) {
          std::getline(ss, item, ',');
          cfg.set(k, item);
        }
      } else if (key == "out") {
        cfg.set("output_prefix", v);
      } else {
        cfg.set(key, v);
      }
    }
  }
};

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path == "-") return std::cout;
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  file.open(path);
  if (!file) fail_validation("cannot write '" + path + "'");
  return file;
}

int cmd_resonances(const RunConfig& cfg) {
  PotentialSpec V = potential_from(cfg);
  SpectralWindow w = window_from(cfg);
  const std::string method = cfg.get("method", "both");
  if (method != "scaling" && method != "detdiff" && method != "both")
    fail_validation("--method must be scaling, detdiff or both");
  double vmax = 0;
  for (int i = 0; i <= 400; ++i) vmax = std::max(vmax, std::abs(V(V.support.lo + V.support.length() * i / 400)));
  Discretization disc = auto_discretization(w.h, w.b + vmax);
  const double theta = pi / 3, truncation = 2.0;
  std::vector<Resonance> rows;
  ResonanceSet a, b;
  if (method != "detdiff") {
    a = resonances_by_scaling(assemble(V, make_scaled_contour(V.support, theta, Smoothness::lipschitz, truncation),
                                       w.h, disc),
                              w);
    rows.insert(rows.end(), a.items.begin(), a.items.end());
  }
  if (method != "scaling") {
    DetdiffSettings s;
    s.dn.theta = theta;
    s.dn.truncation = truncation;
    s.dn.interior = disc;
    s.dn.exterior = disc;
    b = resonances_by_detdiff(make_dn_model(V, w.h, s.dn), w, s);
    rows.insert(rows.end(), b.items.begin(), b.items.end());
  }
  std::ofstream file;
  write_resonances_csv(open_out(cfg.output_prefix, file), rows, w.h);
  if (method == "both") {
    double gap = hausdorff(a, b);
    std::cerr << "scaling " << a.count() << ", detdiff " << b.count() << ", gap " << gap << "\n";
    if (a.count() != b.count() || gap > 1e-6) fail_numerical("resonances: methods disagree");
  }
  return exit_ok;
}

int cmd_wkb_check(const RunConfig& cfg) {
  if (!cfg.has("h")) fail_validation("missing required parameter h");
  const double h = cfg.number("h", 0.1);
  const int N = cfg.integer("order", 1);
  if (N < 0) fail_validation("--order must be >= 0");
  wkb::Analytic V = wkb::polynomial({1.0, 0.0, 1.0});
  wkb::VolterraSettings s;
  s.nodes = 4000;
  s.z0 = cplx(0.0, 1.0);
  auto u = wkb::exact_wkb_volterra(V, wkb::Path::straight(0.0, 1.0), h, N, s);
  auto ref = wkb::solve_direct(V.f, u.x, h, u.y[0], u.hdy[0], 0.002);
  std::ofstream file;
  std::ostream& os = open_out(cfg.output_prefix, file);
  os << "node,re_x,re_remainder,im_remainder,oracle_abs,bound\n";
  os.precision(12);
  double worst = 0, gap = 0, rmax = 0;
  bool bounded = true;
  for (size_t k = 0; k < u.x.size(); ++k) {
    cplx scale = u.y[k] / u.amplitude[k];
    cplx r = ref.y[k] / scale - (u.amplitude[k] - u.remainder[k]);
    rmax = std::max(rmax, std::abs(r));
    gap = std::max(gap, std::abs(r - u.remainder[k]));
    if (std::abs(r) > u.bound[k]) bounded = false;
    worst = std::max(worst, std::abs(r) / u.bound[k]);
    if (k % 40 == 0 || k + 1 == u.x.size())
      os << k << ',' << u.x[k].real() << ',' << u.remainder[k].real() << ',' << u.remainder[k].imag() << ','
         << std::abs(r) << ',' << u.bound[k] << '\n';
  }
  std::cerr << "max remainder " << rmax << ", oracle gap " << gap << ", max ratio to bound " << worst << "\n";
  if (!bounded) fail_numerical("wkb-check: remainder exceeds the bound");
  if (gap > 1e-3 * rmax + 1e-13) fail_numerical("wkb-check: construction disagrees with the ODE oracle");
  return exit_ok;
}

int cmd_det_check(const RunConfig& cfg) {
  const int trials = cfg.integer("trials", 20);
  const int size = cfg.integer("size", 8);
  if (trials < 1) fail_validation("--trials must be >= 1");
  std::mt19937_64 rng(cfg.master_seed);
  std::vector<DetTrial> ts;
  bool ok = true;
  for (int t = 0; t < trials; ++t) {
    ts.push_back(det_trial(rng, size));
    ok = ok && ts.back().multiplicities_match && ts.back().additive && ts.back().logdet_error <= 1e-6;
  }
  std::ofstream file;
  write_det_trials_csv(open_out(cfg.output_prefix, file), ts);
  if (!ok) fail_numerical("det-check: a trial failed");
  return exit_ok;
}

int cmd_perturb(const RunConfig& cfg) {
  if (!cfg.has("h")) fail_validation("missing required parameter h");
  const double h = cfg.number("h", 0.1);
  PotentialSpec V = potential_from(cfg, "smooth_bump");
  const int v0 = V.v0;
  const int count = cfg.integer("count", 10);
  if (count < 1) fail_validation("--count must be >= 1");
  auto basis = perturb::build_basis(cfg.number("perturb.L", 4.0), h, {V.support.lo - 1.0, V.support.hi + 1.0});
  const double R = std::sqrt(double(basis.dim()));
  double delta;
  if (cfg.has("perturb.alpha")) {
    auto p = derive_parameters(1, v0, cfg.number("perturb.s", 1.0), cfg.number("perturb.eps", 0.25),
                               cfg.number("perturb.theta", 0.25), h, cfg.number("perturb.alpha", 1.0));
    delta = p.delta;
  } else {
    RVector th = perturb::theta_weight(V.support, v0, basis.x);
    delta = 0.5 * h / (th.maxCoeff() * R * std::sqrt(2.0 * basis.dim() / basis.length));
  }
  auto draws = perturb::sample_draws(basis, R, cfg.master_seed, count, V.support, v0, delta);
  std::ofstream file;
  std::ostream& os = open_out(cfg.output_prefix, file);
  os.precision(12);
  for (const auto& d : draws) perturb::write_draw_json(os, d);
  return exit_ok;
}

int cmd_montecarlo(const RunConfig& cfg) {
  counting::MonteCarloConfig mc;
  mc.V = potential_from(cfg, "smooth_bump");
  RunConfig c = cfg;
  if (!c.has("h")) c.set("h", "0.05");
  mc.window = window_from(c);
  mc.samples = cfg.integer("samples", mc.samples);
  mc.seed = cfg.master_seed;
  mc.L = cfg.number("perturb.L", mc.L);
  auto res = counting::discrepancy_experiment(mc);
  const fs::path dir(cfg.output_prefix);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "records.csv");
    counting::write_records_csv(f, res.records);
  }
  {
    std::ofstream f(dir / "config.txt");
    f << c.to_text();
  }
  const auto& s = res.summary;
  nlohmann::ordered_json j;
  j["h"] = s.h;
  j["window"] = {{"a", s.window.a}, {"b", s.window.b}, {"c", s.window.c}};
  j["samples"] = s.samples;
  j["frac_within_bound"] = s.frac_within_bound;
  j["mean_discrepancy"] = s.mean_discrepancy;
  j["mean_n0"] = s.mean_n0;
  j["seed"] = s.seed;
  std::ofstream f(dir / "summary.json");
  f << j.dump(2) << "\n";
  std::cerr << "kept " << s.samples << ", discarded " << s.discarded << ", within bound " << s.frac_within_bound
            << ", mean relative discrepancy " << s.mean_relative << "\n";
  if (s.samples == 0) fail_numerical("montecarlo: every sample was discarded");
  return exit_ok;
}

int cmd_zworski(const RunConfig& cfg) {
  PotentialSpec V = potential_from(cfg);
  const double rmax = cfg.number("rmax", 40.0);
  auto rep = zworski_density(V, rmax, cfg.number("h", 1.0));
  if (rep.empty) {
    std::cout << "no resonances: potential vanishes identically\n";
    return exit_ok;
  }
  const fs::path dir(cfg.output_prefix);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "counting.csv");
    write_density_csv(f, rep);
  }
  {
    std::ofstream f(dir / "poles.csv");
    write_density_poles_csv(f, rep);
  }
  std::cout.precision(6);
  std::cout << "poles " << rep.k.size() << ", slope " << rep.slope << ", target " << rep.target << ", relative error "
            << rep.rel_error << "\n";
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semiclassical resonance experiments"};
  app.set_help_flag("--help", "print usage");
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "flat key = value configuration file");

  struct Sub {
    CLI::App* app;
    Flags flags;
    int (*run)(const RunConfig&);
  };
  std::map<std::string, Sub> subs;
  auto make = [&](const std::string& name, const std::string& help, int (*fn)(const RunConfig&)) -> Sub& {
    Sub& s = subs[name];
    s.app = app.add_subcommand(name, help);
    s.run = fn;
    s.app->add_option("--config", config_path, "flat key = value configuration file");
    s.flags.add(s.app, "--seed", "seed", "master seed");
    s.flags.add(s.app, "--out", "out", "output path or prefix");
    return s;
  };
  auto potential_flags = [](Sub& s) {
    s.flags.add(s.app, "--potential", "potential.kind", "square_well or smooth_bump");
    s.flags.add(s.app, "--support", "potential.support", "lo,hi");
    s.flags.add(s.app, "--height", "potential.height", "well depth or bump height");
    s.flags.add(s.app, "--v0", "potential.v0", "vanishing order of the bump");
  };

  Sub& res = make("resonances", "resonances in a spectral window", cmd_resonances);
  potential_flags(res);
  res.flags.add(res.app, "--h", "h", "semiclassical parameter");
  res.flags.add(res.app, "--window", "window", "a,b,c");
  res.flags.add(res.app, "--method", "method", "scaling, detdiff or both");

  Sub& wk = make("wkb-check", "exact WKB remainder against a direct solve", cmd_wkb_check);
  wk.flags.add(wk.app, "--h", "h", "semiclassical parameter");
  wk.flags.add(wk.app, "--order", "order", "truncation order N");

  Sub& det = make("det-check", "winding multiplicities on random matrix families", cmd_det_check);
  det.flags.add(det.app, "--trials", "trials", "number of families");
  det.flags.add(det.app, "--size", "size", "maximum matrix size");

  Sub& per = make("perturb", "random perturbation draws as JSON lines", cmd_perturb);
  potential_flags(per);
  per.flags.add(per.app, "--h", "h", "semiclassical parameter");
  per.flags.add(per.app, "--L", "perturb.L", "basis cutoff");
  per.flags.add(per.app, "--count", "count", "number of draws");
  per.flags.add(per.app, "--alpha", "perturb.alpha", "use delta = tau0 h^alpha");

  Sub& mc = make("montecarlo", "resonance count discrepancy over random draws", cmd_montecarlo);
  potential_flags(mc);
  mc.flags.add(mc.app, "--h", "h", "semiclassical parameter");
  mc.flags.add(mc.app, "--window", "window", "a,b,c");
  mc.flags.add(mc.app, "--samples", "samples", "number of draws");

  Sub& zw = make("zworski-density", "resonance counting function in the k-plane", cmd_zworski);
  potential_flags(zw);
  zw.flags.add(zw.app, "--rmax", "rmax", "counting radius");
  zw.flags.add(zw.app, "--h", "h", "semiclassical parameter (default 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? exit_ok : exit_validation;
  }
  try {
    for (auto& [name, s] : subs) {
      if (!s.app->parsed()) continue;
      RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
      // Single-file outputs go to stdout unless --out is given; directory outputs default to the name.
      if (cfg.output_prefix == RunConfig{}.output_prefix)
        cfg.output_prefix = name == "montecarlo" || name == "zworski-density" ? name : "-";
      apply_seed_env(cfg);
      s.flags.apply(cfg);
      cfg.subcommand = name;
      return s.run(cfg);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_validation;
}
