#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "counting.hpp"
#include "error.hpp"
#include "grushin.hpp"
#include "model.hpp"
#include "numerics.hpp"
#include "resonance.hpp"

namespace reslab::harness {

enum ExitCode { exit_ok = 0, exit_validation = 2, exit_numerical = 3 };

inline int exit_code(const Error& e) { return e.kind() == ErrorKind::validation ? exit_validation : exit_numerical; }

// ---------------------------------------------------------------------------------------------
// Run configuration: flat "key = value" lines, keys sorted, one trailing newline.

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "potential.kind", "potential.support", "potential.v0", "potential.height",
      "window.a",       "window.b",          "window.c",     "h",
      "perturb.s",      "perturb.eps",       "perturb.theta", "perturb.alpha",
      "perturb.L",      "seed",              "samples",      "method",
      "rmax",           "order",             "trials",       "size",
      "count",          "subcommand",        "output_prefix"};
  return keys;
}

struct RunConfig {
  std::string subcommand;
  std::uint64_t master_seed = 1;
  std::string output_prefix = "out";
  std::map<std::string, std::string> params;

  bool has(const std::string& k) const { return params.count(k) > 0; }
  std::string get(const std::string& k, const std::string& fallback) const {
    auto it = params.find(k);
    return it == params.end() ? fallback : it->second;
  }
  double number(const std::string& k, double fallback) const;
  int integer(const std::string& k, int fallback) const;
  void set(const std::string& k, const std::string& v);

  std::string to_text() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  bool operator==(const RunConfig&) const = default;
};

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail_validation("config: '" + key + "' is not a number: '" + v + "'");
  }
}

inline std::uint64_t parse_seed(const std::string& v) {
  try {
    size_t used = 0;
    if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
    auto s = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    fail_validation("config: seed must be a non-negative 64-bit integer, got '" + v + "'");
  }
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v, size_t n) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.size() != n) fail_validation("config: '" + key + "' needs " + std::to_string(n) + " comma-separated values");
  return out;
}

inline double RunConfig::number(const std::string& k, double fallback) const {
  return has(k) ? parse_double(k, params.at(k)) : fallback;
}

inline int RunConfig::integer(const std::string& k, int fallback) const {
  if (!has(k)) return fallback;
  double d = parse_double(k, params.at(k));
  if (d != std::floor(d) || std::abs(d) > 1e9) fail_validation("config: '" + k + "' must be an integer");
  return int(d);
}

inline void RunConfig::set(const std::string& k, const std::string& v) {
  if (!known_keys().count(k)) fail_validation("config: unknown key '" + k + "'");
  const std::string t = trim(v);
  if (t.empty()) fail_validation("config: empty value for '" + k + "'");
  if (t.find('\n') != std::string::npos) fail_validation("config: multi-line value for '" + k + "'");
  if (k == "seed") {
    master_seed = parse_seed(t);
  } else if (k == "subcommand") {
    subcommand = t;
  } else if (k == "output_prefix") {
    output_prefix = t;
  } else {
    params[k] = t;
  }
}

inline std::string RunConfig::to_text() const {
  std::map<std::string, std::string> all = params;
  all["seed"] = std::to_string(master_seed);
  all["output_prefix"] = output_prefix;
  if (!subcommand.empty()) all["subcommand"] = subcommand;
  std::string out;
  for (const auto& [k, v] : all) out += k + " = " + v + "\n";
  return out;
}

inline RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) fail_validation("config line " + std::to_string(lineno) + ": expected key = value");
    std::string k = trim(t.substr(0, eq));
    if (!seen.insert(k).second) fail_validation("config: duplicate key '" + k + "'");
    c.set(k, t.substr(eq + 1));
  }
  return c;
}

inline RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_validation("config: cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

// RESLAB_SEED replaces the configured master seed.
inline void apply_seed_env(RunConfig& c) {
  if (const char* s = std::getenv("RESLAB_SEED"); s && *s) c.master_seed = parse_seed(trim(s));
}

// ---------------------------------------------------------------------------------------------
// Objects built from a configuration.

inline PotentialSpec potential_from(const RunConfig& c, const std::string& default_kind = "square_well") {
  const std::string kind = c.get("potential.kind", default_kind);
  auto sup = c.has("potential.support") ? parse_list("potential.support", c.get("potential.support", ""), 2)
                                        : std::vector<double>{-1.0, 1.0};
  if (!(sup[0] < sup[1])) fail_validation("potential.support: need lo < hi");
  Interval I{sup[0], sup[1]};
  const double height = c.number("potential.height", 1.0);
  switch (parse_potential_kind(kind)) {
    case PotentialKind::square_well: return square_well(height, I);
    case PotentialKind::smooth_bump: return smooth_bump(height, I, c.integer("potential.v0", 2));
    default: fail_validation("potential kind '" + kind + "' is not available from the command line");
  }
}

inline SpectralWindow window_from(const RunConfig& c) {
  SpectralWindow w;
  w.a = c.number("window.a", w.a);
  w.b = c.number("window.b", w.b);
  w.c = c.number("window.c", w.c);
  if (!c.has("h")) fail_validation("missing required parameter h");
  w.h = c.number("h", w.h);
  auto ok = validate_window(w, make_constants());
  if (!ok) fail_validation("window: " + ok.reason);
  return w;
}

// ---------------------------------------------------------------------------------------------
// CSV helpers.

inline void write_resonances_csv(std::ostream& os, const std::vector<Resonance>& rs, double h, bool header = true) {
  if (header) os << "re_z,im_z,multiplicity,method,h\n";
  os.precision(12);
  for (const auto& r : rs) os << r.z.real() << ',' << r.z.imag() << ',' << r.multiplicity << ',' << r.method << ',' << h << '\n';
}

// ---------------------------------------------------------------------------------------------
// Resonance counting in the k-plane for 1D compactly supported V, z = k^2.

struct DensityReport {
  bool empty = false;
  Interval support;
  double h = 1.0;
  double r_max = 0.0;
  std::vector<cplx> k;  // poles with |k| <= r_max, by increasing modulus
  std::vector<double> r;
  std::vector<int> N;
  double slope = 0.0;
  double target = 0.0;
  double rel_error = 0.0;
};

inline bool identically_zero(const PotentialSpec& V, int samples = 2001) {
  for (int i = 0; i < samples; ++i)
    if (V(V.support.lo + V.support.length() * i / (samples - 1)) != 0.0) return false;
  return true;
}

// F(k) = h u'(hi) - i k u(hi) for the solution with u = 1, h u' = -i k at lo.
inline cplx jost_k(const PotentialSpec& V, double h, cplx k, int steps_per_unit = 0) {
  cplx u = 1.0, w = -I * k;
  const double lo = V.support.lo, hi = V.support.hi;
  if (V.kind == PotentialKind::square_well) {
    const double v = V(0.5 * (lo + hi));
    const double L = hi - lo;
    cplx q = std::sqrt(k * k - v) / h;
    cplx c = std::cos(q * L);
    cplx s_q = std::abs(q * L) < 1e-8 ? cplx(L) : std::sin(q * L) / q;
    cplx qs = q * std::sin(q * L);
    cplx u1 = c * u + s_q * w / h;
    cplx w1 = -h * qs * u + c * w;
    return w1 - I * k * u1;
  }
  std::vector<double> cuts{lo};
  for (double b : V.breaks) cuts.push_back(b);
  cuts.push_back(hi);
  const double per = steps_per_unit > 0 ? steps_per_unit : std::max(400.0, 40.0 * (std::abs(k) + 1.0) / h);
  for (size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double a = cuts[s], b = cuts[s + 1];
    auto Vk = [&, a, b](cplx x) {
      double xr = std::clamp(x.real(), a + 1e-12 * (b - a), b - 1e-12 * (b - a));
      return cplx(V(xr)) - k * k;
    };
    std::tie(u, w) = integrate_segment(Vk, h, a, b, u, w, std::max(16, int(std::ceil(per * (b - a)))));
  }
  return w - I * k * u;
}

inline DensityReport zworski_density(const PotentialSpec& V, double r_max, double h = 1.0) {
  if (!(r_max > 0)) fail_validation("zworski_density: r_max must be > 0");
  if (!(h > 0)) fail_validation("zworski_density: h must be > 0");
  if (V.kind == PotentialKind::radial_effective) fail_validation("zworski_density: 1D potentials only");
  DensityReport rep;
  rep.support = V.support;
  rep.h = h;
  rep.r_max = r_max;
  const double len = V.support.length();
  rep.target = 2.0 * len / (pi * h);
  if (identically_zero(V)) {
    rep.empty = true;
    return rep;
  }
  double vmax = 0;
  for (int i = 0; i <= 400; ++i) vmax = std::max(vmax, std::abs(V(V.support.lo + len * i / 400)));
  const double depth = std::max(3.0, 1.5 * h * (std::log(1.0 + r_max * r_max) + 2.0) / len);
  Box box{-r_max - 1.0, r_max + 1.0, -depth, std::sqrt(vmax) + 0.5};
  ZeroSearchSettings zs;
  zs.max_step = std::min(0.05, 0.1 * h / len);
  zs.max_boxes = 200000;
  auto f = [&](cplx k) { return jost_k(V, h, k); };
  for (const auto& z : find_zeros(f, box, {}, zs))
    for (int m = 0; m < z.multiplicity; ++m)
      if (std::abs(z.z) <= r_max) rep.k.push_back(z.z);
  std::sort(rep.k.begin(), rep.k.end(), [](cplx a, cplx b) { return std::abs(a) < std::abs(b); });
  if (rep.k.size() < 10)
    fail_validation("zworski_density: only " + std::to_string(rep.k.size()) + " resonances with |k| <= r_max, need 10");
  const int samples = 200;
  std::vector<double> fr, fn;
  for (int i = 0; i <= samples; ++i) {
    double r = r_max * i / samples;
    int n = int(std::upper_bound(rep.k.begin(), rep.k.end(), r,
                                 [](double v, cplx k) { return v < std::abs(k); }) - rep.k.begin());
    rep.r.push_back(r);
    rep.N.push_back(n);
    if (r >= 0.25 * r_max) {
      fr.push_back(r);
      fn.push_back(n);
    }
  }
  rep.slope = linear_slope(fr, fn);
  rep.rel_error = std::abs(rep.slope - rep.target) / rep.target;
  return rep;
}

inline void write_density_csv(std::ostream& os, const DensityReport& d) {
  os << "r,N\n";
  os.precision(12);
  for (size_t i = 0; i < d.r.size(); ++i) os << d.r[i] << ',' << d.N[i] << '\n';
}

inline void write_density_poles_csv(std::ostream& os, const DensityReport& d) {
  os << "re_k,im_k,abs_k\n";
  os.precision(12);
  for (cplx k : d.k) os << k.real() << ',' << k.imag() << ',' << std::abs(k) << '\n';
}

// ---------------------------------------------------------------------------------------------
// Determinant calculus check on a random family A - z with planted Jordan structure.

struct DetTrial {
  int n = 0;
  int distinct = 0;
  bool multiplicities_match = true;
  bool additive = true;
  double logdet_error = 0.0;
};

inline CMatrix planted_matrix(std::mt19937_64& rng, const std::vector<std::pair<cplx, int>>& blocks) {
  std::normal_distribution<double> g;
  int n = 0;
  for (auto& b : blocks) n += b.second;
  CMatrix J = CMatrix::Zero(n, n);
  int at = 0;
  for (auto& [lambda, size] : blocks) {
    for (int k = 0; k < size; ++k) {
      J(at + k, at + k) = lambda;
      if (k + 1 < size) J(at + k, at + k + 1) = 1.0;
    }
    at += size;
  }
  CMatrix S(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) S(i, j) = cplx(g(rng), g(rng));
  S += 3.0 * CMatrix::Identity(n, n);
  return S * J * S.inverse();
}

// Random Jordan data of total size n: eigenvalues on the half-integer lattice of [-2, 2]^2, blocks of size 1..3.
inline std::vector<std::pair<cplx, int>> random_blocks(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> bsize(1, 3);
  std::uniform_int_distribution<int> lat(-4, 4);
  std::vector<std::pair<cplx, int>> blocks;
  for (int used = 0; used < n;) {
    int s = std::min(bsize(rng), n - used);
    blocks.push_back({cplx(0.5 * lat(rng), 0.5 * lat(rng)), s});
    used += s;
  }
  return blocks;
}

inline std::vector<std::pair<cplx, int>> eigen_clusters(const CMatrix& A, double tol = 1e-3) {
  std::vector<std::pair<cplx, int>> cl;
  CVector ev = eig(A).values;
  for (cplx v : ev) {
    bool placed = false;
    for (auto& c : cl)
      if (!placed && std::abs(c.first - v) < tol) {
        ++c.second;
        placed = true;
      }
    if (!placed) cl.push_back({v, 1});
  }
  return cl;
}

inline DetTrial det_trial(std::mt19937_64& rng, int max_n) {
  using namespace grushin;
  if (max_n < 1) fail_validation("det_trial: size must be >= 1");
  DetTrial t;
  const int n = std::uniform_int_distribution<int>(1, max_n)(rng);
  CMatrix A = planted_matrix(rng, random_blocks(rng, n));
  CMatrix B = planted_matrix(rng, random_blocks(rng, n));
  t.n = int(A.rows());
  auto cl = eigen_clusters(A);
  t.distinct = int(cl.size());
  std::vector<cplx> centers;
  for (auto& c : cl) centers.push_back(c.first);
  Family P = shifted(A), Q = shifted(B), QP = product(Q, P);
  auto clB = eigen_clusters(B);
  for (size_t k = 0; k < cl.size(); ++k) {
    // Clear of every other eigenvalue of A and B; B may share the centre.
    double r = std::min(0.2, separation_radius(centers, k));
    for (auto& c : clB) {
      double d = std::abs(c.first - cl[k].first);
      if (d > 1e-3) r = std::min(r, 0.5 * d);
    }
    int w = checked_winding(P, cl[k].first, r);
    if (w != cl[k].second) t.multiplicities_match = false;
    int wq = checked_winding(Q, cl[k].first, r);
    if (checked_winding(QP, cl[k].first, r) != w + wq) t.additive = false;
  }
  std::vector<cplx> grid;
  for (int k = 0; k <= 200; ++k) grid.push_back(cplx(-2.0 + 0.02 * k, 3.0));
  auto d = logdet_via_traces(P, grid, 2);
  for (size_t k = 0; k < grid.size(); ++k)
    t.logdet_error = std::max(t.logdet_error, std::abs(d.log_abs_det[k] - log_abs_det(P(grid[k]))));
  return t;
}

inline void write_det_trials_csv(std::ostream& os, const std::vector<DetTrial>& ts) {
  os << "trial,n,distinct,multiplicities_match,additive,logdet_error\n";
  os.precision(12);
  for (size_t i = 0; i < ts.size(); ++i)
    os << i << ',' << ts[i].n << ',' << ts[i].distinct << ',' << int(ts[i].multiplicities_match) << ','
       << int(ts[i].additive) << ',' << ts[i].logdet_error << '\n';
}

}  // namespace reslab::harness
