#include "fixtures.hpp"
#include "jerk_fixtures.hpp"

#include "ultra/carleman.hpp"
#include "ultra/jerk.hpp"
#include "ultra/linalg.hpp"
#include "ultra/reports.hpp"
#include "ultra/spectral.hpp"

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

using namespace ultra;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = ULTRA_SOURCE_DIR;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [violated]");
  }
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}
std::string sci(double x) { return fmt("%.3g", x); }

double rel_err(std::span<const cplx> a, std::span<const cplx> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::norm(a[i] - b[i]);
    den += std::norm(b[i]);
  }
  return std::sqrt(num / den);
}

CarlemanParams defaults(double alpha) {
  CarlemanParams p;
  p.alpha = alpha;
  return p;
}

GridSpec slice_grid(int nt = 65, int nv = 64) { return GridSpec(0.04, nt, {{2.0, nv}}); }

bool is_heat(const OperatorSpec& s) { return s.drift.B2().isZero(0.0); }

// e_1 scaled so the local regime bound is met at `fraction` of eps0 alpha.
Vec in_regime_rho(const OperatorSpec& s, const CarlemanParams& p, double fraction) {
  Vec rho = Vec::Zero(s.n());
  if (is_heat(s)) return rho;
  rho(0) = 1.0;
  const double g = g_sup(s.drift, rho, p.t2, p.b).g_value;
  return rho * std::sqrt(fraction * p.eps0 * p.alpha / g);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

CoefficientFamily constant(double a0) {
  CoefficientFamily f;
  f.a0 = a0;
  return f;
}

Outcome rank_reproduction() {
  Outcome o;
  auto exact = [](const DriftPair& d) {
    const Mat K = kalman_matrix(d);
    return fixtures::rational_rank(K.array().round().cast<int>().matrix());
  };
  const DriftPair jerk = drift_preset("jerk");
  const int r = numerical_rank(kalman_matrix(jerk)).rank;
  o.require(r == 3 && exact(jerk) == 3, "jerk rank " + std::to_string(r));
  std::string ranks;
  bool full = true;
  for (int n = 2; n <= 8; ++n) {
    const DriftPair d = drift_preset("example1", n);
    const int rn = numerical_rank(kalman_matrix(d)).rank;
    full = full && rn == n && exact(d) == n;
    ranks += (n > 2 ? "," : "") + std::to_string(rn);
  }
  o.require(full, "example1 ranks for n = 2..8: " + ranks);
  return o;
}

Outcome transform_laws() {
  Outcome o;
  const DriftPair d = drift_preset("jerk");
  const GridSpec g(0.04, 32, {{2.0, 64}}, {{2.0, 16}, {2.0, 16}, {2.0, 16}});
  // R = 1e-3 keeps about 8% of the lattice; the region saturates near R = 0.088.
  const TransformPlan plan(g, FrequencyRegion(d, 1e-3, 0.04, g.t2()));
  std::mt19937_64 rng(2024);
  // Four 16-bit uniform samples in [-1, 1) per 64-bit draw keep generation off the critical path.
  auto fill = [&](std::vector<cplx>& vals) {
    auto sample = [](std::uint64_t r, int shift) { return static_cast<std::int16_t>(r >> shift) * 0x1p-15; };
    for (std::size_t i = 0; i + 1 < vals.size(); i += 2) {
      const std::uint64_t r = rng();
      vals[i] = cplx(sample(r, 48), sample(r, 32));
      vals[i + 1] = cplx(sample(r, 16), sample(r, 0));
    }
  };
  double roundtrip = 0.0, unitarity = 0.0;
  bool idempotent = true;
  double saturated_err = 0.0;
  const TransformPlan full(g, FrequencyRegion(d, 2.0 * plan.lattice_sup_max(), 0.04, g.t2()));
  std::vector<cplx> vals(static_cast<std::size_t>(g.nt()) * g.v_count() * g.w_count());
  for (int rep = 0; rep < 200; ++rep) {
    fill(vals);
    Field u(g, true, Space::Physical, std::move(vals));
    const Field uh = fourier_w(u, Direction::Forward);
    roundtrip = std::max(roundtrip, rel_err(fourier_w(uh, Direction::Inverse).values(), u.values()));
    const Field tu = apply_T(u, plan, Direction::Forward);
    for (int k = 0; k < g.nt(); ++k)
      unitarity = std::max(unitarity, std::abs(rho_slice_norm2(tu, plan, k) - u.slice_norm2(k)) / u.slice_norm2(k));
    if (rep < 5) {
      const Field once = apply_S_R_hat(uh, plan);
      idempotent = idempotent && std::ranges::equal(once.values(), apply_S_R_hat(once, plan).values());
      saturated_err = std::max(saturated_err, rel_err(apply_S_R(u, full).values(), u.values()));
    }
    vals = std::move(u).release();
  }
  std::size_t kept = 0;
  for (int k = 0; k < g.nt(); ++k) kept += plan.kept(k);
  o.require(roundtrip <= 1e-10, "roundtrip " + sci(roundtrip));
  o.require(unitarity <= 1e-10, "slice unitarity " + sci(unitarity));
  o.require(idempotent && kept > 0 && kept < g.w_count() * g.nt(), "S_R idempotent bitwise");
  o.require(full.saturated() && saturated_err <= 1e-12, "saturated S_R " + sci(saturated_err));
  return o;
}

Outcome invariant_frequency() {
  Outcome o;
  std::mt19937_64 rng(41);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> dim(1, 4);
  double drift = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = dim(rng);
    Mat b2(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) b2(i, j) = nd(rng);
    Vec rho(n);
    for (int i = 0; i < n; ++i) rho(i) = nd(rng);
    drift = std::max(drift, invariance_check(DriftPair(Mat::Ones(n, 1), b2), rho, 1.0, 64).relative_drift);
  }
  o.require(drift <= 1e-10, "rho drift " + sci(drift));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double t2 = 0.1;
  for (const char* name : {"L1", "jerk"}) {
    const DriftPair d = drift_preset(name);
    const double c2 = *c2_lower_bound(d, t2, 1000 * d.n(), 200).c2_estimate;
    double worst = INFINITY;
    for (int trial = 0; trial < 1000; ++trial) {
      Vec rho(d.n());
      for (int i = 0; i < d.n(); ++i) rho(i) = nd(rng) * std::pow(10.0, 2 * u01(rng));
      const double b = t2 * std::max(1e-3, u01(rng));
      worst = std::min(worst, g_sup(d, rho, t2, b).g_value / (c2 * rho.squaredNorm()));
    }
    o.require(worst >= 1.0 - 1e-6, std::string(name) + " min G/(c2|rho|^2) " + fmt("%.6f", worst));
  }
  return o;
}

// Gaussian in w times a (t, v) bump; only w axes carrying eta-transport refine.
Outcome conjugation_identity() {
  Outcome o;
  const double dw = 0.4, sigma = 0.7, sigma_q = 0.4;
  {
    const auto spec = operator_preset("heat");
    double worst = 0.0;
    for (int nw : {16, 32, 64}) {
      const GridSpec g(0.04, 16, {{1.0, 16}}, {{nw * dw / 2, nw}});
      const Field u = fixtures::sample(g, true, [&](double t, const Vec& v, const Vec& w) {
        return fixtures::tv_bump(g, t, v) * std::exp(-w.squaredNorm() / (2 * sigma * sigma));
      });
      worst = std::max(worst, verify_conjugation(spec, u).relative_discrepancy);
    }
    o.require(worst <= 1e-12, "heat exact to " + sci(worst));
  }
  for (const char* name : {"L1", "jerk"}) {
    const auto spec = operator_preset(name);
    const bool jerk = std::string(name) == "jerk";
    std::vector<double> errs;
    for (int nw : {16, 32, 64}) {
      std::vector<Axis> w{{nw * dw / 2, nw}, {jerk ? nw * dw / 2 : 3.2, jerk ? nw : 16}};
      if (jerk) w.push_back({2.0, 16});
      const GridSpec g(0.04, 16, {{1.0, 16}}, w);
      const Field u = fixtures::sample(g, true, [&](double t, const Vec& v, const Vec& x) {
        double e = x(0) * x(0) + x(1) * x(1);
        double q = jerk ? x(2) * x(2) / (2 * sigma_q * sigma_q) : 0.0;
        return fixtures::tv_bump(g, t, v) * std::exp(-e / (2 * sigma * sigma) - q);
      });
      errs.push_back(verify_conjugation(spec, u).relative_discrepancy);
    }
    for (std::size_t i = 1; i < errs.size(); ++i) {
      const double order = std::log2(errs[i - 1] / errs[i]);
      o.require(order >= 2.0, std::string(name) + " order " + fmt("%.2f", order));
    }
    o.require(errs.back() <= 1e-3, std::string(name) + " finest " + sci(errs.back()));
  }
  return o;
}

Outcome section_identities() {
  Outcome o;
  for (const char* preset : {"heat", "L1", "jerk"}) {
    const auto spec = operator_preset(preset);
    const auto p = defaults(16.0);
    const Vec rho = in_regime_rho(spec, p, 0.8);
    std::vector<double> errs;
    for (int n : {32, 64, 128})
      errs.push_back(verify_identities(spec, rho, p,
                                       gen_test_function(slice_grid(n + 1, n), TestFunctionKind::RandomBandLimited, 1,
                                                         false))
                         .value("j1_rel"));
    double order = INFINITY;
    for (std::size_t i = 1; i < errs.size(); ++i) order = std::min(order, std::log2(errs[i - 1] / errs[i]));
    o.require(order >= 2.0, std::string(preset) + " J1 order " + fmt("%.2f", order));
    double vanish = 0.0, margin = INFINITY;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto r = verify_identities(spec, rho, p,
                                       gen_test_function(slice_grid(), TestFunctionKind::RandomBandLimited, seed, false));
      vanish = std::max({vanish, r.value("dt_vanish_rel"), r.value("potential_vanish_rel")});
      margin = std::min(margin, r.value("margin_rel"));
    }
    o.require(vanish <= 1e-8, std::string(preset) + " vanish " + sci(vanish));
    o.require(margin >= -1e-6, std::string(preset) + " margin " + sci(margin));
  }
  return o;
}

Outcome carleman_trend() {
  Outcome o;
  std::vector<std::uint64_t> seeds(20);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
  for (const char* preset : {"heat", "L1", "jerk"}) {
    const auto spec = operator_preset(preset);
    const CarlemanParams base = defaults(4.0);
    const SweepSetup s{.spec = &spec,
                       .grid = slice_grid(),
                       .base = base,
                       .alphas = {4, 8, 16, 32, 64, 128, 256},
                       .seeds = seeds,
                       .mode = SweepMode::Local,
                       .rho = in_regime_rho(spec, base, 0.8)};
    const TrendSummary t = summarize_trend(alpha_sweep(s), 10.0);
    o.require(t.status == Status::Pass && t.all_finite && t.ratio <= 10.0,
              std::string(preset) + " ratio " + sci(t.ratio) + " over " + std::to_string(t.in_regime_alphas) +
                  " alphas");
  }
  return o;
}

Outcome lemma_suite() {
  Outcome o;
  double floor = INFINITY;
  bool all_pass = true;
  for (const char* preset : {"heat", "L1", "jerk"}) {
    const auto spec = operator_preset(preset);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Field h = gen_test_function(slice_grid(), TestFunctionKind::RandomBandLimited, seed, false);
      for (double alpha : {4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0}) {
        const auto r = verify_lemma1(spec, defaults(alpha), h);
        all_pass = all_pass && r.status == Status::Pass;
        floor = std::min(floor, r.empirical_constant);
      }
    }
  }
  o.require(all_pass && floor > 0.0, "lemma1 min c1 " + sci(floor));
  for (const char* preset : {"L1", "jerk"}) {
    const auto spec = operator_preset(preset);
    double band = 0.0;
    bool graded = true;
    for (double alpha : {8.0, 16.0, 32.0, 64.0}) {
      const auto p = defaults(alpha);
      std::vector<double> per_scaling;
      for (double fraction : {0.2, 0.4, 0.8}) {
        const Vec rho = in_regime_rho(spec, p, fraction);
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
          const auto r = verify_lemma2(spec, rho, p,
                                       gen_test_function(slice_grid(), TestFunctionKind::RandomBandLimited, seed, false),
                                       1e-3);
          graded = graded && r.status == Status::Pass;
          worst = std::max(worst, r.empirical_constant);
        }
        per_scaling.push_back(worst);
      }
      band = std::max(band, spread_of(per_scaling).ratio);
    }
    o.require(graded && band <= 5.0, std::string(preset) + " lemma2 band " + fmt("%.3f", band));
  }
  return o;
}

Outcome jerk_simulator() {
  Outcome o;
  using jerk_fixtures::sampled;
  const jerk_fixtures::GaussianOracle oracle;
  const double T = 0.1;
  std::vector<double> errors;
  double residual = 0.0;
  for (int level = 0; level < 3; ++level) {
    const int nj = 32 << level, steps = 64 << level;
    const GridSpec g(T, 17, {{4.0, nj}}, {{2.0, 32}, {2.0, 4}, {2.0, 4}});
    const OperatorSpec spec = build_jerk_operator(constant(1.0), constant(oracle.gamma), 0.0, 1.1, g);
    SchemeConfig sc;
    sc.dt = T / steps;
    sc.substeps = steps / 16;
    const Trajectory tr = simulate(
        sampled(g, [&](double J, double A, double, double) { return oracle.value(0.0, J, A); }), spec, sc, T, T);
    const JerkState exact = sampled(g, [&](double J, double A, double, double) { return oracle.value(T, J, A); });
    const auto& got = tr.slice(16).values;
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
      diff = std::max(diff, std::abs(got[i] - exact.values[i]));
      scale = std::max(scale, std::abs(exact.values[i]));
    }
    errors.push_back(diff / scale);
    residual = std::max(residual, tr.residual.relative);
  }
  for (int i = 1; i < 3; ++i) {
    const double order = std::log2(errors[i - 1] / errors[i]);
    o.require(order >= 1.9, "order " + fmt("%.3f", order));
  }
  o.require(residual <= 1e-3, "residual " + sci(residual));

  const GridSpec g(0.04, 17, {{4.0, 48}}, {{1.0, 8}, {2.0, 8}, {2.0, 4}});
  CoefficientFamily a;
  a.kind = "sinusoidal";
  a.a0 = 1.0;
  a.amp = 0.05;
  a.k = 2.0;
  const OperatorSpec spec = build_jerk_operator(a, constant(0.3), 0.0, 1.1, g);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  std::vector<double> v(g.v_count() * g.w_count());
  for (double& x : v) x = n01(rng);
  double growth = 0.0;
  for (double theta : {0.5, 1.0}) {
    JerkState s(g, v);
    double prev = s.norm2();
    for (int i = 0; i < 50; ++i) {
      s = diffusion_step(s, spec, i * 1e-3, 1e-3, theta);
      growth = std::max(growth, s.norm2() / prev - 1.0);
      prev = s.norm2();
    }
  }
  o.require(growth <= 1e-14, "diffusion norm growth " + sci(growth));
  return o;
}

RunConfig pipeline_config() {
  RunConfig cfg = load_config(kSource / "configs" / "pipeline.yaml");
  cfg.suite.items = {"pipeline"};
  return cfg;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("ultra_acceptance_" + name);
  fs::remove_all(d);
  return d;
}

Outcome pipeline_check() {
  Outcome o;
  RunOptions opts;
  opts.out = scratch("pipeline_a");
  const RunResult res = run(pipeline_config(), opts);
  const auto sum = std::find_if(res.reports.begin(), res.reports.end(),
                                [](const auto& r) { return r.name == "pipeline_summary"; });
  if (sum == res.reports.end()) {
    o.require(false, "no pipeline summary");
    return o;
  }
  int graded = 0;
  for (const auto& r : res.reports)
    if (r.suite == "pipeline" && r.name != "pipeline_summary" && r.pass()) ++graded;
  o.require(sum->pass() && res.exit_code == kExitPass, "summary " + to_string(sum->status));
  o.require(graded == 4, std::to_string(graded) + " alphas pass");
  o.require(sum->value("max_constant") <= sum->value("c_chi_ceiling"), "max C " + sci(sum->value("max_constant")));
  o.require(sum->value("pde_residual") <= 1e-3, "residual " + sci(sum->value("pde_residual")));
  o.require(sum->value("left_decreasing") == 1.0, "weighted left side decreasing");
  o.require(sum->value("contrast_flagged") == 1.0, "contrast flagged hypothesis-violated");
  return o;
}

Outcome determinism() {
  Outcome o;
  RunOptions opts;
  opts.out = scratch("pipeline_b");
  run(pipeline_config(), opts);
  const fs::path first = fs::temp_directory_path() / "ultra_acceptance_pipeline_a";
  for (const char* f : {"reports.json", "reports.csv", "summary.json"}) {
    const std::string a = slurp(first / f), b = slurp(*opts.out / f);
    o.require(!a.empty() && a == b, std::string(f) + (a == b ? " identical" : " differs"));
  }
  return o;
}

}  // namespace

// Optional arguments select criteria by number; none runs all.
int main(int argc, char** argv) {
  // Keep freed field buffers in the heap: fresh mmap pages for every 134 MB
  // transform cost more than the FFTs on the criterion 2 grid.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "rank_reproduction", 1.0, rank_reproduction},
      {2, "transform_laws", 120.0, transform_laws},
      {3, "invariant_frequency", 60.0, invariant_frequency},
      {4, "conjugation_identity", 600.0, conjugation_identity},
      {5, "identities", 900.0, section_identities},
      {6, "carleman_trend", 1800.0, carleman_trend},
      {7, "lemma_suite", 600.0, lemma_suite},
      {8, "jerk_simulator", 300.0, jerk_simulator},
      {9, "pipeline", 1200.0, pipeline_check},
      {10, "determinism", 1200.0, determinism},
  };
  int failed = 0;
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  for (const auto& c : criteria) {
    if (!only.empty() && std::ranges::find(only, c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o.require(false, std::string("error: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.require(secs < c.limit_s, "runtime limit " + fmt("%.0f s", c.limit_s));
    if (!o.pass) ++failed;
    std::printf("[%s] %d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
