#pragma once

#include "ultra/grid.hpp"
#include "ultra/operator.hpp"
#include "ultra/spectral.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ultra {

// Defaults for the constants the estimates leave unquantified.
inline constexpr double kDefaultAlpha0 = 4.0;
inline constexpr double kDefaultC0 = 0.05;
inline constexpr double kDefaultEps0 = 0.05;
inline constexpr double kDefaultCStar = 20.0;

struct Ceilings {
  double carleman = 100.0;   // empirical C of the Carleman estimates
  double trend = 10.0;       // max/min of the per-alpha constant over a sweep
  double lemma1_floor = 1e-3;
  double lemma2 = 100.0;     // smallest admissible C_eps
  double lemma2_band = 5.0;  // max/min of C_eps across rho scalings
  double c_chi = 100.0;      // implied constant of the decay inequality
  double identity_vanish = 1e-8;
  double identity_margin = 1e-6;
  double residual = 1e-3;    // PDE residual accepted by verify_solution_decay
  bool operator==(const Ceilings&) const = default;
};

struct CarlemanParams {
  double alpha = 8.0;
  double b = 0.04;
  double t1 = 0.02;
  double t2 = 0.04;
  double R = 0.0;
  double eps0 = kDefaultEps0;
  double alpha0 = kDefaultAlpha0;
  double c_star = kDefaultCStar;
  double c0 = kDefaultC0;
  double lambda = 1.1;

  // Throws ValidationError naming the violated invariant.
  void validate() const;
  bool global_regime() const { return alpha >= alpha0 + c_star * R; }
  bool time_regime() const { return t2 <= c0 / (lambda * lambda); }
  bool operator==(const CarlemanParams&) const = default;
};

// ((t_k + b)/b)^{-2 alpha} at every time node, via exp(-2 alpha log1p(t/b)).
std::vector<double> normalized_weight(const GridSpec& grid, double alpha, double b);

enum class Status { Pass, Fail, OutOfRegime, Inconclusive, HypothesisViolated, Degenerate };
std::string to_string(Status s);
Status status_from_string(const std::string& s);

struct VerificationReport {
  std::string name;
  std::string suite;
  std::string preset;
  CarlemanParams params;
  std::uint64_t seed = 0;
  std::string grid;
  double lhs = 0.0;
  double rhs = 0.0;
  double empirical_constant = 0.0;
  Status status = Status::Fail;
  std::vector<std::pair<std::string, double>> values;  // extra named numbers
  std::vector<std::string> notes;
  double runtime_ms = 0.0;

  bool pass() const { return status == Status::Pass; }
  double value(const std::string& key) const;  // NaN when absent
};

std::string describe(const GridSpec& g);

// ---------------------------------------------------------------- test functions

enum class TestFunctionKind { BumpProduct, ModulatedBump, RandomBandLimited };
std::string to_string(TestFunctionKind k);
TestFunctionKind test_function_kind(const std::string& s);

// exp(-1/(1-s^2)) on (-1, 1).
double flat_bump(double s);

// Smooth function supported in the middle 60% of (0, t2) and of every v (and
// w) axis. Requires at least 12 grid points across the support on each axis.
Field gen_test_function(const GridSpec& grid, TestFunctionKind kind, std::uint64_t seed, bool with_w);

// ---------------------------------------------------------------- seminorms

struct SeminormBundle {
  double grad_term = 0.0;  // sum omega |grad_v h|^2
  double zero_term = 0.0;  // sum omega/(t+b) |h|^2
  double rhs_term = 0.0;   // sum omega (t+b) |O h|^2
  double normalization_log = 0.0;  // log of the factor b^{2 alpha} divided out
};

SeminormBundle weighted_seminorms(const OperatorSpec& spec, const Field& h, const CarlemanParams& params,
                                  const Field& operator_output);

// Same integrals with caller-supplied time weights in place of the normalized one.
SeminormBundle weighted_seminorms(const OperatorSpec& spec, const Field& h, std::span<const double> weight,
                                  double b, const Field& operator_output);

// ---------------------------------------------------------------- verifiers

// Local estimate for fixed rho on a (t, v) slice; rhs from P~_rho.
VerificationReport verify_local(const OperatorSpec& spec, const Vec& rho, const CarlemanParams& params,
                                const Field& h, const Ceilings& ceil = {});

// Global estimate on (t, v, w): S_R g and P S_R g.
VerificationReport verify_global(const OperatorSpec& spec, const CarlemanParams& params, const Field& g,
                                 const TransformPlan& plan, const Ceilings& ceil = {});

// Four-term expansion against grad + alpha * zero terms of f = weight h.
VerificationReport verify_lemma1(const OperatorSpec& spec, const CarlemanParams& params, const Field& h,
                                 const Ceilings& ceil = {});

// Smallest C_eps with |J2| <= eps grad + C_eps eps0 alpha zero.
VerificationReport verify_lemma2(const OperatorSpec& spec, const Vec& rho, const CarlemanParams& params,
                                 const Field& h, double eps, const Ceilings& ceil = {});

// Values: j1_direct, j1_expansion, j1_rel (i); dt_vanish_rel (ii);
// potential_vanish_rel (iii); decomposition_lhs, j1_plus_j2, margin_rel (iv).
VerificationReport verify_identities(const OperatorSpec& spec, const Vec& rho, const CarlemanParams& params,
                                     const Field& h, const Ceilings& ceil = {});

// max/min across reports of the per-alpha maximum over seeds.
struct TrendSummary {
  std::vector<std::pair<double, double>> per_alpha;  // (alpha, max over seeds)
  double ratio = 0.0;
  bool all_finite = true;
  int in_regime_alphas = 0;
  Status status = Status::OutOfRegime;
};

enum class SweepMode { Local, Global };

struct SweepSetup {
  const OperatorSpec* spec = nullptr;
  GridSpec grid;
  CarlemanParams base;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds;
  SweepMode mode = SweepMode::Local;
  Vec rho;           // local mode
  TestFunctionKind kind = TestFunctionKind::RandomBandLimited;
  Ceilings ceil;
};

// One report per (alpha, seed); test functions depend only on the seed.
std::vector<VerificationReport> alpha_sweep(const SweepSetup& setup);
TrendSummary summarize_trend(const std::vector<VerificationReport>& reports, double trend_ceiling);

struct Spread {
  double min = 0.0;
  double max = 0.0;
  double ratio = 0.0;  // max/min, infinite when min is zero
};
Spread spread_of(std::span<const double> xs);

// Cutoff equal to 1 on [0, t1], 0 beyond (t1 + t2)/2, with an integrated-bump
// transition. Returns chi and chi' at the grid nodes.
std::pair<std::vector<double>, std::vector<double>> cutoff(const GridSpec& g, double t1, double t2);

// Decay consequence on a solution u(t, v, w), t in [0, t2]: one report per
// alpha with lhs = int_0^t1 |S_R u|^2, rhs = (b+t1)^2/alpha int_t1^t2 |S_R u|^2.
// Throws PreconditionError when pde_residual exceeds the ceiling.
std::vector<VerificationReport> verify_solution_decay(const Field& u, const OperatorSpec& spec,
                                                      const CarlemanParams& base,
                                                      const std::vector<double>& alphas,
                                                      const TransformPlan& plan, double pde_residual,
                                                      const Ceilings& ceil = {});

}  // namespace ultra
