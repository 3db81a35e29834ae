#include "ultra/carleman.hpp"

#include "ultra/errors.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace ultra {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Fraction of each axis (and of (0, t2)) occupied by test-function support.
constexpr double kSupportFraction = 0.6;
constexpr int kMinSupportPoints = 12;
// Relative mass below which an inequality check carries no information.
constexpr double kLowMass = 1e-10;
// S_R u(0) must vanish to this fraction of the largest slice norm.
constexpr double kZeroTrace = 1e-12;

std::vector<double> shifted_times(const GridSpec& g, double b, double power) {
  std::vector<double> out(g.nt());
  for (int k = 0; k < g.nt(); ++k) out[k] = std::pow(g.t(k) + b, power);
  return out;
}

// sum_k t_weight(k) * coef[k] * |u_k|^2
double time_sum(const Field& u, const std::vector<double>& coef) {
  double s = 0.0;
  for (int k = 0; k < u.grid().nt(); ++k) {
    const double w = u.grid().t_weight(k) * coef[k];
    if (w != 0.0) s += w * u.slice_norm2(k);
  }
  return s;
}

// sum_k t_weight(k) coef[k] Re<x_k, y_k> with the (v, w) cell volume.
double time_inner(const Field& x, const Field& y, const std::vector<double>& coef) {
  const auto& g = x.grid();
  const double cell = g.v_cell() * (x.with_w() ? g.w_cell() : 1.0);
  double s = 0.0;
  for (int k = 0; k < g.nt(); ++k) {
    const double w = g.t_weight(k) * coef[k];
    if (w == 0.0) continue;
    const std::size_t base = x.index(k, 0);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.slab(); ++i) acc += (x[base + i] * std::conj(y[base + i])).real();
    s += w * acc * cell;
  }
  return s;
}

// i (q . v) u on a slice, q.v from potential_coefficients.
Field times_potential(const Field& u, const std::vector<double>& qv) {
  std::vector<cplx> out(u.size());
  const std::size_t wc = u.w_count();
  for (std::size_t p = 0; p < qv.size(); ++p)
    for (std::size_t j = 0; j < wc; ++j) out[p * wc + j] = cplx(0.0, qv[p]) * u[p * wc + j];
  return Field(u.grid(), u.with_w(), u.space(), std::move(out));
}

void check_finite(const Field& f, const char* what) {
  const auto& g = f.grid();
  for (std::size_t i = 0; i < f.size(); ++i)
    if (!std::isfinite(f[i].real()) || !std::isfinite(f[i].imag())) {
      const std::size_t k = i / f.slab();
      std::ostringstream os;
      os << "non-finite " << what << " at t = " << g.t(static_cast<int>(k)) << " (time node " << k
         << ", sample " << i % f.slab() << ")";
      throw ValidationError(os.str());
    }
}

VerificationReport base_report(const std::string& name, const OperatorSpec& spec, const CarlemanParams& p,
                               const GridSpec& g) {
  VerificationReport r;
  r.name = name;
  r.suite = name;
  r.preset = spec.label;
  r.params = p;
  r.grid = describe(g);
  return r;
}

bool local_regime(const OperatorSpec& spec, const Vec& rho, const CarlemanParams& p, VerificationReport& r) {
  const double g = g_sup(spec.drift, rho, p.t2, p.b).g_value;
  r.values.emplace_back("g_sup", g);
  r.values.emplace_back("condi_bound", p.eps0 * p.alpha);
  bool ok = true;
  if (g > p.eps0 * p.alpha) {
    r.notes.push_back("sup (t+b)^3 |B1^T e^{-tB2^T} rho|^2 exceeds eps0 * alpha");
    ok = false;
  }
  if (p.alpha < p.alpha0) {
    r.notes.push_back("alpha below alpha0");
    ok = false;
  }
  if (!p.time_regime()) {
    r.notes.push_back("t2 exceeds c0 / lambda^2");
    ok = false;
  }
  return ok;
}

// Rates a finite ratio against a ceiling (upper) or floor (lower).
Status grade(double value, double bound, bool upper) {
  if (!std::isfinite(value)) return Status::Fail;
  return (upper ? value <= bound : value >= bound) ? Status::Pass : Status::Fail;
}

VerificationReport local_from(const OperatorSpec& spec, const Vec& rho, const CarlemanParams& p, const Field& h,
                              const Field& ph, const Ceilings& ceil) {
  const auto start = Clock::now();
  VerificationReport r = base_report("local", spec, p, h.grid());
  p.validate();
  if (!local_regime(spec, rho, p, r)) {
    r.status = Status::OutOfRegime;
    r.runtime_ms = elapsed_ms(start);
    return r;
  }
  if (h.max_abs() == 0.0) {
    r.status = Status::Degenerate;
    r.notes.push_back("h vanishes identically");
    r.runtime_ms = elapsed_ms(start);
    return r;
  }
  const SeminormBundle sb = weighted_seminorms(spec, h, p, ph);
  r.lhs = sb.grad_term + p.alpha * sb.zero_term;
  r.rhs = sb.rhs_term;
  r.empirical_constant = r.lhs / r.rhs;
  r.values.emplace_back("grad_term", sb.grad_term);
  r.values.emplace_back("zero_term", sb.zero_term);
  r.status = grade(r.empirical_constant, ceil.carleman, true);
  r.runtime_ms = elapsed_ms(start);
  return r;
}

VerificationReport global_from(const OperatorSpec& spec, const CarlemanParams& p, const Field& g,
                               const Field& sg, const Field& psg, const Ceilings& ceil) {
  const auto start = Clock::now();
  VerificationReport r = base_report("global", spec, p, g.grid());
  p.validate();
  bool ok = true;
  if (!p.global_regime()) {
    r.notes.push_back("alpha below alpha0 + C* R");
    ok = false;
  }
  if (p.alpha < p.alpha0) {
    r.notes.push_back("alpha below alpha0");
    ok = false;
  }
  if (!p.time_regime()) {
    r.notes.push_back("t2 exceeds c0 / lambda^2");
    ok = false;
  }
  if (!ok) {
    r.status = Status::OutOfRegime;
    r.runtime_ms = elapsed_ms(start);
    return r;
  }
  const std::vector<double> w = normalized_weight(g.grid(), p.alpha, p.b);
  const double g_mass = time_sum(g, w), s_mass = time_sum(sg, w);
  r.values.emplace_back("mass_ratio", g_mass > 0.0 ? s_mass / g_mass : 0.0);
  if (g_mass == 0.0) {
    r.status = Status::Degenerate;
    r.notes.push_back("g vanishes identically");
    r.runtime_ms = elapsed_ms(start);
    return r;
  }
  const SeminormBundle sb = weighted_seminorms(spec, sg, p, psg);
  r.lhs = sb.grad_term + p.alpha * sb.zero_term;
  r.rhs = sb.rhs_term;
  r.empirical_constant = r.lhs / r.rhs;
  r.values.emplace_back("grad_term", sb.grad_term);
  r.values.emplace_back("zero_term", sb.zero_term);
  if (s_mass <= kLowMass * g_mass) {
    r.status = Status::Inconclusive;
    r.notes.push_back("low mass: S_R g carries less than 1e-10 of the weighted mass of g");
  } else {
    r.status = grade(r.empirical_constant, ceil.carleman, true);
  }
  r.runtime_ms = elapsed_ms(start);
  return r;
}

// Terms of the four-term expansion for f = ((t+b)/b)^{-alpha} h.
struct Expansion {
  Field f;
  Field lf;
  double div = 0.0, zero = 0.0, energy = 0.0, dt_energy = 0.0, grad = 0.0;
};

Expansion expand(const OperatorSpec& spec, const CarlemanParams& p, const Field& h) {
  const auto& g = h.grid();
  std::vector<double> half(g.nt());
  for (int k = 0; k < g.nt(); ++k) half[k] = std::exp(-p.alpha * std::log1p(g.t(k) / p.b));
  Field f = scale_in_time(h, half);
  const DiffusionOperator L(spec, g);
  Field lf = L.apply(f);
  Expansion e{std::move(f), std::move(lf)};
  const auto tb = shifted_times(g, p.b, 1.0);
  const auto inv = shifted_times(g, p.b, -1.0);
  e.div = time_sum(e.lf, tb);
  e.zero = time_sum(e.f, inv);
  e.energy = L.energy(e.f);
  e.dt_energy = L.dt_energy(e.f, &tb);
  e.grad = L.grad_norm2(e.f);
  return e;
}

}  // namespace

void CarlemanParams::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("CarlemanParams: " + what); };
  if (!(t2 > 0.0)) fail("t2 must be positive");
  if (!(b > 0.0) || b > t2) fail("need 0 < b <= t2");
  if (!(t1 > 0.0) || !(t1 < t2)) fail("need 0 < t1 < t2");
  if (!(alpha >= 0.0)) fail("alpha must be nonnegative");
  if (!(R >= 0.0)) fail("R must be nonnegative");
  if (!(eps0 > 0.0 && eps0 < 1.0)) fail("eps0 must lie in (0, 1)");
  if (!(c_star >= 1.0 / eps0)) fail("C* must be at least 1/eps0");
  if (!(c0 > 0.0)) fail("c0 must be positive");
  if (!(lambda >= 1.0)) fail("lambda must be at least 1");
}

std::vector<double> normalized_weight(const GridSpec& grid, double alpha, double b) {
  std::vector<double> w(grid.nt());
  for (int k = 0; k < grid.nt(); ++k) w[k] = std::exp(-2.0 * alpha * std::log1p(grid.t(k) / b));
  return w;
}

std::string to_string(Status s) {
  switch (s) {
    case Status::Pass: return "pass";
    case Status::Fail: return "fail";
    case Status::OutOfRegime: return "out-of-regime";
    case Status::Inconclusive: return "inconclusive";
    case Status::HypothesisViolated: return "hypothesis-violated";
    case Status::Degenerate: return "degenerate";
  }
  return "fail";
}

Status status_from_string(const std::string& s) {
  for (Status st : {Status::Pass, Status::Fail, Status::OutOfRegime, Status::Inconclusive,
                    Status::HypothesisViolated, Status::Degenerate})
    if (to_string(st) == s) return st;
  throw ValidationError("unknown status '" + s + "'");
}

double VerificationReport::value(const std::string& key) const {
  for (const auto& [k, v] : values)
    if (k == key) return v;
  return std::numeric_limits<double>::quiet_NaN();
}

std::string describe(const GridSpec& g) {
  std::ostringstream os;
  os << "t" << g.nt() << ":" << g.t2();
  for (const auto& a : g.v_axes()) os << " v" << a.points << ":" << a.half_width;
  for (const auto& a : g.w_axes()) os << " w" << a.points << ":" << a.half_width;
  return os.str();
}

std::string to_string(TestFunctionKind k) {
  switch (k) {
    case TestFunctionKind::BumpProduct: return "bump-product";
    case TestFunctionKind::ModulatedBump: return "modulated-bump";
    case TestFunctionKind::RandomBandLimited: return "random-band-limited";
  }
  return "bump-product";
}

TestFunctionKind test_function_kind(const std::string& s) {
  for (auto k : {TestFunctionKind::BumpProduct, TestFunctionKind::ModulatedBump, TestFunctionKind::RandomBandLimited})
    if (to_string(k) == s) return k;
  throw ValidationError("unknown test function kind '" + s + "'");
}

double flat_bump(double s) { return std::abs(s) < 1.0 ? std::exp(-1.0 / (1.0 - s * s)) : 0.0; }

Field gen_test_function(const GridSpec& grid, TestFunctionKind kind, std::uint64_t seed, bool with_w) {
  const double ht = 0.5 * kSupportFraction * grid.t2(), tc = 0.5 * grid.t2();
  auto count_inside = [](int points, auto coord, double half) {
    int c = 0;
    for (int j = 0; j < points; ++j) c += std::abs(coord(j)) < half ? 1 : 0;
    return c;
  };
  auto require = [](int c, const std::string& axis) {
    if (c < kMinSupportPoints)
      throw ValidationError("gen_test_function: only " + std::to_string(c) + " points across the support on " +
                            axis + " (need " + std::to_string(kMinSupportPoints) + ")");
  };
  require(count_inside(grid.nt(), [&](int k) { return grid.t(k) - tc; }, ht), "t");
  for (int a = 0; a < grid.m(); ++a)
    require(count_inside(grid.v_axes()[a].points, [&](int j) { return grid.v(a, j); },
                         kSupportFraction * grid.v_axes()[a].half_width),
            "v" + std::to_string(a));
  if (with_w)
    for (int a = 0; a < grid.n(); ++a)
      require(count_inside(grid.w_axes()[a].points, [&](int j) { return grid.w(a, j); },
                           kSupportFraction * grid.w_axes()[a].half_width),
              "w" + std::to_string(a));

  const int m = grid.m(), n = with_w ? grid.n() : 0;
  // Frequencies are tied to the support size, so refining the grid samples
  // the same function.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  struct Mode {
    cplx amp;
    Vec kv, kw;
  };
  std::vector<Mode> modes;
  const int count = kind == TestFunctionKind::BumpProduct ? 0 : kind == TestFunctionKind::ModulatedBump ? 1 : 8;
  for (int j = 0; j < count; ++j) {
    Mode md{cplx(1.0), Vec(m), Vec(n)};
    double r2 = 0.0;
    for (int a = 0; a < m; ++a) {
      const double x = ud(rng);
      r2 += x * x;
      md.kv(a) = x * 1.5 * std::numbers::pi / (kSupportFraction * grid.v_axes()[a].half_width);
    }
    for (int a = 0; a < n; ++a) {
      const int jmax = static_cast<int>(1.5 / kSupportFraction);
      md.kw(a) = std::uniform_int_distribution<int>(-jmax, jmax)(rng) * grid.deta(a);
    }
    if (kind == TestFunctionKind::RandomBandLimited) {
      const double taper = std::pow(std::cos(0.5 * std::numbers::pi * std::min(1.0, std::sqrt(r2 / m))), 2);
      md.amp = cplx(nd(rng), nd(rng)) * taper;
    }
    modes.push_back(md);
  }

  const std::size_t wc = with_w ? grid.w_count() : 1;
  std::vector<cplx> vals(static_cast<std::size_t>(grid.nt()) * grid.v_count() * wc);
  std::vector<int> vi, wi;
  Vec v(m), w(n);
  std::vector<double> wb(wc, 1.0);
  std::vector<Vec> wpts(wc, Vec(n));
  for (std::size_t j = 0; j < wc && with_w; ++j) {
    grid.w_unflatten(j, wi);
    for (int a = 0; a < n; ++a) {
      wpts[j](a) = grid.w(a, wi[a]);
      wb[j] *= flat_bump(wpts[j](a) / (kSupportFraction * grid.w_axes()[a].half_width));
    }
  }
  for (int k = 0; k < grid.nt(); ++k) {
    const double bt = flat_bump((grid.t(k) - tc) / ht);
    if (bt == 0.0) continue;
    for (std::size_t c = 0; c < grid.v_count(); ++c) {
      grid.v_unflatten(c, vi);
      double bv = bt;
      for (int a = 0; a < m; ++a) {
        v(a) = grid.v(a, vi[a]);
        bv *= flat_bump(v(a) / (kSupportFraction * grid.v_axes()[a].half_width));
      }
      if (bv == 0.0) continue;
      for (std::size_t j = 0; j < wc; ++j) {
        if (wb[j] == 0.0) continue;
        cplx mod = modes.empty() ? cplx(1.0) : cplx(0.0);
        for (const auto& md : modes) {
          double phase = md.kv.dot(v);
          if (n > 0) phase += md.kw.dot(wpts[j]);
          mod += md.amp * std::exp(cplx(0.0, phase));
        }
        vals[(static_cast<std::size_t>(k) * grid.v_count() + c) * wc + j] = bv * wb[j] * mod;
      }
    }
  }
  return Field(grid, with_w, Space::Physical, std::move(vals));
}

SeminormBundle weighted_seminorms(const OperatorSpec& spec, const Field& h, std::span<const double> weight,
                                  double b, const Field& operator_output) {
  if (!(h.grid() == operator_output.grid()) || h.with_w() != operator_output.with_w())
    throw DimensionError("weighted_seminorms: field and operator output differ in shape");
  const auto& g = h.grid();
  if (weight.size() != static_cast<std::size_t>(g.nt()))
    throw DimensionError("weighted_seminorms: one weight per time node expected");
  check_finite(h, "field");
  check_finite(operator_output, "operator output");
  const std::vector<double> w(weight.begin(), weight.end());
  std::vector<double> w_inv(g.nt()), w_tb(g.nt());
  for (int k = 0; k < g.nt(); ++k) {
    w_inv[k] = w[k] / (g.t(k) + b);
    w_tb[k] = w[k] * (g.t(k) + b);
  }
  for (int k = 0; k < g.nt(); ++k) {
    const double integrand = w_inv[k] * h.slice_norm2(k) + w_tb[k] * operator_output.slice_norm2(k);
    if (!std::isfinite(integrand)) {
      std::ostringstream os;
      os << "weighted_seminorms: non-finite integrand at t = " << g.t(k) << " (time node " << k << ")";
      throw ValidationError(os.str());
    }
  }
  SeminormBundle sb;
  sb.grad_term = DiffusionOperator(spec, g).grad_norm2(h, &w);
  sb.zero_term = time_sum(h, w_inv);
  sb.rhs_term = time_sum(operator_output, w_tb);
  for (double x : {sb.grad_term, sb.zero_term, sb.rhs_term})
    if (!std::isfinite(x)) throw ValidationError("weighted_seminorms: non-finite integral");
  return sb;
}

SeminormBundle weighted_seminorms(const OperatorSpec& spec, const Field& h, const CarlemanParams& params,
                                  const Field& operator_output) {
  SeminormBundle sb = weighted_seminorms(spec, h, normalized_weight(h.grid(), params.alpha, params.b), params.b,
                                         operator_output);
  sb.normalization_log = 2.0 * params.alpha * std::log(params.b);
  return sb;
}

VerificationReport verify_local(const OperatorSpec& spec, const Vec& rho, const CarlemanParams& params,
                                const Field& h, const Ceilings& ceil) {
  params.validate();
  VerificationReport probe;
  if (!local_regime(spec, rho, params, probe)) return local_from(spec, rho, params, h, h, ceil);
  return local_from(spec, rho, params, h, apply_P_tilde(spec, h, rho, true), ceil);
}

VerificationReport verify_global(const OperatorSpec& spec, const CarlemanParams& params, const Field& g,
                                 const TransformPlan& plan, const Ceilings& ceil) {
  params.validate();
  if (std::abs(plan.region().R() - params.R) > 1e-12 * std::max(1.0, params.R) ||
      std::abs(plan.region().b() - params.b) > 1e-15 || std::abs(plan.region().t2() - params.t2) > 1e-15)
    throw ValidationError("verify_global: plan region does not match (R, b, t2)");
  const Field sg = apply_S_R(g, plan);
  return global_from(spec, params, g, sg, apply_P(spec, sg), ceil);
}

VerificationReport verify_lemma1(const OperatorSpec& spec, const CarlemanParams& params, const Field& h,
                                 const Ceilings& ceil) {
  const auto start = Clock::now();
  params.validate();
  VerificationReport r = base_report("lemma1", spec, params, h.grid());
  if (params.alpha < params.alpha0 || !params.time_regime()) {
    r.status = Status::OutOfRegime;
    r.notes.push_back(params.alpha < params.alpha0 ? "alpha below alpha0" : "t2 exceeds c0 / lambda^2");
    return r;
  }
  if (h.max_abs() == 0.0) {
    r.status = Status::Degenerate;
    r.notes.push_back("h vanishes identically: 0 >= 0 carries no information");
    return r;
  }
  const Expansion e = expand(spec, params, h);
  const double a = params.alpha;
  r.lhs = e.div + a * a * e.zero - (2.0 * a - 1.0) * e.energy + e.dt_energy;
  r.rhs = e.grad + a * e.zero;
  r.empirical_constant = r.lhs / r.rhs;
  r.values = {{"div_term", e.div}, {"zero_term", e.zero}, {"energy_term", e.energy},
              {"dt_energy_term", e.dt_energy}, {"grad_term", e.grad}};
  r.status = grade(r.empirical_constant, ceil.lemma1_floor, false);
  r.runtime_ms = elapsed_ms(start);
  return r;
}

VerificationReport verify_lemma2(const OperatorSpec& spec, const Vec& rho, const CarlemanParams& params,
                                 const Field& h, double eps, const Ceilings& ceil) {
  const auto start = Clock::now();
  params.validate();
  if (!(eps > 0.0 && eps < 1.0)) throw ValidationError("verify_lemma2: eps must lie in (0, 1)");
  VerificationReport r = base_report("lemma2", spec, params, h.grid());
  r.values.emplace_back("eps", eps);
  if (!local_regime(spec, rho, params, r)) {
    r.status = Status::OutOfRegime;
    return r;
  }
  if (h.max_abs() == 0.0) {
    r.status = Status::Degenerate;
    r.notes.push_back("h vanishes identically");
    return r;
  }
  const auto& g = h.grid();
  const Expansion e = expand(spec, params, h);
  const std::vector<double> qv = potential_coefficients(spec, g, rho);
  const Field qf = times_potential(e.f, qv);
  const auto tb = shifted_times(g, params.b, 1.0);
  const auto inv = shifted_times(g, params.b, -1.0);
  // J2 = 2 Re sum (t+b) (i q.v f) conj(alpha/(t+b) f + L f)
  std::vector<double> alpha_only(g.nt());
  for (int k = 0; k < g.nt(); ++k) alpha_only[k] = params.alpha;
  const double j2 = 2.0 * (time_inner(qf, e.f, alpha_only) + time_inner(qf, e.lf, tb));
  r.values.emplace_back("j2", j2);

  if (g.m() == 1 && !h.with_w()) {
    // Summation by parts against the flux form: the i q v_face |Df|^2 part is
    // purely imaginary, leaving 2 sum (t+b) q A_face Im(f_face conj(Df)).
    const DiffusionOperator L(spec, g);
    const Mat B1t = spec.drift.B1().transpose();
    const Mat B2t = spec.drift.B2().transpose();
    const int nv = g.v_axes()[0].points;
    double by_parts = 0.0;
    for (int k = 0; k < g.nt(); ++k) {
      const double q = (B1t * (mat_exp(B2t, -g.t(k)) * rho))(0);
      double s = 0.0;
      for (int face = 0; face <= nv; ++face) {
        const cplx hi = face < nv ? e.f[e.f.index(k, face)] : cplx(0.0);
        const cplx lo = face > 0 ? e.f[e.f.index(k, face - 1)] : cplx(0.0);
        s += L.face_coefficient(k, 0, face, 0) * std::imag(0.5 * (hi + lo) * std::conj(hi - lo));
      }
      by_parts += g.t_weight(k) * tb[k] * q * s;
    }
    by_parts *= 2.0;
    r.values.emplace_back("j2_by_parts", by_parts);
    const double scale = 2.0 * std::sqrt(time_sum(qf, tb) * time_sum(e.lf, tb)) +
                         2.0 * params.alpha * std::sqrt(time_sum(qf, inv) * time_sum(e.f, inv));
    r.values.emplace_back("path_gap_rel", scale > 0.0 ? std::abs(j2 - by_parts) / scale : 0.0);
  }

  r.lhs = std::abs(j2);
  const double denom = params.eps0 * params.alpha * e.zero;
  r.rhs = eps * e.grad + denom;
  r.empirical_constant = std::max(0.0, (r.lhs - eps * e.grad) / denom);
  r.values.emplace_back("grad_term", e.grad);
  r.values.emplace_back("zero_term", e.zero);
  r.status = grade(r.empirical_constant, ceil.lemma2, true);
  r.runtime_ms = elapsed_ms(start);
  return r;
}

VerificationReport verify_identities(const OperatorSpec& spec, const Vec& rho, const CarlemanParams& params,
                                     const Field& h, const Ceilings& ceil) {
  const auto start = Clock::now();
  params.validate();
  VerificationReport r = base_report("identities", spec, params, h.grid());
  if (!local_regime(spec, rho, params, r)) {
    r.status = Status::OutOfRegime;
    return r;
  }
  if (h.max_abs() == 0.0) {
    r.status = Status::Degenerate;
    r.notes.push_back("h vanishes identically");
    return r;
  }
  const auto& g = h.grid();
  const double a = params.alpha;
  const Expansion e = expand(spec, params, h);
  const auto tb = shifted_times(g, params.b, 1.0);
  const std::vector<double> ones(g.nt(), 1.0);
  std::vector<double> inv(g.nt());
  for (int k = 0; k < g.nt(); ++k) inv[k] = a / (g.t(k) + params.b);

  const Field df = time_derivative(e.f, TimeClosure::ZeroExtension);
  const Field k2f = axpby(1.0, scale_in_time(e.f, inv), 1.0, e.lf);
  const Field qf = times_potential(e.f, potential_coefficients(spec, g, rho));

  // (i) J1 from its definition against the four-term expansion.
  const double j1 = 2.0 * time_inner(df, k2f, tb) + time_sum(k2f, tb);
  const double j1_exp = e.div + a * a * e.zero - (2.0 * a - 1.0) * e.energy + e.dt_energy;
  const double j1_scale = std::abs(e.div) + a * a * std::abs(e.zero) + std::abs((2.0 * a - 1.0) * e.energy) +
                          std::abs(e.dt_energy);
  const double j1_rel = std::abs(j1 - j1_exp) / j1_scale;

  // (ii) 2 alpha Re int d_t f conj(f).
  const double dt_vanish = 2.0 * a * time_inner(df, e.f, ones);
  const double dt_scale = 2.0 * a * std::sqrt(time_sum(df, ones) * time_sum(e.f, ones));
  const double dt_rel = dt_scale > 0.0 ? std::abs(dt_vanish) / dt_scale : 0.0;

  // (iii) 2 alpha Re int i (q.v) |f|^2.
  const double pot_vanish = 2.0 * a * time_inner(qf, e.f, ones);
  const double pot_scale = 2.0 * a * std::sqrt(time_sum(qf, ones) * time_sum(e.f, ones));
  const double pot_rel = pot_scale > 0.0 ? std::abs(pot_vanish) / pot_scale : 0.0;

  // (iv) int (t+b)^{-2 alpha + 1} |P~0 h|^2 >= J1 + J2.
  const Field p0 = apply_P_tilde(spec, h, rho, false);
  const std::vector<double> w = normalized_weight(g, a, params.b);
  std::vector<double> w_tb(g.nt());
  for (int k = 0; k < g.nt(); ++k) w_tb[k] = w[k] * tb[k];
  const double lhs = time_sum(p0, w_tb);
  const double j2 = 2.0 * time_inner(qf, k2f, tb);
  const double margin = lhs - (j1 + j2);
  const double margin_rel = margin / (std::abs(lhs) + std::abs(j1) + std::abs(j2));

  r.values = {{"j1_direct", j1},         {"j1_expansion", j1_exp},        {"j1_rel", j1_rel},
              {"dt_vanish", dt_vanish},  {"dt_vanish_rel", dt_rel},       {"potential_vanish", pot_vanish},
              {"potential_vanish_rel", pot_rel}, {"decomposition_lhs", lhs}, {"j2", j2},
              {"j1_plus_j2", j1 + j2},   {"margin_rel", margin_rel}};
  r.lhs = lhs;
  r.rhs = j1 + j2;
  r.empirical_constant = margin_rel;
  const bool ok = dt_rel <= ceil.identity_vanish && pot_rel <= ceil.identity_vanish &&
                  margin_rel >= -ceil.identity_margin && std::isfinite(j1_rel);
  r.status = ok ? Status::Pass : Status::Fail;
  r.runtime_ms = elapsed_ms(start);
  return r;
}

std::vector<VerificationReport> alpha_sweep(const SweepSetup& s) {
  if (!s.spec) throw ValidationError("alpha_sweep: missing operator");
  if (s.alphas.empty() || s.seeds.empty()) throw ValidationError("alpha_sweep: empty alpha or seed list");
  const OperatorSpec& spec = *s.spec;
  std::vector<VerificationReport> out;
  const bool local = s.mode == SweepMode::Local;
  std::optional<TransformPlan> plan;
  if (!local) plan.emplace(s.grid, FrequencyRegion(spec.drift, s.base.R, s.base.b, s.base.t2));
  for (std::uint64_t seed : s.seeds) {
    const auto start = Clock::now();
    const Field h = gen_test_function(s.grid, s.kind, seed, !local);
    std::optional<Field> sg, op;
    if (local) {
      op.emplace(apply_P_tilde(spec, h, s.rho, true));
    } else {
      sg.emplace(apply_S_R(h, *plan));
      op.emplace(apply_P(spec, *sg));
    }
    const double setup_ms = elapsed_ms(start);
    for (double alpha : s.alphas) {
      CarlemanParams p = s.base;
      p.alpha = alpha;
      VerificationReport r = local ? local_from(spec, s.rho, p, h, *op, s.ceil)
                                   : global_from(spec, p, h, *sg, *op, s.ceil);
      r.seed = seed;
      r.runtime_ms += setup_ms / static_cast<double>(s.alphas.size());
      r.notes.push_back("test function " + to_string(s.kind));
      out.push_back(std::move(r));
    }
  }
  return out;
}

TrendSummary summarize_trend(const std::vector<VerificationReport>& reports, double trend_ceiling) {
  TrendSummary t;
  for (const auto& r : reports) {
    if (r.status != Status::Pass && r.status != Status::Fail) continue;
    if (!std::isfinite(r.empirical_constant)) t.all_finite = false;
    auto it = std::find_if(t.per_alpha.begin(), t.per_alpha.end(),
                           [&](const auto& pa) { return pa.first == r.params.alpha; });
    if (it == t.per_alpha.end())
      t.per_alpha.emplace_back(r.params.alpha, r.empirical_constant);
    else
      it->second = std::max(it->second, r.empirical_constant);
  }
  std::sort(t.per_alpha.begin(), t.per_alpha.end());
  t.in_regime_alphas = static_cast<int>(t.per_alpha.size());
  if (t.per_alpha.empty()) return t;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& [a, c] : t.per_alpha) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  t.ratio = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  t.status = t.all_finite && t.ratio <= trend_ceiling ? Status::Pass : Status::Fail;
  return t;
}

Spread spread_of(std::span<const double> xs) {
  if (xs.empty()) throw ValidationError("spread_of: empty list");
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  Spread s{*lo, *hi, 0.0};
  s.ratio = s.min > 0.0 ? s.max / s.min : std::numeric_limits<double>::infinity();
  return s;
}

std::pair<std::vector<double>, std::vector<double>> cutoff(const GridSpec& g, double t1, double t2) {
  const double tm = 0.5 * (t1 + t2);
  const double width = tm - t1;
  auto density = [](double x) { return flat_bump(2.0 * x - 1.0); };
  using boost::math::quadrature::gauss_kronrod;
  const double total = gauss_kronrod<double, 31>::integrate(density, 0.0, 1.0, 15, 1e-14);
  std::vector<double> chi(g.nt()), dchi(g.nt());
  for (int k = 0; k < g.nt(); ++k) {
    const double t = g.t(k);
    if (t <= t1) {
      chi[k] = 1.0;
    } else if (t >= tm) {
      chi[k] = 0.0;
    } else {
      const double s = (t - t1) / width;
      chi[k] = 1.0 - gauss_kronrod<double, 31>::integrate(density, 0.0, s, 15, 1e-14) / total;
      dchi[k] = -density(s) / (total * width);
    }
  }
  return {chi, dchi};
}

std::vector<VerificationReport> verify_solution_decay(const Field& u, const OperatorSpec& spec,
                                                      const CarlemanParams& base,
                                                      const std::vector<double>& alphas,
                                                      const TransformPlan& plan, double pde_residual,
                                                      const Ceilings& ceil) {
  base.validate();
  if (!(pde_residual <= ceil.residual)) {
    std::ostringstream os;
    os << "verify_solution_decay: PDE residual " << pde_residual << " exceeds the accepted " << ceil.residual;
    throw PreconditionError(os.str());
  }
  const auto& g = u.grid();
  if (std::abs(g.t2() - base.t2) > 1e-12 * base.t2)
    throw ValidationError("verify_solution_decay: grid horizon differs from t2");
  const double pos = base.t1 / g.dt();
  const int k1 = static_cast<int>(std::lround(pos));
  if (std::abs(pos - k1) > 1e-9) throw ValidationError("verify_solution_decay: t1 must be a time node");

  const Field su = apply_S_R(u, plan);
  std::vector<double> s(g.nt());
  double s_max = 0.0;
  for (int k = 0; k < g.nt(); ++k) {
    s[k] = su.slice_norm2(k);
    s_max = std::max(s_max, s[k]);
  }
  const bool zero_trace = std::sqrt(s[0]) <= kZeroTrace * std::sqrt(s_max);
  const auto [chi, dchi] = cutoff(g, base.t1, base.t2);

  // Trapezoid weights restricted to [0, t1] and [t1, t2].
  std::vector<double> w_left(g.nt(), 0.0), w_right(g.nt(), 0.0);
  for (int k = 0; k <= k1; ++k) w_left[k] = (k == 0 || k == k1) ? 0.5 * g.dt() : g.dt();
  for (int k = k1; k < g.nt(); ++k) w_right[k] = (k == k1 || k == g.nt() - 1) ? 0.5 * g.dt() : g.dt();
  double left = 0.0, right = 0.0;
  for (int k = 0; k < g.nt(); ++k) {
    left += w_left[k] * s[k];
    right += w_right[k] * s[k];
  }

  std::vector<VerificationReport> out;
  for (double alpha : alphas) {
    const auto start = Clock::now();
    CarlemanParams p = base;
    p.alpha = alpha;
    p.validate();
    VerificationReport r = base_report("solution_decay", spec, p, g);
    r.values.emplace_back("pde_residual", pde_residual);
    r.values.emplace_back("initial_trace_rel", s_max > 0.0 ? std::sqrt(s[0] / s_max) : 0.0);
    if (!p.global_regime() || !p.time_regime() || alpha < p.alpha0) {
      r.status = Status::OutOfRegime;
      r.notes.push_back("alpha, R or t2 outside the regime of the global estimate");
      out.push_back(std::move(r));
      continue;
    }
    if (s_max == 0.0) {
      r.status = Status::Degenerate;
      r.notes.push_back("S_R u vanishes identically: 0 <= 0");
      out.push_back(std::move(r));
      continue;
    }
    const std::vector<double> w = normalized_weight(g, alpha, p.b);
    double wl = 0.0, wr = 0.0, cl = 0.0, cr = 0.0;
    for (int k = 0; k < g.nt(); ++k) {
      const double tb = g.t(k) + p.b;
      wl += w_left[k] * w[k] / tb * s[k];
      wr += w_right[k] * w[k] * tb * s[k];
      cl += g.t_weight(k) * w[k] / tb * chi[k] * chi[k] * s[k];
      cr += g.t_weight(k) * w[k] * tb * dchi[k] * dchi[k] * s[k];
    }
    wl *= alpha;
    cl *= alpha;
    r.lhs = left;
    r.rhs = (p.b + p.t1) * (p.b + p.t1) / alpha * right;
    r.empirical_constant = r.lhs / r.rhs;
    r.values.emplace_back("weighted_left", wl);
    r.values.emplace_back("weighted_right", wr);
    r.values.emplace_back("weighted_constant", wl / wr);
    r.values.emplace_back("cutoff_left", cl);
    r.values.emplace_back("cutoff_right", cr);
    r.values.emplace_back("cutoff_constant", cl / cr);
    if (!zero_trace) {
      r.status = Status::HypothesisViolated;
      r.notes.push_back("S_R u(0) does not vanish: the decay inequality has no premise");
    } else {
      r.status = grade(r.empirical_constant, ceil.c_chi, true);
    }
    r.runtime_ms = elapsed_ms(start);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ultra
