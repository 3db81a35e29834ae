#include "ultra/spectral.hpp"

#include "ultra/errors.hpp"
#include "ultra/fft.hpp"

#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>

namespace ultra {

namespace {

void require_w(const Field& u, const char* who) {
  if (!u.with_w() || u.grid().n() == 0) throw DimensionError(std::string(who) + ": field has no w axis");
}

// Slice k of the input is multiplied by factor[k] when factors are given.
Field transform(const Field& u, bool forward, Space out_space, const std::vector<double>& factor = {}) {
  const auto& g = u.grid();
  std::vector<cplx> data(u.values().begin(), u.values().end());
  const WTransform fft(g);
  const std::size_t blocks_per_slice = u.slab() / g.w_count();
  for (int k = 0; k < g.nt(); ++k) {
    cplx* slice = data.data() + k * u.slab();
    const double f = factor.empty() ? 1.0 : factor[k];
    if (forward)
      fft.forward(slice, blocks_per_slice, f);
    else
      fft.inverse(slice, blocks_per_slice, f);
  }
  return Field(g, true, out_space, std::move(data));
}

// Signed lattice index of storage index j on an axis of nw points.
int signed_index(int j, int nw) { return j < nw / 2 ? j : j - nw; }

Field multiply_masks(const Field& uhat, const TransformPlan& plan) {
  std::vector<cplx> out(uhat.values().begin(), uhat.values().end());
  const auto& g = uhat.grid();
  const std::size_t wc = g.w_count();
  for (int k = 0; k < g.nt(); ++k) {
    const auto& mask = plan.mask(k);
    for (std::size_t v = 0; v < g.v_count(); ++v) {
      cplx* row = out.data() + uhat.index(k, v);
      for (std::size_t j = 0; j < wc; ++j)
        if (!mask[j]) row[j] = 0.0;
    }
  }
  return Field(g, true, uhat.space(), std::move(out));
}

double relative(const Field& diff, const Field& ref) {
  const double den = ref.norm2();
  const double num = diff.norm2();
  if (den == 0.0) return num == 0.0 ? 0.0 : std::sqrt(num);
  return std::sqrt(num / den);
}

// d(t,v) . grad_v u by centred differences with zero ghosts.
Field first_order_v(const OperatorSpec& spec, const Field& u) {
  const auto& g = u.grid();
  const int m = g.m();
  const std::size_t wc = u.w_count();
  std::vector<cplx> out(u.size(), 0.0);
  std::vector<int> idx;
  Vec v(m);
  for (int k = 0; k < g.nt(); ++k) {
    const double t = g.t(k);
    for (std::size_t c = 0; c < g.v_count(); ++c) {
      g.v_unflatten(c, idx);
      for (int a = 0; a < m; ++a) v(a) = g.v(a, idx[a]);
      const Vec dv = spec.d(t, v);
      for (int a = 0; a < m; ++a) {
        if (dv(a) == 0.0) continue;
        const std::size_t st = g.v_stride(a);
        const bool has_lo = idx[a] > 0, has_hi = idx[a] + 1 < g.v_axes()[a].points;
        const double scale = dv(a) / (2.0 * g.dv(a));
        for (std::size_t j = 0; j < wc; ++j) {
          const cplx hi = has_hi ? u[u.index(k, c + st, j)] : cplx(0.0);
          const cplx lo = has_lo ? u[u.index(k, c - st, j)] : cplx(0.0);
          out[u.index(k, c, j)] += scale * (hi - lo);
        }
      }
    }
  }
  return Field(g, u.with_w(), u.space(), std::move(out));
}

// Centred difference along one v axis with zero ghosts.
Field v_difference(const Field& u, int axis) {
  const auto& g = u.grid();
  const std::size_t wc = u.w_count();
  const std::size_t st = g.v_stride(axis);
  std::vector<cplx> out(u.size(), 0.0);
  std::vector<int> idx;
  const double scale = 1.0 / (2.0 * g.dv(axis));
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t c = 0; c < g.v_count(); ++c) {
      g.v_unflatten(c, idx);
      const bool has_lo = idx[axis] > 0, has_hi = idx[axis] + 1 < g.v_axes()[axis].points;
      for (std::size_t j = 0; j < wc; ++j) {
        const cplx hi = has_hi ? u[u.index(k, c + st, j)] : cplx(0.0);
        const cplx lo = has_lo ? u[u.index(k, c - st, j)] : cplx(0.0);
        out[u.index(k, c, j)] = scale * (hi - lo);
      }
    }
  return Field(g, u.with_w(), u.space(), std::move(out));
}

Field multiply_c(const OperatorSpec& spec, const Field& u) {
  const auto& g = u.grid();
  const std::size_t wc = u.w_count();
  std::vector<cplx> out(u.size());
  std::vector<int> idx;
  Vec v(g.m());
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t c = 0; c < g.v_count(); ++c) {
      g.v_unflatten(c, idx);
      for (int a = 0; a < g.m(); ++a) v(a) = g.v(a, idx[a]);
      const double cv = spec.c(g.t(k), v);
      for (std::size_t j = 0; j < wc; ++j) out[u.index(k, c, j)] = cv * u[u.index(k, c, j)];
    }
  return Field(g, u.with_w(), u.space(), std::move(out));
}

}  // namespace

Field fourier_w(const Field& u, Direction dir) {
  require_w(u, "fourier_w");
  if (dir == Direction::Forward) {
    if (u.space() != Space::Physical) throw StateError("fourier_w: forward needs a physical field");
    return transform(u, true, Space::Frequency);
  }
  if (u.space() != Space::Frequency) throw StateError("fourier_w: inverse needs a frequency field");
  return transform(u, false, Space::Physical);
}

Vec rho_map(const DriftPair& d, double t, const Vec& x, RhoDirection dir) {
  if (x.size() != d.n()) throw DimensionError("rho_map: vector size");
  const double s = dir == RhoDirection::ToRho ? t : -t;
  return mat_exp(d.B2().transpose(), s) * x;
}

InvarianceReport invariance_check(const DriftPair& d, const Vec& rho0, double t2, int nt) {
  namespace ode = boost::numeric::odeint;
  if (nt < 64) throw ValidationError("invariance_check: nt must be at least 64");
  if (!(t2 > 0.0)) throw ValidationError("invariance_check: t2 must be positive");
  if (rho0.size() != d.n()) throw DimensionError("invariance_check: rho0 size");
  const int n = d.n();
  const Mat B2t = d.B2().transpose();
  using State = std::vector<double>;
  auto rhs = [&](const State& x, State& dx, double) {
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += B2t(i, j) * x[j];
      dx[i] = -acc;
    }
  };
  std::vector<double> times(nt);
  for (int k = 0; k < nt; ++k) times[k] = t2 * k / (nt - 1);
  State x(rho0.data(), rho0.data() + n);
  InvarianceReport rep;
  auto observe = [&](const State& eta, double t) {
    const Vec e = Eigen::Map<const Vec>(eta.data(), n);
    rep.max_drift = std::max(rep.max_drift, (mat_exp(B2t, t) * e - rho0).norm());
    ++rep.checkpoints;
  };
  auto stepper = ode::make_controlled(1e-15, 1e-15, ode::runge_kutta_fehlberg78<State>());
  ode::integrate_times(stepper, rhs, x, times.begin(), times.end(), t2 / (4.0 * nt), observe);
  const double scale = rho0.norm();
  rep.relative_drift = scale > 0.0 ? rep.max_drift / scale : rep.max_drift;
  rep.pass = rep.relative_drift <= 1e-10;
  return rep;
}

FrequencyRegion::FrequencyRegion(const DriftPair& d, double R, double b, double t2,
                                 bool estimate_radius)
    : drift_(d), R_(R), b_(b), t2_(t2), eval_(d, t2, b) {
  if (!(R > 0.0)) throw ValidationError("FrequencyRegion: R must be positive");
  if (!(b > 0.0) || b > t2) throw ValidationError("FrequencyRegion: need 0 < b <= t2");
  if (estimate_radius) {
    const DecayProfile p = c2_lower_bound(d, t2, std::max(2000, 100 * d.n()), 400);
    if (!p.rank_deficient && p.c2_estimate && *p.c2_estimate > 0.0) {
      c2_ = *p.c2_estimate;
      radius_ = std::sqrt(R / *c2_);
    }
  }
}

FrequencyRegion::Membership FrequencyRegion::membership(const Vec& rho) const {
  const double s = eval_.sup(rho);
  return {s <= R_, R_ - s};
}

TransformPlan::TransformPlan(GridSpec grid, FrequencyRegion region)
    : grid_(std::move(grid)), region_(std::move(region)) {
  if (grid_.n() != region_.drift().n()) throw DimensionError("TransformPlan: grid/drift n mismatch");
  if (grid_.n() == 0) throw DimensionError("TransformPlan: grid has no w axis");
  const std::size_t wc = grid_.w_count();
  std::vector<Vec> etas(wc);
  for (std::size_t j = 0; j < wc; ++j) etas[j] = eta_at(j);
  const Mat B2t = region_.drift().B2().transpose();
  const bool still = B2t.isZero(0.0);
  masks_.resize(grid_.nt());
  for (int k = 0; k < grid_.nt(); ++k) {
    if (still && k > 0) {
      masks_[k] = masks_[0];
      continue;
    }
    const Mat E = mat_exp(B2t, grid_.t(k));
    auto& mask = masks_[k];
    mask.resize(wc);
    for (std::size_t j = 0; j < wc; ++j) mask[j] = region_.contains(E * etas[j]) ? 1 : 0;
  }
}

Vec TransformPlan::eta_at(std::size_t w_flat) const {
  std::vector<int> idx;
  grid_.w_unflatten(w_flat, idx);
  Vec eta(grid_.n());
  for (int a = 0; a < grid_.n(); ++a) eta(a) = grid_.eta(a, idx[a]);
  return eta;
}

Vec TransformPlan::rho_at(int k, std::size_t w_flat) const {
  return rho_map(region_.drift(), grid_.t(k), eta_at(w_flat), RhoDirection::ToRho);
}

std::size_t TransformPlan::kept(int k) const {
  return static_cast<std::size_t>(std::count(masks_[k].begin(), masks_[k].end(), 1));
}

bool TransformPlan::saturated() const {
  for (int k = 0; k < grid_.nt(); ++k)
    if (kept(k) != grid_.w_count()) return false;
  return true;
}

double TransformPlan::lattice_sup_max() const {
  double top = 0.0;
  for (int k = 0; k < grid_.nt(); ++k)
    for (std::size_t j = 0; j < grid_.w_count(); ++j)
      top = std::max(top, region_.sup_fn(rho_at(k, j)));
  return top;
}

void TransformPlan::dump_masks_csv(std::ostream& os) const {
  const int n = grid_.n();
  os << "t_index";
  for (int a = 0; a < n; ++a) os << ",eta" << a;
  os << ",bit\n";
  std::vector<int> idx;
  for (int k = 0; k < grid_.nt(); ++k)
    for (std::size_t j = 0; j < grid_.w_count(); ++j) {
      grid_.w_unflatten(j, idx);
      os << k;
      for (int a = 0; a < n; ++a) os << ',' << signed_index(idx[a], grid_.w_axes()[a].points);
      os << ',' << static_cast<int>(masks_[k][j]) << '\n';
    }
}

Field apply_T(const Field& u, const TransformPlan& plan, Direction dir) {
  require_w(u, "apply_T");
  if (!(u.grid() == plan.grid())) throw DimensionError("apply_T: grid does not match plan");
  const auto& g = u.grid();
  const double tr = plan.trace_B2();
  std::vector<double> factor(g.nt());
  if (dir == Direction::Forward) {
    if (u.space() != Space::Physical) throw StateError("apply_T: forward needs a physical field");
    for (int k = 0; k < g.nt(); ++k) factor[k] = std::exp(-0.5 * tr * g.t(k));
    return transform(u, true, Space::Invariant, factor);
  }
  if (u.space() != Space::Invariant) throw StateError("apply_T: inverse needs an invariant-space field");
  for (int k = 0; k < g.nt(); ++k) factor[k] = std::exp(0.5 * tr * g.t(k));
  return transform(u, false, Space::Physical, factor);
}

double rho_slice_norm2(const Field& Tu, const TransformPlan& plan, int k) {
  if (Tu.space() != Space::Invariant) throw StateError("rho_slice_norm2: needs an invariant-space field");
  return std::exp(plan.trace_B2() * Tu.grid().t(k)) * Tu.slice_norm2(k);
}

Field apply_S_R(const Field& u, const TransformPlan& plan) {
  require_w(u, "apply_S_R");
  if (u.space() != Space::Physical) throw StateError("apply_S_R: needs a physical field");
  if (!(u.grid() == plan.grid())) throw DimensionError("apply_S_R: grid does not match plan");
  return transform(multiply_masks(transform(u, true, Space::Frequency), plan), false, Space::Physical);
}

Field apply_S_R_hat(const Field& uhat, const TransformPlan& plan) {
  require_w(uhat, "apply_S_R_hat");
  if (uhat.space() != Space::Frequency) throw StateError("apply_S_R_hat: needs a frequency field");
  if (!(uhat.grid() == plan.grid())) throw DimensionError("apply_S_R_hat: grid does not match plan");
  return multiply_masks(uhat, plan);
}

ConjugationReport verify_conjugation(const OperatorSpec& spec, const Field& u, double nyquist_limit) {
  require_w(u, "verify_conjugation");
  if (u.space() != Space::Physical) throw StateError("verify_conjugation: needs a physical field");
  const auto& g = u.grid();
  const int n = g.n();
  if (g.m() != spec.m() || n != spec.n()) throw DimensionError("verify_conjugation: grid/operator mismatch");
  const std::size_t wc = g.w_count();
  for (int a = 0; a < n; ++a)
    if (g.w_axes()[a].points < 8) throw ValidationError("verify_conjugation: need at least 8 w points per axis");

  const Field uhat = fourier_w(u, Direction::Forward);
  ConjugationReport rep;

  // Mass in the two outer lattice layers, where the eta stencil is one-sided.
  std::vector<std::uint8_t> shell(wc, 0);
  std::vector<int> idx;
  for (std::size_t j = 0; j < wc; ++j) {
    g.w_unflatten(j, idx);
    for (int a = 0; a < n; ++a) {
      const int nw = g.w_axes()[a].points;
      if (std::abs(signed_index(idx[a], nw)) >= nw / 2 - 2) shell[j] = 1;
    }
  }
  double total = 0.0, edge = 0.0;
  for (std::size_t i = 0; i < uhat.size(); ++i) {
    const double p = std::norm(uhat[i]);
    total += p;
    if (shell[i % wc]) edge += p;
  }
  rep.nyquist_mass_fraction = total > 0.0 ? edge / total : 0.0;
  if (rep.nyquist_mass_fraction > nyquist_limit)
    throw PreconditionError("verify_conjugation: mass near the Nyquist shell is " +
                            std::to_string(rep.nyquist_mass_fraction) + " of the total");

  const Field lhs = fourier_w(apply_P(spec, u), Direction::Forward);

  const Field dt_hat = time_derivative(uhat, TimeClosure::ZeroExtension);
  const Field div_hat = DiffusionOperator(spec, g).apply(uhat);
  std::vector<cplx> rhs(uhat.size());
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = dt_hat[i] + div_hat[i];

  const Mat& B1 = spec.drift.B1();
  const Mat& B2 = spec.drift.B2();
  const double tr = B2.trace();
  std::vector<Vec> etas(wc);
  std::vector<double> b2eta(wc * n);
  std::vector<Vec> b1eta(wc);
  for (std::size_t j = 0; j < wc; ++j) {
    g.w_unflatten(j, idx);
    Vec eta(n);
    for (int a = 0; a < n; ++a) eta(a) = g.eta(a, idx[a]);
    b1eta[j] = B1.transpose() * eta;
    const Vec q = B2.transpose() * eta;
    for (int a = 0; a < n; ++a) b2eta[j * n + a] = q(a);
  }

  // Lattice positions p = signed index + nw/2 run 0..nw-1 along each axis.
  auto storage_of = [](int p, int nw) {
    const int s = p - nw / 2;
    return s >= 0 ? s : s + nw;
  };
  std::vector<cplx> grad(wc);
  Vec v(g.m());
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t c = 0; c < g.v_count(); ++c) {
      std::vector<int> vidx;
      g.v_unflatten(c, vidx);
      for (int a = 0; a < g.m(); ++a) v(a) = g.v(a, vidx[a]);
      const cplx* row = &uhat[uhat.index(k, c)];
      cplx* out = rhs.data() + uhat.index(k, c);
      for (std::size_t j = 0; j < wc; ++j) out[j] += (cplx(0.0, b1eta[j].dot(v)) - tr) * row[j];
      for (int a = 0; a < n; ++a) {
        const int nw = g.w_axes()[a].points;
        const std::size_t st = g.w_stride(a);
        const double h12 = 12.0 * g.deta(a);
        for (std::size_t j = 0; j < wc; ++j) {
          if (b2eta[j * n + a] == 0.0) continue;
          g.w_unflatten(j, idx);
          const std::size_t base = j - static_cast<std::size_t>(idx[a]) * st;
          const int p = signed_index(idx[a], nw) + nw / 2;
          auto f = [&](int q) { return row[base + static_cast<std::size_t>(storage_of(q, nw)) * st]; };
          cplx dfa;
          if (p >= 2 && p <= nw - 3)
            dfa = f(p - 2) - 8.0 * f(p - 1) + 8.0 * f(p + 1) - f(p + 2);
          else if (p == 0)
            dfa = -25.0 * f(0) + 48.0 * f(1) - 36.0 * f(2) + 16.0 * f(3) - 3.0 * f(4);
          else if (p == 1)
            dfa = -3.0 * f(0) - 10.0 * f(1) + 18.0 * f(2) - 6.0 * f(3) + f(4);
          else if (p == nw - 1)
            dfa = 25.0 * f(p) - 48.0 * f(p - 1) + 36.0 * f(p - 2) - 16.0 * f(p - 3) + 3.0 * f(p - 4);
          else
            dfa = 3.0 * f(p + 1) + 10.0 * f(p) - 18.0 * f(p - 1) + 6.0 * f(p - 2) - f(p - 3);
          out[j] -= b2eta[j * n + a] * dfa / h12;
        }
      }
    }

  const Field rhs_field(g, true, Space::Frequency, std::move(rhs));
  rep.lhs_norm = std::sqrt(lhs.norm2());
  rep.relative_discrepancy = relative(axpby(1.0, lhs, -1.0, rhs_field), lhs);
  return rep;
}

CommutationReport verify_commutation(const OperatorSpec& spec, const Field& u, const TransformPlan& plan) {
  CommutationReport rep;
  const Field su = apply_S_R(u, plan);

  const Field p_su = apply_P(spec, su);
  rep.p_commutator = relative(axpby(1.0, p_su, -1.0, apply_S_R(apply_P(spec, u), plan)), p_su);

  double num = 0.0, den = 0.0;
  for (int a = 0; a < u.grid().m(); ++a) {
    const Field g_su = v_difference(su, a);
    num += axpby(1.0, g_su, -1.0, apply_S_R(v_difference(u, a), plan)).norm2();
    den += g_su.norm2();
  }
  rep.grad_commutator = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);

  const Field c_su = multiply_c(spec, su);
  rep.c_commutator = relative(axpby(1.0, apply_S_R(multiply_c(spec, u), plan), -1.0, c_su), c_su);

  const Field d_su = first_order_v(spec, su);
  rep.d_commutator = relative(axpby(1.0, apply_S_R(first_order_v(spec, u), plan), -1.0, d_su), d_su);
  return rep;
}

}  // namespace ultra
