#include "ultra/operator.hpp"

#include "ultra/errors.hpp"
#include "ultra/fft.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace ultra {

double CoefficientFamily::eval(double t, const Vec& v) const {
  if (kind == "constant") return a0;
  if (kind == "affine") {
    double s = a0 + a_t * t;
    for (std::size_t i = 0; i < a_v.size() && static_cast<Eigen::Index>(i) < v.size(); ++i)
      s += a_v[i] * v(static_cast<Eigen::Index>(i));
    return s;
  }
  if (kind == "sinusoidal") return a0 + amp * std::sin(k * v(0) + omega * t);
  throw ValidationError("unknown coefficient family '" + kind + "'");
}

OperatorSpec make_operator(DriftPair drift, const CoefficientFamily& diffusivity,
                           const CoefficientFamily& potential, std::vector<double> drift_v,
                           double lambda, std::string label) {
  const int m = drift.m();
  if (!drift_v.empty() && static_cast<int>(drift_v.size()) != m)
    throw DimensionError("make_operator: d must have m entries");
  if (!(lambda > 1.0)) throw ValidationError("make_operator: lambda must exceed 1");
  // Surface unknown family names at construction time.
  (void)diffusivity.eval(0.0, Vec::Zero(m));
  (void)potential.eval(0.0, Vec::Zero(m));
  Vec dvec = Vec::Zero(m);
  for (int i = 0; i < static_cast<int>(drift_v.size()); ++i) dvec(i) = drift_v[i];
  OperatorSpec s{std::move(drift),
                 [diffusivity, m](double t, const Vec& v) -> Mat {
                   return diffusivity.eval(t, v) * Mat::Identity(m, m);
                 },
                 [potential](double t, const Vec& v) { return potential.eval(t, v); },
                 [dvec](double, const Vec&) { return dvec; },
                 lambda,
                 std::move(label)};
  return s;
}

DriftPair drift_preset(const std::string& name, int n) {
  if (name == "heat") return DriftPair(Mat::Zero(1, 1), Mat::Zero(1, 1));
  if (name == "L1") {
    Mat b1(2, 1), b2(2, 2);
    b1 << 1, 0;
    b2 << 0, 0, 1, 0;
    return DriftPair(b1, b2);
  }
  if (name == "jerk") {
    Mat b1(3, 1), b2(3, 3);
    b1 << -1, 0, 0;
    b2 << 0, 0, 0, -1, 0, 0, 0, -1, 0;
    return DriftPair(b1, b2);
  }
  if (name == "example1") {
    if (n < 2) throw ValidationError("example1 needs n >= 2");
    Mat b1 = Mat::Zero(n, 1);
    b1(0, 0) = 1.0;
    Mat b2 = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) b2(i, i) = 1.0;
    for (int i = 1; i < n; ++i) b2(i, i - 1) = 1.0;
    b2(0, n - 1) = 1.0;
    return DriftPair(b1, b2);
  }
  throw ValidationError("unknown preset '" + name + "'");
}

OperatorSpec operator_preset(const std::string& name, double lambda, int n) {
  DriftPair d = drift_preset(name, n);
  CoefficientFamily zero;
  zero.a0 = 0.0;
  return make_operator(d, CoefficientFamily{}, zero, {}, lambda, name);
}

namespace {

Vec random_point(const GridSpec& grid, std::mt19937_64& rng, double& t) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  t = grid.t2() * u01(rng);
  Vec v(grid.m());
  for (int a = 0; a < grid.m(); ++a) {
    const double L = grid.v_axes()[a].half_width;
    v(a) = -L + 2.0 * L * u01(rng);
  }
  return v;
}

}  // namespace

AssumptionReport validate_assumptions(const OperatorSpec& spec, const GridSpec& grid, int samples,
                                      unsigned long long seed) {
  if (samples < 1000) throw PreconditionError("validate_assumptions: need samples >= 1000");
  if (grid.m() != spec.m()) throw DimensionError("validate_assumptions: grid/operator m mismatch");
  const int m = spec.m();
  const double lam = spec.lambda;
  auto check = [](const char* name) {
    ConditionCheck c;
    c.name = name;
    c.worst_margin = std::numeric_limits<double>::infinity();
    return c;
  };
  ConditionCheck sym = check("symmetry");
  ConditionCheck lower = check("ellipticity_lower");
  ConditionCheck upper = check("ellipticity_upper");
  ConditionCheck bounds = check("coefficient_bounds");
  const double h = 1e-5;

  auto visit = [&](double t, const Vec& v) {
    const Mat A = spec.A(t, v);
    const double c = spec.c(t, v);
    const Vec d = spec.d(t, v);
    if (!A.allFinite() || !std::isfinite(c) || !d.allFinite()) {
      std::ostringstream os;
      os << "validate_assumptions: non-finite coefficient at t=" << t << " v=" << v.transpose();
      throw ValidationError(os.str());
    }
    if (A.rows() != m || A.cols() != m || d.size() != m)
      throw DimensionError("validate_assumptions: coefficient shape");
    auto record = [&](ConditionCheck& chk, double margin) {
      if (margin < chk.worst_margin) {
        chk.worst_margin = margin;
        chk.where_t = t;
        chk.where_v = v;
      }
    };
    const double anorm = A.norm();
    record(sym, 1e-12 * std::max(anorm, 1e-300) - (A - A.transpose()).cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly);
    record(lower, es.eigenvalues().minCoeff() - 1.0 / lam);
    record(upper, lam - es.eigenvalues().maxCoeff());
    const Mat dA_dt = (spec.A(t + h, v) - spec.A(t - h, v)) / (2.0 * h);
    std::vector<Mat> grad(m);
    for (int k = 0; k < m; ++k) {
      Vec vp = v, vm = v;
      vp(k) += h;
      vm(k) -= h;
      grad[k] = (spec.A(t, vp) - spec.A(t, vm)) / (2.0 * h);
    }
    double worst = 0.0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        double g2 = 0.0;
        for (int k = 0; k < m; ++k) g2 += grad[k](i, j) * grad[k](i, j);
        worst = std::max(worst, std::abs(dA_dt(i, j)) + std::sqrt(g2));
      }
    record(bounds, lam - (worst + std::abs(c) + d.norm()));
  };

  int count = 0;
  const std::size_t nodes = static_cast<std::size_t>(grid.nt()) * grid.v_count();
  const std::size_t stride = std::max<std::size_t>(1, nodes / 20000);
  std::vector<int> idx;
  for (std::size_t f = 0; f < nodes; f += stride) {
    const int k = static_cast<int>(f / grid.v_count());
    grid.v_unflatten(f % grid.v_count(), idx);
    Vec v(m);
    for (int a = 0; a < m; ++a) v(a) = grid.v(a, idx[a]);
    visit(grid.t(k), v);
    ++count;
  }
  std::mt19937_64 rng(seed);
  for (int s = 0; s < samples; ++s) {
    double t = 0.0;
    const Vec v = random_point(grid, rng, t);
    visit(t, v);
    ++count;
  }
  AssumptionReport rep;
  rep.samples = count;
  for (auto* chk : {&sym, &lower, &upper, &bounds}) {
    chk->pass = chk->worst_margin >= 0.0;
    rep.checks.push_back(*chk);
  }
  rep.pass = std::all_of(rep.checks.begin(), rep.checks.end(), [](const auto& c) { return c.pass; });
  return rep;
}

void check_support(const Field& u, const ApplyOptions& opts) {
  if (!opts.require_support) return;
  const auto& g = u.grid();
  const double limit = opts.support_tol * u.max_abs();
  const int cells = opts.support_cells;
  std::vector<int> idx;
  for (int k = 0; k < g.nt(); ++k) {
    const bool t_edge = opts.closure == TimeClosure::ZeroExtension &&
                        (k < cells || k >= g.nt() - cells);
    for (std::size_t c = 0; c < g.v_count(); ++c) {
      g.v_unflatten(c, idx);
      bool edge = t_edge;
      for (int a = 0; a < g.m() && !edge; ++a)
        edge = idx[a] < cells || idx[a] >= g.v_axes()[a].points - cells;
      if (!edge) continue;
      const std::size_t base = u.index(k, c);
      for (std::size_t w = 0; w < u.w_count(); ++w)
        if (std::abs(u[base + w]) > limit) {
          std::ostringstream os;
          os << "support violation: |u| = " << std::abs(u[base + w]) << " at time node " << k
             << ", v cell " << c << " exceeds " << limit;
          throw PreconditionError(os.str());
        }
    }
  }
}

Field time_derivative(const Field& u, TimeClosure closure) {
  const auto& g = u.grid();
  const int nt = g.nt();
  const std::size_t slab = u.slab();
  const double inv = 1.0 / (12.0 * g.dt());
  std::vector<cplx> out(u.size());
  auto at = [&](int k, std::size_t i) -> cplx {
    return (k < 0 || k >= nt) ? cplx{} : u[static_cast<std::size_t>(k) * slab + i];
  };
  for (int k = 0; k < nt; ++k) {
    cplx* o = out.data() + static_cast<std::size_t>(k) * slab;
    const bool one_sided = closure == TimeClosure::OneSided && (k < 2 || k > nt - 3);
    for (std::size_t i = 0; i < slab; ++i) {
      cplx val;
      if (!one_sided) {
        val = at(k - 2, i) - 8.0 * at(k - 1, i) + 8.0 * at(k + 1, i) - at(k + 2, i);
      } else if (k == 0) {
        val = -25.0 * at(0, i) + 48.0 * at(1, i) - 36.0 * at(2, i) + 16.0 * at(3, i) - 3.0 * at(4, i);
      } else if (k == 1) {
        val = -3.0 * at(0, i) - 10.0 * at(1, i) + 18.0 * at(2, i) - 6.0 * at(3, i) + at(4, i);
      } else if (k == nt - 1) {
        val = 25.0 * at(k, i) - 48.0 * at(k - 1, i) + 36.0 * at(k - 2, i) - 16.0 * at(k - 3, i) +
              3.0 * at(k - 4, i);
      } else {
        val = 3.0 * at(k + 1, i) + 10.0 * at(k, i) - 18.0 * at(k - 1, i) + 6.0 * at(k - 2, i) -
              at(k - 3, i);
      }
      o[i] = val * inv;
    }
  }
  return Field(g, u.with_w(), u.space(), std::move(out));
}

// Faces of axis i are enumerated over the v grid extended by one layer below
// on that axis: face f sits between cells (j_i - 1) and j_i, j_i = 0..nv_i.
DiffusionOperator::DiffusionOperator(const OperatorSpec& spec, const GridSpec& grid)
    : grid_(grid), m_(grid.m()) {
  if (grid.m() != spec.m()) throw DimensionError("DiffusionOperator: grid/operator m mismatch");
  faces_per_axis_ = 0;
  for (int a = 0; a < m_; ++a)
    faces_per_axis_ = std::max(faces_per_axis_, grid.v_count() / grid.v_axes()[a].points *
                                                    (grid.v_axes()[a].points + 1));
  const int nt = grid.nt();
  const std::size_t per_t = static_cast<std::size_t>(m_) * faces_per_axis_ * m_;
  a_faces_.assign(per_t * nt, 0.0);
  dta_faces_.assign(per_t * nt, 0.0);
  const double delta = 1e-3 * grid.t2();
  std::vector<int> idx(m_);
  for (int k = 0; k < nt; ++k) {
    const double t = grid.t(k);
    for (int i = 0; i < m_; ++i) {
      const int nvi = grid.v_axes()[i].points;
      const std::size_t nf = grid.v_count() / nvi * (nvi + 1);
      for (std::size_t f = 0; f < nf; ++f) {
        // Unflatten f over dims with axis i extended to nvi+1.
        std::size_t rem = f;
        for (int a = m_ - 1; a >= 0; --a) {
          const int na = a == i ? nvi + 1 : grid.v_axes()[a].points;
          idx[a] = static_cast<int>(rem % na);
          rem /= na;
        }
        Vec v(m_);
        for (int a = 0; a < m_; ++a)
          v(a) = a == i ? -grid.v_axes()[a].half_width + idx[a] * grid.dv(a) : grid.v(a, idx[a]);
        const Mat A = spec.A(t, v);
        const Mat dA = (-spec.A(t + 2 * delta, v) + 8.0 * spec.A(t + delta, v) -
                        8.0 * spec.A(t - delta, v) + spec.A(t - 2 * delta, v)) /
                       (12.0 * delta);
        const std::size_t base = static_cast<std::size_t>(k) * per_t + (i * faces_per_axis_ + f) * m_;
        for (int c = 0; c < m_; ++c) {
          a_faces_[base + c] = A(i, c);
          dta_faces_[base + c] = dA(i, c);
        }
      }
    }
  }
}

namespace {

// Cell on the low and high side of face f of axis i; -1 marks a ghost.
struct FaceCells {
  long lo, hi;
};

FaceCells face_cells(const GridSpec& g, int i, std::size_t f, std::vector<int>& idx) {
  const int m = g.m();
  const int nvi = g.v_axes()[i].points;
  std::size_t rem = f;
  for (int a = m - 1; a >= 0; --a) {
    const int na = a == i ? nvi + 1 : g.v_axes()[a].points;
    idx[a] = static_cast<int>(rem % na);
    rem /= na;
  }
  const int ji = idx[i];
  std::size_t base = 0;
  for (int a = 0; a < m; ++a)
    if (a != i) base += static_cast<std::size_t>(idx[a]) * g.v_stride(a);
  const std::size_t s = g.v_stride(i);
  FaceCells fc;
  fc.lo = ji >= 1 ? static_cast<long>(base + (ji - 1) * s) : -1;
  fc.hi = ji < nvi ? static_cast<long>(base + ji * s) : -1;
  return fc;
}

// Centred difference along axis k at cell c (ghosts are zero); c < 0 gives 0.
void centred(const GridSpec& g, const cplx* u, std::size_t wc, long c, int k, cplx* out) {
  if (c < 0) {
    std::fill(out, out + wc, cplx{});
    return;
  }
  std::vector<int> idx;
  g.v_unflatten(static_cast<std::size_t>(c), idx);
  const std::size_t s = g.v_stride(k);
  const bool has_lo = idx[k] > 0, has_hi = idx[k] < g.v_axes()[k].points - 1;
  const double inv = 1.0 / (2.0 * g.dv(k));
  for (std::size_t w = 0; w < wc; ++w) {
    const cplx hi = has_hi ? u[(c + s) * wc + w] : cplx{};
    const cplx lo = has_lo ? u[(c - s) * wc + w] : cplx{};
    out[w] = (hi - lo) * inv;
  }
}

}  // namespace

void DiffusionOperator::face_gradient(const cplx* u, std::size_t wc, int axis, std::size_t face,
                                      std::vector<cplx>& G) const {
  // G holds m components of wc values each.
  G.assign(static_cast<std::size_t>(m_) * wc, cplx{});
  std::vector<int> idx(m_);
  const FaceCells fc = face_cells(grid_, axis, face, idx);
  const double inv = 1.0 / grid_.dv(axis);
  for (std::size_t w = 0; w < wc; ++w) {
    const cplx hi = fc.hi >= 0 ? u[fc.hi * wc + w] : cplx{};
    const cplx lo = fc.lo >= 0 ? u[fc.lo * wc + w] : cplx{};
    G[axis * wc + w] = (hi - lo) * inv;
  }
  if (m_ == 1) return;
  std::vector<cplx> a(wc), b(wc);
  for (int k = 0; k < m_; ++k) {
    if (k == axis) continue;
    centred(grid_, u, wc, fc.lo, k, a.data());
    centred(grid_, u, wc, fc.hi, k, b.data());
    for (std::size_t w = 0; w < wc; ++w) G[k * wc + w] = 0.5 * (a[w] + b[w]);
  }
}

void DiffusionOperator::apply(int k, const cplx* in, cplx* out, std::size_t wc) const {
  const std::size_t nv = grid_.v_count();
  std::fill(out, out + nv * wc, cplx{});
  const std::size_t per_t = static_cast<std::size_t>(m_) * faces_per_axis_ * m_;
  if (m_ == 1) {
    const int n = grid_.v_axes()[0].points;
    const double inv2 = 1.0 / (grid_.dv(0) * grid_.dv(0));
    const double* a = a_faces_.data() + static_cast<std::size_t>(k) * per_t;
    for (int j = 0; j < n; ++j) {
      const double aw = a[j], ae = a[j + 1];
      const cplx* c = in + j * wc;
      const cplx* l = j > 0 ? in + (j - 1) * wc : nullptr;
      const cplx* r = j < n - 1 ? in + (j + 1) * wc : nullptr;
      cplx* o = out + j * wc;
      for (std::size_t w = 0; w < wc; ++w) {
        const cplx left = l ? l[w] : cplx{};
        const cplx right = r ? r[w] : cplx{};
        o[w] = (ae * (right - c[w]) - aw * (c[w] - left)) * inv2;
      }
    }
    return;
  }
  std::vector<cplx> G;
  std::vector<int> idx(m_);
  for (int i = 0; i < m_; ++i) {
    const int nvi = grid_.v_axes()[i].points;
    const std::size_t nf = nv / nvi * (nvi + 1);
    const double inv = 1.0 / grid_.dv(i);
    for (std::size_t f = 0; f < nf; ++f) {
      face_gradient(in, wc, i, f, G);
      const FaceCells fc = face_cells(grid_, i, f, idx);
      const double* a = a_faces_.data() + static_cast<std::size_t>(k) * per_t + (i * faces_per_axis_ + f) * m_;
      for (std::size_t w = 0; w < wc; ++w) {
        cplx F{};
        for (int c = 0; c < m_; ++c) F += a[c] * G[c * wc + w];
        if (fc.lo >= 0) out[fc.lo * wc + w] += F * inv;
        if (fc.hi >= 0) out[fc.hi * wc + w] -= F * inv;
      }
    }
  }
}

Field DiffusionOperator::apply(const Field& u) const {
  if (!(u.grid() == grid_) && !(u.grid().without_w() == grid_.without_w()))
    throw DimensionError("DiffusionOperator: grid mismatch");
  std::vector<cplx> out(u.size());
  const std::size_t wc = u.w_count();
  for (int k = 0; k < grid_.nt(); ++k)
    apply(k, u.values().data() + u.index(k, 0), out.data() + u.index(k, 0), wc);
  return Field(u.grid(), u.with_w(), u.space(), std::move(out));
}

double DiffusionOperator::face_form(const Field& f, const std::vector<double>& coef,
                                    const std::vector<double>* weights) const {
  const std::size_t wc = f.w_count();
  const std::size_t nv = grid_.v_count();
  const std::size_t per_t = static_cast<std::size_t>(m_) * faces_per_axis_ * m_;
  const double cell = grid_.v_cell() * (f.with_w() ? f.grid().w_cell() : 1.0);
  std::vector<cplx> G;
  double total = 0.0;
  for (int k = 0; k < grid_.nt(); ++k) {
    const double wt = grid_.t_weight(k) * (weights ? (*weights)[k] : 1.0);
    if (wt == 0.0) continue;
    const cplx* u = f.values().data() + f.index(k, 0);
    double s = 0.0;
    for (int i = 0; i < m_; ++i) {
      const int nvi = grid_.v_axes()[i].points;
      const std::size_t nf = nv / nvi * (nvi + 1);
      for (std::size_t face = 0; face < nf; ++face) {
        face_gradient(u, wc, i, face, G);
        const double* a = coef.data() + static_cast<std::size_t>(k) * per_t + (i * faces_per_axis_ + face) * m_;
        for (std::size_t w = 0; w < wc; ++w) {
          cplx F{};
          for (int c = 0; c < m_; ++c) F += a[c] * G[c * wc + w];
          s += (F * std::conj(G[i * wc + w])).real();
        }
      }
    }
    total += wt * s * cell;
  }
  return total;
}

double DiffusionOperator::energy(const Field& f, const std::vector<double>* weights) const {
  return face_form(f, a_faces_, weights);
}

double DiffusionOperator::dt_energy(const Field& f, const std::vector<double>* weights) const {
  return face_form(f, dta_faces_, weights);
}

double DiffusionOperator::grad_norm2(const Field& f, const std::vector<double>* weights) const {
  const std::size_t wc = f.w_count();
  const std::size_t nv = grid_.v_count();
  const double cell = grid_.v_cell() * (f.with_w() ? f.grid().w_cell() : 1.0);
  std::vector<int> idx(m_);
  double total = 0.0;
  for (int k = 0; k < grid_.nt(); ++k) {
    const double wt = grid_.t_weight(k) * (weights ? (*weights)[k] : 1.0);
    if (wt == 0.0) continue;
    const cplx* u = f.values().data() + f.index(k, 0);
    double s = 0.0;
    for (int i = 0; i < m_; ++i) {
      const int nvi = grid_.v_axes()[i].points;
      const std::size_t nf = nv / nvi * (nvi + 1);
      const double inv = 1.0 / grid_.dv(i);
      for (std::size_t face = 0; face < nf; ++face) {
        const FaceCells fc = face_cells(grid_, i, face, idx);
        for (std::size_t w = 0; w < wc; ++w) {
          const cplx hi = fc.hi >= 0 ? u[fc.hi * wc + w] : cplx{};
          const cplx lo = fc.lo >= 0 ? u[fc.lo * wc + w] : cplx{};
          s += std::norm((hi - lo) * inv);
        }
      }
    }
    total += wt * s * cell;
  }
  return total;
}

Field apply_P(const OperatorSpec& spec, const Field& u, const ApplyOptions& opts) {
  if (u.space() != Space::Physical) throw StateError("apply_P: field must be in physical space");
  if (!u.with_w()) throw DimensionError("apply_P: field needs a w axis");
  const auto& g = u.grid();
  if (g.m() != spec.m() || g.n() != spec.n()) throw DimensionError("apply_P: grid/operator mismatch");
  check_support(u, opts);
  std::vector<cplx> out = time_derivative(u, opts.closure).release();
  const DiffusionOperator L(spec, g);
  const std::size_t wc = g.w_count(), nv = g.v_count(), slab = u.slab();
  std::vector<cplx> tmp(slab);
  for (int k = 0; k < g.nt(); ++k) {
    L.apply(k, u.values().data() + u.index(k, 0), tmp.data(), wc);
    cplx* o = out.data() + u.index(k, 0);
    for (std::size_t i = 0; i < slab; ++i) o[i] += tmp[i];
  }
  // Drift (B1 v + B2 w) . grad_w with spectral derivatives.
  const int n = g.n(), m = g.m();
  const Mat& B1 = spec.drift.B1();
  const Mat& B2 = spec.drift.B2();
  const WTransform fft(g);
  std::vector<cplx> hat(u.values().begin(), u.values().end());
  fft.forward(hat.data(), hat.size() / wc);
  std::vector<int> vidx, widx;
  std::vector<cplx> deriv(hat.size());
  std::vector<double> from_w(wc), from_v(nv);
  for (int a = 0; a < n; ++a) {
    if (B1.row(a).isZero(0.0) && B2.row(a).isZero(0.0)) continue;
    for (std::size_t f = 0; f < wc; ++f) {
      g.w_unflatten(f, widx);
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += B2(a, j) * g.w(j, widx[j]);
      from_w[f] = s;
    }
    for (std::size_t c = 0; c < nv; ++c) {
      g.v_unflatten(c, vidx);
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += B1(a, j) * g.v(j, vidx[j]);
      from_v[c] = s;
    }
    const std::size_t blocks = hat.size() / wc;
    for (std::size_t f = 0; f < wc; ++f) {
      g.w_unflatten(f, widx);
      const cplx ieta(0.0, g.eta(a, widx[a]));
      for (std::size_t blk = 0; blk < blocks; ++blk) deriv[blk * wc + f] = ieta * hat[blk * wc + f];
    }
    fft.inverse(deriv.data(), blocks);
    for (std::size_t blk = 0; blk < blocks; ++blk) {
      const double fv = from_v[blk % nv];
      cplx* o = out.data() + blk * wc;
      const cplx* dd = deriv.data() + blk * wc;
      for (std::size_t f = 0; f < wc; ++f) o[f] += (fv + from_w[f]) * dd[f];
    }
  }
  return Field(g, true, Space::Physical, std::move(out));
}

std::vector<double> potential_coefficients(const OperatorSpec& spec, const GridSpec& grid,
                                           const Vec& rho) {
  if (rho.size() != spec.n()) throw DimensionError("potential_coefficients: rho has wrong size");
  const std::size_t nv = grid.v_count();
  std::vector<double> q(static_cast<std::size_t>(grid.nt()) * nv, 0.0);
  const Mat B2t = spec.drift.B2().transpose();
  const Mat B1t = spec.drift.B1().transpose();
  std::vector<int> idx;
  for (int k = 0; k < grid.nt(); ++k) {
    const Vec coef = B1t * (mat_exp(B2t, -grid.t(k)) * rho);
    for (std::size_t c = 0; c < nv; ++c) {
      grid.v_unflatten(c, idx);
      double s = 0.0;
      for (int j = 0; j < grid.m(); ++j) s += coef(j) * grid.v(j, idx[j]);
      q[static_cast<std::size_t>(k) * nv + c] = s;
    }
  }
  return q;
}

namespace {

void require_slice(const OperatorSpec& spec, const Field& h, const char* who) {
  if (h.with_w()) throw DimensionError(std::string(who) + ": expects a time-v slice");
  if (h.space() != Space::Physical) throw StateError(std::string(who) + ": slice must be physical in v");
  if (h.grid().m() != spec.m()) throw DimensionError(std::string(who) + ": grid/operator m mismatch");
}

}  // namespace

Field apply_P_tilde(const OperatorSpec& spec, const Field& h, const Vec& rho, bool include_trace,
                    const ApplyOptions& opts) {
  require_slice(spec, h, "apply_P_tilde");
  check_support(h, opts);
  const auto& g = h.grid();
  std::vector<cplx> out = time_derivative(h, opts.closure).release();
  const DiffusionOperator L(spec, g);
  const auto q = potential_coefficients(spec, g, rho);
  const double half_tr = include_trace ? 0.5 * spec.drift.trace_B2() : 0.0;
  const std::size_t nv = g.v_count();
  std::vector<cplx> tmp(nv);
  for (int k = 0; k < g.nt(); ++k) {
    const cplx* in = h.values().data() + h.index(k, 0);
    L.apply(k, in, tmp.data(), 1);
    cplx* o = out.data() + h.index(k, 0);
    for (std::size_t c = 0; c < nv; ++c)
      o[c] += tmp[c] + cplx(-half_tr, q[static_cast<std::size_t>(k) * nv + c]) * in[c];
  }
  return Field(g, false, Space::Physical, std::move(out));
}

std::pair<Field, Field> apply_K_split(const OperatorSpec& spec, const Field& h, const Vec& rho,
                                      double alpha, double b, const ApplyOptions& opts) {
  require_slice(spec, h, "apply_K_split");
  if (alpha < 1.0) throw PreconditionError("apply_K_split: need alpha >= 1");
  if (!(b > 0.0) || b > h.grid().t2()) throw PreconditionError("apply_K_split: need 0 < b <= t2");
  check_support(h, opts);
  const auto& g = h.grid();
  const std::size_t nv = g.v_count();
  std::vector<cplx> k1 = time_derivative(h, opts.closure).release();
  std::vector<cplx> k2(h.size());
  const auto q = potential_coefficients(spec, g, rho);
  const DiffusionOperator L(spec, g);
  for (int k = 0; k < g.nt(); ++k) {
    const cplx* in = h.values().data() + h.index(k, 0);
    cplx* o1 = k1.data() + h.index(k, 0);
    cplx* o2 = k2.data() + h.index(k, 0);
    L.apply(k, in, o2, 1);
    const double w = alpha / (g.t(k) + b);
    for (std::size_t c = 0; c < nv; ++c) {
      o1[c] += cplx(0.0, q[static_cast<std::size_t>(k) * nv + c]) * in[c];
      o2[c] += w * in[c];
    }
  }
  return {Field(g, false, Space::Physical, std::move(k1)), Field(g, false, Space::Physical, std::move(k2))};
}

Field axpby(cplx a, const Field& x, cplx b, const Field& y) {
  if (!(x.grid() == y.grid()) || x.with_w() != y.with_w() || x.space() != y.space())
    throw DimensionError("axpby: incompatible fields");
  std::vector<cplx> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * y[i];
  return Field(x.grid(), x.with_w(), x.space(), std::move(out));
}

Field scale_in_time(const Field& u, const std::vector<double>& factor) {
  if (static_cast<int>(factor.size()) != u.grid().nt()) throw DimensionError("scale_in_time: size");
  std::vector<cplx> out(u.values().begin(), u.values().end());
  const std::size_t slab = u.slab();
  for (int k = 0; k < u.grid().nt(); ++k)
    for (std::size_t i = 0; i < slab; ++i) out[k * slab + i] *= factor[k];
  return Field(u.grid(), u.with_w(), u.space(), std::move(out));
}

cplx inner(const Field& x, const Field& y) {
  if (!(x.grid() == y.grid()) || x.with_w() != y.with_w()) throw DimensionError("inner: incompatible fields");
  const auto& g = x.grid();
  const std::size_t slab = x.slab();
  const double cell = g.v_cell() * (x.with_w() ? g.w_cell() : 1.0);
  cplx total{};
  for (int k = 0; k < g.nt(); ++k) {
    cplx s{};
    for (std::size_t i = 0; i < slab; ++i) s += x[k * slab + i] * std::conj(y[k * slab + i]);
    total += g.t_weight(k) * s;
  }
  return total * cell;
}

}  // namespace ultra
