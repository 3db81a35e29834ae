#include "ultra/jerk.hpp"

#include "ultra/errors.hpp"

#include <fftw3.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ultra {

namespace {

constexpr int kM = 1, kN = 3;

void check_shape(const GridSpec& g) {
  if (g.m() != kM || g.n() != kN)
    throw DimensionError("jerk model needs one v axis (J) and three w axes (A, V, Q)");
}

std::size_t slab_size(const GridSpec& g) { return g.v_count() * g.w_count(); }

struct EdgeMass {
  double edge = 0.0;
  double total = 0.0;
};

// Squared mass in the first and last `cells` J cells and overall.
EdgeMass edge_mass(const JerkState& s, int cells) {
  const auto& g = s.grid;
  const int nj = g.v_axes()[0].points;
  const std::size_t wc = g.w_count();
  EdgeMass m;
  for (int j = 0; j < nj; ++j) {
    double row = 0.0;
    for (std::size_t i = 0; i < wc; ++i) row += s.values[j * wc + i] * s.values[j * wc + i];
    m.total += row;
    if (j < cells || j >= nj - cells) m.edge += row;
  }
  return m;
}

// Edge mass is measured against the largest total seen so far, so a decayed
// state does not trip the guard on roundoff.
void guard_boundary(const JerkState& s, const SchemeConfig& sc, double& peak) {
  const EdgeMass m = edge_mass(s, sc.boundary_cells);
  peak = std::max(peak, m.total);
  const double f = peak > 0.0 ? m.edge / peak : 0.0;
  if (f > sc.boundary_mass) {
    std::ostringstream os;
    os << "boundary-mass breach at s = " << s.time << ": fraction " << f << " in the outer "
       << sc.boundary_cells << " J cells exceeds " << sc.boundary_mass;
    throw PreconditionError(os.str());
  }
}

// In-place periodic translation f(x) -> f(x + shift) of n equispaced samples
// by the phase e^{i q shift} on each mode; the Nyquist mode keeps cos only.
class LineShifter {
 public:
  explicit LineShifter(int n) : n_(n), buf_(fftw_alloc_complex(n)) {
    fwd_ = fftw_plan_dft_1d(n, buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_1d(n, buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~LineShifter() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(buf_);
  }
  LineShifter(const LineShifter&) = delete;
  LineShifter& operator=(const LineShifter&) = delete;

  // shift in units of the sample spacing.
  void apply(double* line, std::size_t stride, double shift) {
    for (int m = 0; m < n_; ++m) {
      buf_[m][0] = line[m * stride];
      buf_[m][1] = 0.0;
    }
    fftw_execute(fwd_);
    const double base = 2.0 * std::numbers::pi * shift / n_;
    for (int q = 0; q < n_; ++q) {
      const int f = q <= n_ / 2 ? q : q - n_;
      cplx ph = std::polar(1.0, base * f);
      if (2 * f == n_) ph = std::cos(base * f);
      const cplx z = cplx(buf_[q][0], buf_[q][1]) * ph;
      buf_[q][0] = z.real();
      buf_[q][1] = z.imag();
    }
    fftw_execute(inv_);
    for (int m = 0; m < n_; ++m) line[m * stride] = buf_[m][0] / n_;
  }

 private:
  int n_;
  fftw_complex* buf_;
  fftw_plan fwd_, inv_;
};

// Discrete d_J with zero ghosts, second order.
void d_dJ(const GridSpec& g, const cplx* in, cplx* out, std::size_t wc) {
  const int nj = g.v_axes()[0].points;
  const double inv = 1.0 / (2.0 * g.dv(0));
  for (int j = 0; j < nj; ++j)
    for (std::size_t i = 0; i < wc; ++i) {
      const cplx lo = j > 0 ? in[(j - 1) * wc + i] : cplx(0.0);
      const cplx hi = j + 1 < nj ? in[(j + 1) * wc + i] : cplx(0.0);
      out[j * wc + i] = (hi - lo) * inv;
    }
}

Vec at(double x) {
  Vec v(1);
  v(0) = x;
  return v;
}

double weighted_norm(const Field& f) {
  double s = 0.0;
  for (int k = 0; k < f.grid().nt(); ++k) s += f.grid().t_weight(k) * f.slice_norm2(k);
  return std::sqrt(s);
}

}  // namespace

std::string to_string(TimeDirection d) { return d == TimeDirection::ForwardS ? "forward-s" : "reversed-t"; }

JerkState::JerkState(GridSpec g, std::vector<double> v, TimeDirection dir, double t)
    : grid(std::move(g)), values(std::move(v)), direction(dir), time(t) {
  check_shape(grid);
  if (values.size() != slab_size(grid)) throw DimensionError("JerkState: sample count does not match the grid");
}

JerkState JerkState::zeros(GridSpec g) {
  const std::size_t n = slab_size(g);
  return JerkState(std::move(g), std::vector<double>(n, 0.0));
}

double JerkState::norm2() const {
  double s = 0.0;
  for (double x : values) s += x * x;
  return s * grid.v_cell() * grid.w_cell();
}

void SchemeConfig::validate(double horizon) const {
  if (!(dt > 0.0)) throw ValidationError("SchemeConfig: dt must be positive");
  if (dt > horizon / 64.0 * (1.0 + 1e-12))
    throw ValidationError("SchemeConfig: dt exceeds t2/64 for the stored horizon");
  if (!(theta >= 0.5 && theta <= 1.0)) throw ValidationError("SchemeConfig: theta must lie in [1/2, 1]");
  if (substeps < 1) throw ValidationError("SchemeConfig: substeps must be at least 1");
  if (boundary_cells < 1) throw ValidationError("SchemeConfig: boundary_cells must be at least 1");
}

OperatorSpec build_jerk_operator(const CoefficientFamily& a_bar, const CoefficientFamily& c_bar, double d_bar,
                                 double lambda, const GridSpec& check_grid) {
  check_shape(check_grid);
  OperatorSpec spec = make_operator(drift_preset("jerk"), a_bar, c_bar, {d_bar}, lambda, "jerk");
  const auto rank = numerical_rank(kalman_matrix(spec.drift));
  if (rank.rank != kN) throw ValidationError("build_jerk_operator: Kalman rank is not 3");
  const AssumptionReport rep = validate_assumptions(spec, check_grid, 1000);
  if (!rep.pass) {
    std::ostringstream os;
    os << "build_jerk_operator: coefficient assumptions fail:";
    for (const auto& c : rep.checks)
      if (!c.pass) os << " " << c.name << " (margin " << c.worst_margin << " at t = " << c.where_t << ")";
    throw ValidationError(os.str());
  }
  return spec;
}

JerkState transport_step(const JerkState& s, double dt) {
  if (s.direction != TimeDirection::ForwardS) throw StateError("transport_step: state is not in forward time");
  if (dt == 0.0) return s;
  const auto& g = s.grid;
  // Foot of the characteristic: w - dt (J, A, V) advanced exactly, i.e. the
  // affine flow of w' = B1 J + B2 w over dt.
  const AffineFlow fl = drift_flow_affine(drift_preset("jerk"), dt);
  for (int r = 0; r < kN; ++r)
    for (int c = r; c < kN; ++c)
      if (std::abs(fl.flow(r, c) - (r == c ? 1.0 : 0.0)) > 1e-14)
        throw StateError("transport_step: flow is not unit lower triangular");

  const int nj = g.v_axes()[0].points;
  const std::size_t wc = g.w_count();
  std::vector<double> cur = s.values;
  std::vector<int> wi(kN);
  // Sweeping A, then V, then Q realises the triangular foot map exactly:
  // each shift depends only on coordinates already in final position, so it
  // is constant along the swept line and a spectral translation is exact
  // for band-limited periodic data.
  for (int a = 0; a < kN; ++a) {
    const int na = g.w_axes()[a].points;
    const double dw = g.dw(a);
    const std::size_t stride = g.w_stride(a);
    LineShifter shifter(na);
    for (int j = 0; j < nj; ++j) {
      const double J = g.v(0, j);
      for (std::size_t i = 0; i < wc; ++i) {
        g.w_unflatten(i, wi);
        if (wi[a] != 0) continue;
        double shift = fl.shift(a, 0) * J - g.w(a, 0);
        for (int b = 0; b <= a; ++b) shift += fl.flow(a, b) * g.w(b, wi[b]);
        shifter.apply(cur.data() + j * wc + i, stride, shift / dw);
      }
    }
  }
  return JerkState(g, std::move(cur), s.direction, s.time + dt);
}

JerkState diffusion_step(const JerkState& s, const OperatorSpec& spec, double t_coef, double dt, double theta) {
  if (s.direction != TimeDirection::ForwardS) throw StateError("diffusion_step: state is not in forward time");
  if (!(theta >= 0.5 && theta <= 1.0)) throw ValidationError("diffusion_step: theta must lie in [1/2, 1]");
  if (dt == 0.0) return s;
  const auto& g = s.grid;
  const int nj = g.v_axes()[0].points;
  const std::size_t wc = g.w_count();
  const double h = g.dv(0), h2 = h * h, L = g.v_axes()[0].half_width;

  // L e_j = lo_j e_{j-1} + mid_j e_j + up_j e_{j+1}.
  std::vector<double> lo(nj), mid(nj), up(nj);
  for (int j = 0; j < nj; ++j) {
    const double a_lo = spec.A(t_coef, at(-L + j * h))(0, 0);
    const double a_hi = spec.A(t_coef, at(-L + (j + 1) * h))(0, 0);
    const double J = g.v(0, j);
    const double c = spec.c(t_coef, at(J));
    const double d = spec.d(t_coef, at(J))(0);
    lo[j] = a_lo / h2 + d / (2.0 * h);
    up[j] = a_hi / h2 - d / (2.0 * h);
    mid[j] = -(a_lo + a_hi) / h2 - c;
  }
  // Right side (I + (1-theta) dt L) e, then Thomas on (I - theta dt L).
  const double ex = (1.0 - theta) * dt, im = theta * dt;
  std::vector<double> rhs(s.values.size());
  for (int j = 0; j < nj; ++j)
    for (std::size_t i = 0; i < wc; ++i) {
      const double e = s.values[j * wc + i];
      double le = mid[j] * e;
      if (j > 0) le += lo[j] * s.values[(j - 1) * wc + i];
      if (j + 1 < nj) le += up[j] * s.values[(j + 1) * wc + i];
      rhs[j * wc + i] = e + ex * le;
    }
  std::vector<double> cp(nj);
  double prev_c = 0.0;
  for (int j = 0; j < nj; ++j) {
    const double sub = j > 0 ? -im * lo[j] : 0.0;
    const double diag = 1.0 - im * mid[j] - sub * prev_c;
    if (std::abs(diag) < 1e-300)
      throw ValidationError("diffusion_step: singular tridiagonal pivot at J = " + std::to_string(g.v(0, j)));
    cp[j] = j + 1 < nj ? -im * up[j] / diag : 0.0;
    for (std::size_t i = 0; i < wc; ++i) {
      const double below = j > 0 ? rhs[(j - 1) * wc + i] : 0.0;
      rhs[j * wc + i] = (rhs[j * wc + i] - sub * below) / diag;
    }
    prev_c = cp[j];
  }
  for (int j = nj - 2; j >= 0; --j)
    for (std::size_t i = 0; i < wc; ++i) rhs[j * wc + i] -= cp[j] * rhs[(j + 1) * wc + i];
  return JerkState(g, std::move(rhs), s.direction, s.time + dt);
}

JerkState Trajectory::slice(int k) const {
  const std::size_t n = field.slab(), base = field.index(k, 0);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = field[base + i].real();
  const double t = direction == TimeDirection::ForwardS ? window_start + grid().t(k) : grid().t(k);
  return JerkState(grid(), std::move(v), direction, t);
}

Trajectory simulate(const JerkState& initial, const OperatorSpec& spec, const SchemeConfig& sc, double t_end,
                    double window) {
  check_shape(initial.grid);
  if (initial.direction != TimeDirection::ForwardS) throw StateError("simulate: initial state must be forward");
  if (!(window > 0.0) || window > t_end * (1.0 + 1e-12))
    throw ValidationError("simulate: need 0 < window <= t_end");
  sc.validate(window);
  const double steps_real = t_end / sc.dt;
  const long steps = std::lround(steps_real);
  const double stored_real = window / (sc.dt * sc.substeps);
  const long stored = std::lround(stored_real);
  if (std::abs(steps_real - steps) > 1e-9 * steps_real || std::abs(stored_real - stored) > 1e-9 * stored_real)
    throw ValidationError("simulate: t_end and window must be multiples of dt (times substeps)");
  const long first = steps - stored * sc.substeps;

  const GridSpec tg(window, static_cast<int>(stored + 1), initial.grid.v_axes(), initial.grid.w_axes());
  const std::size_t slab = slab_size(initial.grid);
  std::vector<cplx> store(static_cast<std::size_t>(stored + 1) * slab);
  auto record = [&](const JerkState& st, long n) {
    if (n < first || (n - first) % sc.substeps != 0) return;
    const std::size_t k = static_cast<std::size_t>((n - first) / sc.substeps);
    for (std::size_t i = 0; i < slab; ++i) store[k * slab + i] = st.values[i];
  };

  JerkState st(initial.grid, initial.values, TimeDirection::ForwardS, 0.0);
  double peak = 0.0;
  guard_boundary(st, sc, peak);
  record(st, 0);
  for (long n = 0; n < steps; ++n) {
    const double s0 = n * sc.dt;
    st.time = s0;
    st = transport_step(st, 0.5 * sc.dt);
    st = diffusion_step(st, spec, t_end - (s0 + 0.5 * sc.dt), sc.dt, sc.theta);
    st = transport_step(st, 0.5 * sc.dt);
    st.time = (n + 1) * sc.dt;
    guard_boundary(st, sc, peak);
    record(st, n + 1);
  }
  Trajectory tr{Field(tg, true, Space::Physical, std::move(store)), TimeDirection::ForwardS, t_end,
                t_end - window, {}};
  tr.residual = residual(tr, spec);
  return tr;
}

Trajectory time_reverse(const Trajectory& tr) {
  const auto& g = tr.grid();
  const std::size_t slab = tr.field.slab();
  const int nt = g.nt();
  std::vector<cplx> v(tr.field.size());
  for (int k = 0; k < nt; ++k) {
    const std::size_t src = tr.field.index(nt - 1 - k, 0), dst = tr.field.index(k, 0);
    std::copy_n(tr.field.values().begin() + static_cast<std::ptrdiff_t>(src), slab,
                v.begin() + static_cast<std::ptrdiff_t>(dst));
  }
  Trajectory out{Field(g, true, Space::Physical, std::move(v)),
                 tr.direction == TimeDirection::ForwardS ? TimeDirection::ReversedT : TimeDirection::ForwardS,
                 tr.t_end, tr.window_start, tr.residual};
  return out;
}

ResidualReport residual(const Trajectory& tr, const OperatorSpec& spec) {
  const auto& g = tr.grid();
  check_shape(g);
  const Field& u = tr.field;
  ApplyOptions opts;
  opts.closure = TimeClosure::OneSided;
  opts.require_support = false;
  const Field dt_u = time_derivative(u, TimeClosure::OneSided);
  const std::size_t wc = u.w_count(), slab = u.slab();
  std::vector<cplx> r(u.size());
  std::vector<cplx> dj(slab);
  const int nj = g.v_axes()[0].points;
  const double window = g.t2();

  if (tr.direction == TimeDirection::ReversedT) {
    // P u - c u - d d_J u with coefficients at t.
    const Field pu = apply_P(spec, u, opts);
    for (int k = 0; k < g.nt(); ++k) {
      const std::size_t base = u.index(k, 0);
      d_dJ(g, &u.values()[base], dj.data(), wc);
      for (int j = 0; j < nj; ++j) {
        const double c = spec.c(g.t(k), at(g.v(0, j))), d = spec.d(g.t(k), at(g.v(0, j)))(0);
        for (std::size_t i = 0; i < wc; ++i) {
          const std::size_t p = base + j * wc + i;
          r[p] = pu[p] - c * u[p] - d * dj[j * wc + i];
        }
      }
    }
  } else {
    // Transport part from P minus its time and diffusion parts; the
    // diffusion itself is rebuilt here at reversed time window - s.
    const Field pu = apply_P(spec, u, opts);
    const Field lu = DiffusionOperator(spec, g).apply(u);
    const double h = g.dv(0), h2 = h * h, L = g.v_axes()[0].half_width;
    for (int k = 0; k < g.nt(); ++k) {
      const double tc = window - g.t(k);
      const std::size_t base = u.index(k, 0);
      d_dJ(g, &u.values()[base], dj.data(), wc);
      for (int j = 0; j < nj; ++j) {
        const double a_lo = spec.A(tc, at(-L + j * h))(0, 0), a_hi = spec.A(tc, at(-L + (j + 1) * h))(0, 0);
        const double c = spec.c(tc, at(g.v(0, j))), d = spec.d(tc, at(g.v(0, j)))(0);
        for (std::size_t i = 0; i < wc; ++i) {
          const std::size_t p = base + j * wc + i;
          const cplx e = u[p];
          const cplx lo = j > 0 ? u[p - wc] : cplx(0.0), hi = j + 1 < nj ? u[p + wc] : cplx(0.0);
          const cplx flux = (a_hi * (hi - e) - a_lo * (e - lo)) / h2;
          // B1 v + B2 w = -(J, A, V), so the forward drift term is minus P's.
          const cplx drift = -(pu[p] - dt_u[p] - lu[p]);
          r[p] = dt_u[p] + drift - flux + c * e + d * dj[j * wc + i];
        }
      }
    }
  }
  const Field rf(g, true, Space::Physical, std::move(r));
  ResidualReport rep;
  rep.absolute = weighted_norm(rf);
  rep.scale = weighted_norm(dt_u);
  rep.relative = rep.scale > 0.0 ? rep.absolute / rep.scale : 0.0;
  double worst = -1.0;
  for (int k = 0; k < g.nt(); ++k)
    if (rf.slice_norm2(k) > worst) {
      worst = rf.slice_norm2(k);
      rep.worst_node = k;
    }
  return rep;
}

void export_trajectory(const Trajectory& tr, const std::filesystem::path& binary,
                       const std::filesystem::path& metadata) {
  static_assert(std::endian::native == std::endian::little, "binary export assumes a little-endian host");
  const auto& g = tr.grid();
  {
    std::ofstream os(binary, std::ios::binary | std::ios::trunc);
    if (!os) throw ValidationError("export_trajectory: cannot open " + binary.string());
    os.write("ULTRAJRK", 8);
    const std::uint32_t version = 1, rank = 5;
    os.write(reinterpret_cast<const char*>(&version), 4);
    os.write(reinterpret_cast<const char*>(&rank), 4);
    const std::uint64_t dims[5] = {static_cast<std::uint64_t>(g.nt()),
                                   static_cast<std::uint64_t>(g.v_axes()[0].points),
                                   static_cast<std::uint64_t>(g.w_axes()[0].points),
                                   static_cast<std::uint64_t>(g.w_axes()[1].points),
                                   static_cast<std::uint64_t>(g.w_axes()[2].points)};
    os.write(reinterpret_cast<const char*>(dims), sizeof dims);
    std::vector<double> buf(tr.field.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = tr.field[i].real();
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
    if (!os) throw ValidationError("export_trajectory: write failed for " + binary.string());
  }
  nlohmann::json j;
  j["format"] = "ULTRAJRK";
  j["version"] = 1;
  j["direction"] = to_string(tr.direction);
  j["t_end"] = tr.t_end;
  j["window_start"] = tr.window_start;
  j["window"] = g.t2();
  j["nt"] = g.nt();
  j["J"] = {{"half_width", g.v_axes()[0].half_width}, {"points", g.v_axes()[0].points}};
  nlohmann::json w = nlohmann::json::array();
  for (const auto& a : g.w_axes()) w.push_back({{"half_width", a.half_width}, {"points", a.points}});
  j["AVQ"] = w;
  j["residual"] = {{"absolute", tr.residual.absolute},
                   {"scale", tr.residual.scale},
                   {"relative", tr.residual.relative},
                   {"worst_node", tr.residual.worst_node}};
  std::ofstream ms(metadata, std::ios::trunc);
  if (!ms) throw ValidationError("export_trajectory: cannot open " + metadata.string());
  ms << j.dump(2) << "\n";
}

Trajectory import_trajectory(const std::filesystem::path& binary, const std::filesystem::path& metadata) {
  std::ifstream ms(metadata);
  if (!ms) throw ValidationError("import_trajectory: cannot open " + metadata.string());
  const nlohmann::json j = nlohmann::json::parse(ms);
  std::vector<Axis> w;
  for (const auto& a : j.at("AVQ")) w.push_back({a.at("half_width").get<double>(), a.at("points").get<int>()});
  const GridSpec g(j.at("window").get<double>(), j.at("nt").get<int>(),
                   {{j.at("J").at("half_width").get<double>(), j.at("J").at("points").get<int>()}}, w);
  std::ifstream is(binary, std::ios::binary);
  if (!is) throw ValidationError("import_trajectory: cannot open " + binary.string());
  char magic[8];
  std::uint32_t version = 0, rank = 0;
  std::uint64_t dims[5];
  is.read(magic, 8);
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&rank), 4);
  is.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!is || std::memcmp(magic, "ULTRAJRK", 8) != 0 || version != 1 || rank != 5)
    throw ValidationError("import_trajectory: bad header in " + binary.string());
  const std::uint64_t expect[5] = {static_cast<std::uint64_t>(g.nt()), static_cast<std::uint64_t>(g.v_axes()[0].points),
                                   static_cast<std::uint64_t>(w[0].points), static_cast<std::uint64_t>(w[1].points),
                                   static_cast<std::uint64_t>(w[2].points)};
  if (!std::equal(dims, dims + 5, expect)) throw ValidationError("import_trajectory: extents disagree with metadata");
  std::vector<double> buf(static_cast<std::size_t>(g.nt()) * slab_size(g));
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
  if (!is) throw ValidationError("import_trajectory: truncated sample block");
  std::vector<cplx> v(buf.begin(), buf.end());
  const TimeDirection dir =
      j.at("direction").get<std::string>() == "forward-s" ? TimeDirection::ForwardS : TimeDirection::ReversedT;
  ResidualReport rr;
  rr.absolute = j.at("residual").at("absolute").get<double>();
  rr.scale = j.at("residual").at("scale").get<double>();
  rr.relative = j.at("residual").at("relative").get<double>();
  rr.worst_node = j.at("residual").at("worst_node").get<int>();
  return Trajectory{Field(g, true, Space::Physical, std::move(v)), dir, j.at("t_end").get<double>(),
                    j.at("window_start").get<double>(), rr};
}

}  // namespace ultra
