#include "jerk_fixtures.hpp"

#include "ultra/carleman.hpp"
#include "ultra/errors.hpp"
#include "ultra/jerk.hpp"
#include "ultra/linalg.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

using namespace ultra;
using jerk_fixtures::GaussianOracle;
using jerk_fixtures::sampled;
namespace {

bool same(const Field& a, const Field& b) { return std::ranges::equal(a.values(), b.values()); }

constexpr double kPi = std::numbers::pi;

CoefficientFamily constant(double a0) {
  CoefficientFamily f;
  f.a0 = a0;
  return f;
}

GridSpec small_grid(double t2 = 0.04, int nt = 17, int nj = 48) {
  return GridSpec(t2, nt, {{4.0, nj}}, {{1.0, 8}, {2.0, 8}, {2.0, 4}});
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

double max_abs(const std::vector<double>& a) {
  double d = 0.0;
  for (double x : a) d = std::max(d, std::abs(x));
  return d;
}

// Heat packet exp(-J^2/(2 s2)) modulated by cos(k J) on a periodic w profile.
JerkState packet(const GridSpec& g, double sigma, double k) {
  return sampled(g, [&](double J, double A, double V, double) {
    return std::exp(-J * J / (2.0 * sigma * sigma)) * std::cos(k * J) * std::exp(std::cos(kPi * A)) *
           (1.0 + 0.5 * std::cos(kPi * V / 2.0));
  });
}

}  // namespace

TEST(JerkOperator, KalmanRankThreeAndTracelessDrift) {
  const GridSpec g = small_grid();
  const OperatorSpec spec = build_jerk_operator(constant(1.0), constant(0.0), 0.0, 1.1, g);
  EXPECT_EQ(spec.m(), 1);
  EXPECT_EQ(spec.n(), 3);
  EXPECT_EQ(numerical_rank(kalman_matrix(spec.drift)).rank, 3);
  EXPECT_EQ(spec.drift.trace_B2(), 0.0);
}

TEST(JerkOperator, RejectsDegenerateDiffusivity) {
  const GridSpec g = small_grid();
  EXPECT_THROW(build_jerk_operator(constant(0.0), constant(0.0), 0.0, 1.1, g), ValidationError);
  EXPECT_THROW(build_jerk_operator(constant(1.0), constant(0.0), 0.0, 1.1, GridSpec(0.04, 17, {{3.0, 32}})),
               DimensionError);
}

TEST(JerkScheme, ValidatesStepAndTheta) {
  SchemeConfig sc;
  sc.dt = 0.04 / 64.0;
  EXPECT_NO_THROW(sc.validate(0.04));
  sc.dt = 0.04 / 63.0;
  EXPECT_THROW(sc.validate(0.04), ValidationError);
  sc.dt = 0.04 / 64.0;
  sc.theta = 0.4;
  EXPECT_THROW(sc.validate(0.04), ValidationError);
}

TEST(Transport, ConstantFieldAndZeroStep) {
  const GridSpec g = small_grid();
  const JerkState one = sampled(g, [](double, double, double, double) { return 1.0; });
  EXPECT_LE(max_diff(transport_step(one, 1e-3).values, one.values), 1e-14);
  const JerkState p = packet(g, 0.5, 3.0);
  EXPECT_EQ(transport_step(p, 0.0).values, p.values);
}

TEST(Transport, TrigonometricFieldFollowsCharacteristics) {
  const GridSpec g = small_grid();
  const double kA = kPi, kV = kPi / 2.0, kQ = kPi / 2.0;
  const auto f = [&](double J, double A, double V, double Q) {
    return std::exp(-J * J) * (std::cos(kA * A) + std::sin(kV * V + 0.3) * std::cos(kQ * Q) + 0.5);
  };
  const double dt = 0.01;
  const JerkState out = transport_step(sampled(g, f), dt);
  const DriftPair d = drift_preset("jerk");
  const JerkState expect = sampled(g, [&](double J, double A, double V, double Q) {
    Vec v(1), w(3);
    v << J;
    w << A, V, Q;
    const Vec foot = drift_flow(d, v, w, dt);
    return f(J, foot(0), foot(1), foot(2));
  });
  EXPECT_LE(max_diff(out.values, expect.values), 1e-12);
}

TEST(Transport, StepsComposeAndDoNotAmplify) {
  const GridSpec g = small_grid();
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  std::vector<double> v(g.v_count() * g.w_count());
  for (double& x : v) x = n01(rng);
  const JerkState s(g, v);
  const JerkState two = transport_step(transport_step(s, 0.003), 0.003);
  const JerkState one = transport_step(s, 0.006);
  const JerkState single = transport_step(s, 0.003);
  EXPECT_LE(single.norm2(), s.norm2() * (1.0 + 1e-12));
  // Composition is exact up to the Nyquist cos factors, which only damp.
  EXPECT_LE(two.norm2(), s.norm2() * (1.0 + 1e-12));
  EXPECT_LE(one.norm2(), s.norm2() * (1.0 + 1e-12));
  // Data independent of V and Q stays band-limited in A, so steps compose exactly.
  const JerkState smooth = sampled(g, [](double J, double A, double, double) {
    return std::exp(-J * J) * (std::cos(kPi * A) + 0.5 * std::sin(2.0 * kPi * A + 0.3));
  });
  EXPECT_LE(max_diff(transport_step(transport_step(smooth, 0.003), 0.003).values,
                     transport_step(smooth, 0.006).values),
            1e-12 * max_abs(smooth.values));
}

TEST(Diffusion, DirichletModeDecaysByThetaFactor) {
  const GridSpec g = small_grid(0.04, 17, 40);
  const double gamma = 0.7, dt = 1e-3;
  const OperatorSpec spec = build_jerk_operator(constant(1.0), constant(gamma), 0.0, 1.1, g);
  const int n = g.v_axes()[0].points;
  const double h = g.dv(0);
  for (int p : {1, 5, 17}) {
    const double lam = 4.0 / (h * h) * std::pow(std::sin(p * kPi / (2.0 * (n + 1))), 2) + gamma;
    const JerkState s = sampled(g, [&](double J, double A, double, double) {
      const double j = (J + g.v_axes()[0].half_width) / h - 0.5;
      return std::sin(p * kPi * (j + 1.0) / (n + 1)) * (1.0 + 0.3 * std::cos(kPi * A));
    });
    for (double theta : {0.5, 1.0}) {
      const double factor = (1.0 - (1.0 - theta) * lam * dt) / (1.0 + theta * lam * dt);
      const JerkState out = diffusion_step(s, spec, 0.0, dt, theta);
      std::vector<double> expect = s.values;
      for (double& x : expect) x *= factor;
      EXPECT_LE(max_diff(out.values, expect), 1e-12 * max_abs(s.values)) << "p = " << p << " theta = " << theta;
    }
  }
}

TEST(Diffusion, ZeroStepAndNormDecay) {
  const GridSpec g = small_grid();
  CoefficientFamily a;
  a.kind = "sinusoidal";
  a.a0 = 1.0;
  a.amp = 0.05;
  a.k = 2.0;
  const OperatorSpec spec = build_jerk_operator(a, constant(0.0), 0.0, 1.1, g);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  std::vector<double> v(g.v_count() * g.w_count());
  for (double& x : v) x = n01(rng);
  JerkState s(g, v);
  EXPECT_EQ(diffusion_step(s, spec, 0.0, 0.0).values, s.values);
  double prev = s.norm2();
  for (int i = 0; i < 20; ++i) {
    s = diffusion_step(s, spec, 0.0, 1e-3);
    EXPECT_LE(s.norm2(), prev * (1.0 + 1e-14));
    prev = s.norm2();
  }
}

TEST(Simulate, ZeroDataStaysZero) {
  const GridSpec g = small_grid();
  const OperatorSpec spec = build_jerk_operator(constant(1.0), constant(0.5), 0.0, 1.1, g);
  SchemeConfig sc;
  sc.dt = 0.04 / 64.0;
  sc.substeps = 4;
  const Trajectory tr = simulate(JerkState::zeros(g), spec, sc, 0.04, 0.04);
  EXPECT_EQ(tr.grid().nt(), 17);
  EXPECT_EQ(tr.field.max_abs(), 0.0);
  EXPECT_EQ(tr.residual.absolute, 0.0);
}

TEST(Simulate, ManufacturedSolutionConvergesAtSecondOrder) {
  const GaussianOracle o;
  const double T = 0.1;
  std::vector<double> errors;
  for (int level = 0; level < 3; ++level) {
    const int nj = 32 << level, steps = 64 << level;
    const GridSpec g(T, 17, {{4.0, nj}}, {{2.0, 32}, {2.0, 4}, {2.0, 4}});
    const OperatorSpec spec = build_jerk_operator(constant(1.0), constant(o.gamma), 0.0, 1.1, g);
    SchemeConfig sc;
    sc.dt = T / steps;
    sc.substeps = steps / 16;
    const Trajectory tr =
        simulate(sampled(g, [&](double J, double A, double, double) { return o.value(0.0, J, A); }), spec, sc, T, T);
    const JerkState exact = sampled(g, [&](double J, double A, double, double) { return o.value(T, J, A); });
    errors.push_back(max_diff(tr.slice(16).values, exact.values) / max_abs(exact.values));
    EXPECT_LE(tr.residual.relative, 1e-3);
  }
  for (int i = 1; i < 3; ++i) EXPECT_GE(std::log2(errors[i - 1] / errors[i]), 1.9) << "level " << i;
}

TEST(Simulate, BoundaryBreachReportsTime) {
  const GridSpec g = GridSpec(0.04, 17, {{1.0, 32}}, {{1.0, 8}, {2.0, 4}, {2.0, 4}});
  const OperatorSpec spec = build_jerk_operator(constant(1.0), constant(0.0), 0.0, 1.1, g);
  SchemeConfig sc;
  sc.dt = 0.04 / 64.0;
  sc.substeps = 4;
  try {
    simulate(packet(g, 0.5, 0.0), spec, sc, 0.04, 0.04);
    FAIL() << "expected a boundary-mass breach";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("at s = "), std::string::npos);
  }
}

TEST(Simulate, StoredWindowAndSliceTimes) {
  const GridSpec g = small_grid(0.02);
  const OperatorSpec spec = build_jerk_operator(constant(1.0), constant(0.0), 0.0, 1.1, g);
  SchemeConfig sc;
  sc.dt = 0.02 / 64.0;
  sc.substeps = 4;
  const Trajectory tr = simulate(packet(g, 0.5, 2.0), spec, sc, 0.05, 0.02);
  EXPECT_NEAR(tr.window_start, 0.03, 1e-15);
  EXPECT_NEAR(tr.slice(0).time, 0.03, 1e-15);
  EXPECT_NEAR(tr.slice(16).time, 0.05, 1e-15);
  EXPECT_THROW(simulate(packet(g, 0.5, 2.0), spec, sc, 0.05, 0.06), ValidationError);
}

TEST(TimeReverse, InvolutionAndResidualParity) {
  const GridSpec g = small_grid();
  CoefficientFamily a;
  a.kind = "affine";
  a.a0 = 0.95;
  a.a_t = 0.5;
  const OperatorSpec spec = build_jerk_operator(a, constant(0.3), 0.1, 1.1, g);
  SchemeConfig sc;
  sc.dt = 0.04 / 128.0;
  sc.substeps = 8;
  const Trajectory tr = simulate(packet(g, 0.5, 3.0), spec, sc, 0.04, 0.04);
  const Trajectory rev = time_reverse(tr);
  EXPECT_EQ(rev.direction, TimeDirection::ReversedT);
  EXPECT_TRUE(same(time_reverse(rev).field, tr.field));
  EXPECT_EQ(rev.slice(0).values, tr.slice(16).values);
  const ResidualReport fwd = residual(tr, spec), back = residual(rev, spec);
  EXPECT_GT(fwd.absolute, 0.0);
  EXPECT_LE(std::abs(fwd.absolute - back.absolute), 1e-12 * fwd.absolute);
  EXPECT_LE(fwd.relative, 1e-2);
}

TEST(TrajectoryIO, RoundTrip) {
  const GridSpec g = small_grid();
  const OperatorSpec spec = build_jerk_operator(constant(1.0), constant(0.0), 0.0, 1.1, g);
  SchemeConfig sc;
  sc.dt = 0.04 / 64.0;
  sc.substeps = 4;
  const Trajectory tr = time_reverse(simulate(packet(g, 0.5, 2.0), spec, sc, 0.04, 0.04));
  const auto dir = std::filesystem::temp_directory_path() / "ultra_jerk_io";
  std::filesystem::create_directories(dir);
  export_trajectory(tr, dir / "u.bin", dir / "u.json");
  const Trajectory back = import_trajectory(dir / "u.bin", dir / "u.json");
  EXPECT_TRUE(same(back.field, tr.field));
  EXPECT_EQ(back.direction, tr.direction);
  EXPECT_EQ(back.t_end, tr.t_end);
  EXPECT_EQ(back.window_start, tr.window_start);
  EXPECT_EQ(back.residual.relative, tr.residual.relative);
  EXPECT_EQ(describe(back.grid()), describe(tr.grid()));
  EXPECT_EQ(back.grid().t2(), tr.grid().t2());
  std::filesystem::remove_all(dir);
}
