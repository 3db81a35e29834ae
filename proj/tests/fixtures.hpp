#pragma once

#include "ultra/grid.hpp"
#include "ultra/linalg.hpp"

#include <boost/multiprecision/cpp_int.hpp>
#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace fixtures {

using ultra::cplx;

// exp(-1/(1-x^2)) on (-1, 1), zero elsewhere, with its first two derivatives.
inline double bump(double x) { return std::abs(x) < 1.0 ? std::exp(-1.0 / (1.0 - x * x)) : 0.0; }
inline double bump_d1(double x) {
  if (std::abs(x) >= 1.0) return 0.0;
  const double s = 1.0 - x * x;
  return bump(x) * (-2.0 * x / (s * s));
}
inline double bump_d2(double x) {
  if (std::abs(x) >= 1.0) return 0.0;
  const double s = 1.0 - x * x;
  const double g = -2.0 * x / (s * s);
  const double gp = -(2.0 + 6.0 * x * x) / (s * s * s);
  return bump(x) * (g * g + gp);
}

using PointFn = std::function<cplx(double t, const ultra::Vec& v, const ultra::Vec& w)>;

inline ultra::Field sample(const ultra::GridSpec& g, bool with_w, const PointFn& f,
                           ultra::Space space = ultra::Space::Physical) {
  const std::size_t wc = with_w ? g.w_count() : 1;
  std::vector<cplx> vals(static_cast<std::size_t>(g.nt()) * g.v_count() * wc);
  std::vector<int> vi, wi;
  ultra::Vec v(g.m()), w(with_w ? g.n() : 0);
  std::size_t i = 0;
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t c = 0; c < g.v_count(); ++c) {
      g.v_unflatten(c, vi);
      for (int a = 0; a < g.m(); ++a) v(a) = g.v(a, vi[a]);
      for (std::size_t j = 0; j < wc; ++j) {
        if (with_w) {
          g.w_unflatten(j, wi);
          for (int a = 0; a < g.n(); ++a) w(a) = g.w(a, wi[a]);
        }
        vals[i++] = f(g.t(k), v, w);
      }
    }
  return ultra::Field(g, with_w, space, std::move(vals));
}

// Bump in t on the middle of (0, t2) times bumps in each v coordinate.
// The radii keep four cells of zeros at the edges on 16-point axes.
inline double tv_bump(const ultra::GridSpec& g, double t, const ultra::Vec& v) {
  double r = bump((t - 0.5 * g.t2()) / (0.22 * g.t2()));
  for (int a = 0; a < g.m(); ++a) r *= bump(v(a) / (0.45 * g.v_axes()[a].half_width));
  return r;
}

// Random smooth compactly supported field: tv_bump times a random
// trigonometric polynomial in (v, w) with modes |k| <= kmax.
inline ultra::Field random_field(const ultra::GridSpec& g, bool with_w, std::mt19937_64& rng,
                                 int modes = 6, double kmax = 2.0) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(-kmax, kmax);
  struct Mode {
    cplx amp;
    ultra::Vec kv, kw;
  };
  std::vector<Mode> ms;
  for (int i = 0; i < modes; ++i) {
    Mode md{cplx(nd(rng), nd(rng)), ultra::Vec(g.m()), ultra::Vec(with_w ? g.n() : 0)};
    for (int a = 0; a < g.m(); ++a) md.kv(a) = ud(rng);
    // Lattice frequencies keep the w dependence periodic on the box.
    for (int a = 0; a < md.kw.size(); ++a)
      md.kw(a) = std::round(ud(rng)) * g.deta(a);
    ms.push_back(md);
  }
  return sample(g, with_w, [&](double t, const ultra::Vec& v, const ultra::Vec& w) {
    cplx s = 0.0;
    for (const auto& md : ms) s += md.amp * std::exp(cplx(0.0, md.kv.dot(v) + md.kw.dot(w)));
    return tv_bump(g, t, v) * s;
  });
}

// Exact rank over the rationals by fraction-free elimination.
inline int rational_rank(const Eigen::MatrixXi& M) {
  using boost::multiprecision::cpp_rational;
  const int r = static_cast<int>(M.rows()), c = static_cast<int>(M.cols());
  std::vector<std::vector<cpp_rational>> a(r, std::vector<cpp_rational>(c));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) a[i][j] = M(i, j);
  int rank = 0;
  for (int col = 0; col < c && rank < r; ++col) {
    int piv = -1;
    for (int i = rank; i < r; ++i)
      if (a[i][col] != 0) {
        piv = i;
        break;
      }
    if (piv < 0) continue;
    std::swap(a[piv], a[rank]);
    for (int i = rank + 1; i < r; ++i) {
      const cpp_rational f = a[i][col] / a[rank][col];
      for (int j = col; j < c; ++j) a[i][j] -= f * a[rank][j];
    }
    ++rank;
  }
  return rank;
}

}  // namespace fixtures
