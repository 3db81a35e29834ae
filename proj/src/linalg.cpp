#include "ultra/linalg.hpp"

#include "ultra/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace ultra {

namespace {

void require_finite(const Mat& M, const char* what) {
  if (!M.allFinite()) throw ValidationError(std::string(what) + ": non-finite entry");
}

// Terminating series when some power of A vanishes identically.
std::optional<Mat> nilpotent_exp(const Mat& A) {
  const auto n = A.rows();
  Mat power = Mat::Identity(n, n);
  Mat sum = power;
  double fact = 1.0;
  for (Eigen::Index k = 1; k <= n; ++k) {
    power = power * A;
    if ((power.array() == 0.0).all()) return sum;
    fact *= static_cast<double>(k);
    sum += power / fact;
  }
  return std::nullopt;
}

Mat pade13_exp(const Mat& A0) {
  static constexpr double c[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                 1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                 670442572800.0,      33522128640.0,       1323241920.0,
                                 40840800.0,          960960.0,            16380.0,
                                 182.0,               1.0};
  constexpr double theta13 = 5.371920351148152;
  const auto n = A0.rows();
  const double norm1 = A0.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > theta13) squarings = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
  const Mat A = A0 / std::ldexp(1.0, squarings);
  const Mat I = Mat::Identity(n, n);
  const Mat A2 = A * A;
  const Mat A4 = A2 * A2;
  const Mat A6 = A4 * A2;
  const Mat U = A * (A6 * (c[13] * A6 + c[11] * A4 + c[9] * A2) + c[7] * A6 + c[5] * A4 +
                     c[3] * A2 + c[1] * I);
  const Mat V = A6 * (c[12] * A6 + c[10] * A4 + c[8] * A2) + c[6] * A6 + c[4] * A4 + c[2] * A2 +
                c[0] * I;
  Mat R = (V - U).partialPivLu().solve(V + U);
  for (int k = 0; k < squarings; ++k) R = R * R;
  return R;
}

}  // namespace

DriftPair::DriftPair(Mat b1, Mat b2) : b1_(std::move(b1)), b2_(std::move(b2)) {
  if (b1_.rows() < 1 || b1_.cols() < 1) throw DimensionError("DriftPair: B1 must be non-empty");
  if (b2_.rows() != b1_.rows() || b2_.cols() != b1_.rows())
    throw DimensionError("DriftPair: B2 must be n x n with n = rows(B1)");
  require_finite(b1_, "DriftPair B1");
  require_finite(b2_, "DriftPair B2");
}

Mat mat_exp(const Mat& M, double s) {
  if (M.rows() != M.cols()) throw DimensionError("mat_exp: matrix must be square");
  require_finite(M, "mat_exp");
  if (!std::isfinite(s)) throw ValidationError("mat_exp: non-finite scalar");
  const auto n = M.rows();
  if (n == 0 || s == 0.0) return Mat::Identity(n, n);
  const Mat A = s * M;
  const double norm1 = A.cwiseAbs().colwise().sum().maxCoeff();
  if (auto exact = nilpotent_exp(A)) return *exact;
  if (norm1 > kMatExpNormLimit)
    throw ValidationError("mat_exp: |s|*||M|| = " + std::to_string(norm1) +
                          " exceeds the overflow guard");
  return pade13_exp(A);
}

Mat kalman_matrix(const DriftPair& d) {
  const int n = d.n(), m = d.m();
  Mat K(n, n * m);
  Mat block = d.B1();
  for (int k = 0; k < n; ++k) {
    K.middleCols(k * m, m) = block;
    block = d.B2() * block;
  }
  return K;
}

RankReport numerical_rank(const Mat& M, double tol_rel) {
  if (M.size() == 0) throw ValidationError("numerical_rank: empty matrix");
  if (!(tol_rel > 0.0 && tol_rel < 1.0)) throw ValidationError("numerical_rank: tol_rel not in (0,1)");
  require_finite(M, "numerical_rank");
  Eigen::JacobiSVD<Mat> svd(M);
  RankReport r;
  r.kalman = M;
  const Vec& sv = svd.singularValues();
  r.singular_values.assign(sv.data(), sv.data() + sv.size());
  std::sort(r.singular_values.begin(), r.singular_values.end(), std::greater<>());
  const double smax = r.singular_values.empty() ? 0.0 : r.singular_values.front();
  r.tol_used = smax > 0.0 ? tol_rel * smax : tol_rel;
  r.rank = static_cast<int>(std::count_if(r.singular_values.begin(), r.singular_values.end(),
                                          [&](double s) { return smax > 0.0 && s > r.tol_used; }));
  return r;
}

Vec drift_flow(const DriftPair& d, const Vec& v, const Vec& w0, double dt) {
  const int n = d.n();
  if (v.size() != d.m() || w0.size() != n) throw DimensionError("drift_flow: vector sizes");
  Mat aug = Mat::Zero(n + 1, n + 1);
  aug.topLeftCorner(n, n) = d.B2();
  aug.topRightCorner(n, 1) = d.B1() * v;
  Vec x(n + 1);
  x.head(n) = w0;
  x(n) = 1.0;
  return (mat_exp(aug, dt) * x).head(n);
}

AffineFlow drift_flow_affine(const DriftPair& d, double dt) {
  const int n = d.n(), m = d.m();
  Mat aug = Mat::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = d.B2();
  aug.topRightCorner(n, m) = d.B1();
  const Mat E = mat_exp(aug, dt);
  return {E.topLeftCorner(n, n), E.topRightCorner(n, m)};
}

DecayEvaluator::DecayEvaluator(const DriftPair& d, double s_max, double b, int nt,
                               int golden_steps)
    : drift_(d), s_max_(s_max), b_(b), nt_(nt), golden_steps_(golden_steps), m_(d.m()),
      n_(d.n()) {
  if (!(s_max > 0.0)) throw ValidationError("DecayEvaluator: interval length must be positive");
  if (b < 0.0) throw ValidationError("DecayEvaluator: b must be nonnegative");
  if (nt < 2) throw ValidationError("DecayEvaluator: need at least two samples");
  coeffs_.resize(static_cast<std::size_t>(nt) * m_ * n_);
  // For nilpotent B2 the profile is a polynomial of degree <= 2(n-1)+3 in s,
  // and Markov's inequality bounds the excursion between samples.
  Mat power = Mat::Identity(n_, n_);
  for (int k = 0; k < n_; ++k) power = power * d.B2();
  if (power.isZero(0.0)) {
    const double deg = 2.0 * (n_ - 1) + 3.0;
    const double h = 1.0 / (nt - 1);
    const double bound = deg * deg * (deg * deg - 1.0) / 3.0 * 4.0 * h * h / 8.0;
    if (bound < 0.1) skip_margin_ = 2.0 * bound;
  }
  const Mat B2t = d.B2().transpose();
  const Mat B1t = d.B1().transpose();
  for (int i = 0; i < nt; ++i) {
    const double s = sample_time(i);
    const Mat C = std::pow(s + b, 1.5) * (B1t * mat_exp(B2t, -s));
    for (int r = 0; r < m_; ++r)
      for (int c = 0; c < n_; ++c) coeffs_[(static_cast<std::size_t>(i) * m_ + r) * n_ + c] = C(r, c);
  }
}

double DecayEvaluator::sample_time(int i) const {
  return s_max_ * static_cast<double>(i) / static_cast<double>(nt_ - 1);
}

double DecayEvaluator::value_at(const Vec& rho, double s) const {
  const Vec y = drift_.B1().transpose() * (mat_exp(drift_.B2().transpose(), -s) * rho);
  return std::pow(s + b_, 3) * y.squaredNorm();
}

double DecayEvaluator::refine(const Vec& rho, int best, double best_val) const {
  double lo = sample_time(std::max(best - 1, 0));
  double hi = sample_time(std::min(best + 1, nt_ - 1));
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
  double f1 = value_at(rho, x1), f2 = value_at(rho, x2);
  double top = std::max({best_val, f1, f2});
  for (int k = 0; k < golden_steps_; ++k) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = value_at(rho, x2);
      top = std::max(top, f2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = value_at(rho, x1);
      top = std::max(top, f1);
    }
  }
  return top;
}

namespace {

// Indices of the largest sampled local maxima, best first.
std::vector<int> top_peaks(const std::vector<double>& vals, int count) {
  std::vector<int> peaks;
  const int n = static_cast<int>(vals.size());
  for (int i = 0; i < n; ++i) {
    const bool left = i == 0 || vals[i] >= vals[i - 1];
    const bool right = i == n - 1 || vals[i] >= vals[i + 1];
    if (left && right) peaks.push_back(i);
  }
  const int keep = std::min<int>(count, static_cast<int>(peaks.size()));
  std::partial_sort(peaks.begin(), peaks.begin() + keep, peaks.end(),
                    [&](int a, int b) { return vals[a] > vals[b]; });
  peaks.resize(keep);
  return peaks;
}

}  // namespace

void DecayEvaluator::sample_all(const double* rho, std::vector<double>& vals) const {
  vals.resize(nt_);
  const double* C = coeffs_.data();
  for (int i = 0; i < nt_; ++i) {
    double acc = 0.0;
    for (int r = 0; r < m_; ++r) {
      double y = 0.0;
      for (int c = 0; c < n_; ++c) y += C[r * n_ + c] * rho[c];
      acc += y * y;
    }
    C += m_ * n_;
    vals[i] = acc;
  }
}

double DecayEvaluator::sup(const Vec& rho, double* argmax) const {
  if (rho.size() != n_) throw DimensionError("DecayEvaluator: rho has wrong size");
  std::vector<double> vals;
  sample_all(rho.data(), vals);
  double top = 0.0;
  int best = 0;
  for (int i : top_peaks(vals, kRefinedPeaks)) {
    const double r = refine(rho, i, vals[i]);
    if (r > top) {
      top = r;
      best = i;
    }
  }
  if (argmax) *argmax = sample_time(best);
  return top;
}

bool DecayEvaluator::within(const Vec& rho, double R) const {
  if (rho.size() != n_) throw DimensionError("DecayEvaluator: rho has wrong size");
  std::vector<double> vals(nt_);
  const double* C = coeffs_.data();
  for (int i = 0; i < nt_; ++i) {
    double acc = 0.0;
    for (int r = 0; r < m_; ++r) {
      double y = 0.0;
      for (int c = 0; c < n_; ++c) y += C[r * n_ + c] * rho[c];
      acc += y * y;
    }
    C += m_ * n_;
    if (acc > R) return false;
    vals[i] = acc;
  }
  const double top = *std::max_element(vals.begin(), vals.end());
  if (skip_margin_ && top < R * (1.0 - *skip_margin_)) return true;
  for (int i : top_peaks(vals, kRefinedPeaks))
    if (refine(rho, i, vals[i]) > R) return false;
  return true;
}

DecayProfile g_sup(const DriftPair& d, const Vec& rho, double t2, double b, int nt) {
  if (!(t2 > 0.0)) throw ValidationError("g_sup: t2 must be positive");
  if (b < 0.0 || b > t2) throw ValidationError("g_sup: need 0 <= b <= t2");
  if (nt < 64) throw ValidationError("g_sup: need nt >= 64");
  const double s_max = b > 0.0 ? t2 : 0.5 * t2;
  const DecayEvaluator eval(d, s_max, b, nt);
  DecayProfile p;
  p.t2 = t2;
  p.b = b;
  p.samples.reserve(nt);
  for (int i = 0; i < nt; ++i) {
    const double s = eval.sample_time(i);
    p.samples.emplace_back(s, eval.value_at(rho, s));
  }
  p.g_value = eval.sup(rho, &p.t_argmax);
  for (const auto& [s, val] : p.samples) p.g_value = std::max(p.g_value, val);
  return p;
}

namespace {

std::vector<Vec> sphere_points(int n, int count) {
  std::vector<Vec> pts;
  if (n == 1) {
    pts.push_back(Vec::Constant(1, 1.0));
    return pts;
  }
  pts.reserve(count);
  if (n == 2) {
    // G is even, so a half circle suffices; keep the full circle anyway.
    for (int i = 0; i < count; ++i) {
      const double a = 2.0 * M_PI * (i + 0.5) / count;
      Vec p(2);
      p << std::cos(a), std::sin(a);
      pts.push_back(p);
    }
  } else if (n == 3) {
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
      const double z = 1.0 - 2.0 * (i + 0.5) / count;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      Vec p(3);
      p << r * std::cos(golden * i), r * std::sin(golden * i), z;
      pts.push_back(p);
    }
  } else {
    std::mt19937_64 rng(0x5eed5eedULL + static_cast<unsigned>(n));
    std::normal_distribution<double> gauss;
    while (static_cast<int>(pts.size()) < count) {
      Vec p(n);
      for (int k = 0; k < n; ++k) p(k) = gauss(rng);
      const double r = p.norm();
      if (r > 1e-12) pts.push_back(p / r);
    }
  }
  return pts;
}

// Nelder-Mead on x -> G(x/|x|) started at a unit vector.
std::pair<Vec, double> polish(const DecayEvaluator& eval, const Vec& start, double start_val,
                              int iters) {
  const int n = static_cast<int>(start.size());
  auto f = [&](const Vec& x) {
    const double r = x.norm();
    return r > 0.0 ? eval.sup(x / r) : std::numeric_limits<double>::infinity();
  };
  std::vector<Vec> simplex(n + 1, start);
  std::vector<double> vals(n + 1, start_val);
  for (int k = 0; k < n; ++k) {
    simplex[k + 1](k) += 0.05;
    vals[k + 1] = f(simplex[k + 1]);
  }
  std::vector<int> order(n + 1);
  for (int it = 0; it < iters; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    const int worst = order[n];
    Vec centroid = Vec::Zero(n);
    for (int k = 0; k < n; ++k) centroid += simplex[order[k]];
    centroid /= n;
    const Vec xr = centroid + (centroid - simplex[worst]);
    const double fr = f(xr);
    if (fr < vals[order[0]]) {
      const Vec xe = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = f(xe);
      if (fe < fr) {
        simplex[worst] = xe;
        vals[worst] = fe;
      } else {
        simplex[worst] = xr;
        vals[worst] = fr;
      }
    } else if (fr < vals[order[n - 1]]) {
      simplex[worst] = xr;
      vals[worst] = fr;
    } else {
      const Vec xc = centroid + 0.5 * (simplex[worst] - centroid);
      const double fc = f(xc);
      if (fc < vals[worst]) {
        simplex[worst] = xc;
        vals[worst] = fc;
      } else {
        for (int k = 1; k <= n; ++k) {
          auto& x = simplex[order[k]];
          x = simplex[order[0]] + 0.5 * (x - simplex[order[0]]);
          vals[order[k]] = f(x);
        }
      }
    }
    // Keep the simplex near the sphere so the step scale stays meaningful.
    for (int k = 0; k <= n; ++k) simplex[k] /= simplex[k].norm();
  }
  const auto best = std::min_element(vals.begin(), vals.end()) - vals.begin();
  return {simplex[best].normalized(), vals[best]};
}

}  // namespace

DecayProfile c2_lower_bound(const DriftPair& d, double t2, int sphere_samples, int refine_iters) {
  if (!(t2 > 0.0)) throw ValidationError("c2_lower_bound: t2 must be positive");
  if (sphere_samples < 100 * d.n())
    throw ValidationError("c2_lower_bound: need sphere_samples >= 100 n");
  if (refine_iters < 1) throw ValidationError("c2_lower_bound: refine_iters must be positive");
  DecayProfile p;
  p.t2 = t2;
  p.b = 0.0;
  if (numerical_rank(kalman_matrix(d)).rank < d.n()) {
    p.rank_deficient = true;
    p.c2_estimate = 0.0;
    p.argmin_rho = Vec::Unit(d.n(), 0);
    return p;
  }
  const DecayEvaluator eval(d, 0.5 * t2, 0.0);
  const auto pts = sphere_points(d.n(), sphere_samples);
  std::vector<std::pair<double, int>> scored;
  scored.reserve(pts.size());
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) scored.emplace_back(eval.sup(pts[i]), i);
  const int keep = std::min<int>(8, static_cast<int>(scored.size()));
  std::partial_sort(scored.begin(), scored.begin() + keep, scored.end());
  double best_val = scored.front().first;
  Vec best_rho = pts[scored.front().second];
  for (int k = 0; k < keep; ++k) {
    auto [rho, val] = polish(eval, pts[scored[k].second], scored[k].first, refine_iters);
    if (val < best_val) {
      best_val = val;
      best_rho = rho;
    }
  }
  p.c2_estimate = best_val;
  p.g_value = best_val;
  p.argmin_rho = best_rho;
  p.t_argmax = 0.0;
  eval.sup(best_rho, &p.t_argmax);
  return p;
}

}  // namespace ultra
