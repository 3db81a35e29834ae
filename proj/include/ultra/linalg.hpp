#pragma once

#include <Eigen/Dense>

#include <optional>
#include <utility>
#include <vector>

namespace ultra {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Constant coupled drift (B1 v + B2 w) . grad_w, with v in R^m and w in R^n.
class DriftPair {
 public:
  DriftPair(Mat b1, Mat b2);

  int m() const { return static_cast<int>(b1_.cols()); }
  int n() const { return static_cast<int>(b1_.rows()); }
  const Mat& B1() const { return b1_; }
  const Mat& B2() const { return b2_; }
  double trace_B2() const { return b2_.trace(); }

 private:
  Mat b1_;
  Mat b2_;
};

// Largest |s| * ||M||_1 accepted by mat_exp before overflow is likely.
inline constexpr double kMatExpNormLimit = 700.0;

// e^{sM}. Nilpotent arguments use the terminating series; everything else
// goes through scaling and squaring with the degree-13 diagonal Pade
// approximant.
Mat mat_exp(const Mat& M, double s);

// [B1, B2 B1, ..., B2^{n-1} B1], blocks in that order.
Mat kalman_matrix(const DriftPair& d);

struct RankReport {
  Mat kalman;
  std::vector<double> singular_values;  // nonincreasing
  int rank = 0;
  double tol_used = 0.0;                // absolute threshold tol_rel * sigma_max
};

RankReport numerical_rank(const Mat& M, double tol_rel = 1e-10);

// Exact characteristic of w' = B1 v + B2 w over time dt with v frozen.
Vec drift_flow(const DriftPair& d, const Vec& v, const Vec& w0, double dt);

// Affine form of drift_flow: w(dt) = flow * w0 + shift * v.
struct AffineFlow {
  Mat flow;   // e^{dt B2}, n x n
  Mat shift;  // n x m
};
AffineFlow drift_flow_affine(const DriftPair& d, double dt);

struct DecayProfile {
  double t2 = 0.0;
  double b = 0.0;
  std::vector<std::pair<double, double>> samples;
  double g_value = 0.0;
  double t_argmax = 0.0;
  std::optional<double> c2_estimate;
  Vec argmin_rho;           // unit vector achieving c2_estimate
  bool rank_deficient = false;
};

inline constexpr int kDecaySamples = 1024;
inline constexpr int kGoldenSteps = 40;
// Several sampled peaks can be nearly level; each of these is refined.
inline constexpr int kRefinedPeaks = 3;

// Fast evaluator of s -> (s+b)^3 |B1^T e^{-s B2^T} rho|^2 on a fixed
// sampling of [0, s_max]. Each sample keeps the m x n matrix
// C(s) = (s+b)^{3/2} B1^T e^{-s B2^T}, so one evaluation costs m*n flops.
class DecayEvaluator {
 public:
  DecayEvaluator(const DriftPair& d, double s_max, double b,
                 int nt = kDecaySamples, int golden_steps = kGoldenSteps);

  double value_at(const Vec& rho, double s) const;
  // Sampled maximum refined by golden section around the best sampled peaks.
  double sup(const Vec& rho, double* argmax = nullptr) const;
  // Exact predicate sup(rho) <= R, with an early exit once any sample
  // exceeds R; refinement only runs for candidates that survive sampling.
  bool within(const Vec& rho, double R) const;

  double s_max() const { return s_max_; }
  double b() const { return b_; }
  int samples() const { return nt_; }
  double sample_time(int i) const;

 private:
  void sample_all(const double* rho, std::vector<double>& vals) const;
  double refine(const Vec& rho, int best, double best_val) const;

  DriftPair drift_;
  double s_max_;
  double b_;
  int nt_;
  int golden_steps_;
  int m_, n_;
  std::vector<double> coeffs_;  // nt blocks of m*n, row-major
  // Relative gap below R under which within() trusts the samples alone.
  std::optional<double> skip_margin_;
};

// sup over [0, t2] of (t+b)^3 |B1^T e^{-tB2^T} rho|^2 for b > 0; for b = 0
// the unshifted G(rho) over [0, t2/2].
DecayProfile g_sup(const DriftPair& d, const Vec& rho, double t2, double b,
                   int nt = kDecaySamples);

// Minimum of G over the unit sphere: quasi-uniform sampling followed by a
// Nelder-Mead polish of the best candidates, projected to the sphere.
DecayProfile c2_lower_bound(const DriftPair& d, double t2, int sphere_samples,
                            int refine_iters);

}  // namespace ultra
