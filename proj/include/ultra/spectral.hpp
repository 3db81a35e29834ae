#pragma once

#include "ultra/grid.hpp"
#include "ultra/linalg.hpp"
#include "ultra/operator.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace ultra {

enum class Direction { Forward, Inverse };

// Unitary transform in w, slice by slice. Forward maps a physical field to
// the eta lattice (wraparound order, see GridSpec::eta); inverse goes back.
Field fourier_w(const Field& u, Direction dir);

enum class RhoDirection { ToRho, ToEta };

// to_rho: e^{t B2^T} eta.  to_eta: e^{-t B2^T} rho.
Vec rho_map(const DriftPair& d, double t, const Vec& x, RhoDirection dir);

struct InvarianceReport {
  double max_drift = 0.0;      // max_t |e^{tB2^T} eta(t) - rho0|
  double relative_drift = 0.0; // max_drift / |rho0| (0 when rho0 = 0)
  int checkpoints = 0;
  bool pass = false;           // relative_drift <= 1e-10
};

// Integrates eta' = -B2^T eta from rho0 with an adaptive high-order ODE
// solver and checks that e^{tB2^T} eta(t) stays at rho0.
InvarianceReport invariance_check(const DriftPair& d, const Vec& rho0, double t2, int nt);

// U_R = { rho : sup_{0<=t<=t2} (t+b)^3 |B1^T e^{-tB2^T} rho|^2 <= R }.
class FrequencyRegion {
 public:
  // With estimate_radius the bound (R/c2)^{1/2} is computed from
  // c2_lower_bound; it is absent when the rank condition fails.
  FrequencyRegion(const DriftPair& d, double R, double b, double t2, bool estimate_radius = false);

  const DriftPair& drift() const { return drift_; }
  double R() const { return R_; }
  double b() const { return b_; }
  double t2() const { return t2_; }
  std::optional<double> bounding_radius() const { return radius_; }
  std::optional<double> c2() const { return c2_; }

  double sup_fn(const Vec& rho) const { return eval_.sup(rho); }
  bool contains(const Vec& rho) const { return eval_.within(rho, R_); }

  struct Membership {
    bool member;
    double margin;  // R - sup_fn(rho)
  };
  Membership membership(const Vec& rho) const;

 private:
  DriftPair drift_;
  double R_, b_, t2_;
  DecayEvaluator eval_;
  std::optional<double> radius_, c2_;
};

// Masks 1{e^{t_k B2^T} eta in U_R} for every time node and lattice point.
class TransformPlan {
 public:
  TransformPlan(GridSpec grid, FrequencyRegion region);

  const GridSpec& grid() const { return grid_; }
  const FrequencyRegion& region() const { return region_; }
  double trace_B2() const { return region_.drift().trace_B2(); }

  Vec eta_at(std::size_t w_flat) const;
  Vec rho_at(int k, std::size_t w_flat) const;
  const std::vector<std::uint8_t>& mask(int k) const { return masks_[k]; }
  std::size_t kept(int k) const;
  // True when every mask keeps the whole lattice.
  bool saturated() const;
  // Largest sup_fn over all (time node, lattice point) pairs.
  double lattice_sup_max() const;

  // CSV rows: t_index, eta multi-index (signed), bit.
  void dump_masks_csv(std::ostream& os) const;

 private:
  GridSpec grid_;
  FrequencyRegion region_;
  std::vector<std::vector<std::uint8_t>> masks_;
};

// Forward: per-slice Fourier transform in w, then the factor e^{-t trB2/2}.
// The sample at lattice point eta and time t is the value of T u at
// rho = e^{tB2^T} eta; no resampling takes place. Inverse undoes both.
Field apply_T(const Field& u, const TransformPlan& plan, Direction dir);

// Per-slice norm of T u measured in rho coordinates: the lattice cell in
// rho has volume e^{t trB2} times the eta cell.
double rho_slice_norm2(const Field& Tu, const TransformPlan& plan, int k);

// S_R = T^{-1} 1_{U_R} T realised as the multiplier 1_{U_R}(e^{tB2^T} eta).
Field apply_S_R(const Field& u, const TransformPlan& plan);
// The same multiplier applied to a field already on the eta lattice.
Field apply_S_R_hat(const Field& uhat, const TransformPlan& plan);

struct ConjugationReport {
  double relative_discrepancy = 0.0;
  double lhs_norm = 0.0;
  double nyquist_mass_fraction = 0.0;
};

// Compares F_w(P u) with [d_t - (B2^T eta).grad_eta + i(B1^T eta).v +
// div_v(A grad_v) - trB2] F_w u on the eta lattice. grad_eta uses fourth-order
// lattice differences with one-sided closure at the lattice edge.
ConjugationReport verify_conjugation(const OperatorSpec& spec, const Field& u,
                                     double nyquist_limit = 1e-6);

struct CommutationReport {
  double p_commutator = 0.0;     // |P S_R u - S_R P u| / |P S_R u|
  double grad_commutator = 0.0;  // |grad_v S_R u - S_R grad_v u| / |grad_v S_R u|
  double c_commutator = 0.0;     // |S_R(c u) - c S_R u| / |c S_R u|
  double d_commutator = 0.0;     // |S_R(d.grad u) - d.grad S_R u| / |d.grad S_R u|
};

CommutationReport verify_commutation(const OperatorSpec& spec, const Field& u,
                                     const TransformPlan& plan);

}  // namespace ultra
