#pragma once

#include "ultra/grid.hpp"
#include "ultra/linalg.hpp"

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace ultra {

using MatCoef = std::function<Mat(double t, const Vec& v)>;
using ScalarCoef = std::function<double(double t, const Vec& v)>;
using VecCoef = std::function<Vec(double t, const Vec& v)>;

// Named coefficient family as it appears in configuration files.
//   constant:   a(t,v) = a0
//   affine:     a(t,v) = a0 + a_t t + sum_i a_v[i] v_i
//   sinusoidal: a(t,v) = a0 + amp sin(k v_1 + omega t)
// For the diffusivity the scalar multiplies the identity.
struct CoefficientFamily {
  std::string kind = "constant";
  double a0 = 1.0;
  double a_t = 0.0;
  std::vector<double> a_v;
  double amp = 0.0;
  double k = 1.0;
  double omega = 0.0;

  double eval(double t, const Vec& v) const;
  bool operator==(const CoefficientFamily&) const = default;
};

struct OperatorSpec {
  DriftPair drift;
  MatCoef A;
  ScalarCoef c;
  VecCoef d;
  double lambda = 2.0;
  std::string label;

  int m() const { return drift.m(); }
  int n() const { return drift.n(); }
};

OperatorSpec make_operator(DriftPair drift, const CoefficientFamily& diffusivity,
                           const CoefficientFamily& potential, std::vector<double> drift_v,
                           double lambda, std::string label);

// Built-in drift pairs: "heat" (m=n=1, B1=B2=0), "L1", "jerk",
// "example1" (m=1, size n).
DriftPair drift_preset(const std::string& name, int n = 3);
// Preset drift with A = I, c = 0, d = 0.
OperatorSpec operator_preset(const std::string& name, double lambda = 1.1, int n = 3);

struct ConditionCheck {
  std::string name;
  double worst_margin = 0.0;  // >= 0 means satisfied
  bool pass = false;
  Vec where_v;                // location of the worst sample
  double where_t = 0.0;
};

struct AssumptionReport {
  std::vector<ConditionCheck> checks;
  int samples = 0;
  bool pass = false;
};

// Samples grid nodes and seeded random interior points; checks symmetry,
// two-sided ellipticity with lambda, and finite-difference bounds of
// |d_t a_ij|, |grad_v a_ij|, |c|, |d| by lambda.
AssumptionReport validate_assumptions(const OperatorSpec& spec, const GridSpec& grid, int samples,
                                      unsigned long long seed = 1);

enum class TimeClosure {
  ZeroExtension,  // central stencil, data vanishes outside (0, t2)
  OneSided,       // fourth-order one-sided closure at both ends
};

struct ApplyOptions {
  TimeClosure closure = TimeClosure::ZeroExtension;
  bool require_support = true;
  double support_tol = 1e-12;
  int support_cells = 4;
};

// Rejects fields that do not vanish near the v-boundary (and near t = 0, t2
// under ZeroExtension).
void check_support(const Field& u, const ApplyOptions& opts);

// Fourth-order time derivative.
Field time_derivative(const Field& u, TimeClosure closure);

// Discrete div_v(A grad_v .) in conservative flux form with zero Dirichlet
// ghosts. Coefficients are sampled once per (time node, face).
class DiffusionOperator {
 public:
  DiffusionOperator(const OperatorSpec& spec, const GridSpec& grid);

  // out = div(A grad in) on the block at time node k (w_count columns).
  void apply(int k, const cplx* in, cplx* out, std::size_t w_count) const;
  Field apply(const Field& u) const;

  // sum over faces of Re((C G)_i conj(G_i)) for C = A or dA/dt, integrated
  // with the quadrature of the grid. With C = A this equals -Re<Lf, f>.
  double energy(const Field& f, const std::vector<double>* weights = nullptr) const;
  double dt_energy(const Field& f, const std::vector<double>* weights = nullptr) const;
  // sum of |face difference|^2, the discrete |grad_v f|^2.
  double grad_norm2(const Field& f, const std::vector<double>* weights = nullptr) const;

  const GridSpec& grid() const { return grid_; }
  // A(col, axis) row entry at face `face` of `axis` and time node k. For m = 1
  // face f sits between cells f-1 and f.
  double face_coefficient(int k, int axis, std::size_t face, int col) const {
    return a_faces_[static_cast<std::size_t>(k) * m_ * faces_per_axis_ * m_ +
                    (axis * faces_per_axis_ + face) * m_ + col];
  }

 private:
  double face_form(const Field& f, const std::vector<double>& coef,
                   const std::vector<double>* weights) const;
  void face_gradient(const cplx* u, std::size_t w_count, int axis, std::size_t cell,
                     std::vector<cplx>& g) const;

  GridSpec grid_;
  int m_;
  std::size_t faces_per_axis_;
  // For axis i, face f of cell c (c + e_i is the neighbour): m coefficients
  // A(i, 0..m-1) at that face, per time node.
  std::vector<double> a_faces_;
  std::vector<double> dta_faces_;
};

// P u = d_t u + (B1 v + B2 w) . grad_w u + div_v(A grad_v u); u physical.
Field apply_P(const OperatorSpec& spec, const Field& u, const ApplyOptions& opts = {});

// The imaginary potential i (B1^T e^{-t B2^T} rho) . v at each (t, v).
std::vector<double> potential_coefficients(const OperatorSpec& spec, const GridSpec& grid,
                                           const Vec& rho);

// P~_rho h = d_t h + i (B1^T e^{-tB2^T} rho).v h + div_v(A grad_v h) - tr(B2)/2 h.
// With include_trace = false this is P~^0.
Field apply_P_tilde(const OperatorSpec& spec, const Field& h, const Vec& rho,
                    bool include_trace = true, const ApplyOptions& opts = {});

// K1 h = d_t h + i(...).v h,  K2 h = alpha/(t+b) h + div_v(A grad_v h).
std::pair<Field, Field> apply_K_split(const OperatorSpec& spec, const Field& h, const Vec& rho,
                                      double alpha, double b, const ApplyOptions& opts = {});

// Linear combination a*x + b*y on identical grids.
Field axpby(cplx a, const Field& x, cplx b, const Field& y);
// Pointwise multiplication by a function of time.
Field scale_in_time(const Field& u, const std::vector<double>& factor);
// Inner product with the grid quadrature.
cplx inner(const Field& x, const Field& y);

}  // namespace ultra
