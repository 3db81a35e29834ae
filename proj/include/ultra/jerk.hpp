#pragma once

#include "ultra/grid.hpp"
#include "ultra/operator.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ultra {

// Forward error equation in s, or its reversal u(t) = e(T - t).
enum class TimeDirection { ForwardS, ReversedT };
std::string to_string(TimeDirection d);

// One time slice of the error function on (J; A, V, Q): m = 1, n = 3.
// Samples are real and laid out like a Field slab, J outer.
struct JerkState {
  GridSpec grid;
  std::vector<double> values;
  TimeDirection direction = TimeDirection::ForwardS;
  double time = 0.0;

  JerkState(GridSpec g, std::vector<double> v, TimeDirection dir = TimeDirection::ForwardS, double t = 0.0);
  static JerkState zeros(GridSpec g);
  double norm2() const;  // midpoint quadrature over (J, A, V, Q)
};

struct SchemeConfig {
  double dt = 0.0;
  double theta = 0.5;            // implicit weight of the diffusion step
  int substeps = 1;              // simulation steps per stored slice
  double boundary_mass = 1e-8;   // J boundary-layer mass over the peak total mass
  int boundary_cells = 4;

  // dt <= t2/64 with t2 the stored horizon; theta in [1/2, 1].
  void validate(double horizon) const;
};

// B1 = (-1,0,0)^T, B2 = [[0,0,0],[-1,0,0],[0,-1,0]], A = a_bar, potential
// c_bar, first-order coefficient d_bar. Throws ValidationError when the
// coefficients fail validate_assumptions on `check_grid`.
OperatorSpec build_jerk_operator(const CoefficientFamily& a_bar, const CoefficientFamily& c_bar, double d_bar,
                                 double lambda, const GridSpec& check_grid);

// Semi-Lagrangian step of d_s e + J d_A e + A d_V e + V d_Q e = 0: exact
// characteristic feet, periodic spectral translation swept along A, V, Q.
JerkState transport_step(const JerkState& s, double dt);

// Theta step of d_s e = d_J(a d_J e) - c e - d d_J e, zero Dirichlet in J.
// Coefficients are evaluated at reversed time t_coef.
JerkState diffusion_step(const JerkState& s, const OperatorSpec& spec, double t_coef, double dt,
                         double theta = 0.5);

struct ResidualReport {
  double absolute = 0.0;  // quadrature norm of the residual
  double scale = 0.0;     // quadrature norm of the time derivative
  double relative = 0.0;
  int worst_node = 0;     // time node with the largest residual slice
};

// Stored slices of one run. The grid's time axis spans the stored window.
struct Trajectory {
  Field field;
  TimeDirection direction = TimeDirection::ForwardS;
  double t_end = 0.0;         // full simulated horizon T
  double window_start = 0.0;  // first stored s
  ResidualReport residual;

  const GridSpec& grid() const { return field.grid(); }
  JerkState slice(int k) const;
};

// Strang splitting from s = 0 to t_end; stores slices for s in
// [t_end - window, t_end] every `substeps` steps. Residual is filled in.
// Throws PreconditionError with the time stamp on a boundary-mass breach.
Trajectory simulate(const JerkState& initial, const OperatorSpec& spec, const SchemeConfig& scheme, double t_end,
                    double window);

// Relabels s = T - t and flips the orientation; exact.
Trajectory time_reverse(const Trajectory& tr);

// Forward: d_s e + J d_A e + A d_V e + V d_Q e - d_J(a d_J e) + c e + d d_J e
// with a(s) = a_bar(T - s). Reversed: P u - c_bar u - d_bar d_J u.
ResidualReport residual(const Trajectory& tr, const OperatorSpec& spec);

// Little-endian binary: "ULTRAJRK", uint32 version, uint32 rank = 5, five
// uint64 extents (t, J, A, V, Q), then float64 samples in that row-major
// order. The JSON sidecar carries grid, orientation and residual.
void export_trajectory(const Trajectory& tr, const std::filesystem::path& binary,
                       const std::filesystem::path& metadata);
Trajectory import_trajectory(const std::filesystem::path& binary, const std::filesystem::path& metadata);

}  // namespace ultra
