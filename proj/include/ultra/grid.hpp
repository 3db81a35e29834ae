#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace ultra {

using cplx = std::complex<double>;

struct Axis {
  double half_width = 1.0;
  int points = 16;
  bool operator==(const Axis&) const = default;
};

// Structured sampling of (0, t2) x v-box x w-box.
//   t: nt nodes t_k = k t2/(nt-1), trapezoid quadrature.
//   v: cell centred, v_j = -L + (j + 1/2) dv with dv = 2L/nv, midpoint rule,
//      zero Dirichlet ghosts just outside the box.
//   w: periodic, w_j = -L + j dw with dw = 2L/nw, midpoint rule.
class GridSpec {
 public:
  GridSpec(double t2, int nt, std::vector<Axis> v_axes, std::vector<Axis> w_axes = {});

  double t2() const { return t2_; }
  int nt() const { return nt_; }
  int m() const { return static_cast<int>(v_.size()); }
  int n() const { return static_cast<int>(w_.size()); }
  const std::vector<Axis>& v_axes() const { return v_; }
  const std::vector<Axis>& w_axes() const { return w_; }

  double dt() const { return t2_ / (nt_ - 1); }
  double t(int k) const { return k * dt(); }
  double dv(int axis) const { return 2.0 * v_[axis].half_width / v_[axis].points; }
  double v(int axis, int j) const { return -v_[axis].half_width + (j + 0.5) * dv(axis); }
  double dw(int axis) const { return 2.0 * w_[axis].half_width / w_[axis].points; }
  double w(int axis, int j) const { return -w_[axis].half_width + j * dw(axis); }
  // Lattice spacing pi/L of the dual frequency grid.
  double deta(int axis) const;
  // Frequency of storage index j in wraparound order: 0, 1, ..., nw/2-1, -nw/2, ..., -1.
  double eta(int axis, int j) const;

  std::size_t v_count() const { return v_count_; }
  std::size_t w_count() const { return w_count_; }
  double v_cell() const;  // product of dv
  double w_cell() const;  // product of dw
  double t_weight(int k) const { return (k == 0 || k == nt_ - 1) ? 0.5 * dt() : dt(); }

  // Row-major strides for the v multi-index (last axis fastest).
  std::size_t v_stride(int axis) const { return v_strides_[axis]; }
  std::size_t w_stride(int axis) const { return w_strides_[axis]; }
  void v_unflatten(std::size_t flat, std::vector<int>& idx) const;
  void w_unflatten(std::size_t flat, std::vector<int>& idx) const;

  // Same grid with the w-box dropped (time-v slice geometry).
  GridSpec without_w() const;

  bool operator==(const GridSpec& o) const;

 private:
  double t2_;
  int nt_;
  std::vector<Axis> v_, w_;
  std::size_t v_count_ = 1, w_count_ = 1;
  std::vector<std::size_t> v_strides_, w_strides_;
};

enum class Space { Physical, Frequency, Invariant };

// Complex samples u(t, v, w) laid out (t, v multi-index, w multi-index) with
// w fastest. A slice field carries no w axis. Values are immutable once the
// field exists; operations build new fields.
class Field {
 public:
  Field(GridSpec grid, bool with_w, Space space, std::vector<cplx> values);
  static Field zeros(const GridSpec& grid, bool with_w, Space space = Space::Physical);

  const GridSpec& grid() const { return grid_; }
  bool with_w() const { return with_w_; }
  Space space() const { return space_; }
  std::span<const cplx> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  std::size_t w_count() const { return with_w_ ? grid_.w_count() : 1; }
  std::size_t slab() const { return grid_.v_count() * w_count(); }  // samples per time node
  std::size_t index(int k, std::size_t v_flat, std::size_t w_flat = 0) const {
    return (static_cast<std::size_t>(k) * grid_.v_count() + v_flat) * w_count() + w_flat;
  }
  const cplx& operator[](std::size_t i) const { return values_[i]; }

  // Quadrature of |u|^2 over (t, v, w) and over (v, w) at one time node.
  double norm2() const;
  double slice_norm2(int k) const;
  double max_abs() const;

  // Values moved out for reuse; leaves the field empty.
  std::vector<cplx> release() && { return std::move(values_); }

 private:
  GridSpec grid_;
  bool with_w_;
  Space space_;
  std::vector<cplx> values_;
};

}  // namespace ultra
