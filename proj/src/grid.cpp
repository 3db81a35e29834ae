#include "ultra/grid.hpp"

#include "ultra/errors.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>

namespace ultra {

namespace {

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

std::vector<std::size_t> strides_of(const std::vector<Axis>& axes) {
  std::vector<std::size_t> s(axes.size(), 1);
  for (int a = static_cast<int>(axes.size()) - 2; a >= 0; --a) s[a] = s[a + 1] * axes[a + 1].points;
  return s;
}

}  // namespace

GridSpec::GridSpec(double t2, int nt, std::vector<Axis> v_axes, std::vector<Axis> w_axes)
    : t2_(t2), nt_(nt), v_(std::move(v_axes)), w_(std::move(w_axes)) {
  if (!(t2_ > 0.0) || !std::isfinite(t2_)) throw ValidationError("GridSpec: t2 must be positive");
  if (nt_ < 16) throw ValidationError("GridSpec: need nt >= 16");
  if (v_.empty()) throw ValidationError("GridSpec: at least one diffusive axis required");
  for (const auto& a : v_) {
    if (a.points < 16) throw ValidationError("GridSpec: need nv >= 16 on every v axis");
    if (!(a.half_width > 0.0)) throw ValidationError("GridSpec: v half-width must be positive");
    v_count_ *= a.points;
  }
  for (const auto& a : w_) {
    if (!power_of_two(a.points))
      throw ValidationError("GridSpec: nw must be a power of two, got " + std::to_string(a.points));
    if (!(a.half_width > 0.0)) throw ValidationError("GridSpec: w half-width must be positive");
    w_count_ *= a.points;
  }
  v_strides_ = strides_of(v_);
  w_strides_ = strides_of(w_);
}

double GridSpec::deta(int axis) const { return M_PI / w_[axis].half_width; }

double GridSpec::eta(int axis, int j) const {
  const int nw = w_[axis].points;
  const int k = j < nw / 2 ? j : j - nw;
  return k * deta(axis);
}

double GridSpec::v_cell() const {
  double c = 1.0;
  for (int a = 0; a < m(); ++a) c *= dv(a);
  return c;
}

double GridSpec::w_cell() const {
  double c = 1.0;
  for (int a = 0; a < n(); ++a) c *= dw(a);
  return c;
}

void GridSpec::v_unflatten(std::size_t flat, std::vector<int>& idx) const {
  idx.resize(v_.size());
  for (std::size_t a = 0; a < v_.size(); ++a) {
    idx[a] = static_cast<int>(flat / v_strides_[a]);
    flat %= v_strides_[a];
  }
}

void GridSpec::w_unflatten(std::size_t flat, std::vector<int>& idx) const {
  idx.resize(w_.size());
  for (std::size_t a = 0; a < w_.size(); ++a) {
    idx[a] = static_cast<int>(flat / w_strides_[a]);
    flat %= w_strides_[a];
  }
}

GridSpec GridSpec::without_w() const { return GridSpec(t2_, nt_, v_, {}); }

bool GridSpec::operator==(const GridSpec& o) const {
  auto same = [](const std::vector<Axis>& a, const std::vector<Axis>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].half_width != b[i].half_width || a[i].points != b[i].points) return false;
    return true;
  };
  return t2_ == o.t2_ && nt_ == o.nt_ && same(v_, o.v_) && same(w_, o.w_);
}

Field::Field(GridSpec grid, bool with_w, Space space, std::vector<cplx> values)
    : grid_(std::move(grid)), with_w_(with_w), space_(space), values_(std::move(values)) {
  if (with_w_ && grid_.n() == 0) throw DimensionError("Field: grid has no w axes");
  const std::size_t expected = static_cast<std::size_t>(grid_.nt()) * slab();
  if (values_.size() != expected)
    throw DimensionError("Field: expected " + std::to_string(expected) + " samples, got " +
                         std::to_string(values_.size()));
  // Branch-free scan on the exponent bits; the slow loop only locates the culprit.
  constexpr std::uint64_t kExponent = 0x7ff0000000000000ULL;
  const auto* bits = reinterpret_cast<const double*>(values_.data());
  std::uint64_t bad = 0;
  for (std::size_t i = 0; i < 2 * values_.size(); ++i)
    bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(bits[i]) & kExponent) == kExponent);
  if (bad)
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (!std::isfinite(values_[i].real()) || !std::isfinite(values_[i].imag()))
        throw ValidationError("Field: non-finite sample at flat index " + std::to_string(i));
}

Field Field::zeros(const GridSpec& grid, bool with_w, Space space) {
  const std::size_t per = grid.v_count() * (with_w ? grid.w_count() : 1);
  return Field(grid, with_w, space, std::vector<cplx>(per * grid.nt()));
}

double Field::slice_norm2(int k) const {
  double s = 0.0;
  const std::size_t base = index(k, 0);
  for (std::size_t i = 0; i < slab(); ++i) s += std::norm(values_[base + i]);
  return s * grid_.v_cell() * (with_w_ ? grid_.w_cell() : 1.0);
}

double Field::norm2() const {
  double s = 0.0;
  for (int k = 0; k < grid_.nt(); ++k) s += grid_.t_weight(k) * slice_norm2(k);
  return s;
}

double Field::max_abs() const {
  double mx = 0.0;
  for (const auto& z : values_) mx = std::max(mx, std::abs(z));
  return mx;
}

}  // namespace ultra
