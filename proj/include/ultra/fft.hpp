#pragma once

#include "ultra/grid.hpp"

#include <memory>

namespace ultra {

// Unitary transform in w applied to `howmany` contiguous blocks of
// grid.w_count() samples. The phase (-1)^{sum j} accounts for the box
// starting at w = -L, so index j carries the value at eta_j of the
// continuous transform e^{-i eta . w}.
class WTransform {
 public:
  explicit WTransform(const GridSpec& grid);
  ~WTransform();
  WTransform(const WTransform&) = delete;
  WTransform& operator=(const WTransform&) = delete;
  WTransform(WTransform&&) noexcept;
  WTransform& operator=(WTransform&&) noexcept;

  // In place; every block is also multiplied by `scale`.
  void forward(cplx* data, std::size_t howmany, double scale = 1.0) const;
  void inverse(cplx* data, std::size_t howmany, double scale = 1.0) const;

  // Sign (-1)^{sum_a j_a} for storage index j.
  const std::vector<signed char>& parity() const { return parity_; }

 private:
  struct Plans;
  void run(cplx* data, std::size_t howmany, bool forward, double scale) const;

  std::vector<int> dims_;
  std::size_t block_;
  std::vector<signed char> parity_;
  std::vector<double> weight_;  // parity over sqrt(block)
  std::size_t batch_ = 1;       // blocks per batched plan
  std::unique_ptr<Plans> plans_;
};

}  // namespace ultra
