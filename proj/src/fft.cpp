#include "ultra/fft.hpp"

#include "ultra/errors.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>

namespace ultra {

namespace {

// The FFTW planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex mu;
  return mu;
}

}  // namespace

// Aligned in-place plans for a batch of `batch_` blocks and for one block;
// the unaligned single-block pair serves buffers FFTW cannot vectorise on.
struct WTransform::Plans {
  fftw_plan fwd_batch = nullptr, inv_batch = nullptr;
  fftw_plan fwd_one = nullptr, inv_one = nullptr;
  fftw_plan fwd_any = nullptr, inv_any = nullptr;
  ~Plans() {
    std::lock_guard lock(planner_mutex());
    for (fftw_plan p : {fwd_batch, inv_batch, fwd_one, inv_one, fwd_any, inv_any})
      if (p) fftw_destroy_plan(p);
  }
};

namespace {

// About 2^15 samples per batch keeps a batch in cache for the weight pass.
constexpr std::size_t kBatchSamples = std::size_t{1} << 15;

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : p(fftw_alloc_complex(n)) {
    if (!p) throw Error("WTransform: allocation failed");
  }
  ~FftwBuffer() { fftw_free(p); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  fftw_complex* p;
};

}  // namespace

WTransform::WTransform(const GridSpec& grid) : block_(grid.w_count()) {
  if (grid.n() == 0) throw DimensionError("WTransform: grid has no w axes");
  for (const auto& a : grid.w_axes()) dims_.push_back(a.points);
  parity_.resize(block_);
  std::vector<int> idx;
  for (std::size_t f = 0; f < block_; ++f) {
    grid.w_unflatten(f, idx);
    int s = 0;
    for (int j : idx) s += j;
    parity_[f] = (s % 2 == 0) ? 1 : -1;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(block_));
  weight_.resize(block_);
  for (std::size_t i = 0; i < block_; ++i) weight_[i] = scale * parity_[i];
  batch_ = std::max<std::size_t>(1, kBatchSamples / block_);

  plans_ = std::make_unique<Plans>();
  const FftwBuffer buf(batch_ * block_);
  const int rank = static_cast<int>(dims_.size());
  const int dist = static_cast<int>(block_), howmany = static_cast<int>(batch_);
  std::lock_guard lock(planner_mutex());
  auto many = [&](int sign) {
    return fftw_plan_many_dft(rank, dims_.data(), howmany, buf.p, nullptr, 1, dist, buf.p, nullptr, 1, dist, sign,
                              FFTW_ESTIMATE);
  };
  plans_->fwd_batch = many(FFTW_FORWARD);
  plans_->inv_batch = many(FFTW_BACKWARD);
  plans_->fwd_one = fftw_plan_dft(rank, dims_.data(), buf.p, buf.p, FFTW_FORWARD, FFTW_ESTIMATE);
  plans_->inv_one = fftw_plan_dft(rank, dims_.data(), buf.p, buf.p, FFTW_BACKWARD, FFTW_ESTIMATE);
  plans_->fwd_any = fftw_plan_dft(rank, dims_.data(), buf.p, buf.p, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans_->inv_any = fftw_plan_dft(rank, dims_.data(), buf.p, buf.p, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  for (fftw_plan p : {plans_->fwd_batch, plans_->inv_batch, plans_->fwd_one, plans_->inv_one, plans_->fwd_any,
                      plans_->inv_any})
    if (!p) throw Error("WTransform: FFTW planning failed");
}

WTransform::~WTransform() = default;
WTransform::WTransform(WTransform&&) noexcept = default;
WTransform& WTransform::operator=(WTransform&&) noexcept = default;

// In place on `howmany` blocks. The inverse applies scale times the parity
// weight before the FFT, the forward after it.
void WTransform::run(cplx* data, std::size_t howmany, bool forward, double scale) const {
  auto* base = reinterpret_cast<fftw_complex*>(data);
  // Block strides are whole complex numbers, so one check covers every block.
  const bool aligned = fftw_alignment_of(reinterpret_cast<double*>(base)) == 0;
  auto weigh = [&](cplx* first, std::size_t blocks) {
    for (std::size_t b = 0; b < blocks; ++b) {
      cplx* blk = first + b * block_;
      for (std::size_t i = 0; i < block_; ++i) blk[i] *= scale * weight_[i];
    }
  };
  std::size_t b = 0;
  while (b < howmany) {
    const bool whole = aligned && howmany - b >= batch_;
    const std::size_t blocks = whole ? batch_ : 1;
    const fftw_plan plan = whole      ? (forward ? plans_->fwd_batch : plans_->inv_batch)
                           : aligned ? (forward ? plans_->fwd_one : plans_->inv_one)
                                     : (forward ? plans_->fwd_any : plans_->inv_any);
    cplx* first = data + b * block_;
    if (!forward) weigh(first, blocks);
    auto* p = reinterpret_cast<fftw_complex*>(first);
    fftw_execute_dft(plan, p, p);
    if (forward) weigh(first, blocks);
    b += blocks;
  }
}

void WTransform::forward(cplx* data, std::size_t howmany, double scale) const { run(data, howmany, true, scale); }
void WTransform::inverse(cplx* data, std::size_t howmany, double scale) const { run(data, howmany, false, scale); }

}  // namespace ultra
