#pragma once

#include "ultra/carleman.hpp"
#include "ultra/jerk.hpp"

#include <vector>

namespace ultra {

// Initial error exp(-J^2/(2 sigma^2)) cos(k J) exp(cos(pi A/L_A)) (1 + cos(pi V/L_V)/2).
// A large k makes the packet decay by about exp(-k^2 T sigma^2/(sigma^2 + 2T))
// before s = T, so the reversed solution starts near zero.
struct WavePacket {
  double sigma = 0.5;
  double k = 33.0;
  bool operator==(const WavePacket&) const = default;
};

JerkState wave_packet(const GridSpec& grid, const WavePacket& packet);

struct PipelineSetup {
  Axis j_axis{4.0, 296};
  std::vector<Axis> w_axes{{1.0, 16}, {2.0, 8}, {2.0, 4}};
  int stored = 161;   // stored time slices over [0, t2]
  int substeps = 6;   // simulation steps per stored slice
  WavePacket packet;
  double contrast_k = 3.0;  // slow packet: u(0) is far from zero
  CarlemanParams base;      // b, t1, t2 = T, R, lambda
  std::vector<double> alphas{8.0, 16.0, 32.0, 64.0};
  Ceilings ceil;
  bool run_contrast = true;
  bool operator==(const PipelineSetup&) const = default;
};

struct PipelineResult {
  std::vector<VerificationReport> reports;   // suite "pipeline"
  std::vector<VerificationReport> contrast;  // suite "pipeline_contrast"
  ResidualReport residual;
  ResidualReport contrast_residual;
  bool left_decreasing = false;  // weighted left side strictly falls with alpha
  bool contrast_flagged = false;
  VerificationReport summary;    // Pass when every criterion of the run holds
};

// simulate -> time_reverse -> verify_solution_decay for the main packet and,
// optionally, the contrast packet. `spec` must come from build_jerk_operator.
PipelineResult run_pipeline(const OperatorSpec& spec, const PipelineSetup& setup);

}  // namespace ultra
