#include "ultra/pipeline.hpp"

#include "ultra/errors.hpp"
#include "ultra/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ultra {

namespace {

struct DecayRun {
  std::vector<VerificationReport> reports;
  ResidualReport residual;
};

DecayRun decay_run(const OperatorSpec& spec, const PipelineSetup& s, const WavePacket& packet,
                   const std::string& suite) {
  const double T = s.base.t2;
  const GridSpec grid(T, s.stored, {s.j_axis}, s.w_axes);
  SchemeConfig sc;
  sc.dt = T / (static_cast<double>(s.stored - 1) * s.substeps);
  sc.substeps = s.substeps;
  const Trajectory u = time_reverse(simulate(wave_packet(grid, packet), spec, sc, T, T));
  const TransformPlan plan(u.grid(), FrequencyRegion(spec.drift, s.base.R, s.base.b, T));
  DecayRun out{verify_solution_decay(u.field, spec, s.base, s.alphas, plan, u.residual.relative, s.ceil),
               u.residual};
  for (auto& r : out.reports) {
    r.suite = suite;
    r.values.emplace_back("packet_k", packet.k);
    r.values.emplace_back("packet_sigma", packet.sigma);
  }
  return out;
}

}  // namespace

JerkState wave_packet(const GridSpec& g, const WavePacket& p) {
  if (g.m() != 1 || g.n() != 3) throw DimensionError("wave_packet: needs the (J; A, V, Q) grid");
  if (!(p.sigma > 0.0)) throw ValidationError("wave_packet: sigma must be positive");
  const double pi = std::numbers::pi;
  const double la = g.w_axes()[0].half_width, lv = g.w_axes()[1].half_width;
  std::vector<double> v(g.v_count() * g.w_count());
  std::vector<int> wi;
  for (int j = 0; j < g.v_axes()[0].points; ++j) {
    const double J = g.v(0, j);
    const double env = std::exp(-J * J / (2.0 * p.sigma * p.sigma)) * std::cos(p.k * J);
    for (std::size_t i = 0; i < g.w_count(); ++i) {
      g.w_unflatten(i, wi);
      const double A = g.w(0, wi[0]), V = g.w(1, wi[1]);
      v[j * g.w_count() + i] = env * std::exp(std::cos(pi * A / la)) * (1.0 + 0.5 * std::cos(pi * V / lv));
    }
  }
  return JerkState(g, std::move(v));
}

PipelineResult run_pipeline(const OperatorSpec& spec, const PipelineSetup& s) {
  if (spec.m() != 1 || spec.n() != 3) throw DimensionError("run_pipeline: operator is not the jerk model");
  if (s.alphas.empty()) throw ValidationError("run_pipeline: empty alpha list");
  s.base.validate();

  PipelineResult res;
  DecayRun main = decay_run(spec, s, s.packet, "pipeline");
  res.reports = std::move(main.reports);
  res.residual = main.residual;
  if (s.run_contrast) {
    WavePacket slow = s.packet;
    slow.k = s.contrast_k;
    DecayRun c = decay_run(spec, s, slow, "pipeline_contrast");
    res.contrast = std::move(c.reports);
    res.contrast_residual = c.residual;
    res.contrast_flagged = std::all_of(res.contrast.begin(), res.contrast.end(), [](const auto& r) {
      return r.status == Status::HypothesisViolated || r.status == Status::OutOfRegime;
    }) && std::any_of(res.contrast.begin(), res.contrast.end(), [](const auto& r) {
      return r.status == Status::HypothesisViolated;
    });
  }

  std::vector<const VerificationReport*> graded;
  for (const auto& r : res.reports)
    if (r.status == Status::Pass || r.status == Status::Fail) graded.push_back(&r);
  std::sort(graded.begin(), graded.end(),
            [](const auto* a, const auto* b) { return a->params.alpha < b->params.alpha; });
  res.left_decreasing = !graded.empty();
  for (std::size_t i = 1; i < graded.size(); ++i)
    if (!(graded[i]->value("weighted_left") < graded[i - 1]->value("weighted_left"))) res.left_decreasing = false;

  VerificationReport& sum = res.summary;
  sum.name = "pipeline_summary";
  sum.suite = "pipeline";
  sum.preset = spec.label;
  sum.params = s.base;
  sum.params.alpha = s.alphas.front();
  sum.grid = res.reports.empty() ? std::string() : res.reports.front().grid;
  double worst = 0.0;
  for (const auto* r : graded) worst = std::max(worst, r->empirical_constant);
  sum.empirical_constant = worst;
  sum.lhs = res.reports.empty() ? 0.0 : res.reports.front().lhs;
  sum.rhs = graded.empty() ? 0.0 : graded.back()->rhs;
  sum.values.emplace_back("max_constant", worst);
  sum.values.emplace_back("c_chi_ceiling", s.ceil.c_chi);
  sum.values.emplace_back("pde_residual", res.residual.relative);
  sum.values.emplace_back("left_decreasing", res.left_decreasing ? 1.0 : 0.0);
  if (s.run_contrast) {
    sum.values.emplace_back("contrast_residual", res.contrast_residual.relative);
    sum.values.emplace_back("contrast_flagged", res.contrast_flagged ? 1.0 : 0.0);
  }
  const bool all_out = std::all_of(res.reports.begin(), res.reports.end(),
                                   [](const auto& r) { return r.status == Status::OutOfRegime; });
  const bool all_pass = std::all_of(res.reports.begin(), res.reports.end(), [](const auto& r) { return r.pass(); });
  if (all_out) {
    sum.status = Status::OutOfRegime;
    sum.notes.push_back("every alpha lies outside the regime");
  } else {
    sum.status = all_pass && res.left_decreasing && (!s.run_contrast || res.contrast_flagged) ? Status::Pass
                                                                                             : Status::Fail;
    if (!all_pass) sum.notes.push_back("some alpha failed the decay bound or its hypothesis");
    if (!res.left_decreasing) sum.notes.push_back("weighted left side does not fall with alpha");
    if (s.run_contrast && !res.contrast_flagged) sum.notes.push_back("contrast run was not flagged");
  }
  return res;
}

}  // namespace ultra
